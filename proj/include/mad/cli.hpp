#pragma once

// Command implementations behind the `mad` executable. Each returns a process
// exit status and writes human-readable output to the given streams.
//
//   0 success
//   2 configuration error
//   3 provider or protocol error
//   4 acceptance failure (parity deviation, certificate, replay)
//   5 bridge handshake rejected (vocabulary mismatch)
//   6 bridge timeout

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mad/config.hpp"
#include "mad/generation.hpp"
#include "mad/harness.hpp"
#include "mad/splitmix.hpp"
#include "mad/synth.hpp"
#include "mad/wire.hpp"

namespace mad::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitProvider = 3;
inline constexpr int kExitAcceptance = 4;
inline constexpr int kExitHandshake = 5;
inline constexpr int kExitTimeout = 6;

inline int exit_code(ErrorKind k) {
    switch (k) {
    case ErrorKind::Configuration:
    case ErrorKind::InvalidInput: return kExitConfig;
    case ErrorKind::VocabMismatch: return kExitHandshake;
    case ErrorKind::Timeout: return kExitTimeout;
    case ErrorKind::Transport:
    case ErrorKind::Protocol: return kExitProvider;
    case ErrorKind::Generation: return kExitAcceptance;
    }
    return kExitProvider;
}

struct Io {
    std::ostream& out = std::cout;
    std::ostream& err = std::cerr;
};

namespace detail {

inline void write_file(const fs::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Configuration, "cannot write " + p.string());
    f << content;
    require(static_cast<bool>(f), ErrorKind::Configuration, "write failed for " + p.string());
}

inline std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Configuration, "cannot read " + p.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Output directories are never reused.
inline fs::path fresh_dir(const std::string& path) {
    const fs::path dir(path);
    require(!fs::exists(dir), ErrorKind::Configuration, "output directory " + path + " already exists");
    std::error_code ec;
    fs::create_directories(dir, ec);
    require(!ec, ErrorKind::Configuration, "cannot create " + path + ": " + ec.message());
    return dir;
}

inline std::unique_ptr<LogitProvider> make_provider(const RunConfig& c, const Suite& suite) {
    if (c.provider == ProviderKind::Synth) {
        return std::make_unique<SynthProvider>(suite.model());
    }
    RemoteOptions o;
    o.timeout = std::chrono::milliseconds(c.bridge_timeout_ms);
    o.expected_vocab = suite.vocab;
    if (!c.bridge_command.empty()) return RemoteProvider::spawn(c.bridge_command, o);
    return RemoteProvider::tcp(c.bridge_address, o);
}

/// Parameters generate() receives for one task under `opts`.
inline DecodingParams task_params(const DecodingParams& p, const TaskSpec& t, const EvalOptions& opts) {
    DecodingParams out = p;
    if (opts.oracle_weights && out.weighted()) out.fixed_weights = oracle_weights(t.relevance());
    return out;
}

inline std::string trace_file_name(std::int64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "task_%04lld.jsonl", static_cast<long long>(id));
    return buf;
}

inline std::vector<std::size_t> replay_sample(std::uint64_t seed, std::size_t n, std::size_t k) {
    SplitMix64 rng(seed ^ 0x5EEDFACEULL);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < std::min(k, n); ++i) {
        const auto pick = static_cast<std::size_t>(rng.below(n));
        if (std::find(out.begin(), out.end(), pick) == out.end()) out.push_back(pick);
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline nlohmann::json manifest(const RunConfig& c, const std::string& command, const Suite& suite) {
    return {{"version", kVersion},
            {"command", command},
            {"config_hash", config_hash(c.text)},
            {"seed", c.suite.seed},
            {"n_per_category", c.suite.n_per_category},
            {"tasks", suite.size()},
            {"params", params_json(c.params)},
            {"max_tokens", c.max_tokens},
            {"oracle_weights", c.oracle_weights},
            {"provider", c.provider == ProviderKind::Synth ? "synth" : "bridge"},
            {"config", c.text}};
}

/// Runs `body`, mapping errors to exit codes.
template <typename F>
int guarded(const char* name, Io io, F&& body) {
    try {
        return body();
    } catch (const Error& e) {
        io.err << name << ": " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        io.err << name << ": " << e.what() << "\n";
        return kExitConfig;
    }
}

inline std::string timing_csv(const Suite& suite, const SuiteEvaluation& ev) {
    std::string out = "task,category,tokens,calls,total_ms\n";
    for (std::size_t i = 0; i < ev.results.size(); ++i) {
        const TaskResult& r = ev.results[i];
        out += std::to_string(suite.tasks[i].id) + "," + to_string(r.category) + "," +
               std::to_string(r.tokens.size()) + "," + std::to_string(r.trace.calls) + "," +
               mad::detail::fmt(r.trace.total_ms(), 4) + "\n";
    }
    return out;
}

} // namespace detail

struct RunOptions {
    std::string config;
    std::optional<std::string> output_dir;
};

inline int cmd_run(const RunOptions& opt, Io io = {}) {
    return detail::guarded("run", io, [&] {
        RunConfig c = load_run_config(opt.config);
        if (opt.output_dir) c.output_dir = *opt.output_dir;
        require(!fs::exists(c.output_dir), ErrorKind::Configuration, "output directory " + c.output_dir + " already exists");
        const Suite suite = build_suite(c.suite);
        auto provider = detail::make_provider(c, suite);
        const EvalOptions eo = c.eval_options();
        const SuiteEvaluation ev = evaluate(*provider, c.params, suite, eo);

        // Replay a sample of traces against the same provider.
        nlohmann::json replayed = nlohmann::json::array();
        bool replay_ok = true;
        for (std::size_t i : detail::replay_sample(c.suite.seed, suite.size(), 5)) {
            const TaskSpec& t = suite.tasks[i];
            const ReplayResult rr =
                replay_check(ev.results[i].trace, *provider, detail::task_params(c.params, t, eo), t.context());
            replayed.push_back({{"task", t.id}, {"identical", rr.identical}});
            replay_ok = replay_ok && rr.identical;
        }

        const fs::path dir = detail::fresh_dir(c.output_dir);
        fs::create_directories(dir / "traces");
        for (std::size_t i = 0; i < ev.results.size(); ++i) {
            detail::write_file(dir / "traces" / detail::trace_file_name(suite.tasks[i].id),
                               trace_jsonl(ev.results[i].trace, false));
        }
        detail::write_file(dir / "metrics.csv", metrics_csv(ev.metrics));
        detail::write_file(dir / "metrics.md", metrics_markdown(ev.metrics));
        detail::write_file(dir / "results.jsonl", results_jsonl(suite, ev));
        detail::write_file(dir / "timing.csv", detail::timing_csv(suite, ev));
        nlohmann::json m = detail::manifest(c, "run", suite);
        m["replay"] = replayed;
        m["total_calls"] = ev.metrics.total_calls;
        detail::write_file(dir / "manifest.json", m.dump(2) + "\n");

        io.out << "run: " << suite.size() << " tasks, strategy " << to_string(c.params.strategy) << ", gamma "
               << mad::detail::fmt(c.params.gamma, 2) << "\n"
               << metrics_markdown(ev.metrics) << "wrote " << dir.string() << "\n";
        if (!replay_ok) {
            io.err << "run: replay diverged on a sampled trace\n";
            return kExitAcceptance;
        }
        return kExitOk;
    });
}

struct SweepOptions {
    std::string config;
    std::optional<std::string> gammas;
    std::optional<std::string> output_dir;
};

inline int cmd_sweep(const SweepOptions& opt, Io io = {}) {
    return detail::guarded("sweep", io, [&] {
        RunConfig c = load_run_config(opt.config);
        if (opt.gammas) c.gammas = parse_gamma_list(*opt.gammas);
        if (opt.output_dir) c.output_dir = *opt.output_dir;
        const Suite suite = build_suite(c.suite);
        auto provider = detail::make_provider(c, suite);
        const fs::path dir = detail::fresh_dir(c.output_dir);

        std::vector<SweepRow> rows;
        for (double g : c.gammas) {
            DecodingParams p = c.params;
            p.gamma = g;
            const SuiteEvaluation ev = evaluate(*provider, p, suite, c.eval_options());
            detail::write_file(dir / ("metrics_gamma_" + mad::detail::fmt(g, 2) + ".csv"), metrics_csv(ev.metrics));
            rows.push_back({g, ev.metrics});
        }
        detail::write_file(dir / "sweep.csv", sweep_csv(rows));
        detail::write_file(dir / "sweep.md", sweep_markdown(rows));
        nlohmann::json m = detail::manifest(c, "sweep", suite);
        m["gammas"] = c.gammas;
        detail::write_file(dir / "manifest.json", m.dump(2) + "\n");
        io.out << sweep_markdown(rows) << "wrote " << dir.string() << "\n";
        return kExitOk;
    });
}

struct WeightsOptions {
    std::string config;
    std::optional<std::string> output_dir;
};

inline int cmd_weights(const WeightsOptions& opt, Io io = {}) {
    return detail::guarded("weights", io, [&] {
        RunConfig c = load_run_config(opt.config);
        if (opt.output_dir) c.output_dir = *opt.output_dir;
        require(c.prompts.has_value(), ErrorKind::Configuration,
                "no prompt registry configured (add 'prompts = builtin' or prompt.N entries)");
        require(!fs::exists(c.output_dir), ErrorKind::Configuration, "output directory " + c.output_dir + " already exists");
        const Suite suite = build_suite(c.suite);
        auto provider = detail::make_provider(c, suite);

        const WeightReport report = weight_distribution_report(*provider, suite, c.prompts->at(c.params.prompt_id));
        DecodingParams base = c.params;
        if (!base.weighted()) base.strategy = StrategyKind::Mad;
        EvalOptions eo = c.eval_options();
        eo.oracle_weights = false;
        const PromptRobustness rob = prompt_robustness(*provider, suite, *c.prompts, base, eo);

        const fs::path dir = detail::fresh_dir(c.output_dir);
        detail::write_file(dir / "weights.csv", weight_report_csv(report));
        detail::write_file(dir / "robustness.csv", robustness_csv(rob));
        nlohmann::json m = detail::manifest(c, "weights", suite);
        m["pattern_ok"] = report.pattern_ok();
        m["argmax_flips"] = rob.argmax_flips;
        detail::write_file(dir / "manifest.json", m.dump(2) + "\n");

        io.out << weight_report_csv(report) << "\n"
               << robustness_csv(rob) << "argmax_flips," << rob.argmax_flips << "\n"
               << "wrote " << dir.string() << "\n";
        return kExitOk;
    });
}

struct ParityOptions {
    std::string command;
    std::string address;
    int n = 500;
    std::uint64_t seed = 1;
    int n_per_category = 50;
    std::uint64_t suite_seed = 7;
    int timeout_ms = 5000;
};

struct ParityReport {
    int samples = 0;
    double max_deviation = 0.0;
    int argmax_mismatches = 0;
    bool passed() const { return max_deviation <= 1e-9 && argmax_mismatches == 0; }
};

/// Draws `n` (cfg, ctx) pairs over the suite and compares `remote` against
/// the in-process formula.
inline ParityReport parity_check(LogitProvider& remote, const Suite& suite, int n, std::uint64_t seed) {
    const SynthModelSpec spec = suite.model();
    SplitMix64 rng(seed);
    ParityReport rep;
    for (int i = 0; i < n; ++i) {
        const TaskSpec& t = suite.tasks[rng.below(suite.size())];
        const ModalityConfig cfg = kAllConfigs[rng.below(kAllConfigs.size())];
        Context ctx = t.context();
        if (rng.below(4) == 0) {
            ctx = ctx.as_query(static_cast<int>(rng.below(static_cast<std::uint64_t>(suite.config.prompt_variants))));
        } else {
            const auto len = rng.below(3);
            for (std::uint64_t k = 0; k < len; ++k) {
                ctx.prefix.push_back(static_cast<TokenId>(4 + rng.below(suite.vocab.size() - 4)));
            }
        }
        const LogitVector local = synth_logits(spec, cfg, ctx);
        const LogitVector got = remote.eval_any(cfg, ctx);
        require(got.size() == local.size(), ErrorKind::Protocol, "length mismatch");
        for (std::size_t k = 0; k < local.size(); ++k) {
            rep.max_deviation = std::max(rep.max_deviation, std::abs(local[k] - got[k]));
        }
        if (argmax_token(local) != argmax_token(got)) ++rep.argmax_mismatches;
        ++rep.samples;
    }
    return rep;
}

inline int cmd_parity(const ParityOptions& opt, Io io = {}) {
    return detail::guarded("parity", io, [&] {
        require(opt.command.empty() != opt.address.empty(), ErrorKind::Configuration,
                "give exactly one of a bridge command or a bridge address");
        require(opt.n >= 1, ErrorKind::Configuration, "n must be >= 1");
        const Suite suite = build_suite(opt.n_per_category, opt.suite_seed);
        RemoteOptions ro;
        ro.timeout = std::chrono::milliseconds(opt.timeout_ms);
        ro.expected_vocab = suite.vocab;
        auto remote = opt.command.empty() ? RemoteProvider::tcp(opt.address, ro) : RemoteProvider::spawn(opt.command, ro);
        const ParityReport rep = parity_check(*remote, suite, opt.n, opt.seed);
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3e", rep.max_deviation);
        io.out << "parity: " << rep.samples << " samples, max deviation " << buf << ", argmax mismatches "
               << rep.argmax_mismatches << (rep.passed() ? " PASS" : " FAIL") << "\n";
        return rep.passed() ? kExitOk : kExitAcceptance;
    });
}

struct SuiteCheckOptions {
    std::string config;
};

inline int cmd_suite_check(const SuiteCheckOptions& opt, Io io = {}) {
    return detail::guarded("suite-check", io, [&] {
        const RunConfig c = load_run_config(opt.config);
        const Suite suite = build_suite(c.suite);
        const std::vector<std::int64_t> failed = check_suite(suite);
        std::map<Category, int> resampled;
        for (const TaskSpec& t : suite.tasks) resampled[t.category] += t.attempts - 1;
        for (Category cat : kCategories) {
            io.out << to_string(cat) << ": " << c.suite.n_per_category << " tasks, " << resampled[cat]
                   << " resamples\n";
        }
        if (!failed.empty()) {
            io.err << "suite-check: " << failed.size() << " certificates fail, first task " << failed.front() << "\n";
            return kExitAcceptance;
        }
        io.out << "suite-check: " << suite.size() << " certificates verified\n";
        return kExitOk;
    });
}

struct ReplayOptions {
    std::string run_dir;
    bool all = false;
};

/// Rebuilds a run from its manifest and replays its traces.
inline int cmd_replay(const ReplayOptions& opt, Io io = {}) {
    return detail::guarded("replay", io, [&] {
        const fs::path dir(opt.run_dir);
        nlohmann::json m;
        try {
            m = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Configuration, std::string("bad manifest: ") + e.what());
        }
        const std::string text = m.value("config", std::string());
        require(config_hash(text) == m.value("config_hash", std::string()), ErrorKind::Configuration,
                "manifest config does not match its hash");
        RunConfig c = parse_run_config(text);
        const Suite suite = build_suite(c.suite);
        auto provider = detail::make_provider(c, suite);
        const EvalOptions eo = c.eval_options();

        std::vector<std::size_t> picks;
        if (opt.all) {
            for (std::size_t i = 0; i < suite.size(); ++i) picks.push_back(i);
        } else {
            picks = detail::replay_sample(c.suite.seed, suite.size(), 5);
        }
        int diverged = 0;
        for (std::size_t i : picks) {
            const TaskSpec& t = suite.tasks[i];
            const DecodingTrace trace =
                parse_trace_jsonl(detail::read_file(dir / "traces" / detail::trace_file_name(t.id)));
            const ReplayResult rr = replay_check(trace, *provider, detail::task_params(c.params, t, eo), t.context());
            if (!rr) {
                ++diverged;
                io.err << "replay: task " << t.id << " diverges at step " << rr.first_divergent_step.value_or(0) << "\n";
            }
        }
        io.out << "replay: " << picks.size() << " traces, " << diverged << " diverged\n";
        return diverged == 0 ? kExitOk : kExitAcceptance;
    });
}

} // namespace mad::cli
