#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <sys/wait.h>

#include "mad/cli.hpp"
#include "mad/config.hpp"

using namespace mad;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        path_ = fs::temp_directory_path() / ("mad_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& s) const { return path_ / s; }
    std::string str(const std::string& s) const { return (path_ / s).string(); }

private:
    static int& counter() {
        static int n = 0;
        return n;
    }
    fs::path path_;
};

std::string config_file(const TempDir& d, const std::string& name, const std::string& body) {
    const std::string p = d.str(name);
    cli::detail::write_file(p, body);
    return p;
}

int config_line(const std::string& text) {
    try {
        parse_run_config(text);
    } catch (const ConfigError& e) {
        return e.line();
    }
    return -1;
}

std::string config_message(const std::string& text) {
    try {
        parse_run_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

std::string slurp(const fs::path& p) { return cli::detail::read_file(p); }

int lines_in(const std::string& s) { return static_cast<int>(std::count(s.begin(), s.end(), '\n')); }

const char* kSmall = "seed = 7\nn_per_category = 10\nstrategy = mad\ngamma = 2.5\nprompts = builtin\nmax_tokens = 4\n";

struct Captured {
    std::ostringstream out, err;
    cli::Io io() { return {out, err}; }
};

int shell(const std::string& cmd) {
    const int st = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

} // namespace

TEST(Config, Defaults) {
    const RunConfig c = parse_run_config("prompts = builtin\n");
    EXPECT_EQ(c.suite.seed, 7u);
    EXPECT_EQ(c.suite.n_per_category, 50);
    EXPECT_EQ(c.params.strategy, StrategyKind::Mad);
    EXPECT_DOUBLE_EQ(c.params.gamma, 2.5);
    EXPECT_EQ(c.provider, ProviderKind::Synth);
    EXPECT_EQ(c.gammas, default_gammas());
    ASSERT_TRUE(c.prompts.has_value());
    EXPECT_EQ(c.prompts->size(), 5u);
}

TEST(Config, FullExample) {
    const RunConfig c = parse_run_config(
        "# comment\n"
        "seed = 11\n"
        "n_per_category = 4\n"
        "strategy = mad_masked\n"
        "mask = a,v\n"
        "mask_semantics = resoftmax\n"
        "prompt.0 = Which modality?\n"
        "prompt.2 = Pick one.\n"
        "prompt_variant = 2\n"
        "gammas = 0, 1.5\n"
        "workers = 2\n"
        "per_step_weights = true\n");
    EXPECT_EQ(c.suite.seed, 11u);
    EXPECT_EQ(c.params.strategy, StrategyKind::MadMasked);
    EXPECT_EQ(c.params.mask_semantics, MaskSemantics::Resoftmax);
    EXPECT_TRUE(c.params.per_step_weights);
    EXPECT_EQ(c.params.prompt_id, 2);
    EXPECT_EQ(c.gammas, (std::vector<double>{0.0, 1.5}));
    EXPECT_EQ(c.workers, 2);
    EXPECT_EQ(c.prompts->size(), 2u);
}

TEST(Config, ErrorsNameTheLine) {
    EXPECT_EQ(config_line("seed = 1\nbogus = 3\n"), 2);
    EXPECT_NE(config_message("seed = 1\nbogus = 3\n").find("unknown field 'bogus'"), std::string::npos);
    EXPECT_EQ(config_line("\n\nstrategy = fancy\n"), 3);
    EXPECT_NE(config_message("strategy = fancy\n").find("field 'strategy'"), std::string::npos);
    EXPECT_EQ(config_line("seed = 1\nseed = 2\n"), 2);
    EXPECT_EQ(config_line("gamma = -1\n"), 1);
    EXPECT_EQ(config_line("gamma = lots\n"), 1);
    EXPECT_EQ(config_line("x\n"), 1);
    EXPECT_EQ(config_line("jitter_frac = 0.3\n"), 1);
    EXPECT_EQ(config_line("gammas = 0,abc\n"), 1);
    EXPECT_EQ(config_line("prompts = builtin\nmask = q\n"), 2);
    EXPECT_EQ(config_line("prompts = builtin\nper_step_weights = yes\n"), 2);
    EXPECT_EQ(config_line("prompt.7 = hello\n"), 1);
}

TEST(Config, CrossFieldChecks) {
    EXPECT_EQ(config_line("seed = 1\nstrategy = mad\n"), 2);
    EXPECT_NE(config_message("strategy = mad\n").find("no prompt registry"), std::string::npos);
    EXPECT_EQ(config_line("strategy = mad\noracle_weights = true\n"), -1);
    EXPECT_EQ(config_line("strategy = greedy\n"), -1);
    EXPECT_EQ(config_line("prompts = builtin\nstrategy = mad_masked\n"), 2);
    EXPECT_EQ(config_line("strategy = greedy\nprovider = bridge\n"), 2);
    EXPECT_EQ(config_line("strategy = greedy\nprovider = bridge\nbridge.command = x\nbridge.address = y:1\n"), 2);
    EXPECT_EQ(config_line("strategy = greedy\nbridge.command = x\n"), 2);
    EXPECT_EQ(config_line("strategy = greedy\ndelta_min = 3\ndelta_max = 2\n"), 3);
    EXPECT_EQ(config_line("prompts = builtin\nprompt.1 = x\n"), 1);
    EXPECT_EQ(config_line("prompt.1 = x\nprompt_variant = 0\n"), 2);
}

TEST(Config, HashIsStable) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
    EXPECT_EQ(config_hash("a"), "af63dc4c8601ec8c");
    EXPECT_NE(config_hash("gamma = 1\n"), config_hash("gamma = 2\n"));
}

TEST(Config, EnvironmentOverrides) {
    RunConfig c = parse_run_config("strategy = greedy\noutput_dir = runs/x\n");
    ::setenv("MAD_OUTPUT_ROOT", "/tmp/root", 1);
    ::setenv("MAD_WORKERS", "3", 1);
    apply_env_overrides(c);
    EXPECT_EQ(c.output_dir, "/tmp/root/runs/x");
    EXPECT_EQ(c.workers, 3);

    RunConfig abs = parse_run_config("strategy = greedy\noutput_dir = /abs/out\n");
    apply_env_overrides(abs);
    EXPECT_EQ(abs.output_dir, "/abs/out");

    ::setenv("MAD_WORKERS", "zero", 1);
    EXPECT_THROW(apply_env_overrides(c), ConfigError);
    ::unsetenv("MAD_OUTPUT_ROOT");
    ::unsetenv("MAD_WORKERS");
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(cli::exit_code(ErrorKind::Configuration), 2);
    EXPECT_EQ(cli::exit_code(ErrorKind::InvalidInput), 2);
    EXPECT_EQ(cli::exit_code(ErrorKind::Transport), 3);
    EXPECT_EQ(cli::exit_code(ErrorKind::Protocol), 3);
    EXPECT_EQ(cli::exit_code(ErrorKind::VocabMismatch), 5);
    EXPECT_EQ(cli::exit_code(ErrorKind::Timeout), 6);
}

TEST(Cli, RunWritesArtifactsAndIsReproducible) {
    TempDir d;
    const std::string cfg = config_file(d, "run.cfg", kSmall);
    Captured a;
    ASSERT_EQ(cli::cmd_run({cfg, d.str("a")}, a.io()), 0) << a.err.str();
    Captured b;
    ASSERT_EQ(cli::cmd_run({cfg, d.str("b")}, b.io()), 0) << b.err.str();

    for (const char* f : {"metrics.csv", "metrics.md", "results.jsonl", "traces/task_0000.jsonl",
                          "traces/task_0049.jsonl"}) {
        EXPECT_EQ(slurp(d / ("a/" + std::string(f))), slurp(d / ("b/" + std::string(f)))) << f;
    }
    EXPECT_EQ(lines_in(slurp(d / "a/results.jsonl")), 50);
    EXPECT_EQ(lines_in(slurp(d / "a/timing.csv")), 51);
    EXPECT_EQ(std::distance(fs::directory_iterator(d / "a/traces"), fs::directory_iterator{}), 50);

    const auto m = nlohmann::json::parse(slurp(d / "a/manifest.json"));
    EXPECT_EQ(m["version"], kVersion);
    EXPECT_EQ(m["command"], "run");
    EXPECT_EQ(m["config_hash"], config_hash(kSmall));
    EXPECT_EQ(m["config"], kSmall);
    EXPECT_EQ(m["tasks"], 50);
    EXPECT_EQ(m["total_calls"], 50 * 9);
    ASSERT_EQ(m["replay"].size(), 5u);
    for (const auto& r : m["replay"]) EXPECT_TRUE(r["identical"].get<bool>());

    EXPECT_NE(a.out.str().find("overall"), std::string::npos);
}

TEST(Cli, RunRefusesExistingDirectory) {
    TempDir d;
    const std::string cfg = config_file(d, "run.cfg", kSmall);
    fs::create_directories(d / "taken");
    Captured c;
    EXPECT_EQ(cli::cmd_run({cfg, d.str("taken")}, c.io()), 2);
    EXPECT_NE(c.err.str().find("already exists"), std::string::npos);
}

TEST(Cli, RunRejectsBadConfig) {
    TempDir d;
    Captured c;
    EXPECT_EQ(cli::cmd_run({config_file(d, "bad.cfg", "seed = 7\nstrategy = nope\n"), d.str("o")}, c.io()), 2);
    EXPECT_NE(c.err.str().find("line 2"), std::string::npos);
    EXPECT_NE(c.err.str().find("field 'strategy'"), std::string::npos);
    EXPECT_FALSE(fs::exists(d / "o"));
    Captured missing;
    EXPECT_EQ(cli::cmd_run({d.str("nope.cfg"), d.str("o")}, missing.io()), 2);
}

TEST(Cli, SweepMatchesRun) {
    TempDir d;
    const std::string cfg = config_file(d, "run.cfg", kSmall);
    Captured s;
    ASSERT_EQ(cli::cmd_sweep({cfg, std::nullopt, d.str("sweep")}, s.io()), 0) << s.err.str();
    EXPECT_EQ(lines_in(slurp(d / "sweep/sweep.csv")), 7);

    Captured r;
    ASSERT_EQ(cli::cmd_run({cfg, d.str("run")}, r.io()), 0);
    EXPECT_EQ(slurp(d / "sweep/metrics_gamma_2.50.csv"), slurp(d / "run/metrics.csv"));

    Captured again;
    ASSERT_EQ(cli::cmd_sweep({cfg, std::nullopt, d.str("sweep2")}, again.io()), 0);
    EXPECT_EQ(slurp(d / "sweep/sweep.csv"), slurp(d / "sweep2/sweep.csv"));
    EXPECT_EQ(slurp(d / "sweep/sweep.md"), slurp(d / "sweep2/sweep.md"));
}

TEST(Cli, SweepGammaOverride) {
    TempDir d;
    const std::string cfg = config_file(d, "run.cfg", kSmall);
    Captured s;
    ASSERT_EQ(cli::cmd_sweep({cfg, std::string("0,1"), d.str("s")}, s.io()), 0);
    EXPECT_EQ(lines_in(slurp(d / "s/sweep.csv")), 3);
    Captured bad;
    EXPECT_EQ(cli::cmd_sweep({cfg, std::string("0,abc"), d.str("t")}, bad.io()), 2);
    Captured neg;
    EXPECT_EQ(cli::cmd_sweep({cfg, std::string("-1"), d.str("u")}, neg.io()), 2);
}

TEST(Cli, WeightsReport) {
    TempDir d;
    Captured w;
    ASSERT_EQ(cli::cmd_weights({config_file(d, "w.cfg", kSmall), d.str("w")}, w.io()), 0) << w.err.str();
    std::istringstream csv(slurp(d / "w/weights.csv"));
    std::string header, row;
    std::getline(csv, header);
    EXPECT_NE(header.find("w_av"), std::string::npos);
    int rows = 0;
    while (std::getline(csv, row)) {
        ++rows;
        std::vector<std::string> cols;
        std::stringstream ss(row);
        for (std::string cell; std::getline(ss, cell, ',');) cols.push_back(cell);
        ASSERT_EQ(cols.size(), 7u);
        EXPECT_EQ(cols[6], "yes");
        const double sum = std::stod(cols[3]) + std::stod(cols[4]) + std::stod(cols[5]);
        EXPECT_NEAR(sum, 1.0, 1e-3) << row;
    }
    EXPECT_EQ(rows, 5);
    const auto m = nlohmann::json::parse(slurp(d / "w/manifest.json"));
    EXPECT_TRUE(m["pattern_ok"].get<bool>());
    EXPECT_EQ(m["argmax_flips"], 0);

    Captured none;
    EXPECT_EQ(cli::cmd_weights({config_file(d, "g.cfg", "strategy = greedy\n"), d.str("g")}, none.io()), 2);
}

TEST(Cli, SuiteCheckAndReplay) {
    TempDir d;
    const std::string cfg = config_file(d, "run.cfg", kSmall);
    Captured c;
    EXPECT_EQ(cli::cmd_suite_check({cfg}, c.io()), 0);
    EXPECT_NE(c.out.str().find("50 certificates verified"), std::string::npos);

    Captured r;
    ASSERT_EQ(cli::cmd_run({cfg, d.str("run")}, r.io()), 0);
    Captured rp;
    EXPECT_EQ(cli::cmd_replay({d.str("run"), true}, rp.io()), 0);
    EXPECT_NE(rp.out.str().find("50 traces, 0 diverged"), std::string::npos);

    cli::detail::write_file(d / "run/traces/task_0003.jsonl",
                            slurp(d / "run/traces/task_0013.jsonl"));
    Captured broken;
    EXPECT_EQ(cli::cmd_replay({d.str("run"), true}, broken.io()), 4);
    EXPECT_NE(broken.err.str().find("task 3"), std::string::npos);
}

TEST(Cli, Parity) {
    const std::string bridge = std::string(MAD_MOCK_BRIDGE) + " --n-per-category 10";
    cli::ParityOptions p;
    p.command = bridge;
    p.n = 200;
    p.n_per_category = 10;
    Captured ok;
    EXPECT_EQ(cli::cmd_parity(p, ok.io()), 0) << ok.err.str();
    EXPECT_NE(ok.out.str().find("200 samples"), std::string::npos);
    EXPECT_NE(ok.out.str().find("PASS"), std::string::npos);

    p.command = bridge + " --fault wrong-vocab";
    Captured vocab;
    EXPECT_EQ(cli::cmd_parity(p, vocab.io()), 5);
    p.command = bridge + " --fault truncate";
    Captured trunc;
    EXPECT_EQ(cli::cmd_parity(p, trunc.io()), 3);
    p.command = bridge + " --fault hang";
    p.timeout_ms = 100;
    Captured hang;
    EXPECT_EQ(cli::cmd_parity(p, hang.io()), 6);

    cli::ParityOptions both;
    both.command = bridge;
    both.address = "127.0.0.1:1";
    Captured conflict;
    EXPECT_EQ(cli::cmd_parity(both, conflict.io()), 2);
}

TEST(Cli, RunOverBridge) {
    TempDir d;
    const std::string text = std::string(kSmall) + "provider = bridge\nbridge.command = " + MAD_MOCK_BRIDGE +
                             " --n-per-category 10\n";
    const std::string cfg = config_file(d, "bridge.cfg", text);
    const std::string local = config_file(d, "local.cfg", kSmall);
    Captured a, b;
    ASSERT_EQ(cli::cmd_run({cfg, d.str("remote")}, a.io()), 0) << a.err.str();
    ASSERT_EQ(cli::cmd_run({local, d.str("local")}, b.io()), 0);
    EXPECT_EQ(slurp(d / "remote/metrics.csv"), slurp(d / "local/metrics.csv"));
    EXPECT_EQ(slurp(d / "remote/results.jsonl"), slurp(d / "local/results.jsonl"));
}

TEST(Binary, ExitCodes) {
    TempDir d;
    const std::string mad = MAD_CLI;
    const std::string good = config_file(d, "good.cfg", kSmall);
    const std::string bad = config_file(d, "bad.cfg", "strategy = fancy\n");
    EXPECT_EQ(shell(mad + " run " + good + " -o " + d.str("out")), 0);
    EXPECT_EQ(shell(mad + " replay " + d.str("out")), 0);
    EXPECT_EQ(shell(mad + " run " + bad + " -o " + d.str("out2")), 2);
    EXPECT_EQ(shell(mad + " run"), 2);
    EXPECT_EQ(shell(mad + " frobnicate"), 2);
    EXPECT_EQ(shell(mad + " suite-check " + good), 0);
    EXPECT_EQ(shell(mad + " parity --bridge-command '" + std::string(MAD_MOCK_BRIDGE) +
                    " --fault wrong-vocab --n-per-category 10' --n-per-category 10"),
              5);
}

TEST(Config, ShippedConfigsParse) {
    int n = 0;
    for (const auto& e : fs::directory_iterator(MAD_CONFIG_DIR)) {
        if (e.path().extension() != ".cfg") continue;
        ++n;
        EXPECT_NO_THROW(parse_run_config(slurp(e.path()))) << e.path();
    }
    EXPECT_GE(n, 5);
}
