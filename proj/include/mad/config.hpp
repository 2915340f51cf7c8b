#pragma once

// Run configuration: a flat `key = value` text file. Lines starting with '#'
// are comments. Every key may appear once; unknown keys are errors.
//
//   seed = 7
//   strategy = mad
//   gamma = 2.5
//   prompts = builtin
//   provider = synth

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mad/core.hpp"
#include "mad/harness.hpp"
#include "mad/strategies.hpp"
#include "mad/weights.hpp"

namespace mad {

inline constexpr const char* kVersion = "0.1.0";

enum class ProviderKind : std::uint8_t { Synth, Bridge };

struct RunConfig {
    SuiteConfig suite;
    DecodingParams params;
    int max_tokens = 8;
    int workers = 1;
    bool oracle_weights = false;
    std::optional<PromptRegistry> prompts;
    ProviderKind provider = ProviderKind::Synth;
    std::string bridge_command;
    std::string bridge_address;
    int bridge_timeout_ms = 5000;
    std::string output_dir = "runs/default";
    std::vector<double> gammas = default_gammas();
    /// Verbatim file contents; hashed into the manifest.
    std::string text;

    EvalOptions eval_options() const {
        EvalOptions o;
        o.workers = workers;
        o.max_tokens = max_tokens;
        o.oracle_weights = oracle_weights;
        return o;
    }
};

/// A configuration error tied to a source line (0 when not line-specific).
class ConfigError : public Error {
public:
    ConfigError(int line, const std::string& msg)
        : Error(ErrorKind::Configuration, line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string config_hash(const std::string& text) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
    return buf;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::optional<double> to_double(const std::string& s) {
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (*end != '\0' || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::optional<long long> to_int(const std::string& s) {
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (*end != '\0' || errno == ERANGE) return std::nullopt;
    return v;
}

} // namespace detail

/// Parses "0.5,1.0,1.5". Throws ConfigError on a non-numeric or negative entry.
inline std::vector<double> parse_gamma_list(const std::string& s, int line = 0) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        auto v = detail::to_double(item);
        if (!v || *v < 0.0) throw ConfigError(line, "gammas: '" + item + "' is not a non-negative number");
        out.push_back(*v);
    }
    if (out.empty()) throw ConfigError(line, "gammas: empty list");
    return out;
}

inline RunConfig parse_run_config(const std::string& text) {
    RunConfig c;
    c.text = text;
    std::map<std::string, int> seen;
    std::map<int, std::string> custom_prompts;
    std::map<int, int> custom_prompt_lines;
    bool builtin_prompts = false;

    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = detail::trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(lineno, "expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(lineno, "missing key");
        if (auto it = seen.find(key); it != seen.end()) {
            throw ConfigError(lineno, "field '" + key + "' repeats line " + std::to_string(it->second));
        }
        seen[key] = lineno;

        auto bad = [&](const std::string& what) { return ConfigError(lineno, "field '" + key + "': " + what); };
        auto real = [&](double lo) {
            auto v = detail::to_double(value);
            if (!v) throw bad("expected a number, got '" + value + "'");
            if (*v < lo) throw bad("must be >= " + detail::fmt(lo, 2));
            return *v;
        };
        auto integer = [&](long long lo) {
            auto v = detail::to_int(value);
            if (!v) throw bad("expected an integer, got '" + value + "'");
            if (*v < lo) throw bad("must be >= " + std::to_string(lo));
            return *v;
        };
        auto flag = [&]() {
            if (value == "true") return true;
            if (value == "false") return false;
            throw bad("expected true or false, got '" + value + "'");
        };

        if (key == "seed") {
            c.suite.seed = static_cast<std::uint64_t>(integer(0));
        } else if (key == "n_per_category") {
            c.suite.n_per_category = static_cast<int>(integer(1));
        } else if (key == "delta_min") {
            c.suite.delta_min = real(0.0);
        } else if (key == "delta_max") {
            c.suite.delta_max = real(0.0);
        } else if (key == "jitter_frac") {
            c.suite.jitter_frac = real(0.0);
            if (c.suite.jitter_frac >= 0.25) throw bad("must be < 0.25");
        } else if (key == "max_attempts") {
            c.suite.max_attempts = static_cast<int>(integer(1));
        } else if (key == "max_tokens") {
            c.max_tokens = static_cast<int>(integer(1));
        } else if (key == "strategy") {
            auto s = parse_strategy(value);
            if (!s) throw bad("unknown strategy '" + value + "'");
            c.params.strategy = *s;
        } else if (key == "gamma") {
            c.params.gamma = real(0.0);
        } else if (key == "alpha") {
            c.params.alpha = real(0.0);
        } else if (key == "alpha_av") {
            c.params.alpha_av = real(0.0);
        } else if (key == "alpha_v") {
            c.params.alpha_v = real(0.0);
        } else if (key == "alpha_a") {
            c.params.alpha_a = real(0.0);
        } else if (key == "mask") {
            try {
                c.params.mask = WeightMask::parse(value);
            } catch (const Error& e) {
                throw bad(e.what());
            }
            if (c.params.mask.full()) throw bad("cannot mask every weight");
        } else if (key == "mask_semantics") {
            if (value == "renormalize") c.params.mask_semantics = MaskSemantics::Renormalize;
            else if (value == "resoftmax") c.params.mask_semantics = MaskSemantics::Resoftmax;
            else throw bad("expected renormalize or resoftmax, got '" + value + "'");
        } else if (key == "argmax_joint") {
            if (value == "pair") c.params.argmax_joint = ArgmaxJoint::JointPair;
            else if (value == "lines") c.params.argmax_joint = ArgmaxJoint::JointLines;
            else throw bad("expected pair or lines, got '" + value + "'");
        } else if (key == "prompt_variant") {
            c.params.prompt_id = static_cast<int>(integer(0));
        } else if (key == "per_step_weights") {
            c.params.per_step_weights = flag();
        } else if (key == "strict_all_branches") {
            c.params.strict_all_branches = flag();
        } else if (key == "oracle_weights") {
            c.oracle_weights = flag();
        } else if (key == "prompts") {
            if (value != "builtin") throw bad("only 'builtin' is recognized; list variants as prompt.N = text");
            builtin_prompts = true;
        } else if (key.rfind("prompt.", 0) == 0) {
            auto id = detail::to_int(key.substr(7));
            if (!id || *id < 0) throw ConfigError(lineno, "field '" + key + "': prompt id must be a non-negative integer");
            if (value.empty()) throw bad("empty prompt text");
            custom_prompts[static_cast<int>(*id)] = value;
            custom_prompt_lines[static_cast<int>(*id)] = lineno;
        } else if (key == "provider") {
            if (value == "synth") c.provider = ProviderKind::Synth;
            else if (value == "bridge") c.provider = ProviderKind::Bridge;
            else throw bad("expected synth or bridge, got '" + value + "'");
        } else if (key == "bridge.command") {
            c.bridge_command = value;
        } else if (key == "bridge.address") {
            c.bridge_address = value;
        } else if (key == "bridge.timeout_ms") {
            c.bridge_timeout_ms = static_cast<int>(integer(1));
        } else if (key == "output_dir") {
            if (value.empty()) throw bad("empty path");
            c.output_dir = value;
        } else if (key == "workers") {
            c.workers = static_cast<int>(integer(1));
        } else if (key == "gammas") {
            c.gammas = parse_gamma_list(value, lineno);
        } else {
            throw ConfigError(lineno, "unknown field '" + key + "'");
        }
    }

    auto line_of = [&](const char* key) {
        auto it = seen.find(key);
        return it == seen.end() ? 0 : it->second;
    };

    if (builtin_prompts && !custom_prompts.empty()) {
        throw ConfigError(line_of("prompts"), "field 'prompts': cannot combine builtin with prompt.N entries");
    }
    if (builtin_prompts) {
        c.prompts = PromptRegistry::builtin();
    } else if (!custom_prompts.empty()) {
        PromptRegistry r;
        for (const auto& [id, txt] : custom_prompts) {
            if (id >= c.suite.prompt_variants) {
                throw ConfigError(custom_prompt_lines[id], "field 'prompt." + std::to_string(id) + "': id must be < " +
                                                               std::to_string(c.suite.prompt_variants));
            }
            r.add({id, txt});
        }
        c.prompts = std::move(r);
    }

    if (c.suite.delta_max < c.suite.delta_min) {
        throw ConfigError(line_of("delta_max"), "field 'delta_max': must be >= delta_min");
    }
    if (c.prompts && !c.prompts->contains(c.params.prompt_id)) {
        throw ConfigError(line_of("prompt_variant"), "field 'prompt_variant': id " +
                                                         std::to_string(c.params.prompt_id) + " is not registered");
    }
    if (c.params.weighted() && !c.oracle_weights && !c.prompts) {
        throw ConfigError(line_of("strategy"), std::string("strategy '") + to_string(c.params.strategy) +
                                                   "' extracts weights but no prompt registry is configured");
    }
    if (c.params.strategy == StrategyKind::MadMasked && c.params.mask.empty()) {
        throw ConfigError(line_of("strategy"), "field 'strategy': mad_masked needs a non-empty 'mask'");
    }
    if (c.provider == ProviderKind::Bridge) {
        if (c.bridge_command.empty() == c.bridge_address.empty()) {
            throw ConfigError(line_of("provider"), "provider 'bridge' needs exactly one of bridge.command, bridge.address");
        }
    } else if (!c.bridge_command.empty() || !c.bridge_address.empty()) {
        throw ConfigError(line_of(c.bridge_command.empty() ? "bridge.address" : "bridge.command"),
                          "bridge settings given but provider is not 'bridge'");
    }
    try {
        c.suite.validate();
        c.params.validate();
    } catch (const Error& e) {
        throw ConfigError(0, e.what());
    }
    return c;
}

/// MAD_OUTPUT_ROOT prefixes a relative output_dir; MAD_WORKERS overrides workers.
inline void apply_env_overrides(RunConfig& c) {
    if (const char* root = std::getenv("MAD_OUTPUT_ROOT"); root && *root && !c.output_dir.empty() &&
                                                           c.output_dir.front() != '/') {
        std::string r = root;
        if (r.back() != '/') r += '/';
        c.output_dir = r + c.output_dir;
    }
    if (const char* w = std::getenv("MAD_WORKERS"); w && *w) {
        auto v = detail::to_int(w);
        if (!v || *v < 1) throw ConfigError(0, std::string("MAD_WORKERS: expected a positive integer, got '") + w + "'");
        c.workers = static_cast<int>(*v);
    }
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError(0, "cannot read config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    RunConfig c = parse_run_config(ss.str());
    apply_env_overrides(c);
    return c;
}

} // namespace mad
