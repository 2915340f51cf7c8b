#pragma once

// Autoregressive decoding loop: modality weights once per sequence, then per
// step evaluate the branches the strategy needs, fuse, take the argmax and
// stop at EOS or the token limit. Every step is traced.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mad/core.hpp"
#include "mad/provider.hpp"
#include "mad/strategies.hpp"
#include "mad/weights.hpp"

namespace mad {

struct GenerationLimits {
    int max_tokens = 16;
    std::chrono::milliseconds call_timeout{5000}; // remote providers only
};

enum class GenerationStatus : std::uint8_t { Completed, Truncated, Aborted };

inline const char* to_string(GenerationStatus s) {
    switch (s) {
    case GenerationStatus::Completed: return "completed";
    case GenerationStatus::Truncated: return "truncated";
    case GenerationStatus::Aborted: return "aborted";
    }
    return "?";
}

struct TopEntry {
    TokenId id = -1;
    double logit = 0.0;
};

struct BranchSummary {
    bool computed = false;
    TokenId argmax = -1;
    std::vector<TopEntry> top;
};

struct StepRecord {
    std::array<BranchSummary, 4> branches; // indexed by branch_index
    std::optional<WeightSlot> dominant;    // MadArgmax only
    TokenId fused_argmax = -1;
    double fused_gap = 0.0;
    TokenId chosen = -1;
    std::uint64_t cumulative_calls = 0;
    double ms = 0.0;
};

struct DecodingTrace {
    std::int64_t question_id = 0;
    DecodingParams params;
    int max_tokens = 0;
    std::optional<MetaLogits> meta_logits;
    std::optional<ModalityWeights> extracted;
    std::optional<ModalityWeights> weights_used;
    std::vector<StepRecord> steps;
    std::uint64_t calls = 0;
    GenerationStatus status = GenerationStatus::Completed;
    std::string error;

    double total_ms() const {
        double t = 0.0;
        for (const StepRecord& s : steps) {
            t += s.ms;
        }
        return t;
    }
};

struct GenerationResult {
    std::vector<TokenId> tokens;
    DecodingTrace trace;

    bool ok() const { return trace.status != GenerationStatus::Aborted; }
};

/// Weights a Mad-family strategy actually applies, from the raw meta logits.
inline ModalityWeights resolve_weights(const DecodingParams& p, const MetaLogits& z) {
    const ModalityWeights w = weights_from_logits(z);
    switch (p.strategy) {
    case StrategyKind::MadMasked:
        return p.mask_semantics == MaskSemantics::Resoftmax ? masked_weights_resoftmax(z, p.mask)
                                                            : masked_weights(w, p.mask);
    case StrategyKind::MadArgmax: return argmax_weights(w);
    default: return w;
    }
}

/// Number of branch evaluations one step costs.
inline std::size_t branch_calls_per_step(const DecodingParams& p, std::optional<WeightSlot> dominant) {
    if (p.strict_all_branches) {
        return 4;
    }
    switch (p.strategy) {
    case StrategyKind::Greedy: return 1;
    case StrategyKind::MadArgmax:
        return dominant == WeightSlot::Both && p.argmax_joint == ArgmaxJoint::JointLines ? 3 : 2;
    default: return 4;
    }
}

/// Provider calls a trace must account for, derived from the strategy alone.
inline std::uint64_t expected_calls(const DecodingTrace& trace) {
    const DecodingParams& p = trace.params;
    std::uint64_t total = 0;
    if (p.needs_weights()) {
        total += p.per_step_weights ? trace.steps.size() : 1;
    }
    for (const StepRecord& s : trace.steps) {
        total += branch_calls_per_step(p, s.dominant);
    }
    return total;
}

namespace detail {

inline BranchSummary summarize(const LogitVector& l, std::size_t k = 3) {
    BranchSummary s;
    s.computed = true;
    s.argmax = argmax_token(l);
    std::vector<TokenId> ids(l.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        ids[i] = static_cast<TokenId>(i);
    }
    k = std::min(k, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), [&](TokenId a, TokenId b) {
        double la = l[static_cast<std::size_t>(a)];
        double lb = l[static_cast<std::size_t>(b)];
        return la > lb || (la == lb && a < b);
    });
    for (std::size_t i = 0; i < k; ++i) {
        s.top.push_back({ids[i], l[static_cast<std::size_t>(ids[i])]});
    }
    return s;
}

inline bool is_provider_failure(ErrorKind k) {
    return k == ErrorKind::Transport || k == ErrorKind::Timeout || k == ErrorKind::Protocol ||
           k == ErrorKind::VocabMismatch;
}

} // namespace detail

/// Runs one sequence. Provider failures do not throw: the result carries an
/// Aborted status, the error text and every step completed so far.
inline GenerationResult generate(LogitProvider& provider, const DecodingParams& params, const Context& ctx,
                                 const GenerationLimits& limits) {
    params.validate();
    require(ctx.mode.kind == QueryKind::Generation, ErrorKind::InvalidInput, "generate needs a generation context");
    require(ctx.prefix.empty(), ErrorKind::InvalidInput, "generate starts from an empty prefix");
    require(limits.max_tokens > 0, ErrorKind::InvalidInput, "max tokens must be positive");

    using clock = std::chrono::steady_clock;
    const TokenId eos = provider.vocabulary().eos();

    GenerationResult result;
    DecodingTrace& trace = result.trace;
    trace.question_id = ctx.question_id;
    trace.params = params;
    trace.max_tokens = limits.max_tokens;

    std::optional<ModalityWeights> weights;
    auto refresh_weights = [&](const Context& step_ctx) {
        Context q = step_ctx;
        q.mode = QueryMode::modality_query(params.prompt_id);
        const MetaLogits z = provider.eval_modality_query(q);
        ++trace.calls;
        trace.meta_logits = z;
        trace.extracted = weights_from_logits(z);
        weights = resolve_weights(params, z);
        trace.weights_used = weights;
    };

    try {
        if (params.strategy == StrategyKind::MadUniform) {
            weights = uniform_weights();
            trace.weights_used = weights;
        } else if (params.weighted() && params.fixed_weights) {
            trace.extracted = params.fixed_weights;
            weights = params.strategy == StrategyKind::MadArgmax ? argmax_weights(*params.fixed_weights)
                      : params.strategy == StrategyKind::MadMasked ? masked_weights(*params.fixed_weights, params.mask)
                                                                   : *params.fixed_weights;
            trace.weights_used = weights;
        } else if (params.needs_weights() && !params.per_step_weights) {
            refresh_weights(ctx);
        }

        while (static_cast<int>(result.tokens.size()) < limits.max_tokens) {
            const auto t0 = clock::now();
            const Context step_ctx = ctx.with_prefix(result.tokens);
            if (params.needs_weights() && params.per_step_weights) {
                refresh_weights(step_ctx);
            }

            StepRecord rec;
            if (params.strategy == StrategyKind::MadArgmax) {
                rec.dominant = dominant_slot(*weights);
            }
            std::vector<ModalityConfig> needed = params.strict_all_branches
                                                     ? std::vector<ModalityConfig>(kAllConfigs.begin(), kAllConfigs.end())
                                                     : required_branches(params, weights);
            BranchLogits branches;
            for (ModalityConfig cfg : needed) {
                branches[cfg] = provider.eval_logits(cfg, step_ctx);
                ++trace.calls;
                rec.branches[branch_index(cfg)] = detail::summarize(branches[cfg]);
            }

            const LogitVector fused = fuse(branches, params, weights);
            rec.fused_argmax = argmax_token(fused);
            rec.fused_gap = top_gap(fused.values());
            rec.chosen = rec.fused_argmax;
            rec.cumulative_calls = trace.calls;
            rec.ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            trace.steps.push_back(rec);
            result.tokens.push_back(rec.chosen);
            if (rec.chosen == eos) {
                trace.status = GenerationStatus::Completed;
                return result;
            }
        }
        trace.status = GenerationStatus::Truncated;
    } catch (const Error& e) {
        if (!detail::is_provider_failure(e.kind())) {
            throw;
        }
        trace.status = GenerationStatus::Aborted;
        trace.error = e.what();
    }
    return result;
}

struct ReplayResult {
    bool identical = true;
    std::optional<std::size_t> first_divergent_step;

    explicit operator bool() const { return identical; }
};

/// Re-runs the traced generation and compares it token for token.
inline ReplayResult replay_check(const DecodingTrace& trace, LogitProvider& provider, const DecodingParams& params,
                                 const Context& ctx) {
    GenerationLimits limits;
    limits.max_tokens = trace.max_tokens > 0 ? trace.max_tokens : static_cast<int>(trace.steps.size());
    GenerationResult again = generate(provider, params, ctx, limits);
    const std::vector<StepRecord>& ref = trace.steps;
    const std::size_t n = std::min(ref.size(), again.trace.steps.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (ref[i].chosen != again.trace.steps[i].chosen) {
            return {false, i};
        }
    }
    if (ref.size() != again.trace.steps.size() || trace.status != again.trace.status) {
        return {false, n};
    }
    return {};
}

// JSONL serialization ---------------------------------------------------------

inline nlohmann::json weights_json(const ModalityWeights& w) { return {{"av", w.av}, {"v", w.v}, {"a", w.a}}; }

inline nlohmann::json params_json(const DecodingParams& p) {
    nlohmann::json j{{"strategy", to_string(p.strategy)}, {"gamma", p.gamma}, {"prompt", p.prompt_id}};
    switch (p.strategy) {
    case StrategyKind::VcdExtended: j["alpha"] = p.alpha; break;
    case StrategyKind::FourBranch: j["alphas"] = {p.alpha_av, p.alpha_v, p.alpha_a}; break;
    case StrategyKind::MadMasked:
        j["mask"] = p.mask.str();
        j["mask_semantics"] = p.mask_semantics == MaskSemantics::Renormalize ? "renormalize" : "resoftmax";
        break;
    case StrategyKind::MadArgmax:
        j["argmax_joint"] = p.argmax_joint == ArgmaxJoint::JointPair ? "pair" : "lines";
        break;
    default: break;
    }
    if (p.fixed_weights) j["fixed_weights"] = weights_json(*p.fixed_weights);
    if (p.per_step_weights) j["per_step_weights"] = true;
    if (p.strict_all_branches) j["strict_all_branches"] = true;
    return j;
}

/// One header line (params, weights, status) followed by one line per step.
/// With `timing` false the wall-clock field is omitted so output is
/// reproducible byte for byte.
inline std::string trace_jsonl(const DecodingTrace& t, bool timing = true) {
    nlohmann::json header{{"type", "header"},
                          {"question", t.question_id},
                          {"params", params_json(t.params)},
                          {"max_tokens", t.max_tokens},
                          {"status", to_string(t.status)},
                          {"calls", t.calls},
                          {"steps", t.steps.size()}};
    if (t.meta_logits) {
        header["meta_logits"] = {{"both", t.meta_logits->both}, {"video", t.meta_logits->video},
                                 {"audio", t.meta_logits->audio}};
    }
    if (t.extracted) header["extracted_weights"] = weights_json(*t.extracted);
    if (t.weights_used) header["weights"] = weights_json(*t.weights_used);
    if (!t.error.empty()) header["error"] = t.error;

    std::string out = header.dump() + "\n";
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const StepRecord& s = t.steps[i];
        nlohmann::json branches = nlohmann::json::object();
        for (ModalityConfig cfg : kAllConfigs) {
            const BranchSummary& b = s.branches[branch_index(cfg)];
            if (!b.computed) continue;
            nlohmann::json top = nlohmann::json::array();
            for (const TopEntry& e : b.top) {
                top.push_back({e.id, e.logit});
            }
            branches[branch_name(cfg)] = {{"argmax", b.argmax}, {"top", top}};
        }
        nlohmann::json rec{{"type", "step"},       {"t", i},
                           {"branches", branches}, {"fused_argmax", s.fused_argmax},
                           {"fused_gap", s.fused_gap}, {"chosen", s.chosen},
                           {"calls", s.cumulative_calls}};
        if (s.dominant) rec["dominant"] = to_string(*s.dominant);
        if (timing) rec["ms"] = s.ms;
        out += rec.dump() + "\n";
    }
    return out;
}

/// Reads back the decision fields of trace_jsonl output: question, limits,
/// status, call count and the chosen token of every step.
inline DecodingTrace parse_trace_jsonl(const std::string& text) {
    DecodingTrace t;
    std::istringstream in(text);
    std::string line;
    bool header = false;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const nlohmann::json j = nlohmann::json::parse(line);
            const std::string type = j.at("type").get<std::string>();
            if (type == "header") {
                header = true;
                t.question_id = j.at("question").get<std::int64_t>();
                t.max_tokens = j.at("max_tokens").get<int>();
                t.calls = j.at("calls").get<std::uint64_t>();
                const std::string st = j.at("status").get<std::string>();
                if (st == "completed") t.status = GenerationStatus::Completed;
                else if (st == "truncated") t.status = GenerationStatus::Truncated;
                else t.status = GenerationStatus::Aborted;
            } else if (type == "step") {
                StepRecord s;
                s.chosen = j.at("chosen").get<TokenId>();
                s.fused_argmax = j.at("fused_argmax").get<TokenId>();
                s.cumulative_calls = j.at("calls").get<std::uint64_t>();
                t.steps.push_back(std::move(s));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::InvalidInput, std::string("bad trace: ") + e.what());
    }
    require(header, ErrorKind::InvalidInput, "trace has no header record");
    return t;
}

} // namespace mad
