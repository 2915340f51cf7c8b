#pragma once

// The modality-conditioned logit provider: the engine's stand-in for an
// audio-visual LLM. A provider maps (modality configuration, context) to a
// full next-token logit vector.

#include <array>
#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "mad/core.hpp"

namespace mad {

enum class ModalityState : std::uint8_t { Standard, Perturbed };

inline const char* to_string(ModalityState s) {
    return s == ModalityState::Standard ? "standard" : "perturbed";
}

inline ModalityState parse_modality_state(const std::string& s) {
    if (s == "standard") return ModalityState::Standard;
    if (s == "perturbed") return ModalityState::Perturbed;
    throw Error(ErrorKind::Protocol, "unknown modality state '" + s + "'");
}

struct ModalityConfig {
    ModalityState video = ModalityState::Standard;
    ModalityState audio = ModalityState::Standard;

    friend bool operator==(const ModalityConfig&, const ModalityConfig&) = default;
};

// The four branches, named after which modality is degraded.
inline constexpr ModalityConfig kClean{ModalityState::Standard, ModalityState::Standard};
inline constexpr ModalityConfig kVideoPerturbed{ModalityState::Perturbed, ModalityState::Standard};
inline constexpr ModalityConfig kAudioPerturbed{ModalityState::Standard, ModalityState::Perturbed};
inline constexpr ModalityConfig kBothPerturbed{ModalityState::Perturbed, ModalityState::Perturbed};

inline constexpr std::array<ModalityConfig, 4> kAllConfigs{kClean, kVideoPerturbed, kAudioPerturbed,
                                                           kBothPerturbed};

inline std::size_t branch_index(ModalityConfig cfg) {
    return (cfg.video == ModalityState::Perturbed ? 1u : 0u) + (cfg.audio == ModalityState::Perturbed ? 2u : 0u);
}

inline std::string branch_name(ModalityConfig cfg) {
    static const char* names[] = {"vaq", "~vaq", "v~aq", "~v~aq"};
    return names[branch_index(cfg)];
}

enum class QueryKind : std::uint8_t { Generation, ModalityQuery };

struct QueryMode {
    QueryKind kind = QueryKind::Generation;
    int prompt_id = 0;

    static QueryMode generation() { return {}; }
    static QueryMode modality_query(int prompt) { return {QueryKind::ModalityQuery, prompt}; }

    friend bool operator==(const QueryMode&, const QueryMode&) = default;
};

/// Everything a provider conditions on besides the modality configuration.
struct Context {
    std::int64_t question_id = 0;
    std::vector<TokenId> question;
    std::vector<TokenId> prefix;
    QueryMode mode;

    Context with_prefix(std::vector<TokenId> p) const {
        Context c = *this;
        c.prefix = std::move(p);
        return c;
    }

    Context as_query(int prompt_id) const {
        Context c = *this;
        c.prefix.clear();
        c.mode = QueryMode::modality_query(prompt_id);
        return c;
    }

    void validate(const Vocabulary& vocab) const {
        for (std::size_t i = 0; i < prefix.size(); ++i) {
            require(vocab.valid(prefix[i]), ErrorKind::InvalidInput, "prefix token out of range");
            require(prefix[i] != vocab.eos() || i + 1 == prefix.size(), ErrorKind::InvalidInput,
                    "EOS inside prefix");
        }
        for (TokenId t : question) {
            require(vocab.valid(t), ErrorKind::InvalidInput, "question token out of range");
        }
    }
};

/// Logits of 'both', 'video', 'audio' under the modality query prompt.
struct MetaLogits {
    double both = 0.0;
    double video = 0.0;
    double audio = 0.0;

    friend bool operator==(const MetaLogits&, const MetaLogits&) = default;
};

/// The four modality-conditioned logit vectors for one decoding step.
/// A strategy may leave branches it does not need empty.
struct BranchLogits {
    std::array<LogitVector, 4> by_config;

    const LogitVector& clean() const { return by_config[0]; }
    const LogitVector& video_perturbed() const { return by_config[1]; }
    const LogitVector& audio_perturbed() const { return by_config[2]; }
    const LogitVector& both_perturbed() const { return by_config[3]; }

    const LogitVector& operator[](ModalityConfig cfg) const { return by_config[branch_index(cfg)]; }
    LogitVector& operator[](ModalityConfig cfg) { return by_config[branch_index(cfg)]; }

    bool has(ModalityConfig cfg) const { return !by_config[branch_index(cfg)].empty(); }

    static BranchLogits of(LogitVector vaq, LogitVector vt_aq, LogitVector v_atq, LogitVector vt_atq) {
        BranchLogits b;
        b.by_config = {std::move(vaq), std::move(vt_aq), std::move(v_atq), std::move(vt_atq)};
        return b;
    }
};

/// Abstract provider. The public entry points validate the context and keep
/// an exact, thread-safe count of forward passes.
class LogitProvider {
public:
    virtual ~LogitProvider() = default;

    virtual const Vocabulary& vocabulary() const = 0;

    LogitVector eval_logits(ModalityConfig cfg, const Context& ctx) {
        require(ctx.mode.kind == QueryKind::Generation, ErrorKind::InvalidInput,
                "eval_logits requires generation mode");
        return eval_any(cfg, ctx);
    }

    /// Full-vocabulary logits in either query mode; counts as one call.
    LogitVector eval_any(ModalityConfig cfg, const Context& ctx) {
        ctx.validate(vocabulary());
        calls_.fetch_add(1, std::memory_order_relaxed);
        LogitVector out = forward(cfg, ctx);
        check_length(out);
        return out;
    }

    /// Single forward pass with the modality query prompt on the clean input.
    MetaLogits eval_modality_query(const Context& ctx) {
        require(ctx.mode.kind == QueryKind::ModalityQuery, ErrorKind::InvalidInput,
                "eval_modality_query requires modality-query mode");
        const Vocabulary& vocab = vocabulary();
        ctx.validate(vocab);
        calls_.fetch_add(1, std::memory_order_relaxed);
        LogitVector out = forward(kClean, ctx);
        check_length(out);
        return {out[static_cast<std::size_t>(vocab.both())], out[static_cast<std::size_t>(vocab.video())],
                out[static_cast<std::size_t>(vocab.audio())]};
    }

    BranchLogits eval_branches(const Context& ctx) {
        BranchLogits b;
        for (ModalityConfig cfg : kAllConfigs) {
            b[cfg] = eval_logits(cfg, ctx);
        }
        return b;
    }

    std::uint64_t calls() const noexcept { return calls_.load(std::memory_order_relaxed); }

protected:
    /// Full-vocabulary logits for either query mode.
    virtual LogitVector forward(ModalityConfig cfg, const Context& ctx) = 0;

private:
    void check_length(const LogitVector& out) const {
        require(out.size() == vocabulary().size(), ErrorKind::Protocol,
                "provider returned " + std::to_string(out.size()) + " logits, expected " +
                    std::to_string(vocabulary().size()));
        out.check_finite();
    }

    std::atomic<std::uint64_t> calls_{0};
};

} // namespace mad
