#pragma once

// Logit fusion rules. Every rule is a pure function from branch logits (and
// parameters) to a fused logit vector; decoding then takes its argmax.

#include <optional>
#include <string>
#include <vector>

#include "mad/core.hpp"
#include "mad/provider.hpp"
#include "mad/weights.hpp"

namespace mad {

enum class StrategyKind : std::uint8_t {
    Greedy,
    VcdExtended,
    FourBranch,
    Mad,
    MadUniform,
    MadArgmax,
    MadMasked,
};

inline const char* to_string(StrategyKind k) {
    switch (k) {
    case StrategyKind::Greedy: return "greedy";
    case StrategyKind::VcdExtended: return "vcd_extended";
    case StrategyKind::FourBranch: return "four_branch";
    case StrategyKind::Mad: return "mad";
    case StrategyKind::MadUniform: return "mad_uniform";
    case StrategyKind::MadArgmax: return "mad_argmax";
    case StrategyKind::MadMasked: return "mad_masked";
    }
    return "?";
}

inline std::optional<StrategyKind> parse_strategy(const std::string& s) {
    for (StrategyKind k : {StrategyKind::Greedy, StrategyKind::VcdExtended, StrategyKind::FourBranch,
                           StrategyKind::Mad, StrategyKind::MadUniform, StrategyKind::MadArgmax,
                           StrategyKind::MadMasked}) {
        if (s == to_string(k)) {
            return k;
        }
    }
    return std::nullopt;
}

/// Which lines MadArgmax keeps when the joint weight w_av dominates.
enum class ArgmaxJoint : std::uint8_t {
    /// (1+g) l_vaq - g l_~v~aq: one contrast, two branches.
    JointPair,
    /// Sum of the two joint lines of the four-branch rule: three branches.
    JointLines,
};

struct DecodingParams {
    double gamma = 2.5;
    StrategyKind strategy = StrategyKind::Mad;
    double alpha = 1.0;                 // VcdExtended
    double alpha_av = 1.0;              // FourBranch
    double alpha_v = 1.0;
    double alpha_a = 1.0;
    WeightMask mask;                    // MadMasked
    MaskSemantics mask_semantics = MaskSemantics::Renormalize;
    ArgmaxJoint argmax_joint = ArgmaxJoint::JointPair;
    int prompt_id = PromptRegistry::kCanonical;
    bool per_step_weights = false;
    bool strict_all_branches = false;
    /// Supplied weights for Mad/MadArgmax/MadMasked; skips the query call.
    std::optional<ModalityWeights> fixed_weights;

    bool weighted() const {
        return strategy == StrategyKind::Mad || strategy == StrategyKind::MadArgmax ||
               strategy == StrategyKind::MadMasked;
    }

    /// True when the strategy consumes a modality query call.
    bool needs_weights() const { return weighted() && !fixed_weights; }

    void validate() const {
        auto ok = [](double x) { return std::isfinite(x) && x >= 0.0; };
        require(ok(gamma), ErrorKind::InvalidInput, "gamma must be finite and >= 0");
        require(ok(alpha), ErrorKind::InvalidInput, "alpha must be finite and >= 0");
        require(ok(alpha_av) && ok(alpha_v) && ok(alpha_a), ErrorKind::InvalidInput,
                "four-branch alphas must be finite and >= 0");
        require(!mask.full(), ErrorKind::InvalidInput, "mask disables every weight");
        require(!fixed_weights || fixed_weights->on_simplex(), ErrorKind::InvalidInput,
                "fixed weights must lie on the simplex");
    }
};

/// (1 + alpha) clean - alpha degraded.
inline LogitVector cd_logits(const LogitVector& clean, const LogitVector& degraded, double alpha) {
    require_same_size(clean, degraded);
    LogitVector out(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        out[i] = (1.0 + alpha) * clean[i] - alpha * degraded[i];
    }
    return out;
}

/// l_m + gamma w_m (l_m - l_~m): contrast strength scaled by modality relevance.
inline LogitVector weighted_cd_logits(const LogitVector& standard, const LogitVector& perturbed, double gamma,
                                      double weight) {
    require_same_size(standard, perturbed);
    LogitVector out(standard.size());
    for (std::size_t i = 0; i < standard.size(); ++i) {
        out[i] = standard[i] + gamma * weight * (standard[i] - perturbed[i]);
    }
    return out;
}

namespace detail {

inline void require_branches(const BranchLogits& b, std::initializer_list<ModalityConfig> cfgs) {
    const LogitVector* first = nullptr;
    for (ModalityConfig cfg : cfgs) {
        require(b.has(cfg), ErrorKind::InvalidInput, "branch " + branch_name(cfg) + " missing");
        if (first) {
            require_same_size(*first, b[cfg]);
        }
        first = &b[cfg];
    }
}

inline void accumulate(LogitVector& acc, const LogitVector& term) {
    require_same_size(acc, term);
    for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i] += term[i];
    }
}

} // namespace detail

/// Contrast the clean branch against all three perturbed branches with one alpha.
inline LogitVector vcd_extended_logits(const BranchLogits& b, double alpha) {
    detail::require_branches(b, {kClean, kVideoPerturbed, kAudioPerturbed, kBothPerturbed});
    const std::size_t n = b.clean().size();
    LogitVector out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = (1.0 + 3.0 * alpha) * b.clean()[i] - alpha * b.video_perturbed()[i] -
                 alpha * b.audio_perturbed()[i] - alpha * b.both_perturbed()[i];
    }
    return out;
}

/// Sum of four contrast lines:
///   visual CD with audio present, audio CD with video present (both alpha_av),
///   visual CD with audio absent (alpha_v), audio CD with video absent (alpha_a).
inline LogitVector four_branch_logits(const BranchLogits& b, double alpha_av, double alpha_v, double alpha_a) {
    detail::require_branches(b, {kClean, kVideoPerturbed, kAudioPerturbed, kBothPerturbed});
    LogitVector out = cd_logits(b.clean(), b.video_perturbed(), alpha_av);
    detail::accumulate(out, cd_logits(b.clean(), b.audio_perturbed(), alpha_av));
    detail::accumulate(out, cd_logits(b.audio_perturbed(), b.both_perturbed(), alpha_v));
    detail::accumulate(out, cd_logits(b.video_perturbed(), b.both_perturbed(), alpha_a));
    return out;
}

/// Modality-adaptive decoding: the four-branch rule with alpha_m = gamma w_m.
/// Evaluated line by line in the weighted-contrast form rather than through
/// four_branch_logits, so the two stay independent routes to the same value.
inline LogitVector mad_logits(const BranchLogits& b, double gamma, const ModalityWeights& w) {
    detail::require_branches(b, {kClean, kVideoPerturbed, kAudioPerturbed, kBothPerturbed});
    LogitVector out = weighted_cd_logits(b.clean(), b.video_perturbed(), gamma, w.av);
    detail::accumulate(out, weighted_cd_logits(b.clean(), b.audio_perturbed(), gamma, w.av));
    detail::accumulate(out, weighted_cd_logits(b.audio_perturbed(), b.both_perturbed(), gamma, w.v));
    detail::accumulate(out, weighted_cd_logits(b.video_perturbed(), b.both_perturbed(), gamma, w.a));
    return out;
}

/// Branches MadArgmax needs for a given dominant weight.
inline std::vector<ModalityConfig> argmax_branches(WeightSlot slot, ArgmaxJoint joint) {
    switch (slot) {
    case WeightSlot::Video: return {kAudioPerturbed, kBothPerturbed};
    case WeightSlot::Audio: return {kVideoPerturbed, kBothPerturbed};
    case WeightSlot::Both:
        if (joint == ArgmaxJoint::JointLines) {
            return {kClean, kVideoPerturbed, kAudioPerturbed};
        }
        return {kClean, kBothPerturbed};
    }
    return {};
}

/// The single contrast kept by MadArgmax, at full strength gamma.
inline LogitVector argmax_line_logits(const BranchLogits& b, double gamma, WeightSlot slot, ArgmaxJoint joint) {
    switch (slot) {
    case WeightSlot::Video:
        detail::require_branches(b, {kAudioPerturbed, kBothPerturbed});
        return cd_logits(b.audio_perturbed(), b.both_perturbed(), gamma);
    case WeightSlot::Audio:
        detail::require_branches(b, {kVideoPerturbed, kBothPerturbed});
        return cd_logits(b.video_perturbed(), b.both_perturbed(), gamma);
    case WeightSlot::Both:
        if (joint == ArgmaxJoint::JointLines) {
            detail::require_branches(b, {kClean, kVideoPerturbed, kAudioPerturbed});
            LogitVector out = cd_logits(b.clean(), b.video_perturbed(), gamma);
            detail::accumulate(out, cd_logits(b.clean(), b.audio_perturbed(), gamma));
            return out;
        }
        detail::require_branches(b, {kClean, kBothPerturbed});
        return cd_logits(b.clean(), b.both_perturbed(), gamma);
    }
    throw Error(ErrorKind::InvalidInput, "bad weight slot");
}

/// Branches the strategy reads at each step (before the strict-all override).
inline std::vector<ModalityConfig> required_branches(const DecodingParams& p,
                                                     const std::optional<ModalityWeights>& w) {
    switch (p.strategy) {
    case StrategyKind::Greedy: return {kClean};
    case StrategyKind::MadArgmax:
        require(w.has_value(), ErrorKind::InvalidInput, "mad_argmax needs modality weights");
        return argmax_branches(dominant_slot(*w), p.argmax_joint);
    default: return {kAllConfigs.begin(), kAllConfigs.end()};
    }
}

inline LogitVector fuse(const BranchLogits& b, const DecodingParams& p, const std::optional<ModalityWeights>& w) {
    auto weights = [&]() -> const ModalityWeights& {
        require(w.has_value(), ErrorKind::InvalidInput,
                std::string(to_string(p.strategy)) + " needs modality weights");
        return *w;
    };
    switch (p.strategy) {
    case StrategyKind::Greedy:
        detail::require_branches(b, {kClean});
        return b.clean();
    case StrategyKind::VcdExtended: return vcd_extended_logits(b, p.alpha);
    case StrategyKind::FourBranch: return four_branch_logits(b, p.alpha_av, p.alpha_v, p.alpha_a);
    case StrategyKind::Mad: return mad_logits(b, p.gamma, weights());
    case StrategyKind::MadUniform: return mad_logits(b, p.gamma, uniform_weights());
    case StrategyKind::MadArgmax:
        return argmax_line_logits(b, p.gamma, dominant_slot(weights()), p.argmax_joint);
    case StrategyKind::MadMasked: return mad_logits(b, p.gamma, masked_weights(weights(), p.mask));
    }
    throw Error(ErrorKind::InvalidInput, "unknown strategy");
}

} // namespace mad
