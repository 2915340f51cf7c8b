#pragma once

// Modality-adaptive weights: softmax over the meta-token logits obtained with
// a modality query prompt, plus the fixed and masked variants used for
// ablations.

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mad/core.hpp"
#include "mad/provider.hpp"

namespace mad {

/// (w_av, w_v, w_a) on the probability simplex.
struct ModalityWeights {
    double av = 1.0 / 3.0;
    double v = 1.0 / 3.0;
    double a = 1.0 / 3.0;

    double sum() const { return av + v + a; }

    bool on_simplex(double tol = 1e-9) const {
        for (double x : {av, v, a}) {
            if (!(x >= -tol && x <= 1.0 + tol)) {
                return false;
            }
        }
        return std::abs(sum() - 1.0) <= tol;
    }

    friend bool operator==(const ModalityWeights&, const ModalityWeights&) = default;
};

enum class WeightSlot : std::uint8_t { Both = 0, Video = 1, Audio = 2 };

/// Largest weight; ties resolve av > v > a.
inline WeightSlot dominant_slot(const ModalityWeights& w) {
    if (w.av >= w.v && w.av >= w.a) return WeightSlot::Both;
    if (w.v >= w.a) return WeightSlot::Video;
    return WeightSlot::Audio;
}

inline const char* to_string(WeightSlot s) {
    switch (s) {
    case WeightSlot::Both: return "av";
    case WeightSlot::Video: return "v";
    case WeightSlot::Audio: return "a";
    }
    return "?";
}

inline ModalityWeights weights_from_logits(const MetaLogits& z) {
    const std::array<double, 3> raw{z.both, z.video, z.audio};
    ProbVector p = softmax(raw);
    return {p[0], p[1], p[2]};
}

struct PromptVariant {
    int id = 0;
    std::string text;
};

/// Query prompt variants keyed by stable id. Id 0 is the canonical prompt.
class PromptRegistry {
public:
    static constexpr int kCanonical = 0;
    static constexpr int kVariantCount = 5;

    static PromptRegistry builtin() {
        PromptRegistry r;
        r.add({0, "To answer this question, which modality is needed (audio, video, or both)?"});
        r.add({1, "Identify which modality is required to answer the question (audio, video, or both)"});
        r.add({2, "Given this question, select the necessary modality for reasoning (audio, video, or both)"});
        r.add({3, "Which modality does this question require (audio, video, or both)"});
        r.add({4, "State the modality relevant for answering this question (audio, video, both)"});
        return r;
    }

    void add(PromptVariant p) {
        require(p.id >= 0, ErrorKind::Configuration, "prompt ids must be non-negative");
        require(!p.text.empty(), ErrorKind::Configuration, "prompt " + std::to_string(p.id) + " has empty text");
        auto [it, inserted] = prompts_.emplace(p.id, p);
        require(inserted, ErrorKind::Configuration, "duplicate prompt id " + std::to_string(p.id));
    }

    bool empty() const { return prompts_.empty(); }
    std::size_t size() const { return prompts_.size(); }
    bool contains(int id) const { return prompts_.count(id) != 0; }

    const PromptVariant& at(int id) const {
        auto it = prompts_.find(id);
        require(it != prompts_.end(), ErrorKind::Configuration, "prompt id " + std::to_string(id) + " not registered");
        return it->second;
    }

    std::vector<PromptVariant> all() const {
        std::vector<PromptVariant> out;
        for (const auto& [id, p] : prompts_) {
            out.push_back(p);
        }
        return out;
    }

private:
    std::map<int, PromptVariant> prompts_;
};

/// One provider call: meta logits for the clean input under `prompt`.
inline ModalityWeights extract_weights(LogitProvider& provider, const Context& ctx, const PromptVariant& prompt) {
    return weights_from_logits(provider.eval_modality_query(ctx.as_query(prompt.id)));
}

/// Subset of {av, v, a} to disable.
struct WeightMask {
    bool av = false;
    bool v = false;
    bool a = false;

    bool empty() const { return !av && !v && !a; }
    bool full() const { return av && v && a; }

    static WeightMask parse(const std::string& s) {
        WeightMask m;
        if (s.empty() || s == "none") {
            return m;
        }
        std::size_t start = 0;
        while (start <= s.size()) {
            std::size_t end = s.find(',', start);
            std::string part = s.substr(start, end == std::string::npos ? std::string::npos : end - start);
            if (part == "av") m.av = true;
            else if (part == "v") m.v = true;
            else if (part == "a") m.a = true;
            else throw Error(ErrorKind::Configuration, "unknown weight '" + part + "' in mask (use av, v, a)");
            if (end == std::string::npos) break;
            start = end + 1;
        }
        return m;
    }

    std::string str() const {
        std::string s;
        auto add = [&](bool on, const char* name) {
            if (on) {
                s += s.empty() ? "" : ",";
                s += name;
            }
        };
        add(av, "av");
        add(v, "v");
        add(a, "a");
        return s.empty() ? "none" : s;
    }

    friend bool operator==(const WeightMask&, const WeightMask&) = default;
};

/// How a masked weight set is renormalized.
enum class MaskSemantics : std::uint8_t {
    Renormalize, // survivors divided by their sum (ratio preserving)
    Resoftmax,   // softmax over the surviving raw meta logits
};

inline ModalityWeights masked_weights(const ModalityWeights& w, const WeightMask& mask) {
    require(!mask.full(), ErrorKind::InvalidInput, "cannot mask all three weights");
    if (mask.empty()) {
        return w;
    }
    ModalityWeights out{mask.av ? 0.0 : w.av, mask.v ? 0.0 : w.v, mask.a ? 0.0 : w.a};
    const double total = out.sum();
    require(total > 0.0, ErrorKind::InvalidInput, "surviving weights sum to zero");
    out.av /= total;
    out.v /= total;
    out.a /= total;
    return out;
}

inline ModalityWeights masked_weights_resoftmax(const MetaLogits& z, const WeightMask& mask) {
    require(!mask.full(), ErrorKind::InvalidInput, "cannot mask all three weights");
    std::vector<double> raw;
    if (!mask.av) raw.push_back(z.both);
    if (!mask.v) raw.push_back(z.video);
    if (!mask.a) raw.push_back(z.audio);
    ProbVector p = softmax(raw);
    ModalityWeights out{0.0, 0.0, 0.0};
    std::size_t i = 0;
    if (!mask.av) out.av = p[i++];
    if (!mask.v) out.v = p[i++];
    if (!mask.a) out.a = p[i++];
    return out;
}

inline ModalityWeights uniform_weights() { return {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}; }

/// Indicator on the dominant weight of `source`.
inline ModalityWeights argmax_weights(const ModalityWeights& source) {
    switch (dominant_slot(source)) {
    case WeightSlot::Both: return {1.0, 0.0, 0.0};
    case WeightSlot::Video: return {0.0, 1.0, 0.0};
    case WeightSlot::Audio: return {0.0, 0.0, 1.0};
    }
    return uniform_weights();
}

enum class FixedWeighting : std::uint8_t { Uniform, Argmax };

inline ModalityWeights fixed_weights(FixedWeighting kind, const ModalityWeights& source = uniform_weights()) {
    return kind == FixedWeighting::Uniform ? uniform_weights() : argmax_weights(source);
}

} // namespace mad
