#pragma once

// Seeded generators for property tests and small hand-built fixtures.

#include <vector>

#include "mad/core.hpp"
#include "mad/provider.hpp"
#include "mad/splitmix.hpp"
#include "mad/synth.hpp"
#include "mad/weights.hpp"

namespace mad::test {

struct Gen {
    SplitMix64 rng;
    explicit Gen(std::uint64_t seed) : rng(seed) {}

    double real(double lo, double hi) { return rng.uniform(lo, hi); }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(rng.below(n)); }

    LogitVector logits(std::size_t n, double scale = 10.0) {
        std::vector<double> v(n);
        for (double& x : v) x = rng.uniform(-scale, scale);
        return LogitVector(std::move(v));
    }

    BranchLogits branches(std::size_t n, double scale = 10.0) {
        return BranchLogits::of(logits(n, scale), logits(n, scale), logits(n, scale), logits(n, scale));
    }

    /// Uniform on the simplex via sorted spacings.
    ModalityWeights simplex() {
        double u = rng.uniform(), v = rng.uniform();
        if (u > v) std::swap(u, v);
        return {u, v - u, 1.0 - v};
    }
};

inline double max_abs_diff(const LogitVector& a, const LogitVector& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// <eos>, both, video, audio, then t0..t{extra-1}.
inline Vocabulary small_vocab(int extra = 2) {
    std::vector<std::string> t{"<eos>", "both", "video", "audio"};
    for (int i = 0; i < extra; ++i) t.push_back("t" + std::to_string(i));
    return Vocabulary(std::move(t));
}

/// Places `tail` after the four reserved slots, which stay at `reserved`.
inline std::vector<double> padded(std::vector<double> tail, double reserved = 0.0) {
    std::vector<double> v(4, reserved);
    v.insert(v.end(), tail.begin(), tail.end());
    return v;
}

/// One question over a 2-answer vocabulary with no EOS pull.
inline SynthModelSpec two_token_spec(std::vector<double> b, std::vector<double> sv, std::vector<double> sa,
                                     std::vector<double> xv, std::vector<double> xa, double reserved = -50.0) {
    SynthModelSpec spec;
    spec.vocab = small_vocab(2);
    QuestionSpec q;
    q.prior = padded(std::move(b), reserved);
    q.video_signal = padded(std::move(sv));
    q.audio_signal = padded(std::move(sa));
    q.video_interference = padded(std::move(xv));
    q.audio_interference = padded(std::move(xa));
    q.meta_margin = 1.0;
    q.meta_jitter = {{0.0, 0.0, 0.0}};
    spec.questions = {q};
    spec.eos_bias = {0.0};
    return spec;
}

inline Context ctx_for(std::int64_t qid) {
    Context c;
    c.question_id = qid;
    return c;
}

} // namespace mad::test
