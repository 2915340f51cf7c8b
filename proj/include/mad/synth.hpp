#pragma once

// Deterministic log-linear synthetic provider.
//
// Generation mode:
//   L(y) = b(y) + [video standard] (s_v(y) + x_v(y)) + [audio standard] (s_a(y) + x_a(y))
//          + eos_bias(|prefix|) [y = EOS]
// Modality-query mode: the meta token matching the question's relevance gets
// margin + jitter, the other two meta tokens get jitter, every other token
// gets -10 * margin.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mad/core.hpp"
#include "mad/provider.hpp"

namespace mad {

enum class Relevance : std::uint8_t { Video, Audio, AudioVisual };

inline const char* to_string(Relevance r) {
    switch (r) {
    case Relevance::Video: return "V";
    case Relevance::Audio: return "A";
    case Relevance::AudioVisual: return "AV";
    }
    return "?";
}

/// Meta-token jitter for one prompt variant, ordered (both, video, audio).
using MetaJitter = std::array<double, 3>;

struct QuestionSpec {
    std::vector<double> prior;
    std::vector<double> video_signal;
    std::vector<double> audio_signal;
    std::vector<double> video_interference;
    std::vector<double> audio_interference;
    Relevance relevance = Relevance::AudioVisual;
    double meta_margin = 0.0;
    std::vector<MetaJitter> meta_jitter; // indexed by prompt id
};

struct SynthModelSpec {
    Vocabulary vocab;
    std::vector<QuestionSpec> questions; // indexed by question id
    /// Added to the EOS logit; entry i applies to prefix length i, the last
    /// entry extends to longer prefixes.
    std::vector<double> eos_bias{0.0};
    std::uint64_t seed = 0;

    double eos_bias_at(std::size_t prefix_len) const {
        if (eos_bias.empty()) {
            return 0.0;
        }
        return eos_bias[prefix_len < eos_bias.size() ? prefix_len : eos_bias.size() - 1];
    }

    const QuestionSpec& question(std::int64_t id) const {
        require(id >= 0 && static_cast<std::size_t>(id) < questions.size(), ErrorKind::InvalidInput,
                "unknown question id " + std::to_string(id));
        return questions[static_cast<std::size_t>(id)];
    }

    void validate() const {
        const std::size_t n = vocab.size();
        auto check_vec = [&](const std::vector<double>& v, const char* name, std::size_t q) {
            require(v.size() == n, ErrorKind::InvalidInput,
                    std::string(name) + " of question " + std::to_string(q) + " has wrong length");
            for (double x : v) {
                require(std::isfinite(x), ErrorKind::InvalidInput, std::string(name) + " not finite");
            }
        };
        for (std::size_t q = 0; q < questions.size(); ++q) {
            const QuestionSpec& s = questions[q];
            check_vec(s.prior, "prior", q);
            check_vec(s.video_signal, "video_signal", q);
            check_vec(s.audio_signal, "audio_signal", q);
            check_vec(s.video_interference, "video_interference", q);
            check_vec(s.audio_interference, "audio_interference", q);
            require(std::isfinite(s.meta_margin) && s.meta_margin >= 0.0, ErrorKind::InvalidInput,
                    "meta margin must be finite and >= 0");
            for (const MetaJitter& j : s.meta_jitter) {
                for (double e : j) {
                    require(std::isfinite(e) && (e == 0.0 || std::abs(e) < s.meta_margin / 4.0),
                            ErrorKind::InvalidInput, "meta jitter must stay below margin/4");
                }
            }
        }
        for (double e : eos_bias) {
            require(std::isfinite(e), ErrorKind::InvalidInput, "eos bias not finite");
        }
    }
};

inline LogitVector synth_logits(const SynthModelSpec& spec, ModalityConfig cfg, const Context& ctx) {
    const QuestionSpec& q = spec.question(ctx.question_id);
    const std::size_t n = spec.vocab.size();
    std::vector<double> out(n);

    if (ctx.mode.kind == QueryKind::ModalityQuery) {
        require(ctx.mode.prompt_id >= 0 && static_cast<std::size_t>(ctx.mode.prompt_id) < q.meta_jitter.size(),
                ErrorKind::InvalidInput, "unregistered prompt id " + std::to_string(ctx.mode.prompt_id));
        const MetaJitter& j = q.meta_jitter[static_cast<std::size_t>(ctx.mode.prompt_id)];
        const double d = q.meta_margin;
        for (double& v : out) {
            v = -10.0 * d;
        }
        out[static_cast<std::size_t>(spec.vocab.both())] = (q.relevance == Relevance::AudioVisual ? d : 0.0) + j[0];
        out[static_cast<std::size_t>(spec.vocab.video())] = (q.relevance == Relevance::Video ? d : 0.0) + j[1];
        out[static_cast<std::size_t>(spec.vocab.audio())] = (q.relevance == Relevance::Audio ? d : 0.0) + j[2];
        return LogitVector(std::move(out));
    }

    const bool video_on = cfg.video == ModalityState::Standard;
    const bool audio_on = cfg.audio == ModalityState::Standard;
    for (std::size_t y = 0; y < n; ++y) {
        double v = q.prior[y];
        if (video_on) {
            v += q.video_signal[y] + q.video_interference[y];
        }
        if (audio_on) {
            v += q.audio_signal[y] + q.audio_interference[y];
        }
        out[y] = v;
    }
    out[static_cast<std::size_t>(spec.vocab.eos())] += spec.eos_bias_at(ctx.prefix.size());
    return LogitVector(std::move(out));
}

/// In-process provider over a SynthModelSpec. Pure apart from the call
/// counter, so one instance may be shared across threads.
class SynthProvider final : public LogitProvider {
public:
    explicit SynthProvider(SynthModelSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

    const Vocabulary& vocabulary() const override { return spec_.vocab; }
    const SynthModelSpec& spec() const noexcept { return spec_; }

protected:
    LogitVector forward(ModalityConfig cfg, const Context& ctx) override { return synth_logits(spec_, cfg, ctx); }

private:
    SynthModelSpec spec_;
};

} // namespace mad
