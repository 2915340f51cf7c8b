#pragma once

// SplitMix64 and the stream derivation used for every synthetic field.
// Any other implementation (the Python bridge in particular) must reproduce
// these streams bit for bit.

#include <cstdint>

namespace mad {

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t state) : state_(state) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Plain modulo; the bias is irrelevant for the
    /// small ranges used here and keeps the mapping trivial to port.
    std::uint64_t below(std::uint64_t n) { return next() % n; }

    std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

/// Field tags. Values are part of the cross-language contract.
enum class FieldTag : std::uint64_t {
    Tokens = 0,
    Prior = 1,
    VideoSignal = 2,
    AudioSignal = 3,
    VideoInterference = 4,
    AudioInterference = 5,
    Template = 6,
    Meta = 7,
    Question = 8,
};

/// Initial state for the stream of (seed, question, tag). For question 0 and
/// tag 0 this is the raw seed, so the first draw equals the published
/// SplitMix64 vector for that seed.
inline std::uint64_t stream_state(std::uint64_t seed, std::uint64_t question, std::uint64_t tag,
                                  std::uint64_t attempt = 0) {
    return seed ^ (question * 0x9E3779B97F4A7C15ULL) ^ (tag * 0xC2B2AE3D27D4EB4FULL) ^
           (attempt * 0x165667B19E3779F9ULL);
}

inline SplitMix64 stream(std::uint64_t seed, std::uint64_t question, FieldTag tag,
                         std::uint64_t attempt = 0) {
    return SplitMix64(stream_state(seed, question, static_cast<std::uint64_t>(tag), attempt));
}

} // namespace mad
