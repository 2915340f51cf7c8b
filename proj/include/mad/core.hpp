#pragma once

// Vocabulary, logit vectors and the numeric primitives every other header
// builds on. All arithmetic is double precision.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mad {

using TokenId = std::int32_t;

enum class ErrorKind {
    InvalidInput,
    Configuration,
    Transport,
    Timeout,
    Protocol,
    VocabMismatch,
    Generation,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::Timeout: return "timeout";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::VocabMismatch: return "vocab-mismatch";
    case ErrorKind::Generation: return "generation";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) {
        throw Error(kind, what);
    }
}

/// Dense, ordered token table. EOS and the three meta-answer tokens
/// ('both', 'video', 'audio') must be present and distinct.
class Vocabulary {
public:
    static constexpr std::string_view kEos = "<eos>";
    static constexpr std::string_view kBoth = "both";
    static constexpr std::string_view kVideo = "video";
    static constexpr std::string_view kAudio = "audio";

    Vocabulary() = default;

    explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            auto [it, inserted] = ids_.emplace(tokens_[i], static_cast<TokenId>(i));
            require(inserted, ErrorKind::InvalidInput, "duplicate token '" + tokens_[i] + "'");
        }
        eos_ = lookup(kEos);
        both_ = lookup(kBoth);
        video_ = lookup(kVideo);
        audio_ = lookup(kAudio);
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    bool contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

    TokenId id(std::string_view token) const { return lookup(token); }

    TokenId eos() const noexcept { return eos_; }
    TokenId both() const noexcept { return both_; }
    TokenId video() const noexcept { return video_; }
    TokenId audio() const noexcept { return audio_; }

    bool valid(TokenId id) const noexcept {
        return id >= 0 && static_cast<std::size_t>(id) < tokens_.size();
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    TokenId lookup(std::string_view token) const {
        auto it = ids_.find(std::string(token));
        require(it != ids_.end(), ErrorKind::Configuration,
                "vocabulary lacks token '" + std::string(token) + "'");
        return it->second;
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> ids_;
    TokenId eos_ = -1;
    TokenId both_ = -1;
    TokenId video_ = -1;
    TokenId audio_ = -1;
};

/// Unnormalized next-token scores. Entries are finite.
class LogitVector {
public:
    LogitVector() = default;
    explicit LogitVector(std::size_t n, double fill = 0.0) : values_(n, fill) {}
    explicit LogitVector(std::vector<double> values) : values_(std::move(values)) { check_finite(); }
    LogitVector(std::initializer_list<double> values) : values_(values) { check_finite(); }

    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    std::span<const double> values() const noexcept { return values_; }
    const std::vector<double>& vector() const noexcept { return values_; }

    auto begin() const noexcept { return values_.begin(); }
    auto end() const noexcept { return values_.end(); }

    void check_finite() const {
        for (double v : values_) {
            require(std::isfinite(v), ErrorKind::InvalidInput, "non-finite logit");
        }
    }

    friend bool operator==(const LogitVector&, const LogitVector&) = default;

private:
    std::vector<double> values_;
};

/// Points on the probability simplex.
class ProbVector {
public:
    ProbVector() = default;
    explicit ProbVector(std::vector<double> values) : values_(std::move(values)) {}

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const noexcept { return values_; }

private:
    std::vector<double> values_;
};

inline ProbVector softmax(std::span<const double> v) {
    require(!v.empty(), ErrorKind::InvalidInput, "softmax of empty vector");
    double hi = v[0];
    for (double x : v) {
        require(std::isfinite(x), ErrorKind::InvalidInput, "softmax of non-finite value");
        hi = x > hi ? x : hi;
    }
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - hi);
        sum += out[i];
    }
    for (double& p : out) {
        p /= sum;
    }
    return ProbVector(std::move(out));
}

/// Index of the largest entry; ties go to the lowest id.
inline TokenId argmax_token(std::span<const double> l) {
    require(!l.empty(), ErrorKind::InvalidInput, "argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < l.size(); ++i) {
        if (l[i] > l[best]) {
            best = i;
        }
    }
    return static_cast<TokenId>(best);
}

inline TokenId argmax_token(const LogitVector& l) { return argmax_token(l.values()); }

/// Gap between the best and the runner-up entry (0 for a single entry).
inline double top_gap(std::span<const double> l) {
    if (l.size() < 2) {
        return 0.0;
    }
    TokenId best = argmax_token(l);
    double second = -INFINITY;
    for (std::size_t i = 0; i < l.size(); ++i) {
        if (static_cast<TokenId>(i) != best && l[i] > second) {
            second = l[i];
        }
    }
    return l[static_cast<std::size_t>(best)] - second;
}

inline void require_same_size(const LogitVector& a, const LogitVector& b) {
    require(a.size() == b.size(), ErrorKind::InvalidInput,
            "logit length mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
}

} // namespace mad
