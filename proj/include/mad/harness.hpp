#pragma once

// Synthetic benchmark: seeded task construction with per-task separation
// certificates, suite evaluation, and the analysis reports (gamma sweep,
// weight distribution, prompt robustness, latency accounting).
//
// Category construction table (sigma ~ U[0.9, 1.2] per task; c = correct,
// d = distractor, o = third answer token; unlisted entries are background):
//
//   category               relevance  construction
//   VisualDom              A          b[d] += 0.3s, s_v[d] += 1.5s, s_a[c] += U[1.55,1.68]s
//   AudioDom               V          b[d] += 0.3s, s_a[d] += 1.5s, s_v[c] += U[1.55,1.68]s
//   LanguageDom            AV         b[d] = U[1.08,1.15]*2s, s_v[c] = s_a[c] = s,
//                                     b[o] = -U[1.6,2.0]s, s_v[o] = s_a[o] = 1.5s
//   VideoDrivenAudioHall   A          x_v[d] += 2s, s_a[c] += U[1.72,1.88]s
//   AudioDrivenVideoHall   V          x_a[d] += 2s, s_v[c] += U[1.72,1.88]s
//
// Background: b ~ -6 + U[-0.5,0.5], signal/interference ~ U[-0.05,0.05]; the
// EOS token has zero prior and signals and only carries the EOS bias.
// See docs/synthetic_suite.md for the rationale behind each row.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mad/core.hpp"
#include "mad/generation.hpp"
#include "mad/provider.hpp"
#include "mad/splitmix.hpp"
#include "mad/strategies.hpp"
#include "mad/synth.hpp"
#include "mad/weights.hpp"

namespace mad {

enum class Category : std::uint8_t {
    VisualDom,
    AudioDom,
    LanguageDom,
    VideoDrivenAudioHall,
    AudioDrivenVideoHall,
};

inline constexpr std::array<Category, 5> kCategories{Category::VisualDom, Category::AudioDom, Category::LanguageDom,
                                                     Category::VideoDrivenAudioHall,
                                                     Category::AudioDrivenVideoHall};

inline const char* to_string(Category c) {
    switch (c) {
    case Category::VisualDom: return "VisualDom";
    case Category::AudioDom: return "AudioDom";
    case Category::LanguageDom: return "LanguageDom";
    case Category::VideoDrivenAudioHall: return "VideoDrivenAudioHall";
    case Category::AudioDrivenVideoHall: return "AudioDrivenVideoHall";
    }
    return "?";
}

inline Relevance relevance_of(Category c) {
    switch (c) {
    case Category::VisualDom:
    case Category::VideoDrivenAudioHall: return Relevance::Audio;
    case Category::AudioDom:
    case Category::AudioDrivenVideoHall: return Relevance::Video;
    case Category::LanguageDom: return Relevance::AudioVisual;
    }
    return Relevance::AudioVisual;
}

inline bool is_hallucination_category(Category c) {
    return c == Category::VideoDrivenAudioHall || c == Category::AudioDrivenVideoHall;
}

inline ModalityWeights oracle_weights(Relevance r) {
    switch (r) {
    case Relevance::AudioVisual: return {1.0, 0.0, 0.0};
    case Relevance::Video: return {0.0, 1.0, 0.0};
    case Relevance::Audio: return {0.0, 0.0, 1.0};
    }
    return uniform_weights();
}

struct SuiteConfig {
    int n_per_category = 50;
    std::uint64_t seed = 7;
    double delta_min = 2.5;     // meta margin range (nats)
    double delta_max = 4.0;
    double jitter_frac = 0.2;   // |jitter| <= jitter_frac * delta, must be < 0.25
    int answer_tokens = 16;
    int word_tokens = 8;
    int question_length = 4;
    int prompt_variants = PromptRegistry::kVariantCount;
    std::vector<double> eos_bias{-40.0, 40.0};
    double certificate_gamma = 2.5;
    double certificate_gap = 1e-3; // minimum fused-logit gap for both decisions
    int max_attempts = 64;

    void validate() const {
        require(n_per_category >= 1, ErrorKind::InvalidInput, "n_per_category must be >= 1");
        require(delta_min >= 0.0 && delta_max >= delta_min, ErrorKind::InvalidInput, "bad meta margin range");
        require(jitter_frac >= 0.0 && jitter_frac < 0.25, ErrorKind::InvalidInput,
                "jitter_frac must lie in [0, 0.25)");
        require(answer_tokens >= 3, ErrorKind::InvalidInput, "need at least 3 answer tokens");
        require(word_tokens >= 1 && question_length >= 0, ErrorKind::InvalidInput, "bad question token settings");
        require(prompt_variants >= 1, ErrorKind::InvalidInput, "need at least one prompt variant");
        require(max_attempts >= 1, ErrorKind::InvalidInput, "max_attempts must be >= 1");
        require(certificate_gamma >= 0.0, ErrorKind::InvalidInput, "certificate gamma must be >= 0");
    }
};

inline Vocabulary suite_vocabulary(const SuiteConfig& cfg) {
    std::vector<std::string> tokens{std::string(Vocabulary::kEos), std::string(Vocabulary::kBoth),
                                    std::string(Vocabulary::kVideo), std::string(Vocabulary::kAudio)};
    char buf[32];
    for (int i = 0; i < cfg.answer_tokens; ++i) {
        std::snprintf(buf, sizeof buf, "ans_%02d", i);
        tokens.emplace_back(buf);
    }
    for (int i = 0; i < cfg.word_tokens; ++i) {
        std::snprintf(buf, sizeof buf, "w_%02d", i);
        tokens.emplace_back(buf);
    }
    return Vocabulary(std::move(tokens));
}

struct TaskSpec {
    std::int64_t id = 0;
    Category category = Category::VisualDom;
    TokenId correct = -1;
    TokenId distractor = -1;
    TokenId other = -1;
    std::vector<TokenId> question;
    QuestionSpec model;
    int attempts = 1;

    Relevance relevance() const { return model.relevance; }

    Context context() const {
        Context c;
        c.question_id = id;
        c.question = question;
        return c;
    }
};

struct Certificate {
    bool passed = false;
    TokenId greedy_choice = -1;
    TokenId oracle_choice = -1;
    double greedy_gap = 0.0;
    double oracle_gap = 0.0;
};

/// Brute-force check: greedy picks the distractor, oracle-weighted MAD picks
/// the correct token, each by at least `min_gap`.
inline Certificate certify(const Vocabulary& vocab, const TaskSpec& task, const std::vector<double>& eos_bias,
                           double gamma, double min_gap) {
    SynthModelSpec one;
    one.vocab = vocab;
    one.eos_bias = eos_bias;
    one.questions = {task.model};
    Context ctx = task.context();
    ctx.question_id = 0;
    BranchLogits b;
    for (ModalityConfig cfg : kAllConfigs) {
        b[cfg] = synth_logits(one, cfg, ctx);
    }
    Certificate c;
    c.greedy_choice = argmax_token(b.clean());
    c.greedy_gap = top_gap(b.clean().values());
    const LogitVector oracle = mad_logits(b, gamma, oracle_weights(task.relevance()));
    c.oracle_choice = argmax_token(oracle);
    c.oracle_gap = top_gap(oracle.values());
    c.passed = c.greedy_choice == task.distractor && c.oracle_choice == task.correct && c.greedy_gap >= min_gap &&
               c.oracle_gap >= min_gap;
    return c;
}

namespace detail {

inline QuestionSpec background(const SuiteConfig& cfg, const Vocabulary& vocab, std::uint64_t qid,
                               std::uint64_t attempt) {
    const std::size_t n = vocab.size();
    QuestionSpec q;
    auto fill = [&](std::vector<double>& v, FieldTag tag, double base, double half_width) {
        SplitMix64 rng = stream(cfg.seed, qid, tag, attempt);
        v.resize(n);
        for (double& x : v) {
            x = base + rng.uniform(-half_width, half_width);
        }
        v[static_cast<std::size_t>(vocab.eos())] = 0.0;
    };
    fill(q.prior, FieldTag::Prior, -6.0, 0.5);
    fill(q.video_signal, FieldTag::VideoSignal, 0.0, 0.05);
    fill(q.audio_signal, FieldTag::AudioSignal, 0.0, 0.05);
    fill(q.video_interference, FieldTag::VideoInterference, 0.0, 0.05);
    fill(q.audio_interference, FieldTag::AudioInterference, 0.0, 0.05);
    return q;
}

inline void clear_token(QuestionSpec& q, TokenId t) {
    const auto i = static_cast<std::size_t>(t);
    q.prior[i] = 0.0;
    q.video_signal[i] = 0.0;
    q.audio_signal[i] = 0.0;
    q.video_interference[i] = 0.0;
    q.audio_interference[i] = 0.0;
}

inline TaskSpec draw_task(const SuiteConfig& cfg, const Vocabulary& vocab, Category cat, std::int64_t id,
                          std::uint64_t attempt) {
    const auto qid = static_cast<std::uint64_t>(id);
    TaskSpec t;
    t.id = id;
    t.category = cat;
    t.attempts = static_cast<int>(attempt) + 1;

    const TokenId first_answer = vocab.id("ans_00");
    SplitMix64 tok = stream(cfg.seed, qid, FieldTag::Tokens, attempt);
    std::vector<TokenId> pool(static_cast<std::size_t>(cfg.answer_tokens));
    for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i] = first_answer + static_cast<TokenId>(i);
    }
    // Partial Fisher-Yates for three distinct answers.
    for (std::size_t i = 0; i < 3; ++i) {
        std::size_t j = i + static_cast<std::size_t>(tok.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    t.correct = pool[0];
    t.distractor = pool[1];
    t.other = pool[2];

    SplitMix64 qs = stream(cfg.seed, qid, FieldTag::Question, attempt);
    const TokenId first_word = vocab.id("w_00");
    for (int i = 0; i < cfg.question_length; ++i) {
        t.question.push_back(first_word + static_cast<TokenId>(qs.below(static_cast<std::uint64_t>(cfg.word_tokens))));
    }

    QuestionSpec q = background(cfg, vocab, qid, attempt);
    q.relevance = relevance_of(cat);
    clear_token(q, t.correct);
    clear_token(q, t.distractor);

    const auto c = static_cast<std::size_t>(t.correct);
    const auto d = static_cast<std::size_t>(t.distractor);
    const auto o = static_cast<std::size_t>(t.other);
    SplitMix64 tpl = stream(cfg.seed, qid, FieldTag::Template, attempt);
    const double s = tpl.uniform(0.9, 1.2);
    switch (cat) {
    case Category::VisualDom:
        q.prior[d] += 0.3 * s;
        q.video_signal[d] += 1.5 * s;
        q.audio_signal[c] += tpl.uniform(1.55, 1.68) * s;
        break;
    case Category::AudioDom:
        q.prior[d] += 0.3 * s;
        q.audio_signal[d] += 1.5 * s;
        q.video_signal[c] += tpl.uniform(1.55, 1.68) * s;
        break;
    case Category::LanguageDom:
        clear_token(q, t.other);
        q.prior[d] = tpl.uniform(1.08, 1.15) * 2.0 * s;
        q.video_signal[c] = s;
        q.audio_signal[c] = s;
        q.prior[o] = -tpl.uniform(1.6, 2.0) * s;
        q.video_signal[o] = 1.5 * s;
        q.audio_signal[o] = 1.5 * s;
        break;
    case Category::VideoDrivenAudioHall:
        q.video_interference[d] += 2.0 * s;
        q.audio_signal[c] += tpl.uniform(1.72, 1.88) * s;
        break;
    case Category::AudioDrivenVideoHall:
        q.audio_interference[d] += 2.0 * s;
        q.video_signal[c] += tpl.uniform(1.72, 1.88) * s;
        break;
    }

    SplitMix64 meta = stream(cfg.seed, qid, FieldTag::Meta, attempt);
    q.meta_margin = meta.uniform(cfg.delta_min, cfg.delta_max);
    q.meta_jitter.resize(static_cast<std::size_t>(cfg.prompt_variants));
    for (MetaJitter& j : q.meta_jitter) {
        for (double& e : j) {
            e = meta.uniform(-1.0, 1.0) * cfg.jitter_frac * q.meta_margin;
        }
    }
    t.model = std::move(q);
    return t;
}

} // namespace detail

struct Suite {
    SuiteConfig config;
    Vocabulary vocab;
    std::vector<TaskSpec> tasks;

    SynthModelSpec model() const {
        SynthModelSpec spec;
        spec.vocab = vocab;
        spec.eos_bias = config.eos_bias;
        spec.seed = config.seed;
        spec.questions.reserve(tasks.size());
        for (const TaskSpec& t : tasks) {
            spec.questions.push_back(t.model);
        }
        return spec;
    }

    std::size_t size() const { return tasks.size(); }
};

/// Deterministic in the config. Tasks are category-major: task id
/// k * n + i is the i-th task of the k-th category.
inline Suite build_suite(const SuiteConfig& cfg) {
    cfg.validate();
    Suite suite;
    suite.config = cfg;
    suite.vocab = suite_vocabulary(cfg);
    for (std::size_t k = 0; k < kCategories.size(); ++k) {
        for (int i = 0; i < cfg.n_per_category; ++i) {
            const auto id = static_cast<std::int64_t>(k) * cfg.n_per_category + i;
            bool done = false;
            for (int attempt = 0; attempt < cfg.max_attempts && !done; ++attempt) {
                TaskSpec t = detail::draw_task(cfg, suite.vocab, kCategories[k], id, static_cast<std::uint64_t>(attempt));
                if (certify(suite.vocab, t, cfg.eos_bias, cfg.certificate_gamma, cfg.certificate_gap).passed) {
                    suite.tasks.push_back(std::move(t));
                    done = true;
                }
            }
            require(done, ErrorKind::Generation,
                    std::string("certificate unreachable for category ") + to_string(kCategories[k]) + " (task " +
                        std::to_string(id) + ") after " + std::to_string(cfg.max_attempts) + " attempts");
        }
    }
    return suite;
}

inline Suite build_suite(int n_per_category, std::uint64_t seed) {
    SuiteConfig cfg;
    cfg.n_per_category = n_per_category;
    cfg.seed = seed;
    return build_suite(cfg);
}

/// Re-verifies every certificate; returns the ids that fail.
inline std::vector<std::int64_t> check_suite(const Suite& suite) {
    std::vector<std::int64_t> failed;
    for (const TaskSpec& t : suite.tasks) {
        if (!certify(suite.vocab, t, suite.config.eos_bias, suite.config.certificate_gamma,
                     suite.config.certificate_gap)
                 .passed) {
            failed.push_back(t.id);
        }
    }
    return failed;
}

// Evaluation -----------------------------------------------------------------

enum class Outcome : std::uint8_t { Correct, Hallucinated, Other };

inline const char* to_string(Outcome o) {
    switch (o) {
    case Outcome::Correct: return "correct";
    case Outcome::Hallucinated: return "hallucinated";
    case Outcome::Other: return "other";
    }
    return "?";
}

struct TaskResult {
    std::int64_t task_id = 0;
    Category category = Category::VisualDom;
    TokenId first = -1;
    Outcome outcome = Outcome::Other;
    std::vector<TokenId> tokens;
    DecodingTrace trace;
};

struct CategoryMetrics {
    int n = 0;
    int correct = 0;
    int hallucinated = 0;
    int other = 0;
    int weighted_n = 0;
    double sum_av = 0.0, sum_v = 0.0, sum_a = 0.0;
    double sum_ms_per_token = 0.0;
    double sum_calls_per_token = 0.0;

    double accuracy() const { return n ? static_cast<double>(correct) / n : 0.0; }
    double hallucination_rate() const { return n ? static_cast<double>(hallucinated) / n : 0.0; }
    double other_rate() const { return n ? static_cast<double>(other) / n : 0.0; }
    double mean_ms_per_token() const { return n ? sum_ms_per_token / n : 0.0; }
    double mean_calls_per_token() const { return n ? sum_calls_per_token / n : 0.0; }
    std::optional<ModalityWeights> mean_weights() const {
        if (!weighted_n) return std::nullopt;
        return ModalityWeights{sum_av / weighted_n, sum_v / weighted_n, sum_a / weighted_n};
    }

    void add(const TaskResult& r) {
        ++n;
        switch (r.outcome) {
        case Outcome::Correct: ++correct; break;
        case Outcome::Hallucinated: ++hallucinated; break;
        case Outcome::Other: ++other; break;
        }
        if (r.trace.extracted) {
            ++weighted_n;
            sum_av += r.trace.extracted->av;
            sum_v += r.trace.extracted->v;
            sum_a += r.trace.extracted->a;
        }
        const double len = static_cast<double>(std::max<std::size_t>(r.tokens.size(), 1));
        sum_ms_per_token += r.trace.total_ms() / len;
        sum_calls_per_token += static_cast<double>(r.trace.calls) / len;
    }

    void merge(const CategoryMetrics& o) {
        n += o.n;
        correct += o.correct;
        hallucinated += o.hallucinated;
        other += o.other;
        weighted_n += o.weighted_n;
        sum_av += o.sum_av;
        sum_v += o.sum_v;
        sum_a += o.sum_a;
        sum_ms_per_token += o.sum_ms_per_token;
        sum_calls_per_token += o.sum_calls_per_token;
    }
};

struct SuiteMetrics {
    std::map<Category, CategoryMetrics> per_category;
    CategoryMetrics overall;
    std::uint64_t total_calls = 0;

    double accuracy(Category c) const {
        auto it = per_category.find(c);
        return it == per_category.end() ? 0.0 : it->second.accuracy();
    }
    double overall_accuracy() const { return overall.accuracy(); }
};

struct EvalOptions {
    int workers = 1;
    int max_tokens = 8;
    /// Replace extracted weights with the task's ground-truth indicator.
    bool oracle_weights = false;
    /// Keep full traces in the results (they are always used for metrics).
    bool keep_traces = true;
};

struct SuiteEvaluation {
    DecodingParams params;
    SuiteMetrics metrics;
    std::vector<TaskResult> results; // indexed like suite.tasks
};

inline Outcome score(const TaskSpec& task, TokenId first) {
    if (first == task.correct) return Outcome::Correct;
    if (first == task.distractor) return Outcome::Hallucinated;
    return Outcome::Other;
}

/// Runs one generation per task and aggregates per category. Workers pull
/// tasks by index; aggregation happens afterwards in task order, so the
/// metrics do not depend on scheduling.
inline SuiteEvaluation evaluate(LogitProvider& provider, const DecodingParams& params, const Suite& suite,
                                const EvalOptions& opts = {}) {
    require(!suite.tasks.empty(), ErrorKind::InvalidInput, "suite is empty");
    params.validate();
    SuiteEvaluation ev;
    ev.params = params;
    ev.results.resize(suite.tasks.size());

    GenerationLimits limits;
    limits.max_tokens = opts.max_tokens;

    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::optional<Error> first_error;
    std::size_t first_error_index = suite.tasks.size();

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= suite.tasks.size()) return;
            const TaskSpec& task = suite.tasks[i];
            DecodingParams p = params;
            if (opts.oracle_weights && p.weighted()) {
                p.fixed_weights = oracle_weights(task.relevance());
            }
            try {
                GenerationResult g = generate(provider, p, task.context(), limits);
                if (!g.ok()) {
                    throw Error(ErrorKind::Transport, "task " + std::to_string(task.id) + ": " + g.trace.error);
                }
                TaskResult& r = ev.results[i];
                r.task_id = task.id;
                r.category = task.category;
                r.first = g.tokens.empty() ? -1 : g.tokens.front();
                r.outcome = score(task, r.first);
                r.tokens = std::move(g.tokens);
                r.trace = std::move(g.trace);
            } catch (const Error& e) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (i < first_error_index) {
                    first_error_index = i;
                    std::string msg = e.what();
                    const std::string tag = "task " + std::to_string(task.id);
                    first_error = Error(e.kind(), msg.find(tag) == std::string::npos ? tag + ": " + msg : msg);
                }
            }
        }
    };

    const int workers = std::max(1, opts.workers);
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (first_error) {
        throw *first_error;
    }

    for (const TaskResult& r : ev.results) {
        ev.metrics.per_category[r.category].add(r);
        ev.metrics.overall.add(r);
        ev.metrics.total_calls += r.trace.calls;
    }
    if (!opts.keep_traces) {
        for (TaskResult& r : ev.results) r.trace.steps.clear();
    }
    return ev;
}

// Reports --------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

} // namespace detail

/// Per-category accuracy table (deterministic; no wall-clock columns).
inline std::string metrics_csv(const SuiteMetrics& m) {
    std::string out = "category,n,accuracy,hallucination_rate,other_rate,calls_per_token,mean_w_av,mean_w_v,mean_w_a\n";
    auto row = [&](const std::string& name, const CategoryMetrics& c) {
        out += name + "," + std::to_string(c.n) + "," + detail::fmt(c.accuracy()) + "," +
               detail::fmt(c.hallucination_rate()) + "," + detail::fmt(c.other_rate()) + "," +
               detail::fmt(c.mean_calls_per_token());
        if (auto w = c.mean_weights()) {
            out += "," + detail::fmt(w->av) + "," + detail::fmt(w->v) + "," + detail::fmt(w->a);
        } else {
            out += ",,,";
        }
        out += "\n";
    };
    for (Category c : kCategories) {
        auto it = m.per_category.find(c);
        if (it != m.per_category.end()) row(to_string(c), it->second);
    }
    row("overall", m.overall);
    return out;
}

inline std::string metrics_markdown(const SuiteMetrics& m) {
    std::string out = "| category | n | accuracy | hallucination | other | calls/token |\n|---|---|---|---|---|---|\n";
    auto row = [&](const std::string& name, const CategoryMetrics& c) {
        out += "| " + name + " | " + std::to_string(c.n) + " | " + detail::fmt(c.accuracy(), 4) + " | " +
               detail::fmt(c.hallucination_rate(), 4) + " | " + detail::fmt(c.other_rate(), 4) + " | " +
               detail::fmt(c.mean_calls_per_token(), 4) + " |\n";
    };
    for (Category c : kCategories) {
        auto it = m.per_category.find(c);
        if (it != m.per_category.end()) row(to_string(c), it->second);
    }
    row("**overall**", m.overall);
    return out;
}

inline std::string results_jsonl(const Suite& suite, const SuiteEvaluation& ev) {
    std::string out;
    for (std::size_t i = 0; i < ev.results.size(); ++i) {
        const TaskResult& r = ev.results[i];
        const TaskSpec& t = suite.tasks[i];
        nlohmann::json j{{"task", r.task_id},
                         {"category", to_string(r.category)},
                         {"relevance", to_string(t.relevance())},
                         {"correct", t.correct},
                         {"distractor", t.distractor},
                         {"first", r.first},
                         {"outcome", to_string(r.outcome)},
                         {"tokens", r.tokens},
                         {"calls", r.trace.calls},
                         {"status", to_string(r.trace.status)}};
        if (r.trace.weights_used) j["weights"] = weights_json(*r.trace.weights_used);
        out += j.dump() + "\n";
    }
    return out;
}

// Gamma sweep ----------------------------------------------------------------

inline std::vector<double> default_gammas() { return {0.5, 1.0, 1.5, 2.0, 2.5, 3.0}; }

struct SweepRow {
    double gamma = 0.0;
    SuiteMetrics metrics;
};

inline std::vector<SweepRow> gamma_sweep(LogitProvider& provider, const Suite& suite, const std::vector<double>& gammas,
                                         DecodingParams base = {}, const EvalOptions& opts = {}) {
    require(!gammas.empty(), ErrorKind::InvalidInput, "gamma list is empty");
    std::vector<SweepRow> rows;
    for (double g : gammas) {
        require(std::isfinite(g) && g >= 0.0, ErrorKind::InvalidInput, "gamma must be finite and >= 0");
        DecodingParams p = base;
        p.gamma = g;
        rows.push_back({g, evaluate(provider, p, suite, opts).metrics});
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "gamma,overall";
    for (Category c : kCategories) out += std::string(",") + to_string(c);
    out += ",hallucination_rate\n";
    for (const SweepRow& r : rows) {
        out += detail::fmt(r.gamma, 2) + "," + detail::fmt(r.metrics.overall_accuracy());
        for (Category c : kCategories) out += "," + detail::fmt(r.metrics.accuracy(c));
        out += "," + detail::fmt(r.metrics.overall.hallucination_rate()) + "\n";
    }
    return out;
}

inline std::string sweep_markdown(const std::vector<SweepRow>& rows) {
    std::string out = "| gamma | overall";
    std::string rule = "|---|---";
    for (Category c : kCategories) {
        out += std::string(" | ") + to_string(c);
        rule += "|---";
    }
    out += " |\n" + rule + "|\n";
    for (const SweepRow& r : rows) {
        out += "| " + detail::fmt(r.gamma, 2) + " | " + detail::fmt(r.metrics.overall_accuracy(), 4);
        for (Category c : kCategories) out += " | " + detail::fmt(r.metrics.accuracy(c), 4);
        out += " |\n";
    }
    return out;
}

// Weight distribution ---------------------------------------------------------

struct WeightRow {
    Category category = Category::VisualDom;
    int n = 0;
    double w_v = 0.0;
    double w_a = 0.0;
    double w_av = 0.0;
    bool matches_relevance = false; // the category's needed modality has the largest mean weight
};

struct WeightReport {
    std::vector<WeightRow> rows;
    bool pattern_ok() const {
        return std::all_of(rows.begin(), rows.end(), [](const WeightRow& r) { return r.matches_relevance; });
    }
};

inline WeightReport weight_distribution_report(LogitProvider& provider, const Suite& suite,
                                               const PromptVariant& prompt = {PromptRegistry::kCanonical, "canonical"}) {
    require(!suite.tasks.empty(), ErrorKind::InvalidInput, "suite is empty");
    std::map<Category, WeightRow> acc;
    for (const TaskSpec& t : suite.tasks) {
        const ModalityWeights w = extract_weights(provider, t.context(), prompt);
        WeightRow& r = acc[t.category];
        r.category = t.category;
        ++r.n;
        r.w_v += w.v;
        r.w_a += w.a;
        r.w_av += w.av;
    }
    WeightReport report;
    for (Category c : kCategories) {
        auto it = acc.find(c);
        if (it == acc.end()) continue;
        WeightRow r = it->second;
        r.w_v /= r.n;
        r.w_a /= r.n;
        r.w_av /= r.n;
        const WeightSlot top = dominant_slot({r.w_av, r.w_v, r.w_a});
        switch (relevance_of(c)) {
        case Relevance::Video: r.matches_relevance = top == WeightSlot::Video; break;
        case Relevance::Audio: r.matches_relevance = top == WeightSlot::Audio; break;
        case Relevance::AudioVisual: r.matches_relevance = top == WeightSlot::Both; break;
        }
        report.rows.push_back(r);
    }
    return report;
}

inline std::string weight_report_csv(const WeightReport& report) {
    std::string out = "category,relevance,n,w_v,w_a,w_av,matches_relevance\n";
    for (const WeightRow& r : report.rows) {
        out += std::string(to_string(r.category)) + "," + to_string(relevance_of(r.category)) + "," +
               std::to_string(r.n) + "," + detail::fmt(r.w_v) + "," + detail::fmt(r.w_a) + "," + detail::fmt(r.w_av) +
               "," + (r.matches_relevance ? "yes" : "no") + "\n";
    }
    return out;
}

// Prompt robustness -----------------------------------------------------------

struct PromptAccuracy {
    int prompt_id = 0;
    double accuracy = 0.0;
};

struct PromptRobustness {
    std::vector<PromptAccuracy> per_prompt;
    double mean = 0.0;
    double std = 0.0; // population standard deviation
    double min = 0.0;
    double max = 0.0;
    /// Questions whose dominant extracted weight differs across prompts.
    int argmax_flips = 0;
};

inline PromptRobustness prompt_robustness(LogitProvider& provider, const Suite& suite, const PromptRegistry& prompts,
                                          DecodingParams base = {}, const EvalOptions& opts = {}) {
    require(!prompts.empty(), ErrorKind::Configuration, "prompt registry is empty");
    require(!suite.tasks.empty(), ErrorKind::InvalidInput, "suite is empty");
    if (!base.weighted()) base.strategy = StrategyKind::Mad;
    PromptRobustness out;
    std::vector<std::optional<WeightSlot>> slot(suite.tasks.size());
    std::vector<bool> flipped(suite.tasks.size(), false);
    for (const PromptVariant& pv : prompts.all()) {
        DecodingParams p = base;
        p.prompt_id = pv.id;
        SuiteEvaluation ev = evaluate(provider, p, suite, opts);
        out.per_prompt.push_back({pv.id, ev.metrics.overall_accuracy()});
        for (std::size_t i = 0; i < ev.results.size(); ++i) {
            const auto& w = ev.results[i].trace.extracted;
            if (!w) continue;
            const WeightSlot s = dominant_slot(*w);
            if (slot[i] && *slot[i] != s) flipped[i] = true;
            slot[i] = s;
        }
    }
    out.argmax_flips = static_cast<int>(std::count(flipped.begin(), flipped.end(), true));
    double sum = 0.0;
    out.min = out.per_prompt.front().accuracy;
    out.max = out.min;
    for (const PromptAccuracy& pa : out.per_prompt) {
        sum += pa.accuracy;
        out.min = std::min(out.min, pa.accuracy);
        out.max = std::max(out.max, pa.accuracy);
    }
    out.mean = sum / static_cast<double>(out.per_prompt.size());
    double var = 0.0;
    for (const PromptAccuracy& pa : out.per_prompt) {
        var += (pa.accuracy - out.mean) * (pa.accuracy - out.mean);
    }
    out.std = std::sqrt(var / static_cast<double>(out.per_prompt.size()));
    return out;
}

inline std::string robustness_csv(const PromptRobustness& r) {
    std::string out = "prompt,accuracy\n";
    for (const PromptAccuracy& pa : r.per_prompt) {
        out += std::to_string(pa.prompt_id) + "," + detail::fmt(pa.accuracy) + "\n";
    }
    out += "mean," + detail::fmt(r.mean) + "\nstd," + detail::fmt(r.std) + "\nmin," + detail::fmt(r.min) + "\nmax," +
           detail::fmt(r.max) + "\n";
    return out;
}

// Latency accounting -----------------------------------------------------------

struct LatencyRow {
    DecodingParams params;
    double mean_ms_per_token = 0.0;
    double p95_ms_per_step = 0.0;
    double mean_calls_per_token = 0.0;
    std::uint64_t total_calls = 0;
    std::uint64_t total_tokens = 0;
    /// Every trace matched expected_calls() and the provider counter moved by
    /// exactly the summed trace counts.
    bool call_formula_ok = false;
};

inline std::vector<LatencyRow> latency_report(LogitProvider& provider, const Suite& suite,
                                              const std::vector<DecodingParams>& strategies,
                                              const EvalOptions& opts = {}) {
    std::vector<LatencyRow> rows;
    for (const DecodingParams& p : strategies) {
        const std::uint64_t before = provider.calls();
        SuiteEvaluation ev = evaluate(provider, p, suite, opts);
        const std::uint64_t delta = provider.calls() - before;
        LatencyRow row;
        row.params = p;
        row.call_formula_ok = true;
        std::vector<double> step_ms;
        double ms_per_token = 0.0;
        double calls_per_token = 0.0;
        for (const TaskResult& r : ev.results) {
            row.total_calls += r.trace.calls;
            row.total_tokens += r.tokens.size();
            if (r.trace.calls != expected_calls(r.trace)) row.call_formula_ok = false;
            for (const StepRecord& s : r.trace.steps) step_ms.push_back(s.ms);
            const double len = static_cast<double>(std::max<std::size_t>(r.tokens.size(), 1));
            ms_per_token += r.trace.total_ms() / len;
            calls_per_token += static_cast<double>(r.trace.calls) / len;
        }
        if (row.total_calls != delta) row.call_formula_ok = false;
        const double n = static_cast<double>(ev.results.size());
        row.mean_ms_per_token = ms_per_token / n;
        row.mean_calls_per_token = calls_per_token / n;
        if (!step_ms.empty()) {
            std::sort(step_ms.begin(), step_ms.end());
            const auto idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(step_ms.size()))) - 1;
            row.p95_ms_per_step = step_ms[std::min(idx, step_ms.size() - 1)];
        }
        rows.push_back(row);
    }
    return rows;
}

inline std::string latency_csv(const std::vector<LatencyRow>& rows) {
    std::string out = "strategy,calls_per_token,total_calls,total_tokens,call_formula_ok,mean_ms_per_token,p95_ms_per_step\n";
    for (const LatencyRow& r : rows) {
        out += std::string(to_string(r.params.strategy)) + "," + detail::fmt(r.mean_calls_per_token) + "," +
               std::to_string(r.total_calls) + "," + std::to_string(r.total_tokens) + "," +
               (r.call_formula_ok ? "yes" : "no") + "," + detail::fmt(r.mean_ms_per_token, 4) + "," +
               detail::fmt(r.p95_ms_per_step, 4) + "\n";
    }
    return out;
}

} // namespace mad
