#include <gtest/gtest.h>

#include "mad/harness.hpp"
#include "support.hpp"

using namespace mad;

namespace {

// Certificate re-derived from the task fields without synth_logits/mad_logits:
// with EOS and background tokens far below the answers, the clean branch and
// the oracle-weighted rule are evaluated directly on every token.
bool independent_certificate(const Suite& s, const TaskSpec& t) {
    const QuestionSpec& q = t.model;
    const double bias = s.config.eos_bias.front();
    const double gamma = 2.5;
    const ModalityWeights w = oracle_weights(t.relevance());
    std::size_t g_best = 0, m_best = 0;
    std::vector<double> greedy(q.prior.size()), fused(q.prior.size());
    for (std::size_t y = 0; y < q.prior.size(); ++y) {
        const double e = static_cast<TokenId>(y) == s.vocab.eos() ? bias : 0.0;
        const double v = q.video_signal[y] + q.video_interference[y];
        const double a = q.audio_signal[y] + q.audio_interference[y];
        const double vaq = q.prior[y] + v + a + e, tv = q.prior[y] + a + e, ta = q.prior[y] + v + e,
                     tt = q.prior[y] + e;
        greedy[y] = vaq;
        fused[y] = 2 * vaq + gamma * w.av * (2 * vaq - tv - ta) + ta + gamma * w.v * (ta - tt) + tv +
                   gamma * w.a * (tv - tt);
        if (greedy[y] > greedy[g_best]) g_best = y;
        if (fused[y] > fused[m_best]) m_best = y;
    }
    return static_cast<TokenId>(g_best) == t.distractor && static_cast<TokenId>(m_best) == t.correct;
}

DecodingParams with(StrategyKind k, double gamma = 2.5) {
    DecodingParams p;
    p.strategy = k;
    p.gamma = gamma;
    return p;
}

} // namespace

TEST(BuildSuite, SizesIdsAndCertificates) {
    const Suite s = build_suite(50, 7);
    ASSERT_EQ(s.size(), 250u);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const TaskSpec& t = s.tasks[i];
        ASSERT_EQ(t.id, static_cast<std::int64_t>(i));
        ASSERT_EQ(t.category, kCategories[i / 50]);
        ASSERT_NE(t.correct, t.distractor);
        ASSERT_TRUE(independent_certificate(s, t)) << "task " << t.id;
    }
    EXPECT_TRUE(check_suite(s).empty());
}

TEST(BuildSuite, Deterministic) {
    const Suite a = build_suite(10, 99), b = build_suite(10, 99), c = build_suite(10, 100);
    ASSERT_EQ(a.size(), b.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a.tasks[i].model.prior, b.tasks[i].model.prior);
        EXPECT_EQ(a.tasks[i].correct, b.tasks[i].correct);
        EXPECT_EQ(a.tasks[i].model.meta_jitter, b.tasks[i].model.meta_jitter);
        differs = differs || a.tasks[i].model.prior != c.tasks[i].model.prior;
    }
    EXPECT_TRUE(differs);
}

TEST(BuildSuite, RejectsEmpty) {
    try {
        build_suite(0, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
    }
}

TEST(BuildSuite, UnreachableCertificateNamesCategory) {
    SuiteConfig cfg;
    cfg.n_per_category = 1;
    cfg.certificate_gap = 1e6;
    cfg.max_attempts = 2;
    try {
        build_suite(cfg);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Generation);
        EXPECT_NE(std::string(e.what()).find("VisualDom"), std::string::npos);
    }
}

TEST(BuildSuite, CategoryConstructionRules) {
    const Suite s = build_suite(20, 5);
    for (const TaskSpec& t : s.tasks) {
        const QuestionSpec& q = t.model;
        const auto c = static_cast<std::size_t>(t.correct), d = static_cast<std::size_t>(t.distractor);
        EXPECT_EQ(t.relevance(), relevance_of(t.category));
        switch (t.category) {
        case Category::VisualDom:
            EXPECT_GT(q.video_signal[d], q.video_signal[c]);
            EXPECT_GT(q.audio_signal[c], q.audio_signal[d]);
            break;
        case Category::AudioDom:
            EXPECT_GT(q.audio_signal[d], q.audio_signal[c]);
            EXPECT_GT(q.video_signal[c], q.video_signal[d]);
            break;
        case Category::LanguageDom:
            EXPECT_GT(q.prior[d], q.prior[c]);
            EXPECT_GT(q.video_signal[c], q.video_signal[d]);
            EXPECT_GT(q.audio_signal[c], q.audio_signal[d]);
            break;
        case Category::VideoDrivenAudioHall:
            EXPECT_EQ(t.relevance(), Relevance::Audio);
            EXPECT_GT(q.video_interference[d], q.video_interference[c]);
            EXPECT_GT(q.audio_signal[c], q.audio_signal[d]);
            break;
        case Category::AudioDrivenVideoHall:
            EXPECT_EQ(t.relevance(), Relevance::Video);
            EXPECT_GT(q.audio_interference[d], q.audio_interference[c]);
            EXPECT_GT(q.video_signal[c], q.video_signal[d]);
            break;
        }
        for (const MetaJitter& j : q.meta_jitter) {
            for (double e : j) EXPECT_LT(std::abs(e), q.meta_margin / 4);
        }
    }
}

TEST(Evaluate, ForcedOutcomes) {
    const Suite s = build_suite(20, 7);
    SynthProvider p(s.model());
    EvalOptions oracle;
    oracle.oracle_weights = true;
    const SuiteMetrics m_oracle = evaluate(p, with(StrategyKind::Mad), s, oracle).metrics;
    const SuiteMetrics greedy = evaluate(p, with(StrategyKind::Greedy), s).metrics;
    const SuiteMetrics mad = evaluate(p, with(StrategyKind::Mad), s).metrics;
    for (Category c : kCategories) {
        EXPECT_DOUBLE_EQ(m_oracle.accuracy(c), 1.0) << to_string(c);
        EXPECT_DOUBLE_EQ(greedy.accuracy(c), 0.0) << to_string(c);
    }
    EXPECT_GE(mad.overall_accuracy(), greedy.overall_accuracy());
}

TEST(Evaluate, MetricsClosureAndCallTotals) {
    const Suite s = build_suite(10, 7);
    SynthProvider p(s.model());
    for (StrategyKind k : {StrategyKind::Greedy, StrategyKind::MadUniform, StrategyKind::MadArgmax, StrategyKind::Mad}) {
        const std::uint64_t before = p.calls();
        const SuiteEvaluation ev = evaluate(p, with(k), s);
        std::uint64_t sum = 0;
        for (const TaskResult& r : ev.results) sum += r.trace.calls;
        EXPECT_EQ(ev.metrics.total_calls, sum);
        EXPECT_EQ(p.calls() - before, sum);
        for (const auto& [cat, cm] : ev.metrics.per_category) {
            EXPECT_NEAR(cm.accuracy() + cm.hallucination_rate() + cm.other_rate(), 1.0, 1e-12);
        }
        EXPECT_EQ(ev.metrics.overall.n, 50);
    }
}

TEST(Evaluate, WorkerCountDoesNotChangeReports) {
    const Suite s = build_suite(10, 7);
    SynthProvider p(s.model());
    EvalOptions one, four;
    four.workers = 4;
    const SuiteEvaluation a = evaluate(p, with(StrategyKind::Mad), s, one);
    const SuiteEvaluation b = evaluate(p, with(StrategyKind::Mad), s, four);
    EXPECT_EQ(metrics_csv(a.metrics), metrics_csv(b.metrics));
    EXPECT_EQ(results_jsonl(s, a), results_jsonl(s, b));
}

namespace {

class Flaky final : public LogitProvider {
public:
    explicit Flaky(SynthModelSpec s) : spec_(std::move(s)) {}
    const Vocabulary& vocabulary() const override { return spec_.vocab; }

protected:
    LogitVector forward(ModalityConfig cfg, const Context& ctx) override {
        if (ctx.question_id == 3) throw Error(ErrorKind::Transport, "connection reset");
        return synth_logits(spec_, cfg, ctx);
    }

private:
    SynthModelSpec spec_;
};

} // namespace

TEST(Evaluate, ErrorsCarryTaskId) {
    const Suite s = build_suite(2, 7);
    Flaky p(s.model());
    try {
        evaluate(p, with(StrategyKind::Greedy), s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Transport);
        EXPECT_NE(std::string(e.what()).find("task 3"), std::string::npos);
    }
}

TEST(GammaSweep, DefaultGridAndShape) {
    const std::vector<double> g = default_gammas();
    EXPECT_EQ(g, (std::vector<double>{0.5, 1.0, 1.5, 2.0, 2.5, 3.0}));
    const Suite s = build_suite(10, 7);
    SynthProvider p(s.model());
    const auto rows = gamma_sweep(p, s, g);
    ASSERT_EQ(rows.size(), 6u);
    const std::string csv = sweep_csv(rows);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
    for (std::size_t i = 1; i < 5; ++i) {
        EXPECT_GE(rows[i].metrics.overall_accuracy(), rows[i - 1].metrics.overall_accuracy());
    }
    EXPECT_EQ(csv, sweep_csv(gamma_sweep(p, s, g)));
}

TEST(GammaSweep, ZeroGammaCollapsesWeightedVariants) {
    const Suite s = build_suite(5, 7);
    SynthProvider p(s.model());
    const SuiteEvaluation mad = evaluate(p, with(StrategyKind::Mad, 0.0), s);
    const SuiteEvaluation uni = evaluate(p, with(StrategyKind::MadUniform, 0.0), s);
    DecodingParams fb = with(StrategyKind::FourBranch);
    fb.alpha_av = fb.alpha_v = fb.alpha_a = 0.0;
    const SuiteEvaluation four = evaluate(p, fb, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_EQ(mad.results[i].tokens, uni.results[i].tokens);
        EXPECT_EQ(mad.results[i].tokens, four.results[i].tokens);
    }
}

TEST(GammaSweep, EmptyListRejected) {
    const Suite s = build_suite(1, 7);
    SynthProvider p(s.model());
    EXPECT_THROW(gamma_sweep(p, s, {}), Error);
}

TEST(WeightReport, AnalyticMeanWithoutJitter) {
    SuiteConfig cfg;
    cfg.n_per_category = 10;
    cfg.delta_min = cfg.delta_max = 1.0;
    cfg.jitter_frac = 0.0;
    const Suite s = build_suite(cfg);
    SynthProvider p(s.model());
    const WeightReport r = weight_distribution_report(p, s);
    ASSERT_EQ(r.rows.size(), 5u);
    const double e = std::exp(1.0);
    for (const WeightRow& row : r.rows) {
        EXPECT_NEAR(row.w_v + row.w_a + row.w_av, 1.0, 1e-9);
        const double top = e / (e + 2.0);
        switch (relevance_of(row.category)) {
        case Relevance::Audio: EXPECT_NEAR(row.w_a, top, 1e-12); break;
        case Relevance::Video: EXPECT_NEAR(row.w_v, top, 1e-12); break;
        case Relevance::AudioVisual: EXPECT_NEAR(row.w_av, top, 1e-12); break;
        }
    }
    EXPECT_TRUE(r.pattern_ok());
}

TEST(PromptRobustness, JitterFreeAndDefaultSuites) {
    SuiteConfig cfg;
    cfg.n_per_category = 10;
    cfg.jitter_frac = 0.0;
    const Suite flat = build_suite(cfg);
    SynthProvider pf(flat.model());
    const PromptRobustness r0 = prompt_robustness(pf, flat, PromptRegistry::builtin());
    EXPECT_EQ(r0.std, 0.0);
    EXPECT_EQ(r0.per_prompt.size(), 5u);

    const Suite s = build_suite(10, 7);
    SynthProvider p(s.model());
    const PromptRobustness r = prompt_robustness(p, s, PromptRegistry::builtin());
    EXPECT_EQ(r.std, 0.0);
    EXPECT_EQ(r.argmax_flips, 0);
    EXPECT_EQ(r.min, r.max);

    EXPECT_THROW(prompt_robustness(p, s, PromptRegistry{}), Error);
}

TEST(LatencyReport, CallsPerToken) {
    const Suite s = build_suite(10, 7);
    SynthProvider p(s.model());
    const auto rows = latency_report(
        p, s, {with(StrategyKind::Greedy), with(StrategyKind::Mad), with(StrategyKind::MadArgmax)});
    ASSERT_EQ(rows.size(), 3u);
    for (const LatencyRow& r : rows) EXPECT_TRUE(r.call_formula_ok);
    // Every suite answer is one token followed by EOS.
    EXPECT_DOUBLE_EQ(rows[0].mean_calls_per_token, 1.0);
    EXPECT_DOUBLE_EQ(rows[1].mean_calls_per_token, 4.0 + 1.0 / 2.0);
    EXPECT_DOUBLE_EQ(rows[2].mean_calls_per_token, 2.0 + 1.0 / 2.0);
    EXPECT_EQ(rows[1].total_calls, 50u * (4 * 2 + 1));
}
