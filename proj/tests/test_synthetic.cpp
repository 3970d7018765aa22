#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "stabsteer/synthetic.hpp"

using namespace stabsteer;

namespace {

/// Noise-free config with a non-degenerate trigger law.
SyntheticConfig quiet_config(int n_problems, int boundaries) {
    SyntheticConfig c = clean_config(0.0, n_problems, boundaries);
    c.trigger.constant.reset();
    return c;
}

/// Per-problem mean of committed indicators over the boundaries a selector keeps, with weights.
double committed_coefficient(const SyntheticRun& run, const std::function<std::map<std::string, double>(
                                                          const ProblemStates&)>& weights) {
    double acc = 0.0;
    int n = 0;
    for (const auto& p : run.steering.problems) {
        const auto w = weights(p);
        if (w.empty()) continue;
        double s = 0.0;
        for (const auto& [id, wt] : w) s += wt * run.data.truth.committed.at(id);
        acc += s;
        ++n;
    }
    return acc / n;
}

} // namespace

TEST(Trigger, ConstantAndDeterministic) {
    TriggerDistribution t;
    t.constant = 0.3;
    for (double p : sample_trigger_probs(t, 50, 1)) EXPECT_EQ(p, 0.3);
    TriggerDistribution d;
    EXPECT_EQ(sample_trigger_probs(d, 100, 9), sample_trigger_probs(d, 100, 9));
    EXPECT_NE(sample_trigger_probs(d, 100, 9), sample_trigger_probs(d, 100, 10));
    for (double p : sample_trigger_probs(d, 5000, 2)) {
        EXPECT_GE(p, 0.0);
        EXPECT_LE(p, 1.0);
    }
}

TEST(Trigger, MomentsMatchMonteCarlo) {
    TriggerDistribution t;
    const std::size_t n = 400000;
    const auto ps = sample_trigger_probs(t, n, 3);
    double s1 = 0, s2 = 0, s4 = 0;
    std::size_t zeros = 0, top = 0;
    for (double p : ps) {
        s1 += p;
        s2 += p * p;
        s4 += p * p * p * p;
        zeros += p == 0.0;
        top += p >= 0.8;
    }
    const double m1 = s1 / n, m2 = s2 / n;
    const auto m = trigger_moments(t);
    EXPECT_NEAR(m1, m.mean, 5.0 * std::sqrt((m2 - m1 * m1) / n));
    EXPECT_NEAR(m2, m.second, 5.0 * std::sqrt((s4 / n - m2 * m2) / n));
    EXPECT_NEAR(static_cast<double>(zeros) / n, 0.54, 5.0 * std::sqrt(0.54 * 0.46 / n));
    EXPECT_NEAR(static_cast<double>(top) / n, 0.067, 5.0 * std::sqrt(0.067 * 0.933 / n));
    EXPECT_NEAR(m.soft_coefficient(), m.mean + m.variance() / m.mean, 1e-15);
}

TEST(Generator, SeedDeterminism) {
    SyntheticConfig c;
    c.n_problems = 12;
    const auto a = gen_dataset(c);
    const auto b = gen_dataset(c);
    ASSERT_EQ(a.hidden.size(), b.hidden.size());
    for (std::size_t i = 0; i < a.hidden.size(); ++i) {
        EXPECT_EQ(a.hidden[i].matrix, b.hidden[i].matrix);
        EXPECT_EQ(a.traces[i].text, b.traces[i].text);
    }
    EXPECT_EQ(a.truth.trigger, b.truth.trigger);
    c.seed = 2;
    EXPECT_NE(gen_dataset(c).hidden[0].matrix, a.hidden[0].matrix);
}

TEST(Generator, CleanRowsAreExactlyDelta) {
    const auto c = clean_config(1.0, 6, 3);
    const auto ds = gen_dataset(c);
    EXPECT_NEAR(l2_norm(ds.truth.delta), 1.0, 1e-12);
    for (const auto& hs : ds.hidden) {
        for (Eigen::Index i = 0; i < hs.matrix.rows(); ++i) {
            const std::string id = make_boundary_id(hs.question_id, static_cast<std::size_t>(i));
            const Vector row = hs.matrix.row(i).transpose();
            if (ds.truth.trigger.contains(id)) {
                EXPECT_EQ(row, ds.truth.delta) << id;
            } else {
                EXPECT_EQ(row, Vector::Zero(c.dim)) << id;
            }
        }
    }
}

TEST(Generator, SegmenterRecoversBoundarySlots) {
    SyntheticConfig c;
    c.n_problems = 20;
    const auto ds = gen_dataset(c);
    const auto sd = to_steering_dataset(ds, KeywordLexicon::defaults());
    std::set<std::string> found;
    for (const auto& p : sd.problems) {
        found.insert(p.boundary_ids.begin(), p.boundary_ids.end());
        EXPECT_EQ(p.execution_rows.size(), static_cast<std::size_t>(c.executions_per_problem));
    }
    std::set<std::string> truth;
    for (const auto& [id, p] : ds.truth.trigger) truth.insert(id);
    EXPECT_EQ(found, truth);
    EXPECT_EQ(truth.size(), c.total_boundaries());
    for (const auto& t : ds.traces) {
        EXPECT_TRUE(exact_match(*extract_boxed_answer(t.text), t.gold_answer));
    }
}

TEST(Generator, ConfigValidation) {
    SyntheticConfig c;
    c.dim = 5;
    EXPECT_THROW(gen_dataset(c), ConfigError);
    c = SyntheticConfig{};
    c.trigger.zero_mass = 0.9;
    c.trigger.top_mass = 0.2;
    EXPECT_THROW(gen_dataset(c), ConfigError);
    c = SyntheticConfig{};
    c.trigger.constant = 1.5;
    EXPECT_THROW(gen_dataset(c), ConfigError);
    c = SyntheticConfig{};
    c.samples = 0;
    EXPECT_THROW(gen_dataset(c), ConfigError);
}

TEST(Continuations, DegenerateAndHalfProbabilities) {
    for (double p : {0.0, 1.0}) {
        const auto run = simulate(clean_config(p, 10, 4));
        EXPECT_EQ(run.report.scores.size(), 40u);
        for (const auto& [id, s] : run.report.scores) EXPECT_EQ(s.value(), p) << id;
    }
    auto c = clean_config(0.5, 100, 5);
    const auto run = simulate(c);
    const double n = static_cast<double>(c.total_boundaries() * static_cast<std::size_t>(c.samples));
    EXPECT_NEAR(run.report.mean, 0.5, 3.0 * std::sqrt(0.25 / n));
}

TEST(Dilution, NoiseFreeCoefficientIsCommittedFraction) {
    const auto c = quiet_config(60, 6);
    const auto run = simulate(c);
    const double oracle = committed_coefficient(run, [](const ProblemStates& p) {
        std::map<std::string, double> w;
        for (const auto& id : p.boundary_ids) w[id] = 1.0 / static_cast<double>(p.boundary_ids.size());
        return w;
    });
    EXPECT_NEAR(signal_coefficient(mean_difference(run.steering, select_all()), run.data.truth.delta), oracle,
                1e-12);
    EXPECT_NEAR(verify_dilution(c).cos_seal, 1.0, 1e-12);
}

TEST(Dilution, ConvergesToMeanTriggerProbability) {
    double prev = std::numeric_limits<double>::infinity();
    for (int n : {200, 3200}) {
        auto c = quiet_config(n, 5);
        c.noise_sigma = 0.35;
        const auto rep = verify_dilution(c);
        const auto m = trigger_moments(c.trigger);
        // Bernoulli spread of 5 draws per problem plus noise from 5 boundary and 10 execution rows
        const double se = std::sqrt((m.mean - m.second) / (5.0 * n) + 0.35 * 0.35 * (0.2 + 0.1) / n);
        EXPECT_NEAR(rep.empirical_coefficient, rep.predicted_mean, 4.0 * se) << "n=" << n;
        EXPECT_NEAR(rep.predicted_mean, m.mean, 4.0 * std::sqrt(m.second / (5.0 * n))) << "n=" << n;
        EXPECT_LT(rep.relative_error, prev * 2.0);
        prev = rep.relative_error;
    }
}

TEST(SoftWeights, CoefficientMatchesOracleAndIdentity) {
    auto c = quiet_config(40, 400);
    c.executions_per_problem = 2;
    const auto run = simulate(c);
    std::vector<double> per_problem;
    const double oracle = committed_coefficient(run, [&](const ProblemStates& p) {
        std::map<std::string, double> w;
        double total = 0.0;
        for (const auto& id : p.boundary_ids) total += *run.report.score(id);
        if (total == 0.0) return w;
        double acc = 0.0;
        for (const auto& id : p.boundary_ids) {
            w[id] = *run.report.score(id) / total;
            acc += w[id] * run.data.truth.committed.at(id);
        }
        per_problem.push_back(acc);
        return w;
    });
    const double coef = signal_coefficient(mean_difference(run.steering, select_soft(run.report)), run.data.truth.delta);
    EXPECT_NEAR(coef, oracle, 1e-12);

    double mean = 0.0, ss = 0.0;
    for (double x : per_problem) mean += x;
    mean /= static_cast<double>(per_problem.size());
    for (double x : per_problem) ss += (x - mean) * (x - mean);
    const double se = std::sqrt(ss / (per_problem.size() - 1.0) / per_problem.size());
    EXPECT_NEAR(coef, trigger_moments(c.trigger).soft_coefficient(), 3.0 * se);
}

TEST(Sweep, NoiseFreeAlignmentIsExact) {
    const auto c = quiet_config(80, 5);
    const auto curve = run_threshold_sweep(c, default_tau_grid());
    ASSERT_EQ(curve.size(), 11u);
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (const auto& pt : curve) {
        if (pt.alignment) EXPECT_NEAR(*pt.alignment, 1.0, 1e-12) << "tau " << pt.tau;
        EXPECT_LE(pt.boundaries, prev);
        prev = pt.boundaries;
    }
    EXPECT_TRUE(curve.front().alignment.has_value());
}

TEST(Sweep, GapsWhenNothingSurvives) {
    const auto curve = run_threshold_sweep(clean_config(0.0, 10, 3), default_tau_grid());
    for (const auto& pt : curve) {
        EXPECT_FALSE(pt.alignment.has_value()) << "tau " << pt.tau;
        EXPECT_EQ(pt.boundaries, 0u);
    }
}

TEST(HardSoft, BinaryTriggersMakeThemIdentical) {
    auto c = quiet_config(50, 4);
    c.noise_sigma = 0.35;
    c.trigger.zero_mass = 0.5;
    c.trigger.top_mass = 0.5;
    c.trigger.top_low = 1.0;
    const auto run = simulate(c);
    const Vector soft = build_soft(run.steering, run.report).direction;
    const Vector hard = build_stable(run.steering, run.report, 1.0).direction;
    EXPECT_LT((soft - hard).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attenuation, FollowsOverlap) {
    auto base = SyntheticConfig{};
    base.a1_content_leak = 0.0;
    base.content.question_noise = 0.0;
    base.content.nuisance_scale = 0.0;

    base.overlap = 0.0;
    EXPECT_NEAR(verify_projection_attenuation(base).remaining_fraction, 1.0, 1e-9);
    base.overlap = 1.0;
    EXPECT_NEAR(verify_projection_attenuation(base).remaining_fraction, 0.0, 1e-9);

    // without noise the Pythagorean split is exact
    auto exact = base;
    exact.overlap = 0.6;
    exact.noise_sigma = 0.0;
    EXPECT_NEAR(verify_projection_attenuation(exact).remaining_fraction, 0.8, 1e-9);

    // with noise: every boundary commits, so the ratio's Monte Carlo spread
    // (about 0.35 * sqrt(0.3 / 1000) per unit signal) sits well inside 0.02
    auto noisy = base;
    noisy.overlap = 0.6;
    noisy.trigger.constant = 1.0;
    noisy.n_problems = 1000;
    const auto r = verify_projection_attenuation(noisy);
    EXPECT_DOUBLE_EQ(r.expected_fraction, 0.8);
    EXPECT_NEAR(r.remaining_fraction, 0.8, 0.02);
}

TEST(Controls, ComparisonShape) {
    SyntheticConfig c;
    const auto run = simulate(c);
    const auto cmp = compare_with_controls(run, 0.8, 5, 7);
    EXPECT_EQ(cmp.control_alignments.size(), 5u);
    EXPECT_GT(cmp.matched_count, 0u);
    const auto again = compare_with_controls(run, 0.8, 5, 7);
    EXPECT_EQ(cmp.control_alignments, again.control_alignments);
}
