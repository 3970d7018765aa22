#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "stabsteer/stability.hpp"

using namespace stabsteer;

namespace {

const KeywordLexicon lex = KeywordLexicon::defaults();

ContinuationRecord record(std::string id, int hits, int m) {
    ContinuationRecord r;
    r.boundary_id = std::move(id);
    for (int i = 0; i < m; ++i) r.samples.push_back(i < hits ? "Wait, that is off." : "Then add 4.");
    return r;
}

/// 541 scores shaped like the reported distribution: 292 zeros, 213 in
/// (0, 0.8), 36 at or above 0.8.
std::map<std::string, BoundaryScore> paper_shaped_scores() {
    std::map<std::string, BoundaryScore> s;
    int id = 0;
    auto add = [&](int hits, int count) {
        for (int i = 0; i < count; ++i) s["b" + std::to_string(id++)] = {hits, 10};
    };
    add(0, 292);
    for (int h = 1; h <= 7; ++h) add(h, h <= 3 ? 31 : 30);  // 3*31 + 4*30 = 213
    add(8, 12);
    add(9, 12);
    add(10, 12);
    return s;
}

} // namespace

TEST(ScoreBoundary, Examples) {
    EXPECT_DOUBLE_EQ(score_boundary(record("b", 4, 10), lex), 0.4);
    EXPECT_DOUBLE_EQ(score_boundary(record("b", 0, 10), lex), 0.0);
    EXPECT_DOUBLE_EQ(score_boundary(record("b", 10, 10), lex), 1.0);
    EXPECT_THROW(score_boundary(record("b", 0, 0), lex), EmptySetError);
}

TEST(ScoreBoundary, TransitionAndMultiParagraphSamplesCount) {
    ContinuationRecord r;
    r.boundary_id = "b";
    r.samples = {"Sum it.\n\nAlternatively, factor.", "Sum it.\n\nDone.", "instead", "checkpoint reached"};
    EXPECT_DOUBLE_EQ(score_boundary(r, lex), 0.5);
}

TEST(ScoreBoundary, OrderInvariantAndOnGrid) {
    std::mt19937_64 rng(31);
    for (int t = 0; t < 200; ++t) {
        const int m = 1 + static_cast<int>(rng() % 12);
        auto r = record("b", static_cast<int>(rng() % (m + 1)), m);
        const double s = score_boundary(r, lex);
        std::shuffle(r.samples.begin(), r.samples.end(), rng);
        EXPECT_DOUBLE_EQ(score_boundary(r, lex), s);
        const double k = s * m;
        EXPECT_NEAR(k, std::round(k), 1e-12);
    }
}

TEST(ScoreAll, PaperShapedDistribution) {
    const auto rep = make_report(paper_shaped_scores(), 10);
    EXPECT_EQ(rep.scores.size(), 541u);
    EXPECT_EQ(rep.zero_count, 292u);
    EXPECT_NEAR(rep.unstable_fraction(0.8), 505.0 / 541.0, 1e-12);
    EXPECT_NEAR(rep.unstable_fraction(0.8), 0.933, 5e-4);
    const std::vector<std::string> all = [&] {
        std::vector<std::string> ids;
        for (const auto& [id, s] : rep.scores) ids.push_back(id);
        return ids;
    }();
    EXPECT_EQ(filter_boundaries(all, rep, 0.8).size(), 36u);
    EXPECT_NEAR(36.0 / 541.0, 0.067, 5e-4);
    EXPECT_EQ(rep.per_threshold.at(8).count, 36u);
}

TEST(ScoreAll, SingleBoundaryMean) {
    const auto rep = make_report({{"b", {5, 10}}}, 10);
    EXPECT_DOUBLE_EQ(rep.mean, 0.5);
}

TEST(ScoreAll, MissingDuplicateAndOrphanRecords) {
    std::vector<BoundaryRecord> bs(3);
    bs[0].boundary_id = "q:1";
    bs[1].boundary_id = "q:2";
    bs[2].boundary_id = "q:3";
    const auto rep = score_all(bs, {record("q:1", 3, 10), record("q:3", 0, 10), record("z:9", 1, 10)}, lex);
    EXPECT_EQ(rep.scores.size(), 2u);
    EXPECT_EQ(rep.unscored, std::vector<std::string>{"q:2"});
    EXPECT_EQ(rep.orphan_records, std::vector<std::string>{"z:9"});
    EXPECT_FALSE(rep.score("q:2").has_value());
    EXPECT_DOUBLE_EQ(*rep.score("q:1"), 0.3);

    EXPECT_THROW(score_all(bs, {record("q:1", 3, 10), record("q:1", 2, 10)}, lex), DuplicateRecordError);
    EXPECT_THROW(score_all(bs, {record("q:1", 3, 10), record("q:2", 2, 5)}, lex), IngestError);
}

TEST(ScoreAll, HistogramAndThresholdInvariants) {
    std::mt19937_64 rng(32);
    for (int t = 0; t < 100; ++t) {
        std::map<std::string, BoundaryScore> s;
        const int n = 1 + static_cast<int>(rng() % 60);
        for (int i = 0; i < n; ++i) s["b" + std::to_string(i)] = {static_cast<int>(rng() % 11), 10};
        const auto rep = make_report(s, 10);
        std::size_t total = 0;
        for (auto c : rep.histogram) total += c;
        EXPECT_EQ(total, rep.scores.size());
        EXPECT_LE(rep.zero_count, rep.histogram[0]);
        EXPECT_EQ(rep.zero_count + rep.nonzero_count(), rep.scores.size());
        double acc = 0.0;
        for (const auto& [id, b] : rep.scores) acc += b.value();
        EXPECT_NEAR(rep.mean, acc / n, 1e-12);
        for (const auto& st : rep.per_threshold) {
            if (st.count > 0) {
                ASSERT_TRUE(st.mean.has_value());
                EXPECT_GE(*st.mean, st.tau - 1e-12);
            } else {
                EXPECT_FALSE(st.mean.has_value());
            }
        }
    }
}

TEST(Histogram, BinEdges) {
    EXPECT_EQ(histogram_bin(0.0), 0u);
    EXPECT_EQ(histogram_bin(0.1), 1u);
    EXPECT_EQ(histogram_bin(0.7), 7u);  // 0.7*10 is 6.999... in floating point
    EXPECT_EQ(histogram_bin(0.8), 8u);
    EXPECT_EQ(histogram_bin(0.95), 9u);
    EXPECT_EQ(histogram_bin(1.0), 9u);
}

TEST(Filter, Examples) {
    const auto rep = make_report({{"a", {0, 10}}, {"b", {5, 10}}, {"c", {9, 10}}}, 10);
    const std::vector<std::string> ids = {"a", "b", "c", "unscored"};
    EXPECT_EQ(filter_boundaries(ids, rep, 0.8), std::vector<std::string>{"c"});
    EXPECT_EQ(filter_boundaries(ids, rep, 0.0), (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_THROW(filter_boundaries(ids, rep, 1.5), ConfigError);
    EXPECT_THROW(filter_boundaries(ids, rep, -0.1), ConfigError);
}

TEST(Filter, ThresholdOnGridIsInclusive) {
    const auto rep = make_report({{"a", {7, 10}}, {"b", {8, 10}}}, 10);
    EXPECT_EQ(filter_boundaries({"a", "b"}, rep, 0.7).size(), 2u);
    EXPECT_EQ(filter_boundaries({"a", "b"}, rep, 0.8).size(), 1u);
}

TEST(Filter, MonotoneInThreshold) {
    std::mt19937_64 rng(33);
    std::map<std::string, BoundaryScore> s;
    std::vector<std::string> ids;
    for (int i = 0; i < 80; ++i) {
        ids.push_back("b" + std::to_string(i));
        s[ids.back()] = {static_cast<int>(rng() % 11), 10};
    }
    const auto rep = make_report(s, 10);
    for (int i = 0; i <= 20; ++i) {
        for (int j = i; j <= 20; ++j) {
            const auto lo = filter_boundaries(ids, rep, i / 20.0);
            const auto hi = filter_boundaries(ids, rep, j / 20.0);
            const std::set<std::string> lo_set(lo.begin(), lo.end()), hi_set(hi.begin(), hi.end());
            EXPECT_TRUE(std::includes(lo_set.begin(), lo_set.end(), hi_set.begin(), hi_set.end()));
        }
    }
}

TEST(SoftWeights, Examples) {
    auto w = soft_weights({"a", "b", "c"}, {{"a", 0.0}, {"b", 0.0}, {"c", 1.0}});
    EXPECT_DOUBLE_EQ(w["a"], 0.0);
    EXPECT_DOUBLE_EQ(w["b"], 0.0);
    EXPECT_DOUBLE_EQ(w["c"], 1.0);
    w = soft_weights({"a", "b"}, {{"a", 0.2}, {"b", 0.2}});
    EXPECT_DOUBLE_EQ(w["a"], 0.5);
    EXPECT_DOUBLE_EQ(w["b"], 0.5);
    EXPECT_THROW(soft_weights({"a", "b"}, {{"a", 0.0}, {"b", 0.0}}), EmptySetError);
}

TEST(SoftWeights, SignalCoefficientIdentityOnThreePoints) {
    // p = {0, 0, 1}: sum_b w_b p_b = E[p^2]/E[p] = (1/3)/(1/3) = 1 = E[p] + Var(p)/E[p]
    const std::map<std::string, double> p = {{"a", 0.0}, {"b", 0.0}, {"c", 1.0}};
    const auto w = soft_weights({"a", "b", "c"}, p);
    double coeff = 0.0;
    for (const auto& [id, wb] : w) coeff += wb * p.at(id);
    const double e = 1.0 / 3.0, var = 2.0 / 9.0;
    EXPECT_NEAR(coeff, e + var / e, 1e-12);
    EXPECT_NEAR(coeff, 1.0, 1e-12);
}

TEST(SoftWeights, SumToOne) {
    std::mt19937_64 rng(34);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        std::map<std::string, double> p;
        std::vector<std::string> ids;
        for (int i = 0; i < 1 + static_cast<int>(rng() % 10); ++i) {
            ids.push_back("b" + std::to_string(i));
            p[ids.back()] = u(rng);
        }
        double total = 0.0;
        for (const auto& [id, wb] : soft_weights(ids, p)) {
            EXPECT_GE(wb, 0.0);
            total += wb;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(StandardError, Examples) {
    EXPECT_NEAR(max_standard_error(10), 0.1581, 5e-5);
    EXPECT_LE(max_standard_error(10), 0.16);
    EXPECT_DOUBLE_EQ(max_standard_error(1), 0.5);
    EXPECT_NEAR(max_standard_error(100), 0.05, 1e-15);
    EXPECT_THROW(max_standard_error(0), ConfigError);
}

TEST(Amplification, Examples) {
    EXPECT_NEAR(0.9 / 0.167, 5.39, 5e-3);
    EXPECT_NEAR(0.9 / 0.167, 5.4, 0.05);

    std::map<std::string, BoundaryScore> equal;
    for (int i = 0; i < 5; ++i) equal["b" + std::to_string(i)] = {8, 10};
    EXPECT_DOUBLE_EQ(amplification_ratio(make_report(equal, 10), 0.8), 1.0);

    std::map<std::string, BoundaryScore> uniform;
    for (int h = 1; h <= 10; ++h) uniform["b" + std::to_string(h)] = {h, 10};
    EXPECT_NEAR(amplification_ratio(make_report(uniform, 10), 0.8), 0.9 / 0.55, 1e-12);
    EXPECT_NEAR(amplification_ratio(make_report(uniform, 10), 0.8), 1.636, 5e-4);

    EXPECT_THROW(amplification_ratio(make_report({{"a", {1, 10}}}, 10), 0.8), EmptySetError);
}

TEST(Amplification, PaperShapedReportReachesMeanAboveThreshold) {
    const auto rep = make_report(paper_shaped_scores(), 10);
    const double ratio = amplification_ratio(rep, 0.8);
    EXPECT_NEAR(ratio * rep.mean, 0.9, 1e-12);  // top 36 split evenly over 0.8, 0.9, 1.0
}
