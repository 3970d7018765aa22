#ifndef STABSTEER_STABILITY_HPP
#define STABSTEER_STABILITY_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "core.hpp"
#include "errors.hpp"
#include "segmenter.hpp"

namespace stabsteer {

/// Slack applied to threshold comparisons so that k/M == tau survives
/// regardless of how tau was computed.
inline constexpr double threshold_slack = 1e-9;

struct SamplingMeta {
    double temperature = 0.7;
    double top_p = 0.95;
    int max_new_tokens = 128;
};

struct ContinuationRecord {
    std::string boundary_id;
    std::vector<std::string> samples;
    SamplingMeta sampling_meta;
};

struct BoundaryScore {
    int hits = 0;
    int samples = 0;

    double value() const { return static_cast<double>(hits) / static_cast<double>(samples); }
};

struct ThresholdStat {
    double tau = 0.0;
    std::size_t count = 0;
    std::optional<double> mean;
};

struct StabilityReport {
    std::map<std::string, BoundaryScore> scores;
    int samples_per_boundary = 0;
    double mean = 0.0;
    std::array<std::size_t, 10> histogram{};
    std::size_t zero_count = 0;
    std::vector<ThresholdStat> per_threshold;
    std::vector<std::string> unscored;
    std::vector<std::string> orphan_records;

    std::optional<double> score(const std::string& boundary_id) const {
        auto it = scores.find(boundary_id);
        if (it == scores.end()) {
            return std::nullopt;
        }
        return it->second.value();
    }

    std::size_t nonzero_count() const { return scores.size() - zero_count; }

    /// Fraction of scored boundaries strictly below `tau`.
    double unstable_fraction(double tau = 0.8) const {
        if (scores.empty()) {
            return 0.0;
        }
        std::size_t below = 0;
        for (const auto& [id, s] : scores) {
            if (s.value() < tau - threshold_slack) ++below;
        }
        return static_cast<double>(below) / static_cast<double>(scores.size());
    }
};

/// Fraction of continuations that contain at least one behavior paragraph.
inline double score_boundary(const ContinuationRecord& record, const KeywordLexicon& lexicon,
                             const SegmentRules& rules = {}) {
    if (record.samples.empty()) {
        throw EmptySetError("boundary '" + record.boundary_id + "' has no continuation samples");
    }
    int hits = 0;
    for (const auto& text : record.samples) {
        for (const auto& p : segment_trace(text, rules)) {
            if (is_behavior(classify_paragraph(p.text, lexicon))) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(record.samples.size());
}

inline std::size_t histogram_bin(double s) {
    auto bin = static_cast<long>(std::floor(s * 10.0 + threshold_slack));
    return static_cast<std::size_t>(std::clamp(bin, 0L, 9L));
}

/// Fills mean, histogram and per-threshold statistics from `report.scores`.
inline void summarize(StabilityReport& report) {
    report.histogram.fill(0);
    report.zero_count = 0;
    report.per_threshold.clear();
    double total = 0.0;
    for (const auto& [id, s] : report.scores) {
        const double v = s.value();
        total += v;
        ++report.histogram[histogram_bin(v)];
        if (s.hits == 0) ++report.zero_count;
    }
    report.mean = report.scores.empty() ? 0.0 : total / static_cast<double>(report.scores.size());
    for (int i = 0; i < 10; ++i) {
        ThresholdStat st;
        st.tau = i / 10.0;
        double acc = 0.0;
        for (const auto& [id, s] : report.scores) {
            if (s.value() >= st.tau - threshold_slack) {
                ++st.count;
                acc += s.value();
            }
        }
        if (st.count > 0) {
            st.mean = acc / static_cast<double>(st.count);
        }
        report.per_threshold.push_back(st);
    }
}

/// Builds a report from precomputed scores (e.g. loaded from disk).
inline StabilityReport make_report(std::map<std::string, BoundaryScore> scores, int samples_per_boundary) {
    StabilityReport report;
    report.scores = std::move(scores);
    report.samples_per_boundary = samples_per_boundary;
    summarize(report);
    return report;
}

/// Scores every boundary that has a continuation record. Records are keyed by
/// boundary id and aggregated in lexicographic id order.
inline StabilityReport score_all(const std::vector<BoundaryRecord>& boundaries,
                                 const std::vector<ContinuationRecord>& records, const KeywordLexicon& lexicon,
                                 const SegmentRules& rules = {}) {
    std::map<std::string, const ContinuationRecord*> by_id;
    for (const auto& r : records) {
        if (!by_id.emplace(r.boundary_id, &r).second) {
            throw DuplicateRecordError("more than one continuation record for boundary '" + r.boundary_id + "'");
        }
    }
    std::set<std::string> known;
    for (const auto& b : boundaries) {
        known.insert(b.boundary_id);
    }

    StabilityReport report;
    for (const auto& id : known) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            report.unscored.push_back(id);
            continue;
        }
        const auto& rec = *it->second;
        const double s = score_boundary(rec, lexicon, rules);
        const int m = static_cast<int>(rec.samples.size());
        if (report.samples_per_boundary == 0) {
            report.samples_per_boundary = m;
        } else if (report.samples_per_boundary != m) {
            throw IngestError("boundary '" + id + "' has " + std::to_string(m) + " samples, expected " +
                              std::to_string(report.samples_per_boundary));
        }
        report.scores[id] = BoundaryScore{static_cast<int>(std::lround(s * m)), m};
    }
    for (const auto& [id, rec] : by_id) {
        if (!known.contains(id)) {
            report.orphan_records.push_back(id);
        }
    }
    summarize(report);
    return report;
}

/// Boundaries of `candidates` whose score is at least `tau`; unscored
/// boundaries never survive.
inline std::vector<std::string> filter_boundaries(const std::vector<std::string>& candidates,
                                                  const StabilityReport& report, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw ConfigError("threshold must lie in [0, 1]");
    }
    std::vector<std::string> kept;
    for (const auto& id : candidates) {
        const auto s = report.score(id);
        if (s && *s >= tau - threshold_slack) {
            kept.push_back(id);
        }
    }
    return kept;
}

/// Per-problem weights proportional to the stability score.
inline std::map<std::string, double> soft_weights(const std::vector<std::string>& candidates,
                                                  const std::map<std::string, double>& scores) {
    double total = 0.0;
    for (const auto& id : candidates) {
        auto it = scores.find(id);
        if (it != scores.end()) total += it->second;
    }
    if (!(total > 0.0)) {
        throw EmptySetError("all stability scores are zero; problem has no soft weight mass");
    }
    std::map<std::string, double> w;
    for (const auto& id : candidates) {
        auto it = scores.find(id);
        if (it != scores.end()) w[id] = it->second / total;
    }
    return w;
}

inline std::map<std::string, double> soft_weights(const std::vector<std::string>& candidates,
                                                  const StabilityReport& report) {
    std::map<std::string, double> scores;
    for (const auto& id : candidates) {
        if (auto s = report.score(id)) scores[id] = *s;
    }
    return soft_weights(candidates, scores);
}

/// Worst-case binomial standard error of a score estimated from M samples.
inline double max_standard_error(int samples) {
    if (samples < 1) {
        throw ConfigError("sample count must be at least 1");
    }
    return std::sqrt(0.25 / samples);
}

/// Ratio of the mean score among survivors at `tau` to the overall mean.
inline double amplification_ratio(const StabilityReport& report, double tau) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& [id, s] : report.scores) {
        if (s.value() >= tau - threshold_slack) {
            acc += s.value();
            ++n;
        }
    }
    if (n == 0) {
        throw EmptySetError("no boundary survives the threshold");
    }
    if (!(report.mean > 0.0)) {
        throw EmptySetError("mean trigger probability is zero");
    }
    return (acc / static_cast<double>(n)) / report.mean;
}

} // namespace stabsteer

#endif
