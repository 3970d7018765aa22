#ifndef STABSTEER_SYNTHETIC_HPP
#define STABSTEER_SYNTHETIC_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "core.hpp"
#include "errors.hpp"
#include "probe.hpp"
#include "segmenter.hpp"
#include "stability.hpp"
#include "subspace.hpp"
#include "vectors.hpp"

namespace stabsteer {

/// Trigger-probability law: a point mass at zero, a uniform cluster on
/// [top_low, top_high], and a Beta(a, b) tail rescaled to [0, tail_max] for
/// the remaining mass. `constant` overrides all of it with p == constant.
struct TriggerDistribution {
    double zero_mass = 0.54;
    double top_mass = 0.067;
    double top_low = 0.8;
    double top_high = 1.0;
    double beta_a = 1.0;
    double beta_b = 1.95;
    double tail_max = 0.8;
    std::optional<double> constant;

    double tail_mass() const { return 1.0 - zero_mass - top_mass; }
};

struct ContentModel {
    int n_clusters = 7;
    int content_rank = 4;
    double cluster_scale = 2.0;    // typical norm of a cluster center
    double cluster_spread = 0.5;   // per-axis spread around the center
    double nuisance_scale = 0.0;   // std of question embeddings along one non-subject axis
    double question_noise = 0.0;   // isotropic std of question embeddings
};

struct SyntheticConfig {
    int dim = 64;
    double delta_norm = 1.0;
    double overlap = 0.0;  // cosine between delta and the content subspace
    TriggerDistribution trigger;
    ContentModel content;
    double noise_sigma = 0.35;        // per-coordinate std of the residual noise
    double a1_shared_offset = 0.5;    // norm of an offset shared by all boundary rows
    double a1_content_leak = 0.3;     // extra copy of the problem's content term on boundary rows
    int n_problems = 100;
    int boundaries_per_problem = 5;
    int executions_per_problem = 10;
    int samples = 10;
    std::uint64_t seed = 1;

    void validate() const {
        const auto& t = trigger;
        if (dim < content.content_rank + 3) {
            throw ConfigError("dim must be at least content_rank + 3");
        }
        if (!(delta_norm > 0.0) || !(overlap >= 0.0 && overlap <= 1.0)) {
            throw ConfigError("delta_norm must be positive and overlap in [0, 1]");
        }
        if (t.constant) {
            if (!(*t.constant >= 0.0 && *t.constant <= 1.0)) throw ConfigError("constant trigger outside [0, 1]");
        } else {
            if (!(t.zero_mass >= 0.0) || !(t.top_mass >= 0.0) || t.zero_mass + t.top_mass > 1.0 + 1e-12) {
                throw ConfigError("trigger masses must be nonnegative and sum to at most 1");
            }
            if (!(t.beta_a > 0.0) || !(t.beta_b > 0.0)) throw ConfigError("Beta parameters must be positive");
            if (!(t.tail_max > 0.0 && t.tail_max <= 1.0)) throw ConfigError("tail_max must lie in (0, 1]");
            if (!(t.top_low >= 0.0 && t.top_low <= t.top_high && t.top_high <= 1.0)) {
                throw ConfigError("top cluster bounds must satisfy 0 <= low <= high <= 1");
            }
        }
        if (!(noise_sigma >= 0.0) || !(content.cluster_scale >= 0.0) || !(content.cluster_spread >= 0.0) ||
            !(content.nuisance_scale >= 0.0) || !(content.question_noise >= 0.0)) {
            throw ConfigError("scales and noise levels must be nonnegative");
        }
        if (content.n_clusters < 1 || content.content_rank < 1 || n_problems < 1 || boundaries_per_problem < 1 ||
            executions_per_problem < 1 || samples < 1) {
            throw ConfigError("all counts must be at least 1");
        }
    }

    std::size_t total_boundaries() const {
        return static_cast<std::size_t>(n_problems) * static_cast<std::size_t>(boundaries_per_problem);
    }
};

/// A config whose only structure is the behavior direction: no noise, no
/// context terms, constant trigger probability.
inline SyntheticConfig clean_config(double p, int n_problems, int boundaries_per_problem) {
    SyntheticConfig c;
    c.trigger.constant = p;
    c.noise_sigma = 0.0;
    c.a1_shared_offset = 0.0;
    c.a1_content_leak = 0.0;
    c.content.cluster_scale = 0.0;
    c.content.cluster_spread = 0.0;
    c.n_problems = n_problems;
    c.boundaries_per_problem = boundaries_per_problem;
    return c;
}

struct TriggerMoments {
    double mean = 0.0;
    double second = 0.0;

    double variance() const { return second - mean * mean; }
    /// Signal coefficient of score-proportional weighting: E[p] + Var(p)/E[p].
    double soft_coefficient() const { return mean + variance() / mean; }
};

inline TriggerMoments trigger_moments(const TriggerDistribution& t) {
    if (t.constant) return {*t.constant, *t.constant * *t.constant};
    TriggerMoments m;
    const double lo = t.top_low, hi = t.top_high;
    const double top_mean = 0.5 * (lo + hi);
    const double top_second = hi > lo ? (hi * hi * hi - lo * lo * lo) / (3.0 * (hi - lo)) : lo * lo;
    const double ab = t.beta_a + t.beta_b;
    const double beta_mean = t.beta_a / ab;
    const double beta_second = t.beta_a * (t.beta_a + 1.0) / (ab * (ab + 1.0));
    m.mean = t.top_mass * top_mean + t.tail_mass() * t.tail_max * beta_mean;
    m.second = t.top_mass * top_second + t.tail_mass() * t.tail_max * t.tail_max * beta_second;
    return m;
}

using Rng = std::mt19937_64;

inline double sample_trigger(const TriggerDistribution& t, Rng& rng) {
    if (t.constant) return *t.constant;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double u = u01(rng);
    if (u < t.zero_mass) return 0.0;
    if (u < t.zero_mass + t.top_mass) {
        return std::uniform_real_distribution<double>(t.top_low, t.top_high)(rng);
    }
    const double x = std::gamma_distribution<double>(t.beta_a, 1.0)(rng);
    const double y = std::gamma_distribution<double>(t.beta_b, 1.0)(rng);
    return t.tail_max * (x + y > 0.0 ? x / (x + y) : 0.0);
}

inline std::vector<double> sample_trigger_probs(const TriggerDistribution& t, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> p(n);
    for (auto& v : p) v = sample_trigger(t, rng);
    return p;
}

inline std::vector<double> sample_trigger_probs(const SyntheticConfig& c) {
    c.validate();
    return sample_trigger_probs(c.trigger, c.total_boundaries(), c.seed);
}

/// Hidden parameters of a synthetic dataset. Never written through the
/// ingestion formats; only to a sidecar.
struct GroundTruth {
    Vector delta;
    Eigen::MatrixXd content_basis;  // D x content_rank
    Vector nuisance_direction;
    Vector offset_direction;
    std::map<std::string, double> trigger;  // boundary id -> p_b
    std::map<std::string, int> committed;   // boundary id -> z_b
    std::map<std::string, Vector> context;  // question id -> mu
};

struct SyntheticTrace {
    std::string question_id;
    std::string text;
    std::string subject;
    std::string gold_answer;
};

struct SyntheticDataset {
    std::vector<SyntheticTrace> traces;
    std::vector<HiddenStateSet> hidden;
    std::vector<QuestionEmbedding> questions;
    GroundTruth truth;
    int layer = 20;
};

namespace detail {

inline Vector gaussian(Eigen::Index n, double sd, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = sd * nd(rng);
    return v;
}

inline std::string synthetic_id(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "syn-%04d", k);
    return buf;
}

} // namespace detail

/// Draws a dataset from h_b = z_b * delta + mu + offsets + eps,
/// h_e = mu + eps, z_b ~ Bernoulli(p_b).
inline SyntheticDataset gen_dataset(const SyntheticConfig& c) {
    c.validate();
    Rng rng(c.seed);
    const Eigen::Index d = c.dim;
    const int r = c.content.content_rank;

    const Eigen::MatrixXd raw = [&] {
        Eigen::MatrixXd m(d, r + 3);
        for (Eigen::Index j = 0; j < m.cols(); ++j) m.col(j) = detail::gaussian(d, 1.0, rng);
        return m;
    }();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    const Eigen::MatrixXd frame = qr.householderQ() * Eigen::MatrixXd::Identity(d, r + 3);

    SyntheticDataset ds;
    auto& gt = ds.truth;
    gt.content_basis = frame.leftCols(r);
    gt.nuisance_direction = frame.col(r);
    gt.offset_direction = frame.col(r + 1);
    gt.delta = c.delta_norm *
               (c.overlap * frame.col(0) + std::sqrt(std::max(0.0, 1.0 - c.overlap * c.overlap)) * frame.col(r + 2));

    std::vector<Vector> centers;
    for (int k = 0; k < c.content.n_clusters; ++k) {
        centers.push_back(detail::gaussian(r, c.content.cluster_scale / std::sqrt(static_cast<double>(r)), rng));
    }

    std::bernoulli_distribution coin(0.5);
    const int n_par = c.boundaries_per_problem + c.executions_per_problem;
    for (int k = 0; k < c.n_problems; ++k) {
        const std::string qid = detail::synthetic_id(k);
        const int subject = k % c.content.n_clusters;
        const Vector coords = centers[static_cast<std::size_t>(subject)] + detail::gaussian(r, c.content.cluster_spread, rng);
        const Vector mu = gt.content_basis * coords;
        gt.context[qid] = mu;

        QuestionEmbedding qe;
        qe.question_id = qid;
        qe.subject = "subject-" + std::to_string(subject);
        qe.q = mu + std::normal_distribution<double>(0.0, 1.0)(rng) * c.content.nuisance_scale * gt.nuisance_direction +
               detail::gaussian(d, c.content.question_noise, rng);
        ds.questions.push_back(std::move(qe));

        // paragraph order: a random interleaving of boundary and execution slots
        std::vector<int> is_boundary(static_cast<std::size_t>(n_par), 0);
        std::fill(is_boundary.begin(), is_boundary.begin() + c.boundaries_per_problem, 1);
        for (int i = n_par - 1; i > 0; --i) {
            std::uniform_int_distribution<int> pick(0, i);
            std::swap(is_boundary[static_cast<std::size_t>(i)], is_boundary[static_cast<std::size_t>(pick(rng))]);
        }

        HiddenStateSet hs;
        hs.question_id = qid;
        hs.layer = ds.layer;
        hs.matrix.resize(n_par, d);
        std::string text = "<think>\n";
        for (int i = 0; i < n_par; ++i) {
            Vector h = mu + detail::gaussian(d, c.noise_sigma, rng);
            if (is_boundary[static_cast<std::size_t>(i)]) {
                const std::string bid = make_boundary_id(qid, static_cast<std::size_t>(i));
                const double p = sample_trigger(c.trigger, rng);
                const int z = std::bernoulli_distribution(p)(rng) ? 1 : 0;
                gt.trigger[bid] = p;
                gt.committed[bid] = z;
                h += z * gt.delta + c.a1_shared_offset * gt.offset_direction + c.a1_content_leak * mu;
                text += "Wait, let me check step " + std::to_string(i) + " again.";
            } else {
                text += "Compute term " + std::to_string(i) + " of the sum.";
            }
            text += i + 1 < n_par ? "\n\n" : "\n";
            hs.matrix.row(i) = h.transpose();
        }
        const std::string answer = std::to_string(k % 97);
        text += "</think>\nThe answer is \\boxed{" + answer + "}.";
        ds.traces.push_back({qid, std::move(text), "subject-" + std::to_string(subject), answer});
        ds.hidden.push_back(std::move(hs));
    }
    return ds;
}

/// Renders M Bernoulli(p_b) outcomes per boundary as short continuation texts.
inline std::vector<ContinuationRecord> gen_continuation_outcomes(const SyntheticDataset& ds, const SyntheticConfig& c) {
    std::seed_seq seq{static_cast<std::uint32_t>(c.seed), static_cast<std::uint32_t>(c.seed >> 32), 0xC047u};
    Rng rng(seq);
    std::vector<ContinuationRecord> out;
    for (const auto& [bid, p] : ds.truth.trigger) {
        ContinuationRecord rec;
        rec.boundary_id = bid;
        std::bernoulli_distribution hit(p);
        for (int i = 0; i < c.samples; ++i) {
            rec.samples.push_back(hit(rng) ? "Hmm, wait. Let me verify that step." : "So the next value is 12.");
        }
        out.push_back(std::move(rec));
    }
    return out;
}

/// Runs the observable part of a synthetic dataset through segmentation and
/// pairing, exactly as ingested data would be.
inline SteeringDataset to_steering_dataset(const SyntheticDataset& ds, const KeywordLexicon& lexicon) {
    std::vector<ProblemStates> problems;
    for (std::size_t i = 0; i < ds.traces.size(); ++i) {
        const auto seg = segment_record(ds.traces[i].question_id, ds.traces[i].text, lexicon);
        problems.push_back(make_problem(seg.trace, ds.hidden[i]));
    }
    return make_dataset(std::move(problems), ds.layer);
}

inline std::vector<BoundaryRecord> synthetic_boundaries(const SyntheticDataset& ds, const KeywordLexicon& lexicon) {
    std::vector<BoundaryRecord> out;
    for (const auto& t : ds.traces) {
        const auto b = detect_boundaries(segment_record(t.question_id, t.text, lexicon).trace);
        out.insert(out.end(), b.begin(), b.end());
    }
    return out;
}

/// Everything an experiment needs from one seed.
struct SyntheticRun {
    SyntheticDataset data;
    SteeringDataset steering;
    StabilityReport report;
};

inline SyntheticRun simulate(const SyntheticConfig& c) {
    const auto lexicon = KeywordLexicon::defaults();
    SyntheticRun run;
    run.data = gen_dataset(c);
    run.steering = to_steering_dataset(run.data, lexicon);
    run.report = score_all(synthetic_boundaries(run.data, lexicon), gen_continuation_outcomes(run.data, c), lexicon);
    return run;
}

/// Component of `v` along delta, in units of |delta|.
inline double signal_coefficient(const Vector& v, const Vector& delta) {
    return v.dot(delta) / delta.squaredNorm();
}

struct DilutionReport {
    double empirical_coefficient = 0.0;
    double predicted_mean = 0.0;  // mean over problems of the per-problem mean p_b
    double relative_error = 0.0;
    double cos_seal = 0.0;
    std::optional<double> cos_stable;
};

inline DilutionReport verify_dilution(const SyntheticConfig& c, double tau = 0.8) {
    const auto run = simulate(c);
    const auto& gt = run.data.truth;
    DilutionReport rep;
    const Vector mean_d = mean_difference(run.steering, select_all());
    rep.empirical_coefficient = signal_coefficient(mean_d, gt.delta);
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& p : run.steering.problems) {
        if (p.boundary_ids.empty() || p.execution_rows.empty()) continue;
        double pk = 0.0;
        for (const auto& id : p.boundary_ids) pk += gt.trigger.at(id);
        acc += pk / static_cast<double>(p.boundary_ids.size());
        ++n;
    }
    rep.predicted_mean = acc / static_cast<double>(n);
    rep.relative_error = rep.predicted_mean > 0.0
                             ? std::abs(rep.empirical_coefficient - rep.predicted_mean) / rep.predicted_mean
                             : std::abs(rep.empirical_coefficient);
    try {
        rep.cos_seal = cosine(build_seal(run.steering).direction, gt.delta);
    } catch (const NormalizationError&) {
        rep.cos_seal = 0.0;
    }
    try {
        rep.cos_stable = cosine(build_stable(run.steering, run.report, tau).direction, gt.delta);
    } catch (const Error&) {
        rep.cos_stable.reset();
    }
    return rep;
}

struct SweepPoint {
    double tau = 0.0;
    std::optional<double> alignment;  // empty when nothing survives
    std::size_t boundaries = 0;
    std::size_t problems = 0;
};

inline std::vector<SweepPoint> run_threshold_sweep(const SyntheticRun& run, const std::vector<double>& taus) {
    std::vector<SweepPoint> curve;
    for (double tau : taus) {
        SweepPoint pt;
        pt.tau = tau;
        try {
            const auto v = build_stable(run.steering, run.report, tau);
            pt.alignment = cosine(v.direction, run.data.truth.delta);
            pt.boundaries = v.params.boundaries_used;
            pt.problems = v.params.problems_used;
        } catch (const EmptySetError&) {
        } catch (const NormalizationError&) {
        }
        curve.push_back(pt);
    }
    return curve;
}

inline std::vector<SweepPoint> run_threshold_sweep(const SyntheticConfig& c, const std::vector<double>& taus) {
    return run_threshold_sweep(simulate(c), taus);
}

inline std::vector<double> default_tau_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
    return g;
}

struct HardSoftComparison {
    double align_seal = 0.0;
    double align_soft = 0.0;
    double align_hard = 0.0;
};

inline HardSoftComparison compare_hard_soft(const SyntheticRun& run, double tau = 0.8) {
    const auto& delta = run.data.truth.delta;
    HardSoftComparison out;
    out.align_seal = cosine(build_seal(run.steering).direction, delta);
    out.align_soft = cosine(build_soft(run.steering, run.report).direction, delta);
    out.align_hard = cosine(build_stable(run.steering, run.report, tau).direction, delta);
    return out;
}

inline HardSoftComparison compare_hard_soft(const SyntheticConfig& c, double tau = 0.8) {
    return compare_hard_soft(simulate(c), tau);
}

struct ControlComparison {
    double align_stable = 0.0;
    std::vector<double> control_alignments;
    double control_mean = 0.0;
    double control_std = 0.0;  // sample standard deviation
    std::size_t matched_count = 0;

    /// Distance of the stable alignment above the control mean, in control std units.
    double sigma_gap() const {
        return control_std > 0.0 ? (align_stable - control_mean) / control_std
                                 : (align_stable > control_mean ? std::numeric_limits<double>::infinity() : 0.0);
    }
};

inline ControlComparison compare_with_controls(const SyntheticRun& run, double tau, std::size_t n_controls,
                                               std::uint64_t seed) {
    const auto& delta = run.data.truth.delta;
    ControlComparison out;
    const auto stable = build_stable(run.steering, run.report, tau);
    out.align_stable = cosine(stable.direction, delta);
    out.matched_count = stable.params.boundaries_used;
    for (const auto& cv : build_random_controls(run.steering, out.matched_count, n_controls, seed)) {
        out.control_alignments.push_back(cosine(cv.vector.direction, delta));
    }
    const double n = static_cast<double>(out.control_alignments.size());
    out.control_mean = std::accumulate(out.control_alignments.begin(), out.control_alignments.end(), 0.0) / n;
    double ss = 0.0;
    for (double a : out.control_alignments) ss += (a - out.control_mean) * (a - out.control_mean);
    out.control_std = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    return out;
}

struct AttenuationReport {
    double overlap = 0.0;
    double pre_signal = 0.0;
    double post_signal = 0.0;
    double remaining_fraction = 0.0;
    double expected_fraction = 0.0;

    double attenuation() const { return 1.0 - remaining_fraction; }
};

/// Fits the content subspace from the question embeddings, projects the SEAL
/// mean difference, and compares the behavior signal before and after.
/// The surviving signal is measured along the projected delta direction.
inline AttenuationReport verify_projection_attenuation(const SyntheticConfig& c) {
    const auto run = simulate(c);
    const auto& gt = run.data.truth;
    std::vector<Vector> q;
    for (const auto& e : run.data.questions) q.push_back(e.q);
    const auto s = fit_content_subspace(stack_rows(q), c.content.content_rank);

    AttenuationReport rep;
    rep.overlap = c.overlap;
    rep.expected_fraction = std::sqrt(std::max(0.0, 1.0 - c.overlap * c.overlap));
    const Vector delta_hat = gt.delta / l2_norm(gt.delta);
    const Vector mean_d = mean_difference(run.steering, select_all());
    rep.pre_signal = mean_d.dot(delta_hat);
    const Vector kept = project_out(delta_hat, s);
    const double kept_norm = l2_norm(kept);
    if (kept_norm > 1e-9) {
        rep.post_signal = project_out(mean_d, s).dot(kept / kept_norm);
    }
    rep.remaining_fraction = rep.pre_signal != 0.0 ? rep.post_signal / rep.pre_signal : 0.0;
    return rep;
}

inline void probe_candidates(const SyntheticRun& run, std::vector<ProbeCandidate>& positives,
                             std::vector<ProbeCandidate>& negatives) {
    probe_candidates(run.steering, run.report, positives, negatives);
}

} // namespace stabsteer

#endif
