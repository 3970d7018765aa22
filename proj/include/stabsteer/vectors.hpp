#ifndef STABSTEER_VECTORS_HPP
#define STABSTEER_VECTORS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "errors.hpp"
#include "segmenter.hpp"
#include "stability.hpp"
#include "subspace.hpp"

namespace stabsteer {

/// Hidden states of one problem split into behavior and execution rows.
struct ProblemStates {
    std::string question_id;
    Matrix hidden;
    std::vector<std::size_t> behavior_rows;
    std::vector<std::string> boundary_ids;  // parallel to behavior_rows
    std::vector<std::size_t> execution_rows;
};

struct SteeringDataset {
    int layer = 0;
    std::vector<ProblemStates> problems;

    Eigen::Index dim() const { return problems.empty() ? 0 : problems.front().hidden.cols(); }

    std::size_t boundary_count() const {
        std::size_t n = 0;
        for (const auto& p : problems) n += p.behavior_rows.size();
        return n;
    }
};

/// Pairs a labeled trace with its hidden states.
inline ProblemStates make_problem(const TraceRecord& trace, const HiddenStateSet& states) {
    if (trace.question_id != states.question_id) {
        throw PairingError("trace '" + trace.question_id + "' paired with hidden states of '" + states.question_id +
                           "'");
    }
    if (static_cast<std::size_t>(states.matrix.rows()) != trace.paragraphs.size()) {
        throw DimensionError("question '" + trace.question_id + "' has " + std::to_string(trace.paragraphs.size()) +
                             " paragraphs but " + std::to_string(states.matrix.rows()) + " hidden-state rows");
    }
    if (!states.matrix.allFinite()) {
        throw IngestError("question '" + trace.question_id + "' has non-finite hidden states");
    }
    ProblemStates p;
    p.question_id = trace.question_id;
    p.hidden = states.matrix;
    const auto part = partition_boundaries(trace);
    p.behavior_rows = part.behavior;
    p.execution_rows = part.execution;
    for (auto r : part.behavior) {
        p.boundary_ids.push_back(make_boundary_id(trace.question_id, r));
    }
    return p;
}

/// Builds a dataset ordered by question id; every problem must share one dimension.
inline SteeringDataset make_dataset(std::vector<ProblemStates> problems, int layer) {
    std::sort(problems.begin(), problems.end(),
              [](const ProblemStates& a, const ProblemStates& b) { return a.question_id < b.question_id; });
    for (std::size_t i = 1; i < problems.size(); ++i) {
        if (problems[i].question_id == problems[i - 1].question_id) {
            throw DuplicateRecordError("question '" + problems[i].question_id + "' appears twice");
        }
        if (problems[i].hidden.cols() != problems.front().hidden.cols()) {
            throw DimensionError("hidden dimension differs across problems");
        }
    }
    return SteeringDataset{layer, std::move(problems)};
}

inline Vector per_example_vector(const Matrix& hidden, std::span<const std::size_t> behavior,
                                 std::span<const std::size_t> execution) {
    if (behavior.empty() || execution.empty()) {
        throw EmptySetError("per-example vector needs both behavior and execution rows");
    }
    return mean_rows(hidden, behavior) - mean_rows(hidden, execution);
}

inline Vector per_example_vector(std::span<const Vector> behavior, std::span<const Vector> execution) {
    return mean_rows(behavior) - mean_rows(execution);
}

/// Behavior rows chosen for one problem, each with a weight.
using RowSelection = std::vector<std::pair<std::size_t, double>>;
using Selector = std::function<RowSelection(const ProblemStates&)>;

namespace detail {

struct Aggregate {
    Vector sum;
    double norm_scale = 0.0;
    std::size_t problems = 0;
    std::size_t boundaries = 0;
};

/// Sums weighted per-problem differences over problems that keep at least one
/// behavior row and have execution rows. `transform` is applied to each hidden
/// row before differencing.
inline Aggregate aggregate(const SteeringDataset& ds, const Selector& select,
                           const std::function<Vector(const Vector&)>& transform = {}) {
    Aggregate agg;
    agg.sum = Vector::Zero(ds.dim());
    for (const auto& p : ds.problems) {
        if (p.execution_rows.empty()) continue;
        const RowSelection sel = select(p);
        if (sel.empty()) continue;
        auto row = [&](std::size_t r) -> Vector {
            Vector h = p.hidden.row(static_cast<Eigen::Index>(r)).transpose();
            return transform ? transform(h) : h;
        };
        Vector pos = Vector::Zero(ds.dim());
        for (const auto& [r, w] : sel) pos += w * row(r);
        Vector neg = Vector::Zero(ds.dim());
        for (auto r : p.execution_rows) neg += row(r);
        neg /= static_cast<double>(p.execution_rows.size());
        const Vector d = pos - neg;
        agg.sum += d;
        agg.norm_scale += l2_norm(d);
        ++agg.problems;
        agg.boundaries += sel.size();
    }
    return agg;
}

inline SteeringVector finish(const Aggregate& agg, const SteeringDataset& ds, VectorMethod method) {
    if (agg.problems == 0) {
        throw EmptySetError("no problem survives exclusion for the " + std::string(to_string(method)) + " vector");
    }
    const Vector mean = agg.sum / static_cast<double>(agg.problems);
    const double typical = agg.norm_scale / static_cast<double>(agg.problems);
    if (!(l2_norm(mean) > 1e-10 * typical)) {
        throw NormalizationError("mean steering difference vanishes for the " + std::string(to_string(method)) +
                                 " vector");
    }
    SteeringVector v;
    v.direction = l2_normalize(mean);
    v.layer = ds.layer;
    v.method = method;
    v.params.problems_used = agg.problems;
    v.params.problems_total = ds.problems.size();
    v.params.boundaries_used = agg.boundaries;
    return v;
}

inline RowSelection uniform(const std::vector<std::size_t>& rows) {
    RowSelection sel;
    for (auto r : rows) sel.emplace_back(r, 1.0 / static_cast<double>(rows.size()));
    return sel;
}

} // namespace detail

inline Selector select_all() {
    return [](const ProblemStates& p) { return detail::uniform(p.behavior_rows); };
}

inline Selector select_stable(const StabilityReport& report, double tau) {
    if (!(tau >= 0.0 && tau <= 1.0)) {
        throw ConfigError("threshold must lie in [0, 1]");
    }
    return [&report, tau](const ProblemStates& p) {
        const auto kept = filter_boundaries(p.boundary_ids, report, tau);
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < p.boundary_ids.size(); ++i) {
            if (std::find(kept.begin(), kept.end(), p.boundary_ids[i]) != kept.end()) {
                rows.push_back(p.behavior_rows[i]);
            }
        }
        return detail::uniform(rows);
    };
}

inline Selector select_soft(const StabilityReport& report) {
    return [&report](const ProblemStates& p) {
        RowSelection sel;
        std::map<std::string, double> w;
        try {
            w = soft_weights(p.boundary_ids, report);
        } catch (const EmptySetError&) {
            return sel;
        }
        for (std::size_t i = 0; i < p.boundary_ids.size(); ++i) {
            auto it = w.find(p.boundary_ids[i]);
            if (it != w.end()) sel.emplace_back(p.behavior_rows[i], it->second);
        }
        return sel;
    };
}

/// Unnormalized mean of per-problem differences under `select`.
inline Vector mean_difference(const SteeringDataset& ds, const Selector& select) {
    const auto agg = detail::aggregate(ds, select);
    if (agg.problems == 0) throw EmptySetError("no problem survives exclusion");
    return agg.sum / static_cast<double>(agg.problems);
}

inline SteeringVector build_seal(const SteeringDataset& ds) {
    return detail::finish(detail::aggregate(ds, select_all()), ds, VectorMethod::seal);
}

inline SteeringVector build_stable(const SteeringDataset& ds, const StabilityReport& report, double tau) {
    auto v = detail::finish(detail::aggregate(ds, select_stable(report, tau)), ds, VectorMethod::stable);
    v.params.tau = tau;
    return v;
}

inline SteeringVector build_soft(const SteeringDataset& ds, const StabilityReport& report) {
    return detail::finish(detail::aggregate(ds, select_soft(report)), ds, VectorMethod::soft);
}

inline void check_subspace(const SteeringDataset& ds, const ContentSubspace& s) {
    if (ds.dim() != s.dim()) {
        throw DimensionError("subspace dimension " + std::to_string(s.dim()) + " does not match hidden dimension " +
                             std::to_string(ds.dim()));
    }
}

/// Projects each per-problem difference, then averages.
inline SteeringVector build_projected(const SteeringDataset& ds, const ContentSubspace& s) {
    check_subspace(ds, s);
    detail::Aggregate agg;
    agg.sum = Vector::Zero(ds.dim());
    for (const auto& p : ds.problems) {
        if (p.behavior_rows.empty() || p.execution_rows.empty()) continue;
        const Vector d = project_out(per_example_vector(p.hidden, p.behavior_rows, p.execution_rows), s);
        agg.sum += d;
        agg.norm_scale += l2_norm(d);
        ++agg.problems;
        agg.boundaries += p.behavior_rows.size();
    }
    auto v = detail::finish(agg, ds, VectorMethod::projected);
    v.params.rank = static_cast<int>(s.rank());
    return v;
}

/// Stable-filtered mean with every hidden state projected before differencing.
inline Vector combined_mean_per_state(const SteeringDataset& ds, const StabilityReport& report, double tau,
                                      const ContentSubspace& s) {
    check_subspace(ds, s);
    const auto agg = detail::aggregate(ds, select_stable(report, tau), [&s](const Vector& h) { return project_out(h, s); });
    if (agg.problems == 0) throw EmptySetError("no problem survives exclusion");
    return agg.sum / static_cast<double>(agg.problems);
}

/// Same quantity computed by projecting the stable mean difference once.
inline Vector combined_mean_per_difference(const SteeringDataset& ds, const StabilityReport& report, double tau,
                                           const ContentSubspace& s) {
    check_subspace(ds, s);
    return project_out(mean_difference(ds, select_stable(report, tau)), s);
}

inline SteeringVector build_combined(const SteeringDataset& ds, const StabilityReport& report, double tau,
                                     const ContentSubspace& s) {
    check_subspace(ds, s);
    const auto agg =
        detail::aggregate(ds, select_stable(report, tau), [&s](const Vector& h) { return project_out(h, s); });
    auto v = detail::finish(agg, ds, VectorMethod::combined);
    v.params.tau = tau;
    v.params.rank = static_cast<int>(s.rank());
    return v;
}

/// Contrast between prompted and plain question states, paired by question id.
/// Each matrix holds the token-level states of one question and is mean-pooled.
inline SteeringVector build_prompt_vector(const std::map<std::string, Matrix>& prompted,
                                          const std::map<std::string, Matrix>& plain, int layer = 0) {
    if (prompted.empty() || plain.empty()) {
        throw EmptySetError("prompt vector needs at least one question pair");
    }
    for (const auto& [id, m] : prompted) {
        if (!plain.contains(id)) throw PairingError("question '" + id + "' has no plain counterpart");
    }
    for (const auto& [id, m] : plain) {
        if (!prompted.contains(id)) throw PairingError("question '" + id + "' has no prompted counterpart");
    }
    detail::Aggregate agg;
    for (const auto& [id, m] : prompted) {
        const Vector d = pool_question_states(m) - pool_question_states(plain.at(id));
        if (agg.sum.size() == 0) agg.sum = Vector::Zero(d.size());
        if (d.size() != agg.sum.size()) throw DimensionError("prompt states differ in dimension");
        agg.sum += d;
        agg.norm_scale += l2_norm(d);
        ++agg.problems;
    }
    SteeringDataset shape;
    shape.layer = layer;
    auto v = detail::finish(agg, shape, VectorMethod::prompt);
    v.params.problems_total = prompted.size();
    return v;
}

struct ControlVector {
    SteeringVector vector;
    std::vector<std::string> boundary_ids;  // sorted sample manifest
};

/// Vectors built from `count` boundaries drawn uniformly without replacement
/// from every keyword-detected boundary, ignoring stability scores.
inline std::vector<ControlVector> build_random_controls(const SteeringDataset& ds, std::size_t count,
                                                        std::size_t n_controls, std::uint64_t seed) {
    if (n_controls < 1) throw SamplingError("need at least one control");
    std::vector<std::string> pool;
    for (const auto& p : ds.problems) {
        pool.insert(pool.end(), p.boundary_ids.begin(), p.boundary_ids.end());
    }
    if (count == 0 || count > pool.size()) {
        throw SamplingError("cannot sample " + std::to_string(count) + " of " + std::to_string(pool.size()) +
                            " boundaries");
    }
    std::vector<ControlVector> out;
    for (std::size_t c = 0; c < n_controls; ++c) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(c)};
        std::mt19937_64 rng(seq);
        std::vector<std::string> ids = pool;
        for (std::size_t i = 0; i < count; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
            std::swap(ids[i], ids[pick(rng)]);
        }
        ids.resize(count);
        std::sort(ids.begin(), ids.end());
        auto select = [&ids](const ProblemStates& p) {
            std::vector<std::size_t> rows;
            for (std::size_t i = 0; i < p.boundary_ids.size(); ++i) {
                if (std::binary_search(ids.begin(), ids.end(), p.boundary_ids[i])) rows.push_back(p.behavior_rows[i]);
            }
            return detail::uniform(rows);
        };
        auto v = detail::finish(detail::aggregate(ds, select), ds, VectorMethod::control);
        v.params.seed = seed;
        out.push_back({std::move(v), std::move(ids)});
    }
    return out;
}

/// h + alpha * v for a unit-norm direction v.
inline Vector apply_steering(const Vector& h, double alpha, const Vector& direction) {
    if (h.size() != direction.size()) {
        throw DimensionError("hidden state and steering direction differ in dimension");
    }
    if (std::abs(l2_norm(direction) - 1.0) > unit_norm_tolerance) {
        throw NormalizationError("steering direction must have unit norm");
    }
    return h + alpha * direction;
}

} // namespace stabsteer

#endif
