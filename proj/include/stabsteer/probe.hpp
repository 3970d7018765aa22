#ifndef STABSTEER_PROBE_HPP
#define STABSTEER_PROBE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "core.hpp"
#include "errors.hpp"
#include "optim.hpp"
#include "stability.hpp"
#include "subspace.hpp"
#include "vectors.hpp"

namespace stabsteer {

/// One hidden-state row eligible for probe sampling.
struct ProbeCandidate {
    std::string id;
    std::string group;
    Vector h;
    double score = 0.0;
};

struct ProbeDataset {
    Matrix x;
    std::vector<int> y;
    std::vector<std::string> groups;
    std::vector<std::string> row_ids;
    std::vector<int> bins;        // -1 for rows without a stability bin
    std::vector<double> scores;   // NaN for rows without a score

    std::size_t size() const { return y.size(); }
};

/// Index of the equal-width bin on [0, 1] holding `score`; 1.0 joins the top bin.
inline int stability_bin(double score, int bins) {
    const auto b = static_cast<int>(std::floor(score * bins + threshold_slack));
    return std::clamp(b, 0, bins - 1);
}

/// Draws `per_bin` positives from each stability bin and an equal number of
/// negatives, all without replacement.
inline ProbeDataset balanced_bin_sample(const std::vector<ProbeCandidate>& positives,
                                        const std::vector<ProbeCandidate>& negatives, int bins, int per_bin,
                                        std::uint64_t seed) {
    if (bins < 1 || per_bin < 1) {
        throw ConfigError("bins and per_bin must be at least 1");
    }
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(bins));
    for (std::size_t i = 0; i < positives.size(); ++i) {
        members[static_cast<std::size_t>(stability_bin(positives[i].score, bins))].push_back(i);
    }
    const double width = 1.0 / bins;
    for (int b = 0; b < bins; ++b) {
        if (static_cast<int>(members[b].size()) < per_bin) {
            throw SamplingError("stability bin " + std::to_string(b) + " [" + std::to_string(b * width) + ", " +
                                std::to_string((b + 1) * width) + ") has " + std::to_string(members[b].size()) +
                                " boundaries, need " + std::to_string(per_bin));
        }
    }
    const std::size_t n_pos = static_cast<std::size_t>(bins) * static_cast<std::size_t>(per_bin);
    if (negatives.size() < n_pos) {
        throw SamplingError("need " + std::to_string(n_pos) + " execution rows, have " +
                            std::to_string(negatives.size()));
    }

    std::mt19937_64 rng(seed);
    auto draw = [&rng](std::vector<std::size_t> idx, std::size_t k) {
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        idx.resize(k);
        return idx;
    };

    const auto dim = positives.empty() ? 0 : positives.front().h.size();
    ProbeDataset ds;
    ds.x.resize(static_cast<Eigen::Index>(2 * n_pos), dim);
    Eigen::Index row = 0;
    auto push = [&](const ProbeCandidate& c, int label, int bin, double score) {
        if (c.h.size() != dim) throw DimensionError("probe candidates differ in dimension");
        ds.x.row(row++) = c.h.transpose();
        ds.y.push_back(label);
        ds.groups.push_back(c.group);
        ds.row_ids.push_back(c.id);
        ds.bins.push_back(bin);
        ds.scores.push_back(score);
    };
    for (int b = 0; b < bins; ++b) {
        for (auto i : draw(members[b], static_cast<std::size_t>(per_bin))) {
            push(positives[i], 1, b, positives[i].score);
        }
    }
    std::vector<std::size_t> all_neg(negatives.size());
    std::iota(all_neg.begin(), all_neg.end(), std::size_t{0});
    for (auto i : draw(all_neg, n_pos)) {
        push(negatives[i], 0, -1, std::numeric_limits<double>::quiet_NaN());
    }
    return ds;
}

/// Probe candidates from a paired dataset: scored behavior rows are positives,
/// execution rows are negatives, grouped by question.
inline void probe_candidates(const SteeringDataset& ds, const StabilityReport& report,
                             std::vector<ProbeCandidate>& positives, std::vector<ProbeCandidate>& negatives) {
    for (const auto& p : ds.problems) {
        for (std::size_t i = 0; i < p.behavior_rows.size(); ++i) {
            const auto s = report.score(p.boundary_ids[i]);
            if (!s) continue;
            positives.push_back({p.boundary_ids[i], p.question_id,
                                 p.hidden.row(static_cast<Eigen::Index>(p.behavior_rows[i])).transpose(), *s});
        }
        for (auto r : p.execution_rows) {
            negatives.push_back({make_boundary_id(p.question_id, r), p.question_id,
                                 p.hidden.row(static_cast<Eigen::Index>(r)).transpose(), 0.0});
        }
    }
}

/// Assigns each distinct group (in lexicographic order) to fold i mod `folds`.
inline std::vector<int> grouped_folds(const std::vector<std::string>& groups, int folds) {
    if (folds < 2) throw FoldError("need at least two folds");
    std::set<std::string> distinct(groups.begin(), groups.end());
    if (static_cast<int>(distinct.size()) < folds) {
        throw FoldError(std::to_string(distinct.size()) + " groups cannot fill " + std::to_string(folds) + " folds");
    }
    std::map<std::string, int> fold_of;
    int i = 0;
    for (const auto& g : distinct) fold_of[g] = i++ % folds;
    std::vector<int> out;
    out.reserve(groups.size());
    for (const auto& g : groups) out.push_back(fold_of[g]);
    return out;
}

/// Deals each class's members round-robin across folds, continuing the
/// rotation from one class to the next so fold sizes stay balanced.
inline std::vector<int> stratified_folds(const std::vector<int>& labels, int folds) {
    if (folds < 2) throw FoldError("need at least two folds");
    if (static_cast<int>(labels.size()) < folds) {
        throw FoldError(std::to_string(labels.size()) + " samples cannot fill " + std::to_string(folds) + " folds");
    }
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    for (const auto& [c, idx] : by_class) {
        if (static_cast<int>(idx.size()) < folds) {
            throw FoldError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                            " members, fewer than " + std::to_string(folds) + " folds");
        }
    }
    std::vector<int> out(labels.size(), 0);
    std::size_t offset = 0;
    for (const auto& [c, idx] : by_class) {
        for (std::size_t j = 0; j < idx.size(); ++j) {
            out[idx[j]] = static_cast<int>((offset + j) % static_cast<std::size_t>(folds));
        }
        offset += idx.size();
    }
    return out;
}

struct Correlation {
    double value = 0.0;
    bool defined = false;
};

inline Correlation pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw DimensionError("correlation needs two equal-length series of length >= 2");
    }
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (!(saa > 0.0) || !(sbb > 0.0)) {
        return {0.0, false};
    }
    return {sab / std::sqrt(saa * sbb), true};
}

/// 1-based ranks; tied values share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&v](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

/// Spearman rank correlation. Constant input yields 0 with `defined == false`.
inline Correlation rank_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw DimensionError("rank correlation needs two equal-length series of length >= 2");
    }
    return pearson(average_ranks(a), average_ranks(b));
}

struct LogisticOptions {
    double c = 1.0;
    int folds = 5;
    bool grouped = true;
    LbfgsOptions solver{2000, 1e-6, 10};
};

/// Linear classifier: binary (one weight row) or multinomial (one row per class).
struct LogisticModel {
    std::vector<int> classes;
    Eigen::MatrixXd weights;  // rows: 1 for binary, |classes| otherwise
    Vector intercepts;
    bool converged = false;

    /// Class probabilities for one feature row, ordered as `classes`.
    Vector predict_proba(const Vector& x) const {
        Vector p(static_cast<Eigen::Index>(classes.size()));
        if (classes.size() == 2) {
            const double z = weights.row(0).dot(x) + intercepts[0];
            const double p1 = 1.0 / (1.0 + std::exp(-z));
            p << 1.0 - p1, p1;
            return p;
        }
        Vector z = weights * x + intercepts;
        const double m = z.maxCoeff();
        for (Eigen::Index k = 0; k < z.size(); ++k) p[k] = std::exp(z[k] - m);
        return p / p.sum();
    }

    int predict(const Vector& x) const {
        const Vector p = predict_proba(x);
        Eigen::Index arg = 0;
        p.maxCoeff(&arg);
        return classes[static_cast<std::size_t>(arg)];
    }
};

namespace detail {

inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

} // namespace detail

/// L2-regularized logistic regression, minimizing
/// 0.5 * ||W||^2 + C * sum_i logloss_i with unpenalized intercepts,
/// started from zero weights.
inline LogisticModel fit_logistic(const Matrix& x, const std::vector<int>& y, double c, const LbfgsOptions& solver) {
    if (x.rows() == 0 || static_cast<std::size_t>(x.rows()) != y.size()) {
        throw DimensionError("logistic fit needs one label per nonempty feature row");
    }
    LogisticModel model;
    const std::set<int> class_set(y.begin(), y.end());
    model.classes.assign(class_set.begin(), class_set.end());
    const auto n = x.rows();
    const auto d = x.cols();
    const Eigen::MatrixXd xm = x;

    if (model.classes.size() == 2) {
        Vector t(n);
        for (Eigen::Index i = 0; i < n; ++i) t[i] = y[static_cast<std::size_t>(i)] == model.classes[1] ? 1.0 : 0.0;
        auto objective = [&](const Vector& theta, Vector& grad) {
            const Vector w = theta.head(d);
            const double b = theta[d];
            const Vector z = (xm * w).array() + b;
            double f = 0.5 * w.squaredNorm();
            Vector r(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                f += c * (detail::softplus(z[i]) - t[i] * z[i]);
                r[i] = c * (1.0 / (1.0 + std::exp(-z[i])) - t[i]);
            }
            grad.resize(d + 1);
            grad.head(d) = w + xm.transpose() * r;
            grad[d] = r.sum();
            return f;
        };
        const auto res = minimize_lbfgs(objective, Vector::Zero(d + 1), solver);
        model.weights = res.x.head(d).transpose();
        model.intercepts = Vector::Constant(1, res.x[d]);
        model.converged = res.converged;
        return model;
    }

    const auto k = static_cast<Eigen::Index>(model.classes.size());
    std::vector<Eigen::Index> target(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        target[static_cast<std::size_t>(i)] =
            std::lower_bound(model.classes.begin(), model.classes.end(), y[static_cast<std::size_t>(i)]) -
            model.classes.begin();
    }
    auto objective = [&](const Vector& theta, Vector& grad) {
        const Eigen::Map<const Eigen::MatrixXd> w(theta.data(), k, d);
        const Eigen::Map<const Vector> b(theta.data() + k * d, k);
        const Eigen::MatrixXd z = (xm * w.transpose()).rowwise() + b.transpose();  // n x k
        double f = 0.5 * w.squaredNorm();
        Eigen::MatrixXd r(n, k);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double m = z.row(i).maxCoeff();
            double s = 0.0;
            for (Eigen::Index j = 0; j < k; ++j) s += std::exp(z(i, j) - m);
            const double lse = m + std::log(s);
            f += c * (lse - z(i, target[static_cast<std::size_t>(i)]));
            for (Eigen::Index j = 0; j < k; ++j) r(i, j) = c * std::exp(z(i, j) - lse);
            r(i, target[static_cast<std::size_t>(i)]) -= c;
        }
        grad.resize(k * d + k);
        Eigen::Map<Eigen::MatrixXd> gw(grad.data(), k, d);
        gw = w + r.transpose() * xm;
        grad.tail(k) = r.colwise().sum().transpose();
        return f;
    };
    const auto res = minimize_lbfgs(objective, Vector::Zero(k * d + k), solver);
    model.weights = Eigen::Map<const Eigen::MatrixXd>(res.x.data(), k, d);
    model.intercepts = res.x.tail(k);
    model.converged = res.converged;
    return model;
}

struct ProbeResult {
    std::vector<double> fold_accuracies;
    double overall_accuracy = 0.0;
    /// Mean held-out positive-class probability of positive rows, per stability bin.
    std::map<int, double> per_bin_confidence;
    std::map<int, std::size_t> per_bin_count;
    Correlation spearman;
    Correlation pearson;
    std::vector<double> held_out_positive_probability;  // binary mode only
    std::vector<int> fold_of_row;
    bool converged = true;
};

/// Cross-validated logistic probe. Grouped mode keeps each group inside one
/// fold; otherwise folds are stratified by label. Binary datasets also report
/// per-bin confidence and the rank correlation between score and confidence.
inline ProbeResult train_logistic(const ProbeDataset& ds, const LogisticOptions& opt = {}) {
    if (ds.size() == 0) throw EmptySetError("empty probe dataset");
    ProbeResult res;
    res.fold_of_row = opt.grouped ? grouped_folds(ds.groups, opt.folds) : stratified_folds(ds.y, opt.folds);
    const std::set<int> class_set(ds.y.begin(), ds.y.end());
    const bool binary = class_set.size() == 2;
    const int positive = binary ? *class_set.rbegin() : 0;
    res.held_out_positive_probability.assign(ds.size(), std::numeric_limits<double>::quiet_NaN());

    for (int f = 0; f < opt.folds; ++f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < ds.size(); ++i) (res.fold_of_row[i] == f ? test : train).push_back(i);
        if (test.empty() || train.empty()) {
            throw FoldError("fold " + std::to_string(f) + " is empty");
        }
        Matrix xt(static_cast<Eigen::Index>(train.size()), ds.x.cols());
        std::vector<int> yt;
        for (std::size_t i = 0; i < train.size(); ++i) {
            xt.row(static_cast<Eigen::Index>(i)) = ds.x.row(static_cast<Eigen::Index>(train[i]));
            yt.push_back(ds.y[train[i]]);
        }
        const auto model = fit_logistic(xt, yt, opt.c, opt.solver);
        res.converged = res.converged && model.converged;
        std::size_t correct = 0;
        for (auto i : test) {
            const Vector xi = ds.x.row(static_cast<Eigen::Index>(i)).transpose();
            if (model.predict(xi) == ds.y[i]) ++correct;
            if (binary) {
                const Vector p = model.predict_proba(xi);
                const auto it = std::find(model.classes.begin(), model.classes.end(), positive);
                res.held_out_positive_probability[i] =
                    it == model.classes.end() ? 0.0 : p[it - model.classes.begin()];
            }
        }
        res.fold_accuracies.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
    }
    res.overall_accuracy = std::accumulate(res.fold_accuracies.begin(), res.fold_accuracies.end(), 0.0) /
                           static_cast<double>(res.fold_accuracies.size());

    if (binary) {
        std::map<int, double> sums;
        std::vector<double> s, conf;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            if (ds.y[i] != positive || ds.bins.size() != ds.size() || ds.bins[i] < 0) continue;
            sums[ds.bins[i]] += res.held_out_positive_probability[i];
            ++res.per_bin_count[ds.bins[i]];
            s.push_back(ds.scores[i]);
            conf.push_back(res.held_out_positive_probability[i]);
        }
        for (const auto& [b, total] : sums) {
            res.per_bin_confidence[b] = total / static_cast<double>(res.per_bin_count[b]);
        }
        if (s.size() >= 2) {
            res.spearman = rank_correlation(s, conf);
            res.pearson = pearson(s, conf);
        }
    }
    return res;
}

struct SubjectProbeRow {
    int k = 0;
    double acc_parallel = 0.0;
    double acc_perp = 0.0;
    double separation = 0.0;
};

struct SubjectProbeTable {
    std::vector<SubjectProbeRow> rows;
    double full_accuracy = 0.0;
    double chance = 0.0;
    std::vector<std::string> subjects;
    bool converged = true;
};

/// Subject classification on the rank-k content component and its residual,
/// for each k in `k_grid`, with stratified cross-validation.
inline SubjectProbeTable subject_probe(const std::vector<QuestionEmbedding>& embeddings, const std::vector<int>& k_grid,
                                       LogisticOptions opt = {}) {
    opt.grouped = false;
    std::vector<Vector> rows;
    std::set<std::string> subject_set;
    for (const auto& e : embeddings) {
        if (!e.subject) throw IngestError("question '" + e.question_id + "' has no subject label");
        subject_set.insert(*e.subject);
        rows.push_back(e.q);
    }
    const Matrix q = stack_rows(rows);
    SubjectProbeTable table;
    table.subjects.assign(subject_set.begin(), subject_set.end());
    table.chance = 1.0 / static_cast<double>(subject_set.size());

    ProbeDataset base;
    for (const auto& e : embeddings) {
        base.y.push_back(static_cast<int>(std::distance(subject_set.begin(), subject_set.find(*e.subject))));
        base.groups.push_back(e.question_id);
        base.row_ids.push_back(e.question_id);
    }
    auto run = [&](Matrix x) {
        ProbeDataset ds = base;
        ds.x = std::move(x);
        const auto r = train_logistic(ds, opt);
        table.converged = table.converged && r.converged;
        return r.overall_accuracy;
    };
    table.full_accuracy = run(q);
    for (int k : k_grid) {
        const auto s = fit_content_subspace(q, k);
        Matrix par(q.rows(), q.cols());
        Matrix perp(q.rows(), q.cols());
        for (Eigen::Index i = 0; i < q.rows(); ++i) {
            const auto c = split_components(q.row(i).transpose(), s);
            par.row(i) = c.parallel.transpose();
            perp.row(i) = c.perp.transpose();
        }
        SubjectProbeRow row;
        row.k = k;
        row.acc_parallel = run(std::move(par));
        row.acc_perp = run(std::move(perp));
        row.separation = 100.0 * (row.acc_parallel - row.acc_perp);
        table.rows.push_back(row);
    }
    return table;
}

} // namespace stabsteer

#endif
