#ifndef STABSTEER_SUBSPACE_HPP
#define STABSTEER_SUBSPACE_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "core.hpp"
#include "errors.hpp"

namespace stabsteer {

struct QuestionEmbedding {
    std::string question_id;
    Vector q;
    std::optional<std::string> subject;
};

/// Top-K principal directions of a centered set of question embeddings.
/// `basis` is D x K with orthonormal columns.
struct ContentSubspace {
    Eigen::MatrixXd basis;
    Vector centroid;
    Vector singular_values;

    Eigen::Index dim() const { return basis.rows(); }
    Eigen::Index rank() const { return basis.cols(); }
};

/// Relative cutoff below which a singular value counts as zero.
inline constexpr double rank_tolerance = 1e-10;

inline Vector pool_question_states(const Matrix& rows) {
    if (rows.rows() == 0) {
        throw EmptySetError("cannot pool an empty set of question states");
    }
    Vector acc = Vector::Zero(rows.cols());
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        acc += rows.row(r).transpose();
    }
    return acc / static_cast<double>(rows.rows());
}

inline Matrix stack_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) {
        throw EmptySetError("no rows to stack");
    }
    Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols()) {
            throw DimensionError("rows of unequal dimension");
        }
        m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    return m;
}

/// Fits the rank-K content subspace of `questions` (one embedding per row).
/// Each basis column is sign-fixed so its largest-magnitude entry is positive.
inline ContentSubspace fit_content_subspace(const Matrix& questions, int rank) {
    const auto n = questions.rows();
    const auto d = questions.cols();
    if (n < 2) {
        throw RankError("need at least two questions to fit a content subspace");
    }
    if (rank < 1 || rank > std::min<Eigen::Index>(n - 1, d)) {
        throw RankError("rank " + std::to_string(rank) + " outside [1, " +
                        std::to_string(std::min<Eigen::Index>(n - 1, d)) + "]");
    }
    ContentSubspace s;
    s.centroid = questions.colwise().mean().transpose();
    const Eigen::MatrixXd centered = questions.rowwise() - s.centroid.transpose();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    const double top = sv.size() > 0 ? sv[0] : 0.0;
    if (!(top > 0.0) || sv[rank - 1] <= rank_tolerance * top) {
        throw RankError("centered question matrix has rank below " + std::to_string(rank));
    }
    s.singular_values = sv.head(rank);
    s.basis = svd.matrixV().leftCols(rank);
    for (Eigen::Index c = 0; c < s.basis.cols(); ++c) {
        Eigen::Index arg = 0;
        s.basis.col(c).cwiseAbs().maxCoeff(&arg);
        if (s.basis(arg, c) < 0.0) {
            s.basis.col(c) *= -1.0;
        }
    }
    return s;
}

inline void check_dim(const Vector& v, const ContentSubspace& s) {
    if (v.size() != s.dim()) {
        throw DimensionError("vector of dimension " + std::to_string(v.size()) + " against subspace of dimension " +
                             std::to_string(s.dim()));
    }
}

/// Removes the component of `v` inside the subspace span.
inline Vector project_out(const Vector& v, const ContentSubspace& s) {
    check_dim(v, s);
    return v - s.basis * (s.basis.transpose() * v);
}

struct Components {
    Vector parallel;
    Vector perp;
};

/// Splits `q - centroid` into its in-subspace part and the residual.
inline Components split_components(const Vector& q, const ContentSubspace& s) {
    check_dim(q, s);
    const Vector centered = q - s.centroid;
    Components c;
    c.parallel = s.basis * (s.basis.transpose() * centered);
    c.perp = centered - c.parallel;
    return c;
}

/// Squared Frobenius norm of the centered rows left after projection.
inline double residual_energy(const Matrix& questions, const ContentSubspace& s) {
    double e = 0.0;
    for (Eigen::Index r = 0; r < questions.rows(); ++r) {
        e += split_components(questions.row(r).transpose(), s).perp.squaredNorm();
    }
    return e;
}

} // namespace stabsteer

#endif
