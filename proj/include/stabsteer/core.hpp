#ifndef STABSTEER_CORE_HPP
#define STABSTEER_CORE_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace stabsteer {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Tolerance on the unit-norm invariant of steering directions.
inline constexpr double unit_norm_tolerance = 1e-6;

/// A hidden-state vector tagged with the layer it was read from.
struct HiddenVector {
    Vector values;
    int layer = 0;
};

enum class SegmentKind { reflection, transition, execution };

/// Reflection and transition are merged into a single behavior class.
constexpr bool is_behavior(SegmentKind kind) noexcept {
    return kind != SegmentKind::execution;
}

inline std::string_view to_string(SegmentKind kind) noexcept {
    switch (kind) {
        case SegmentKind::reflection: return "reflection";
        case SegmentKind::transition: return "transition";
        case SegmentKind::execution: return "execution";
    }
    return "execution";
}

inline SegmentKind segment_kind_from_string(std::string_view name) {
    if (name == "reflection") return SegmentKind::reflection;
    if (name == "transition") return SegmentKind::transition;
    if (name == "execution") return SegmentKind::execution;
    throw IngestError("unknown segment label '" + std::string(name) + "'");
}

/// Half-open byte range [begin, end) into a trace's raw text.
struct CharRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const noexcept { return end - begin; }
    bool operator==(const CharRange&) const = default;
};

struct Paragraph {
    std::size_t index = 0;
    CharRange range;
    std::string text;
    SegmentKind kind = SegmentKind::execution;
};

struct TraceRecord {
    std::string question_id;
    std::string raw_text;
    CharRange think_span;
    std::vector<Paragraph> paragraphs;
    std::optional<std::string> subject;
    std::optional<std::string> gold_answer;
};

/// Per-paragraph hidden states of one trace; row i belongs to paragraph i.
struct HiddenStateSet {
    std::string question_id;
    int layer = 0;
    Matrix matrix;
};

struct BoundaryRecord {
    std::string boundary_id;
    std::string question_id;
    std::size_t paragraph_index = 0;
    std::size_t prefix_end = 0;
    std::optional<double> stability;
    std::optional<int> num_samples;
};

enum class VectorMethod { seal, stable, soft, projected, combined, prompt, control };

inline std::string_view to_string(VectorMethod method) noexcept {
    switch (method) {
        case VectorMethod::seal: return "seal";
        case VectorMethod::stable: return "stable";
        case VectorMethod::soft: return "soft";
        case VectorMethod::projected: return "projected";
        case VectorMethod::combined: return "combined";
        case VectorMethod::prompt: return "prompt";
        case VectorMethod::control: return "control";
    }
    return "seal";
}

inline VectorMethod vector_method_from_string(std::string_view name) {
    for (auto m : {VectorMethod::seal, VectorMethod::stable, VectorMethod::soft, VectorMethod::projected,
                   VectorMethod::combined, VectorMethod::prompt, VectorMethod::control}) {
        if (to_string(m) == name) {
            return m;
        }
    }
    throw UsageError("unknown vector method '" + std::string(name) + "'");
}

struct VectorParams {
    std::optional<double> tau;
    std::optional<int> rank;
    std::optional<std::uint64_t> seed;
    std::size_t problems_used = 0;
    std::size_t problems_total = 0;
    std::size_t boundaries_used = 0;
};

struct SteeringVector {
    Vector direction;
    int layer = 0;
    VectorMethod method = VectorMethod::seal;
    VectorParams params;
};

inline double l2_norm(const Vector& v) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        acc += v[i] * v[i];
    }
    return std::sqrt(acc);
}

/// Scales `v` to unit L2 norm.
inline Vector l2_normalize(const Vector& v) {
    const double norm = l2_norm(v);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw NormalizationError("cannot normalize a zero or non-finite vector");
    }
    return v / norm;
}

inline double cosine(const Vector& u, const Vector& v) {
    if (u.size() != v.size()) {
        throw DimensionError("cosine of vectors with dimensions " + std::to_string(u.size()) + " and " +
                             std::to_string(v.size()));
    }
    const double nu = l2_norm(u);
    const double nv = l2_norm(v);
    if (!(nu > 0.0) || !(nv > 0.0)) {
        throw NormalizationError("cosine with a zero vector");
    }
    double dot = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
    }
    const double c = dot / (nu * nv);
    return c > 1.0 ? 1.0 : (c < -1.0 ? -1.0 : c);
}

/// Componentwise mean; summation runs in ascending row order.
inline Vector mean_rows(std::span<const Vector> rows) {
    if (rows.empty()) {
        throw EmptySetError("mean of an empty row set");
    }
    const auto dim = rows.front().size();
    Vector acc = Vector::Zero(dim);
    for (const auto& row : rows) {
        if (row.size() != dim) {
            throw DimensionError("rows of unequal dimension in mean");
        }
        acc += row;
    }
    return acc / static_cast<double>(rows.size());
}

/// Mean of the selected rows of a matrix.
inline Vector mean_rows(const Matrix& m, std::span<const std::size_t> rows) {
    if (rows.empty()) {
        throw EmptySetError("mean of an empty row set");
    }
    Vector acc = Vector::Zero(m.cols());
    for (auto r : rows) {
        acc += m.row(static_cast<Eigen::Index>(r)).transpose();
    }
    return acc / static_cast<double>(rows.size());
}

inline bool all_finite(const Matrix& m) {
    return m.allFinite();
}

} // namespace stabsteer

#endif
