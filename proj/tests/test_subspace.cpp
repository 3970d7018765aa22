#include <random>
#include <vector>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "stabsteer/subspace.hpp"

using namespace stabsteer;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d) {
    std::normal_distribution<double> nd;
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = nd(rng);
    return m;
}

Vector random_vector(std::mt19937_64& rng, Eigen::Index d) {
    return random_matrix(rng, 1, d).row(0).transpose();
}

ContentSubspace axis_subspace(Eigen::Index d, std::vector<Eigen::Index> axes) {
    ContentSubspace s;
    s.basis = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(axes.size()));
    for (std::size_t k = 0; k < axes.size(); ++k) s.basis(axes[k], static_cast<Eigen::Index>(k)) = 1.0;
    s.centroid = Vector::Zero(d);
    s.singular_values = Vector::Ones(static_cast<Eigen::Index>(axes.size()));
    return s;
}

} // namespace

TEST(Pool, Examples) {
    Matrix a(2, 2);
    a << 1, 0, 0, 1;
    EXPECT_TRUE(pool_question_states(a).isApprox(Vector::Constant(2, 0.5)));
    Matrix b(1, 3);
    b << 4, 5, 6;
    EXPECT_EQ(pool_question_states(b), Vector(b.row(0).transpose()));
    Matrix c(3, 2);
    c << 1, 2, 3, 5, 8, 2;  // column sums 12 and 9
    EXPECT_NEAR(pool_question_states(c)[0], 4.0, 1e-15);
    EXPECT_NEAR(pool_question_states(c)[1], 3.0, 1e-15);
    EXPECT_THROW(pool_question_states(Matrix(0, 3)), EmptySetError);
}

TEST(Fit, CollinearPointsRankOne) {
    Matrix q(3, 2);
    q << 0, 1, 1, 1, 5, 1;
    const auto s = fit_content_subspace(q, 1);
    EXPECT_NEAR(std::abs(s.basis(0, 0)), 1.0, 1e-12);
    EXPECT_NEAR(s.basis(1, 0), 0.0, 1e-12);
    EXPECT_NEAR(residual_energy(q, s), 0.0, 1e-20);
    EXPECT_NEAR(s.centroid[0], 2.0, 1e-15);
    EXPECT_NEAR(s.centroid[1], 1.0, 1e-15);
}

TEST(Fit, FullRankLeavesNoResidual) {
    std::mt19937_64 rng(41);
    const Matrix q = random_matrix(rng, 5, 8);  // centered rank 4
    const auto s = fit_content_subspace(q, 4);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        EXPECT_LT(split_components(q.row(i).transpose(), s).perp.norm(), 1e-8);
    }
}

TEST(Fit, MatchesGramEigenOracle) {
    std::mt19937_64 rng(42);
    const Matrix q = random_matrix(rng, 10, 6);
    const auto s = fit_content_subspace(q, 2);

    const Eigen::MatrixXd qc = q.rowwise() - q.colwise().mean();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(qc.transpose() * qc);  // ascending eigenvalues
    for (int k = 0; k < 2; ++k) {
        const Vector oracle = eig.eigenvectors().col(5 - k);
        EXPECT_GE(std::abs(oracle.dot(s.basis.col(k))), 1.0 - 1e-6) << "column " << k;
        EXPECT_NEAR(s.singular_values[k] * s.singular_values[k], eig.eigenvalues()[5 - k], 1e-8);
    }
}

TEST(Fit, BasisInvariants) {
    std::mt19937_64 rng(43);
    for (int t = 0; t < 20; ++t) {
        const Matrix q = random_matrix(rng, 12, 7);
        const int k = 1 + t % 6;
        const auto s = fit_content_subspace(q, k);
        EXPECT_TRUE((s.basis.transpose() * s.basis).isApprox(Eigen::MatrixXd::Identity(k, k), 1e-8));
        for (int j = 1; j < k; ++j) EXPECT_GE(s.singular_values[j - 1], s.singular_values[j]);
        EXPECT_EQ(s.rank(), k);
        EXPECT_EQ(s.dim(), 7);
        // sign convention: largest-magnitude entry of each column is positive
        for (int j = 0; j < k; ++j) {
            Eigen::Index arg;
            s.basis.col(j).cwiseAbs().maxCoeff(&arg);
            EXPECT_GT(s.basis(arg, j), 0.0);
        }
    }
}

TEST(Fit, ResidualEnergyNonincreasingInRank) {
    std::mt19937_64 rng(44);
    const Matrix q = random_matrix(rng, 15, 9);
    double prev = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 9; ++k) {
        const double e = residual_energy(q, fit_content_subspace(q, k));
        EXPECT_LE(e, prev + 1e-9);
        prev = e;
    }
}

TEST(Fit, RankErrors) {
    std::mt19937_64 rng(45);
    const Matrix q = random_matrix(rng, 4, 6);
    EXPECT_THROW(fit_content_subspace(q, 0), RankError);
    EXPECT_THROW(fit_content_subspace(q, 4), RankError);  // N-1 = 3
    EXPECT_THROW(fit_content_subspace(q.topRows(1), 1), RankError);
    Matrix line(4, 3);
    line << 1, 2, 3, 2, 4, 6, 3, 6, 9, 4, 8, 12;
    EXPECT_NO_THROW(fit_content_subspace(line, 1));
    EXPECT_THROW(fit_content_subspace(line, 2), RankError);
}

TEST(ProjectOut, Examples) {
    const auto s = axis_subspace(3, {0});
    Vector v(3);
    v << 1, 2, 3;
    Vector expect(3);
    expect << 0, 2, 3;
    EXPECT_EQ(project_out(v, s), expect);
    EXPECT_EQ(project_out(expect, s), expect);
    Vector inside(3);
    inside << 7, 0, 0;
    EXPECT_EQ(project_out(inside, s), Vector::Zero(3));
    EXPECT_THROW(project_out(Vector::Ones(4), s), DimensionError);
}

TEST(ProjectOut, IdempotentOrthogonalAndLinear) {
    std::mt19937_64 rng(46);
    const auto s = fit_content_subspace(random_matrix(rng, 20, 10), 4);
    std::uniform_real_distribution<double> coef(-3.0, 3.0);
    for (int t = 0; t < 200; ++t) {
        const Vector u = random_vector(rng, 10);
        const Vector w = random_vector(rng, 10);
        const Vector pu = project_out(u, s);
        EXPECT_LT((project_out(pu, s) - pu).cwiseAbs().maxCoeff(), 1e-9);
        EXPECT_LT((s.basis.transpose() * pu).cwiseAbs().maxCoeff(), 1e-8);
        const double a = coef(rng), b = coef(rng);
        EXPECT_LT((project_out(a * u + b * w, s) - (a * pu + b * project_out(w, s))).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Split, Examples) {
    std::mt19937_64 rng(47);
    const auto s = fit_content_subspace(random_matrix(rng, 9, 5), 2);
    const auto at_centroid = split_components(s.centroid, s);
    EXPECT_LT(at_centroid.parallel.norm(), 1e-12);
    EXPECT_LT(at_centroid.perp.norm(), 1e-12);
    const Vector inside = s.centroid + 2.0 * s.basis.col(0) - 0.5 * s.basis.col(1);
    EXPECT_LT(split_components(inside, s).perp.norm(), 1e-12);
    EXPECT_THROW(split_components(Vector::Ones(3), s), DimensionError);
}

TEST(Split, Pythagorean) {
    std::mt19937_64 rng(48);
    const auto s = fit_content_subspace(random_matrix(rng, 9, 5), 3);
    for (int t = 0; t < 100; ++t) {
        const Vector q = 3.0 * random_vector(rng, 5);
        const auto c = split_components(q, s);
        const Vector centered = q - s.centroid;
        EXPECT_NEAR(centered.squaredNorm(), c.parallel.squaredNorm() + c.perp.squaredNorm(), 1e-8);
        EXPECT_LT((c.parallel + c.perp - centered).cwiseAbs().maxCoeff(), 1e-12);
    }
}
