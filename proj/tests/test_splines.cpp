#include <random>

#include <gtest/gtest.h>

#include "curvereg/splines.hpp"
#include "oracles.hpp"

using namespace curvereg;

namespace {

bool throws_code(ErrorCode code, const auto& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code() == code;
    }
    return false;
}

}  // namespace

TEST(Basis, KnotLayout) {
    const BasisSpec b = make_basis(6, 4);
    EXPECT_EQ(b.num_basis(), 6);
    EXPECT_EQ(b.degree(), 3);
    const std::vector<double> want = oracle::clamped_knots(6, 4);
    ASSERT_EQ(b.knots.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_DOUBLE_EQ(b.knots[i], want[i]);
}

TEST(Basis, RejectsTooFewFunctions) {
    EXPECT_TRUE(throws_code(ErrorCode::invalid_basis, [] { make_basis(3, 4); }));
    EXPECT_TRUE(throws_code(ErrorCode::invalid_basis, [] { make_basis(5, 1); }));
    EXPECT_NO_THROW(make_basis(4, 4));
}

TEST(Basis, MatchesRecursiveDefinition) {
    const Vector xs = uniform_grid(257);
    for (int order : {2, 3, 4, 5}) {
        for (int k : {order, order + 1, 7, 11}) {
            const Matrix got = eval_basis(make_basis(k, order), xs);
            const Matrix want = oracle::basis_matrix(k, order, xs);
            EXPECT_LT((got - want).cwiseAbs().maxCoeff(), 1e-13) << "K=" << k << " order=" << order;
        }
    }
}

TEST(Basis, PartitionOfUnityAndNonnegativity) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector xs(500);
    for (auto& x : xs) x = u(rng);
    xs[0] = 0.0;
    xs[1] = 1.0;
    for (int k : {4, 5, 6, 9, 11, 20}) {
        const Matrix b = eval_basis(make_basis(k), xs);
        EXPECT_GE(b.minCoeff(), 0.0);
        EXPECT_LT((b.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
    }
}

TEST(Basis, EndpointsInterpolate) {
    const BasisSpec b = make_basis(7);
    Vector ends(2);
    ends << 0.0, 1.0;
    const Matrix m = eval_basis(b, ends);
    EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(m(1, 6), 1.0);
    EXPECT_DOUBLE_EQ(m.row(0).sum(), 1.0);
    EXPECT_DOUBLE_EQ(m.row(1).sum(), 1.0);
}

TEST(Basis, OutsideUnitIntervalIsDomainError) {
    const BasisSpec b = make_basis(5);
    Vector bad(1);
    for (double t : {-1e-9, 1.0 + 1e-9, std::nan("")}) {
        bad[0] = t;
        EXPECT_TRUE(throws_code(ErrorCode::domain, [&] { eval_basis(b, bad); })) << t;
    }
}

TEST(Basis, LocalRowsMatchDense) {
    const BasisSpec b = make_basis(9, 4);
    const Vector xs = uniform_grid(101);
    const LocalBasis local = eval_basis_local(b, xs);
    EXPECT_LT((local.to_dense() - eval_basis(b, xs)).cwiseAbs().maxCoeff(), 0.0 + 1e-15);
    Vector c = Vector::LinSpaced(9, -3.0, 5.0);
    const Vector dense = eval_basis(b, xs) * c;
    for (int j = 0; j < local.rows(); ++j) EXPECT_NEAR(local.dot(j, c), dense[j], 1e-12);
}

TEST(Greville, MatchesKnotAverages) {
    for (int order : {2, 3, 4}) {
        for (int k : {order, 6, 10}) {
            const Vector g = greville(make_basis(k, order));
            const Vector want = oracle::greville(k, order);
            EXPECT_LT((g - want).cwiseAbs().maxCoeff(), 1e-15);
        }
    }
}

TEST(Greville, ReproducesIdentity) {
    const Vector xs = uniform_grid(1000);
    for (int k : {4, 5, 6, 9, 11}) {
        const BasisSpec b = make_basis(k);
        EXPECT_LT((eval_spline(b, greville(b), xs) - xs).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Spline, WrongCoefficientCount) {
    EXPECT_TRUE(throws_code(ErrorCode::parameter, [] { eval_spline(make_basis(5), Vector::Ones(4), uniform_grid(3)); }));
}

TEST(Warp, CoefficientsAreCumulativeSums) {
    WarpingEffects w;
    w.increments.resize(4);
    w.increments << 0.1, 0.2, 0.3, 0.4;
    const Vector beta = warp_coefficients(w);
    ASSERT_EQ(beta.size(), 5);
    EXPECT_EQ(beta[0], 0.0);
    EXPECT_NEAR(beta[1], 0.1, 1e-15);
    EXPECT_NEAR(beta[2], 0.3, 1e-15);
    EXPECT_NEAR(beta[3], 0.6, 1e-15);
    EXPECT_EQ(beta[4], 1.0);
}

TEST(Warp, RandomWarpsAreMonotoneBijections) {
    std::mt19937_64 rng(3);
    std::gamma_distribution<double> g(0.7, 1.0);
    const Vector xs = uniform_grid(2001);
    for (int k : {3, 6, 9}) {
        const BasisSpec b = make_basis(k, std::min(4, k));
        for (int rep = 0; rep < 50; ++rep) {
            WarpingEffects w;
            w.increments.resize(k - 1);
            for (auto& v : w.increments) v = g(rng) + 1e-9;
            w.increments /= w.increments.sum();
            const Vector h = eval_warp(w, b, xs);
            EXPECT_EQ(h[0], 0.0);
            EXPECT_EQ(h[h.size() - 1], 1.0);
            EXPECT_GE(h.minCoeff(), 0.0);
            EXPECT_LE(h.maxCoeff(), 1.0);
            for (Eigen::Index j = 1; j < h.size(); ++j) EXPECT_GE(h[j], h[j - 1] - 1e-15);
        }
    }
}

TEST(Warp, IdentityWarpReproducesTime) {
    const Vector xs = uniform_grid(1001);
    for (int k : {3, 6, 9}) {
        const BasisSpec b = make_basis(k, std::min(4, k));
        const WarpingEffects w = identity_warp(b);
        EXPECT_NO_THROW(validate_warp(w, k - 1));
        EXPECT_LT((eval_warp(w, b, xs) - xs).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Warp, Validation) {
    WarpingEffects w;
    w.increments.resize(3);
    w.increments << 0.5, 0.5, 0.0;
    EXPECT_TRUE(throws_code(ErrorCode::invalid_warp, [&] { validate_warp(w, 3); }));
    w.increments << 0.5, 0.6, -0.1;
    EXPECT_TRUE(throws_code(ErrorCode::invalid_warp, [&] { validate_warp(w, 3); }));
    w.increments << 0.2, 0.2, 0.2;
    EXPECT_TRUE(throws_code(ErrorCode::invalid_warp, [&] { validate_warp(w, 3); }));
    w.increments << 0.2, 0.3, 0.5;
    EXPECT_TRUE(throws_code(ErrorCode::invalid_warp, [&] { validate_warp(w, 4); }));
    EXPECT_NO_THROW(validate_warp(w, 3));
}

TEST(Warp, BasisMatrixComposes) {
    const BasisSpec bf = make_basis(5), bh = make_basis(6);
    WarpingEffects w;
    w.increments = Vector::Constant(5, 0.2);
    w.increments << 0.05, 0.35, 0.2, 0.3, 0.1;
    const Vector xs = uniform_grid(50);
    const Matrix m = warp_basis_matrix(w, bh, bf, xs);
    const Matrix want = oracle::basis_matrix(5, 4, eval_warp(w, bh, xs));
    EXPECT_LT((m - want).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Grid, Uniform) {
    const Vector g = uniform_grid(11);
    EXPECT_EQ(g[0], 0.0);
    EXPECT_EQ(g[10], 1.0);
    EXPECT_NEAR(g[3], 0.3, 1e-15);
}
