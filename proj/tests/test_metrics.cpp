#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "curvereg/metrics.hpp"

using namespace curvereg;

TEST(Trapezoid, ExactForLinearAndConvergentForSmooth) {
    const Vector g = uniform_grid(11);
    EXPECT_NEAR(trapezoid_unit((2.0 * g.array() + 1.0).matrix()), 2.0, 1e-14);
    const Vector f = uniform_grid(1001);
    EXPECT_NEAR(trapezoid_unit(f.array().square().matrix()), 1.0 / 3.0, 1e-6);
    EXPECT_THROW(trapezoid_unit(Vector::Ones(1)), Error);
}

TEST(Imse, ConstantOffset) {
    const BasisSpec b = make_basis(5);
    const Vector a = Vector::LinSpaced(5, 0.0, 10.0);
    // Partition of unity: adding c to every coefficient shifts the curve by c.
    EXPECT_NEAR(imse(a.array() + 3.0, a, b), 9.0, 1e-10);
    EXPECT_EQ(imse(a, a, b), 0.0);
}

TEST(Imse, LinearDifference) {
    const BasisSpec b = make_basis(6);
    // Greville coefficients give f(t) = t, so the squared difference integrates to 1/3.
    EXPECT_NEAR(imse(greville(b), Vector::Zero(6), b), 1.0 / 3.0, 1e-6);
}

TEST(Imspe, AveragesOverCurves) {
    const Vector g = uniform_grid(101);
    const Vector zero = Vector::Zero(101);
    const Vector ones = Vector::Ones(101);
    EXPECT_NEAR(imspe(ones, zero), 1.0, 1e-14);
    EXPECT_NEAR(imspe(std::vector<Vector>{ones, zero}, std::vector<Vector>{zero, zero}), 0.5, 1e-14);
    EXPECT_THROW(imspe(ones, Vector::Zero(5)), Error);
    EXPECT_THROW(imspe(std::vector<Vector>{}, std::vector<Vector>{}), Error);
}

TEST(Rmse, RootMeanSquare) {
    Vector a(4), b(4);
    a << 1, 2, 3, 4;
    b << 1, 0, 3, 0;
    EXPECT_NEAR(rmse(a, b), std::sqrt(20.0 / 4.0), 1e-15);
    EXPECT_EQ(rmse(a, a), 0.0);
    EXPECT_THROW(rmse(a, Vector::Zero(3)), Error);
}

TEST(Study, AggregateCountsAndMeans) {
    StudyReport s;
    s.replicates.resize(4);
    s.replicates[0].imse = 10, s.replicates[0].sigma2_hat = 16, s.replicates[0].seconds = 1;
    s.replicates[1].imse = 30, s.replicates[1].sigma2_hat = 36, s.replicates[1].seconds = 3;
    s.replicates[2].status = "time_exceeded";
    s.replicates[3].status = "numerical_error";
    s.aggregate();
    EXPECT_EQ(s.completed, 2);
    EXPECT_EQ(s.time_exceeded, 1);
    EXPECT_EQ(s.numerical_error, 1);
    EXPECT_DOUBLE_EQ(s.mean_imse, 20.0);
    EXPECT_DOUBLE_EQ(s.mean_sigma_hat, 5.0);
    EXPECT_DOUBLE_EQ(s.median_seconds, 2.0);
}

TEST(Study, ReplicatesIndependentOfThreadCount) {
    const Scenario sc = shape1_scenario();
    SaemConfig c;
    c.burn_in = 50;
    c.total_iters = 120;
    c.pred_grid_size = 21;
    Scenario small = sc;
    small.n_curves = 4;
    const StudyReport a = run_study(small, 30, 3, 17, c, 1);
    const StudyReport b = run_study(small, 30, 3, 17, c, 3);
    ASSERT_EQ(a.completed, 3);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(a.replicates[i].imse, b.replicates[i].imse);
        EXPECT_EQ(a.replicates[i].tau_hat, b.replicates[i].tau_hat);
        EXPECT_EQ(a.replicates[i].rmse, b.replicates[i].rmse);
        EXPECT_GT(a.replicates[i].rmse, 0.0);
        EXPECT_TRUE(std::isfinite(a.replicates[i].rmse));
    }
    EXPECT_NE(a.replicates[0].imse, a.replicates[1].imse);
    std::ostringstream os;
    write_csv(os, a);
    const std::string text = os.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
    EXPECT_EQ(to_json(a)["summary"]["completed"], 3);
}

TEST(Study, TimeLimitIsRecordedNotThrown) {
    Scenario sc = shape1_scenario();
    sc.n_curves = 3;
    SaemConfig c;
    c.burn_in = 10;
    c.total_iters = 10000000;
    c.max_seconds = 0.02;
    const StudyReport r = run_study(sc, 20, 2, 1, c);
    EXPECT_EQ(r.time_exceeded, 2);
    EXPECT_EQ(r.completed, 0);
}
