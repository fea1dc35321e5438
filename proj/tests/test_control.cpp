#include "hjb/control.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace hjb;

namespace {

CoefficientFamily constant_family(const Mat2& a, const Vec2& b, Scalar c, Scalar f = 0, std::vector<Scalar> controls = {0})
{
    CoefficientFamily fam;
    fam.name = "constant";
    fam.A = [a](const Vec2&, const Vec2&, Scalar) { return a; };
    fam.b = [b](const Vec2&, const Vec2&, Scalar) { return b; };
    fam.c = [c](const Vec2&, const Vec2&, Scalar) { return c; };
    fam.f = [f](const Vec2&, const Vec2&, Scalar) { return f; };
    fam.controls = ControlGrid(std::move(controls));
    return fam;
}

SampleGrid single_point() { return SampleGrid::lattice(1, {0}); }

Mat2 random_matrix(std::mt19937& rng)
{
    std::normal_distribution<Scalar> nd;
    Mat2 m;
    m << nd(rng), nd(rng), nd(rng), nd(rng);
    return m;
}

} // namespace

TEST(ControlGrid, SortsAndDeduplicates)
{
    const ControlGrid g({1.0, 0.0, 0.5, 1.0});
    ASSERT_EQ(g.size(), 3u);
    EXPECT_EQ(g[0], 0.0);
    EXPECT_EQ(g[2], 1.0);
    EXPECT_THROW(ControlGrid({}), std::invalid_argument);
    EXPECT_EQ(ControlGrid::uniform(5).size(), 5u);
    EXPECT_DOUBLE_EQ(ControlGrid::uniform(5)[1], 0.25);
}

TEST(Cordes, SlackExamples)
{
    const auto fam = constant_family(Mat2::Identity(), Vec2::Zero(), 1);
    EXPECT_NEAR(cordes_slack(fam, 1.0, 0.5, single_point()), 0.6, 1e-14);
    EXPECT_NEAR(cordes_slack(fam, 1.0, 1.0 - 1e-9, single_point()), 0.0, 1e-8);
    EXPECT_GT(cordes_slack(fam, 1.0, 1.0 - 1e-9, single_point()), 0.0);
    SampleGrid empty;
    EXPECT_THROW(cordes_slack(fam, 1.0, 0.5, empty), std::invalid_argument);
}

TEST(Cordes, SelectLambdaIdentity)
{
    const auto cert = select_lambda(constant_family(Mat2::Identity(), Vec2::Zero(), 1), single_point());
    EXPECT_GT(cert.delta, 0.99);
    EXPECT_LT(cert.delta, 1.0);
    EXPECT_GE(cert.margin, 0.0);
    EXPECT_GT(cert.lambda, 0.0);
}

TEST(Cordes, SelectLambdaDiagonalMatchesSweep)
{
    Mat2 a = Mat2::Zero();
    a(0, 0) = 1;
    a(1, 1) = 2;
    const auto fam = constant_family(a, Vec2::Zero(), 1);
    // At lambda = 1 the feasible region is delta <= 2/3.
    EXPECT_NEAR(cordes_slack(fam, 1.0, 2.0 / 3.0, single_point()), 0.0, 1e-14);
    EXPECT_LT(cordes_slack(fam, 1.0, 2.0 / 3.0 + 1e-6, single_point()), 0.0);

    // One-dimensional sweep oracle: delta(lambda) = (3 + 1/l)^2 / (5 + 1/l^2) - 2.
    Scalar best = -1;
    for (int i = 0; i <= 200000; ++i) {
        const Scalar l = std::pow(10.0, -4.0 + 8.0 * i / 200000.0);
        best = std::max(best, std::pow(3 + 1 / l, 2) / (5 + 1 / (l * l)) - 2);
    }
    const auto cert = select_lambda(fam, single_point());
    EXPECT_LE(cert.delta, best + 1e-12);
    EXPECT_NEAR(cert.delta, best, 1e-6);
    EXPECT_GE(cordes_slack(fam, cert.lambda, cert.delta, single_point()), 0.0);
    EXPECT_GT(cert.delta, 2.0 / 3.0);
}

TEST(Cordes, DegenerateFamilyRejected)
{
    EXPECT_THROW(select_lambda(constant_family(Mat2::Zero(), Vec2::Zero(), 1), single_point()), std::domain_error);
}

TEST(Cordes, BenchmarkCertificateAgainstDenseOracle)
{
    const auto fam = find_family("fo-benchmark");
    const auto cert = select_lambda(fam, SampleGrid::lattice(64, {0, 1}));
    EXPECT_GE(cert.delta, 0.05);
    EXPECT_GE(cert.margin, 0.0);
    // Independent check on a denser offset grid using the closed form of the coefficients.
    const Scalar l = cert.lambda;
    Scalar worst = 1e300;
    const int n = 256;
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const Scalar y1 = (i + 0.5) / n, y2 = (j + 0.5) / n;
            const Scalar a1 = std::pow(std::sin(2 * std::numbers::pi * y1) * std::cos(2 * std::numbers::pi * y2), 2) + 1;
            for (Scalar alpha : {0.0, 1.0}) {
                const Scalar s = 1 + alpha * a1;
                const Scalar lhs = s * s * 22 + 1 / (l * l);
                const Scalar rhs = std::pow(6 * s + 1 / l, 2) / (2 + cert.delta);
                worst = std::min(worst, rhs - lhs);
            }
        }
    }
    EXPECT_GE(worst, -1e-10);
}

TEST(Gamma, Examples)
{
    CordesCertificate cert;
    cert.lambda = 1;
    EXPECT_NEAR(gamma_at(constant_family(Mat2::Identity(), Vec2::Zero(), 1), cert, Vec2::Zero(), Vec2::Zero(), 0), 1.0,
                1e-15);
    cert.lambda = 2;
    EXPECT_NEAR(gamma_at(constant_family(2 * Mat2::Identity(), Vec2::Zero(), 2), cert, Vec2::Zero(), Vec2::Zero(), 0),
                5.0 / 9.0, 1e-15);

    const auto fam = find_family("fo-benchmark");
    const auto bc = select_lambda(fam, SampleGrid::lattice(16, {0, 1}));
    const Scalar l = bc.lambda;
    EXPECT_NEAR(gamma_at(fam, bc, Vec2(0.5, 0.5), Vec2::Zero(), 0.0), (6 + 1 / l) / (22 + 1 / (l * l)), 1e-14);
    EXPECT_THROW(gamma_at(constant_family(Mat2::Zero(), Vec2::Zero(), 0), cert, Vec2::Zero(), Vec2::Zero(), 0),
                 std::domain_error);
}

TEST(Gamma, PositiveAndContinuousOnBenchmark)
{
    const auto fam = find_family("fo-benchmark");
    const auto cert = select_lambda(fam, SampleGrid::lattice(16, {0, 1}));
    Scalar prev = gamma_at(fam, cert, Vec2(0.5, 0.5), Vec2::Zero(), 1.0);
    for (int i = 1; i <= 1000; ++i) {
        const Vec2 y(i / 1000.0, 0.3);
        const Scalar g = gamma_at(fam, cert, Vec2(0.5, 0.5), y, 1.0);
        EXPECT_GT(g, 0);
        EXPECT_LT(std::abs(g - prev), 0.01);
        prev = g;
    }
}

TEST(LLambda, Examples)
{
    EXPECT_EQ(l_lambda(2.0, 1.0, 2.0), 0.0);
    EXPECT_EQ(l_lambda(0.0, 0.0, 3.0), 0.0);
    EXPECT_EQ(l_lambda(-1.0, 3.0, 0.5), 2.5);
}

TEST(Bellman, Examples)
{
    CordesCertificate cert;
    cert.lambda = 1;
    const auto id = constant_family(Mat2::Identity(), Vec2::Zero(), 1);
    const auto v = bellman_max(id, cert, Vec2::Zero(), Vec2::Zero(), -Mat2::Identity(), Vec2::Zero(), 0);
    EXPECT_NEAR(v.value, 2.0, 1e-15);
    EXPECT_EQ(v.argmax, 0.0);

    // Singleton grid equals the scaled residual.
    const auto fam = constant_family(2 * Mat2::Identity(), Vec2(1, 0), 3, 0.5, {0.7});
    const Mat2 m = (Mat2() << 1, 2, 3, 4).finished();
    const Vec2 q(0.5, -1);
    const auto s = scaled_coefficients(fam, cert, Vec2::Zero(), Vec2::Zero(), 0.7);
    const auto bv = bellman_max(fam, cert, Vec2::Zero(), Vec2::Zero(), m, q, 2.0);
    EXPECT_NEAR(bv.value, s.residual(m, q, 2.0), 1e-14);
    EXPECT_EQ(bv.argmax, 0.7);
    const Scalar g = gamma_at(fam, cert, Vec2::Zero(), Vec2::Zero(), 0.7);
    EXPECT_NEAR(bv.value, g * (-2 * m.trace() - 0.5 + 6 - 0.5), 1e-13);
}

TEST(Bellman, TiesGoToSmallestControl)
{
    CordesCertificate cert;
    const auto fam = constant_family(Mat2::Identity(), Vec2::Zero(), 1, 0, {0.2, 0.4, 0.9});
    EXPECT_EQ(bellman_max(fam, cert, Vec2::Zero(), Vec2::Zero(), Mat2::Zero(), Vec2::Zero(), 1).argmax, 0.2);
}

TEST(Bellman, AffineFamilyEndpointsSuffice)
{
    auto fam = find_family("fo-benchmark");
    const auto cert = select_lambda(fam, SampleGrid::lattice(16, {0, 1}));
    auto dense = fam;
    dense.controls = ControlGrid::uniform(101);
    const Mat2 m = -Mat2::Identity(); // B:M = -6 so -A:M grows with alpha
    for (int i = 0; i < 50; ++i) {
        const Vec2 y(0.013 * i, 0.027 * i);
        const auto a = bellman_max(fam, cert, Vec2(0.5, 0.5), y, m, Vec2::Zero(), 0.1);
        const auto b = bellman_max(dense, cert, Vec2(0.5, 0.5), y, m, Vec2::Zero(), 0.1);
        EXPECT_NEAR(a.value, b.value, 1e-12);
        EXPECT_EQ(a.argmax, b.argmax);
    }
}

TEST(Bellman, GridMonotone)
{
    auto coarse = find_family("fo-benchmark");
    coarse.controls = ControlGrid({0.0, 0.5});
    auto fine = coarse;
    fine.controls = ControlGrid({0.0, 0.25, 0.5, 1.0});
    const auto cert = select_lambda(find_family("fo-benchmark"), SampleGrid::lattice(8, {0, 1}));
    std::mt19937 rng(1);
    std::normal_distribution<Scalar> nd;
    for (int i = 0; i < 200; ++i) {
        const Mat2 m = random_matrix(rng);
        const Vec2 q(nd(rng), nd(rng));
        const Scalar v = nd(rng);
        const Vec2 y(std::abs(nd(rng)), std::abs(nd(rng)));
        EXPECT_GE(bellman_max(fine, cert, Vec2::Zero(), y, m, q, v).value,
                  bellman_max(coarse, cert, Vec2::Zero(), y, m, q, v).value);
    }
}

TEST(Bellman, CordesContraction)
{
    const auto fam = find_family("fo-benchmark");
    const auto cert = select_lambda(fam, SampleGrid::lattice(32, {0, 1}));
    const Scalar l = cert.lambda;
    const Scalar k = std::sqrt(1 - cert.delta);
    std::mt19937 rng(42);
    std::normal_distribution<Scalar> nd;
    std::uniform_real_distribution<Scalar> ud;
    for (int i = 0; i < 500; ++i) {
        const Vec2 y(ud(rng), ud(rng));
        const Mat2 m1 = random_matrix(rng), m2 = random_matrix(rng);
        const Vec2 q1(nd(rng), nd(rng)), q2(nd(rng), nd(rng));
        const Scalar v1 = nd(rng), v2 = nd(rng);
        const Mat2 dm = m1 - m2;
        const Vec2 dq = q1 - q2;
        const Scalar dv = v1 - v2;
        const Scalar ref = -dm.trace() + l * dv;
        const Scalar bound = k * std::sqrt(dm.squaredNorm() + 2 * l * dq.squaredNorm() + l * l * dv * dv);
        for (Scalar alpha : {0.0, 1.0}) {
            const auto s = scaled_coefficients(fam, cert, Vec2(0.5, 0.5), y, alpha);
            EXPECT_LE(std::abs(s.residual(m1, q1, v1) - s.residual(m2, q2, v2) - ref), bound + 1e-12);
        }
        const Scalar sup_diff = bellman_max(fam, cert, Vec2(0.5, 0.5), y, m1, q1, v1).value -
                                bellman_max(fam, cert, Vec2(0.5, 0.5), y, m2, q2, v2).value;
        EXPECT_LE(std::abs(sup_diff - ref), bound + 1e-12);
    }
}

TEST(Families, Registry)
{
    for (const auto& name : family_names()) EXPECT_EQ(find_family(name).name, name);
    EXPECT_THROW(find_family("nope"), std::invalid_argument);
    const Mat2 b = benchmark_matrix();
    EXPECT_EQ(b(0, 0), 2);
    EXPECT_EQ(b(0, 1), -1);
    EXPECT_EQ(b(1, 1), 4);
    const auto lap = find_family("laplace-manufactured");
    const Scalar pi = std::numbers::pi;
    EXPECT_NEAR(lap.f(Vec2::Zero(), Vec2(0.25, 0.0), 0), 0.0, 1e-12);
    EXPECT_NEAR(lap.f(Vec2::Zero(), Vec2::Zero(), 0), 8 * pi * pi + 1, 1e-12);
}
