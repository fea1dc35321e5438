#include "hjb/mixed.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace hjb;

namespace {

constexpr Scalar pi = std::numbers::pi;

std::shared_ptr<const Mesh> cell_mesh(int n) { return std::make_shared<const Mesh>(n, MeshFlavor::periodic); }

CoefficientFamily identity_family(Scalar f_const)
{
    CoefficientFamily fam;
    fam.name = "identity";
    fam.A = [](const Vec2&, const Vec2&, Scalar) { return Mat2(Mat2::Identity()); };
    fam.b = [](const Vec2&, const Vec2&, Scalar) { return Vec2(Vec2::Zero()); };
    fam.c = [](const Vec2&, const Vec2&, Scalar) { return 1.0; };
    fam.f = [f_const](const Vec2&, const Vec2&, Scalar) { return f_const; };
    fam.controls = ControlGrid({0.0});
    return fam;
}

CordesCertificate certify(const CoefficientFamily& fam)
{
    return select_lambda(fam, SampleGrid::lattice(32, fam.controls.values()));
}

SmoothFunction cos_cos()
{
    SmoothFunction s;
    s.value = [](const Vec2& y) { return std::cos(2 * pi * y(0)) * std::cos(2 * pi * y(1)); };
    s.gradient = [](const Vec2& y) {
        return Vec2(-2 * pi * std::sin(2 * pi * y(0)) * std::cos(2 * pi * y(1)),
                    -2 * pi * std::cos(2 * pi * y(0)) * std::sin(2 * pi * y(1)));
    };
    s.hessian = [](const Vec2& y) {
        const Scalar k = 4 * pi * pi;
        Mat2 h;
        h(0, 0) = -k * std::cos(2 * pi * y(0)) * std::cos(2 * pi * y(1));
        h(1, 1) = h(0, 0);
        h(0, 1) = h(1, 0) = k * std::sin(2 * pi * y(0)) * std::sin(2 * pi * y(1));
        return h;
    };
    return s;
}

FeFunction random_fn(const std::shared_ptr<const FunctionSpace>& s, std::mt19937& rng, Scalar scale = 1.0)
{
    std::normal_distribution<Scalar> nd(0.0, scale);
    FeFunction f(s);
    for (Index i = 0; i < f.coeffs.size(); ++i) f.coeffs(i) = nd(rng);
    if (s->constraint() == Constraint::zero_mean) remove_mean(f);
    return f;
}

FeFunction difference(const FeFunction& a, const FeFunction& b) { return FeFunction(a.space, a.coeffs - b.coeffs); }

} // namespace

TEST(Constants, SigmaAndStability)
{
    for (Scalar d : {0.05, 0.3, 0.6, 0.95}) {
        EXPECT_GT(sigma1(d), 0.5);
        EXPECT_LT(sigma1(d), 1.0);
        EXPECT_GT(sigma2_tilde(d), 0.0);
        const auto k = stability_constants(d, 1.3);
        EXPECT_NEAR(k.monotonicity, 0.25 * (1 - std::sqrt(1 - d)), 1e-15);
        EXPECT_GT(k.lipschitz, k.monotonicity);
        EXPECT_GT(k.quasi_optimality, 0);
    }
    // C_e grows with lambda.
    EXPECT_LT(stability_constants(0.5, 0.1).quasi_optimality, stability_constants(0.5, 10.0).quasi_optimality);
    const auto k = stability_constants(0.5, 1.0);
    EXPECT_NEAR(k.b_bound, std::sqrt(0.5 + 2 / (pi * pi)), 1e-15);
    EXPECT_NEAR(k.inf_sup, 1 / std::sqrt(2 + 2 / (pi * pi)), 1e-15);
}

TEST(MixedProblem, RequiresPeriodicMesh)
{
    const auto fam = identity_family(0);
    EXPECT_THROW(MixedProblem(std::make_shared<const Mesh>(4, MeshFlavor::dirichlet), fam, certify(fam)),
                 std::invalid_argument);
}

TEST(PolicySystem, ZeroDataGivesZeroSolution)
{
    const auto fam = identity_family(0);
    CordesCertificate cert;
    cert.lambda = 1;
    cert.delta = 0.5;
    const MixedProblem p(cell_mesh(6), fam, cert);
    const MixedState s = howard_solve(p);
    EXPECT_TRUE(s.converged);
    EXPECT_LT(s.w.coeffs.norm(), 1e-12);
    EXPECT_LT(s.u.coeffs.norm(), 1e-12);
    EXPECT_EQ(nonlinear_residual(p, VectorX(VectorX::Zero(p.system_size()))), 0.0);
}

TEST(PolicySystem, TrivialMultiplierSpaceHasOnlyMeanRows)
{
    const auto fam = find_family("fo-benchmark");
    const MixedProblem p(cell_mesh(4), fam, certify(fam));
    EXPECT_EQ(p.m_space(), nullptr);
    EXPECT_EQ(p.num_multipliers(), 2);
    EXPECT_EQ(p.system_size(), p.w_space()->size() + p.u_space()->size() + 2);
    const LinearSystem sys = assemble_policy_system(p, p.constant_policy(1));
    EXPECT_EQ(sys.matrix.rows(), p.system_size());
    EXPECT_EQ(sys.matrix.cols(), p.system_size());
    EXPECT_THROW(assemble_policy_system(p, Policy(3, 0)), std::invalid_argument);
}

TEST(PolicySystem, MatrixIsGateauxDerivativeOfResidual)
{
    std::mt19937 rng(9);
    std::normal_distribution<Scalar> nd;
    for (auto m_space : {MultiplierSpace::trivial, MultiplierSpace::zero_mean}) {
        const auto fam = find_family("fo-benchmark");
        MixedOptions opts;
        opts.m_space = m_space;
        const MixedProblem p(cell_mesh(4), fam, certify(fam), opts);
        Policy pol(static_cast<std::size_t>(p.num_points()));
        for (auto& a : pol) a = static_cast<std::uint32_t>(rng() % 2);
        const LinearSystem sys = assemble_policy_system(p, pol);
        VectorX x(p.system_size()), d(p.system_size());
        for (Index i = 0; i < x.size(); ++i) {
            x(i) = nd(rng);
            d(i) = nd(rng);
        }
        const Scalar eps = 1e-6;
        const VectorX fd = (residual_vector(p, x + eps * d, &pol) - residual_vector(p, x - eps * d, &pol)) / (2 * eps);
        const VectorX jd = sys.matrix * d;
        EXPECT_LT((fd - jd).norm(), 1e-6 * jd.norm());
        // The frozen residual is affine: K x - rhs.
        const VectorX r = residual_vector(p, x, &pol);
        EXPECT_LT((r - (sys.matrix * x - sys.rhs)).norm(), 1e-10 * r.norm());
    }
}

TEST(Howard, SingletonControlIsLinear)
{
    const auto fam = find_family("laplace-manufactured");
    const MixedProblem p(cell_mesh(8), fam, certify(fam));
    const MixedState s = howard_solve(p);
    EXPECT_TRUE(s.converged) << s.message;
    EXPECT_LE(s.iterations, 2);
    EXPECT_LE(s.residual(), 1e-10);
    EXPECT_LE(nonlinear_residual(p, s), 1e-10);
}

TEST(Howard, ManufacturedSolutionConvergesLinearly)
{
    const auto fam = find_family("laplace-manufactured");
    const auto cert = certify(fam);
    std::vector<Scalar> errs;
    std::vector<Scalar> gaps, rots;
    for (int n : {8, 16, 32}) {
        const MixedProblem p(cell_mesh(n), fam, cert);
        const MixedState s = howard_solve(p);
        ASSERT_TRUE(s.converged) << s.message;
        errs.push_back(triple_norm_error(cos_cos(), s.w, s.u, p.lambda()));
        const FeFunction gu = l2_project(p.w_space(), s.u);
        gaps.push_back(std::sqrt(l2_norm_sq(difference(s.w, gu))));
        rots.push_back(std::sqrt(rot_norm_sq(s.w)));
    }
    for (std::size_t i = 1; i < errs.size(); ++i) {
        const Scalar rate = std::log2(errs[i - 1] / errs[i]);
        EXPECT_GT(rate, 0.85) << "rate " << rate;
        EXPECT_LT(rate, 1.3) << "rate " << rate;
        EXPECT_LT(gaps[i], gaps[i - 1]);
        EXPECT_LT(rots[i], rots[i - 1]);
    }
}

TEST(Howard, BenchmarkConvergesMonotonically)
{
    const auto fam = find_family("fo-benchmark");
    const MixedProblem p(cell_mesh(16), fam, certify(fam));
    const MixedState s = howard_solve(p);
    ASSERT_TRUE(s.converged) << s.message;
    EXPECT_LE(s.iterations, 20);
    EXPECT_LE(s.residual(), 1e-10);
    for (std::size_t i = 1; i < s.residual_history.size(); ++i) {
        EXPECT_LT(s.residual_history[i], s.residual_history[i - 1]);
    }
    EXPECT_LE(nonlinear_residual(p, s), 1e-10);
}

TEST(Howard, UniqueAcrossInitialPolicies)
{
    const auto fam = find_family("fo-benchmark");
    const MixedProblem p(cell_mesh(8), fam, certify(fam));
    HowardOptions a, b, c;
    b.initial_policy = p.constant_policy(1);
    std::mt19937 rng(2);
    Policy mixed(static_cast<std::size_t>(p.num_points()));
    for (auto& k : mixed) k = static_cast<std::uint32_t>(rng() % 2);
    c.initial_policy = mixed;
    const MixedState sa = howard_solve(p, a);
    for (const auto& opt : {b, c}) {
        const MixedState sb = howard_solve(p, opt);
        ASSERT_TRUE(sb.converged);
        EXPECT_LE(triple_norm(difference(sa.w, sb.w), difference(sa.u, sb.u), p.lambda()), 10 * a.tol);
    }
}

TEST(Howard, NontrivialMultiplierSpace)
{
    const auto fam = find_family("laplace-manufactured");
    const auto cert = certify(fam);
    MixedOptions opts;
    opts.m_space = MultiplierSpace::zero_mean;
    const MixedProblem p(cell_mesh(8), fam, cert, opts);
    const MixedState s = howard_solve(p);
    ASSERT_TRUE(s.converged) << s.message;
    ASSERT_TRUE(s.m.space != nullptr);
    // b(v, (w_h, u_h)) = 0 for every multiplier test function.
    std::mt19937 rng(4);
    for (int t = 0; t < 5; ++t) {
        EXPECT_NEAR(b_form(random_fn(p.m_space(), rng), s.w, s.u), 0.0, 1e-10);
    }
    const MixedProblem p0(cell_mesh(8), fam, cert);
    const MixedState s0 = howard_solve(p0);
    EXPECT_LT(triple_norm(difference(s.w, s0.w), difference(s.u, s0.u), cert.lambda),
              triple_norm(s0.w, s0.u, cert.lambda));
}

TEST(Properties, MonotonicityAndLipschitz)
{
    const auto fam = find_family("fo-benchmark");
    const auto cert = certify(fam);
    const MixedProblem p(cell_mesh(8), fam, cert);
    const auto k = stability_constants(cert.delta, cert.lambda);
    std::mt19937 rng(17);
    Scalar worst_mono = 1e300, worst_lip = 1e300;
    for (int t = 0; t < 30; ++t) {
        const FeFunction w1 = random_fn(p.w_space(), rng, 0.1), w2 = random_fn(p.w_space(), rng, 0.1);
        const FeFunction u1 = random_fn(p.u_space(), rng), u2 = random_fn(p.u_space(), rng);
        const FeFunction dz = difference(w1, w2), dv = difference(u1, u2);
        const Scalar dn = triple_norm(dz, dv, cert.lambda);
        const Scalar mono = semilinear_form(p, w1, u1, dz, dv) - semilinear_form(p, w2, u2, dz, dv);
        worst_mono = std::min(worst_mono, mono - k.monotonicity * dn * dn);
        const FeFunction z = random_fn(p.w_space(), rng), v = random_fn(p.u_space(), rng);
        const Scalar lip = std::abs(semilinear_form(p, w1, u1, z, v) - semilinear_form(p, w2, u2, z, v));
        worst_lip = std::min(worst_lip, k.lipschitz * dn * triple_norm(z, v, cert.lambda) - lip);
    }
    EXPECT_GE(worst_mono, -1e-10);
    EXPECT_GE(worst_lip, -1e-10);
}
