#include "hjb/experiments.hpp"

#include <gtest/gtest.h>

#include "json.hpp"

#include <cmath>
#include <sstream>

using namespace hjb;

TEST(EstimateRate, PowerLawIsExact)
{
    std::vector<std::pair<Scalar, Scalar>> rows;
    for (Scalar p : {0.5, 0.25, 0.125, 0.0625}) rows.emplace_back(p, 3.7 * p * p);
    EXPECT_NEAR(estimate_rate(rows), 2.0, 1e-12);
}

TEST(EstimateRate, ConstantGivesZero)
{
    EXPECT_NEAR(estimate_rate({{1, 5}, {2, 5}, {4, 5}}), 0.0, 1e-14);
}

TEST(EstimateRate, HandComputedTwoPoints)
{
    EXPECT_NEAR(estimate_rate({{1, 8}, {2, 1}}), -3.0, 1e-14);
}

TEST(EstimateRate, RejectsBadInput)
{
    EXPECT_THROW(estimate_rate({{1, 1}}), std::invalid_argument);
    EXPECT_THROW(estimate_rate({{1, 1}, {2, 0}}), std::invalid_argument);
    EXPECT_THROW(estimate_rate({{1, 1}, {-2, 3}}), std::invalid_argument);
    EXPECT_THROW(estimate_rate({{2, 1}, {2, 3}}), std::invalid_argument);
}

TEST(ConvergenceRecord, SingleRowHasNoSlope)
{
    Exp1HConfig c;
    c.n_list = {4};
    const auto rec = run_exp1_h(c);
    EXPECT_TRUE(rec.no_slope);
    EXPECT_FALSE(rec.slope("rel_error").has_value());
    std::ostringstream os;
    write_csv(rec, os);
    EXPECT_NE(os.str().find("none"), std::string::npos);
}

TEST(Exp1H, SmallSweepDecreasesAndIsDeterministic)
{
    Exp1HConfig c;
    c.n_list = {4, 8};
    const auto a = run_exp1_h(c);
    const auto b = run_exp1_h(c);
    ASSERT_TRUE(a.all_converged());
    EXPECT_TRUE(a.monotone_decreasing("rel_error"));
    EXPECT_TRUE(a.monotone_decreasing("sqrt_eta"));
    EXPECT_GT(*a.slope("rel_error"), 1.0);
    std::ostringstream sa, sb;
    write_csv(a, sa);
    write_csv(b, sb);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_NEAR(*a.diagnostic("exact_H"), exact_H(reference_hessian()), 1e-14);
}

TEST(Exp1H, SidecarCarriesConfigurationAndCertificate)
{
    Exp1HConfig c;
    c.n_list = {4, 8};
    const auto rec = run_exp1_h(c);
    const auto j = nlohmann::json::parse(sidecar_json(rec));
    EXPECT_EQ(j.at("experiment"), "exp1_h");
    EXPECT_EQ(j.at("config").at("sigma"), "0.01");
    EXPECT_GT(j.at("certificate").at("delta").get<double>(), 0.0);
    EXPECT_EQ(j.at("timings").size(), 2u);
    EXPECT_TRUE(j.at("failures").empty());
    EXPECT_TRUE(j.at("slopes").at("rel_error").is_number());
}

TEST(Exp1H, RejectsNonBenchmarkFamily)
{
    Exp1HConfig c;
    c.family = "laplace-manufactured";
    EXPECT_THROW(run_exp1_h(c), std::invalid_argument);
}

TEST(Exp1Sigma, LargeSigmaStaysFinite)
{
    Exp1SigmaConfig c;
    c.n = 4;
    c.sigmas = {16, 4};
    const auto rec = run_exp1_sigma(c);
    ASSERT_TRUE(rec.all_converged());
    for (Scalar e : rec.column("rel_error")) EXPECT_TRUE(std::isfinite(e));
}

TEST(Exp1Sigma, FloorShrinksWithMeshRefinement)
{
    Exp1SigmaConfig c;
    c.sigmas = {0.01};
    c.n = 4;
    const Scalar coarse = run_exp1_sigma(c).column("rel_error")[0];
    c.n = 8;
    const Scalar fine = run_exp1_sigma(c).column("rel_error")[0];
    EXPECT_LT(fine, coarse);
}

TEST(Exp1Sigma, PreFloorWindowStopsAtStagnation)
{
    Exp1SigmaConfig c;
    c.n = 4;
    c.sigmas = {64, 16, 4, 1, 0.25};
    const auto rec = run_exp1_sigma(c);
    const auto err = rec.column("rel_error");
    std::size_t expect = 1;
    while (expect < err.size() && err[expect] <= 0.9 * err[expect - 1]) ++expect;
    EXPECT_EQ(rec.fit_end, expect);
    Exp1SigmaConfig bad;
    bad.sigmas = {1, 2};
    EXPECT_THROW(run_exp1_sigma(bad), std::invalid_argument);
}

TEST(RelativeErrors, InterpolatedCoarseFunction)
{
    auto fine = build_space(std::make_shared<const Mesh>(8, MeshFlavor::dirichlet), 1, 1);
    auto coarse = build_space(std::make_shared<const Mesh>(4, MeshFlavor::dirichlet), 1, 1);
    auto g = [](const Vec2& x) { return x(0) * (1 - x(0)) + 0.5 * x(1) * (1 - x(1)); };
    // A coarse P1 function is reproduced exactly on the nested fine mesh.
    const FeFunction cu = interpolate(coarse, g);
    FeFunction fu(fine);
    for (Index v = 0; v < fine->mesh().num_vertices(); ++v) fu.coeffs(v) = evaluate(cu, fine->mesh().vertex(v)).value(0);
    const auto [l2, linf] = relative_errors(cu, fu);
    EXPECT_LT(l2, 1e-14);
    EXPECT_LT(linf, 1e-14);
    FeFunction half = cu;
    half.coeffs *= 0.5;
    const auto [l2h, linfh] = relative_errors(half, fu);
    EXPECT_NEAR(l2h, 0.5, 1e-12);
    EXPECT_NEAR(linfh, 0.5, 1e-12);
}

TEST(Exp2, SmallRunProducesRates)
{
    Exp2Config c;
    c.omega_n = {2, 4};
    c.reference_n = 8;
    const auto rec = run_exp2(c);
    EXPECT_TRUE(rec.all_converged());
    ASSERT_EQ(rec.rows.size(), 2u);
    EXPECT_TRUE(rec.slope("rel_L2").has_value());
    EXPECT_TRUE(rec.slope("rel_Linf").has_value());
    for (Scalar e : rec.column("rel_L2")) EXPECT_GT(e, 0.0);

    const auto ref = solve_eps_problem(0.1, 4, find_family("fo-benchmark"));
    EXPECT_THROW(run_exp2(c, &ref), std::invalid_argument);
}
