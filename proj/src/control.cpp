#include "hjb/control.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace hjb {

ControlGrid::ControlGrid(std::vector<Scalar> values) : values_(std::move(values))
{
    if (values_.empty()) throw std::invalid_argument("ControlGrid: empty control set");
    std::sort(values_.begin(), values_.end());
    values_.erase(std::unique(values_.begin(), values_.end()), values_.end());
}

ControlGrid ControlGrid::endpoints() { return ControlGrid({0.0, 1.0}); }

ControlGrid ControlGrid::uniform(int n)
{
    if (n < 1) throw std::invalid_argument("ControlGrid::uniform: need at least one point");
    if (n == 1) return ControlGrid({0.0});
    std::vector<Scalar> v;
    for (int i = 0; i < n; ++i) v.push_back(static_cast<Scalar>(i) / (n - 1));
    return ControlGrid(std::move(v));
}

SampleGrid SampleGrid::lattice(int n, const std::vector<Scalar>& controls, const Vec2& x)
{
    if (n < 1) throw std::invalid_argument("SampleGrid::lattice: n must be >= 1");
    SampleGrid g;
    g.x_points.push_back(x);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) g.y_points.emplace_back(static_cast<Scalar>(i) / n, static_cast<Scalar>(j) / n);
    }
    g.controls = controls;
    return g;
}

std::string SampleGrid::describe() const
{
    std::ostringstream os;
    os << x_points.size() << " x-points, " << y_points.size() << " y-points, " << controls.size() << " controls";
    return os.str();
}

namespace {

struct PointData {
    Scalar a2;
    Scalar tr;
    Scalar b2;
    Scalar c;
};

void require_nonempty(const SampleGrid& grid, const char* who)
{
    if (grid.x_points.empty() || grid.y_points.empty() || grid.controls.empty()) {
        throw std::invalid_argument(std::string(who) + ": empty sample grid");
    }
}

template <typename Fn>
void for_each_sample(const CoefficientFamily& family, const SampleGrid& grid, Fn&& fn)
{
    for (const Vec2& x : grid.x_points) {
        for (const Vec2& y : grid.y_points) {
            for (Scalar alpha : grid.controls) fn(family.A(x, y, alpha), family.b(x, y, alpha), family.c(x, y, alpha));
        }
    }
}

} // namespace

EllipticityBounds ellipticity(const CoefficientFamily& family, const SampleGrid& grid)
{
    require_nonempty(grid, "ellipticity");
    EllipticityBounds eb{std::numeric_limits<Scalar>::infinity(), 0};
    for_each_sample(family, grid, [&](const Mat2& a, const Vec2&, Scalar c) {
        if (!(c > 0)) throw std::domain_error("ellipticity: zeroth-order coefficient c must be positive");
        const Eigen::SelfAdjointEigenSolver<Mat2> es(symmetric_part(a), Eigen::EigenvaluesOnly);
        eb.zeta1 = std::min(eb.zeta1, es.eigenvalues()(0));
        eb.zeta2 = std::max(eb.zeta2, es.eigenvalues()(1));
    });
    return eb;
}

Scalar cordes_slack(const CoefficientFamily& family, Scalar lambda, Scalar delta, const SampleGrid& grid)
{
    if (!(lambda > 0)) throw std::invalid_argument("cordes_slack: lambda must be positive");
    if (!(delta > 0 && delta < 1)) throw std::invalid_argument("cordes_slack: delta must lie in (0, 1)");
    require_nonempty(grid, "cordes_slack");
    Scalar slack = std::numeric_limits<Scalar>::infinity();
    for_each_sample(family, grid, [&](const Mat2& a, const Vec2& b, Scalar c) {
        slack = std::min(slack, cordes_rhs(a, c, lambda, delta) - cordes_lhs(a, b, c, lambda));
    });
    return slack;
}

CordesCertificate select_lambda(const CoefficientFamily& family, const SampleGrid& grid)
{
    require_nonempty(grid, "select_lambda");
    const EllipticityBounds eb = ellipticity(family, grid);
    if (!(eb.zeta1 > 0)) {
        throw std::domain_error("select_lambda: coefficient A is not uniformly elliptic on the sample grid (min eigenvalue " +
                                std::to_string(eb.zeta1) + ")");
    }
    std::vector<PointData> pts;
    pts.reserve(grid.x_points.size() * grid.y_points.size() * grid.controls.size());
    for_each_sample(family, grid, [&](const Mat2& a, const Vec2& b, Scalar c) {
        pts.push_back({a.squaredNorm(), a.trace(), b.squaredNorm(), c});
    });

    // Largest delta with nonnegative slack: min over samples of (tr A + c/l)^2 / LHS - n.
    auto best_delta = [&](Scalar lambda) {
        Scalar d = std::numeric_limits<Scalar>::infinity();
        for (const auto& p : pts) {
            const Scalar s = p.tr + p.c / lambda;
            const Scalar lhs = p.a2 + p.b2 / (2 * lambda) + p.c * p.c / (lambda * lambda);
            d = std::min(d, s * s / lhs - 2.0);
        }
        return d;
    };

    constexpr Scalar delta_cap = 1.0 - 1e-6;
    auto search = [&](Scalar log_lo, Scalar log_hi, int steps, Scalar& best_lambda, Scalar& best) {
        for (int k = 0; k <= steps; ++k) {
            const Scalar lambda = std::pow(10.0, log_lo + (log_hi - log_lo) * k / steps);
            const Scalar d = std::min(best_delta(lambda), delta_cap);
            if (d > best) {
                best = d;
                best_lambda = lambda;
            }
        }
    };

    Scalar best = -std::numeric_limits<Scalar>::infinity();
    Scalar best_lambda = 1;
    const int coarse_steps = 600;
    search(-4.0, 4.0, coarse_steps, best_lambda, best);
    const Scalar step = 8.0 / coarse_steps;
    const Scalar center = std::log10(best_lambda);
    search(center - step, center + step, 100, best_lambda, best);

    if (!(best >= 1e-6)) {
        throw std::domain_error("select_lambda: no (lambda, delta) with delta >= 1e-6 found; best delta " +
                                std::to_string(best));
    }
    CordesCertificate cert;
    cert.lambda = best_lambda;
    cert.delta = best * (1.0 - 1e-12);
    cert.margin = cordes_slack(family, cert.lambda, cert.delta, grid);
    for (int k = 0; k < 20 && cert.margin < 0; ++k) {
        cert.delta -= 1e-10 * (1 << k);
        cert.margin = cordes_slack(family, cert.lambda, cert.delta, grid);
    }
    if (cert.margin < 0) throw std::domain_error("select_lambda: could not certify a nonnegative slack");
    cert.sample_description = grid.describe();
    return cert;
}

Scalar gamma_at(const CoefficientFamily& family, const CordesCertificate& cert, const Vec2& x, const Vec2& y,
                Scalar alpha)
{
    const Mat2 a = family.A(x, y, alpha);
    const Vec2 b = family.b(x, y, alpha);
    const Scalar c = family.c(x, y, alpha);
    const Scalar den = cordes_lhs(a, b, c, cert.lambda);
    const Scalar num = a.trace() + c / cert.lambda;
    if (!(den > 0) || !(num > 0)) {
        throw std::domain_error("gamma_at: nonpositive normalization (ellipticity violated)");
    }
    return num / den;
}

ScaledCoefficients scaled_coefficients(const CoefficientFamily& family, const CordesCertificate& cert, const Vec2& x,
                                       const Vec2& y, Scalar alpha)
{
    const Mat2 a = family.A(x, y, alpha);
    const Vec2 b = family.b(x, y, alpha);
    const Scalar c = family.c(x, y, alpha);
    const Scalar den = cordes_lhs(a, b, c, cert.lambda);
    const Scalar num = a.trace() + c / cert.lambda;
    if (!(den > 0) || !(num > 0)) {
        throw std::domain_error("scaled_coefficients: nonpositive normalization (ellipticity violated)");
    }
    const Scalar g = num / den;
    return {g * a, g * b, g * c, g * family.f(x, y, alpha), alpha};
}

BellmanValue bellman_max(const std::vector<ScaledCoefficients>& table, const Mat2& m, const Vec2& q, Scalar v)
{
    BellmanValue best{-std::numeric_limits<Scalar>::infinity(), 0, 0};
    for (std::size_t k = 0; k < table.size(); ++k) {
        const Scalar r = table[k].residual(m, q, v);
        if (r > best.value) best = {r, table[k].alpha, k};
    }
    return best;
}

BellmanValue bellman_max(const CoefficientFamily& family, const CordesCertificate& cert, const Vec2& x, const Vec2& y,
                         const Mat2& m, const Vec2& q, Scalar v)
{
    std::vector<ScaledCoefficients> table;
    table.reserve(family.controls.size());
    for (Scalar alpha : family.controls.values()) table.push_back(scaled_coefficients(family, cert, x, y, alpha));
    return bellman_max(table, m, q, v);
}

Mat2 benchmark_matrix()
{
    Mat2 b;
    b << 2, -1, -1, 4;
    return b;
}

namespace {

constexpr Scalar two_pi = 2.0 * std::numbers::pi;

CoefficientFamily benchmark(bool a1_zero)
{
    CoefficientFamily fam;
    fam.name = a1_zero ? "fo-benchmark-a1zero" : "fo-benchmark";
    const Mat2 bm = benchmark_matrix();
    if (a1_zero) {
        fam.A = [bm](const Vec2&, const Vec2&, Scalar) -> Mat2 { return bm; };
    } else {
        fam.A = [bm](const Vec2&, const Vec2& y, Scalar alpha) -> Mat2 {
            const Scalar s = std::sin(two_pi * y(0));
            const Scalar c = std::cos(two_pi * y(1));
            const Scalar a1 = s * s * c * c + 1.0;
            return (1.0 + alpha * a1) * bm;
        };
    }
    fam.b = [](const Vec2&, const Vec2&, Scalar) -> Vec2 { return Vec2::Zero(); };
    fam.c = [](const Vec2&, const Vec2&, Scalar) -> Scalar { return 1.0; };
    fam.f = [](const Vec2&, const Vec2&, Scalar) -> Scalar { return 1.0; };
    fam.controls = ControlGrid::endpoints();
    fam.affine_in_alpha = true;
    return fam;
}

CoefficientFamily laplace_manufactured()
{
    CoefficientFamily fam;
    fam.name = "laplace-manufactured";
    fam.A = [](const Vec2&, const Vec2&, Scalar) -> Mat2 { return Mat2::Identity(); };
    fam.b = [](const Vec2&, const Vec2&, Scalar) -> Vec2 { return Vec2::Zero(); };
    fam.c = [](const Vec2&, const Vec2&, Scalar) -> Scalar { return 1.0; };
    fam.f = [](const Vec2&, const Vec2& y, Scalar) -> Scalar {
        return (2.0 * two_pi * two_pi + 1.0) * std::cos(two_pi * y(0)) * std::cos(two_pi * y(1));
    };
    fam.controls = ControlGrid({0.0});
    fam.affine_in_alpha = true;
    return fam;
}

} // namespace

CoefficientFamily find_family(const std::string& name)
{
    if (name == "fo-benchmark") return benchmark(false);
    if (name == "fo-benchmark-a1zero") return benchmark(true);
    if (name == "laplace-manufactured") return laplace_manufactured();
    throw std::invalid_argument("unknown coefficient family '" + name + "'");
}

std::vector<std::string> family_names() { return {"fo-benchmark", "fo-benchmark-a1zero", "laplace-manufactured"}; }

} // namespace hjb
