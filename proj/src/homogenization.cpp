#include "hjb/homogenization.hpp"

#include "hjb/quadrature.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace hjb {

CoefficientFamily freeze_cell_family(const CellProblemSpec& spec)
{
    if (!(spec.sigma > 0)) throw std::invalid_argument("freeze_cell_family: sigma must be positive");
    const CoefficientFamily base = spec.family;
    const Vec2 s = spec.s;
    const Vec2 p = spec.p;
    const Mat2 r = symmetric_part(spec.R);
    const Scalar sigma = spec.sigma;
    CoefficientFamily fam;
    fam.name = base.name + "@cell";
    fam.A = [base, s](const Vec2&, const Vec2& y, Scalar a) { return base.A(s, y, a); };
    fam.b = [](const Vec2&, const Vec2&, Scalar) { return Vec2(Vec2::Zero()); };
    fam.c = [sigma](const Vec2&, const Vec2&, Scalar) { return sigma; };
    fam.f = [base, s, p, r](const Vec2&, const Vec2& y, Scalar a) {
        return frobenius(base.A(s, y, a), r) + base.b(s, y, a).dot(p) + base.f(s, y, a);
    };
    fam.controls = base.controls;
    fam.x_dependent = false;
    fam.affine_in_alpha = base.affine_in_alpha;
    return fam;
}

CordesCertificate frozen_certificate(const CellProblemSpec& spec)
{
    CordesCertificate c = spec.certificate;
    c.lambda = spec.sigma * spec.certificate.lambda;
    return c;
}

Scalar mean_value(const FeFunction& v)
{
    return basis_integrals(v.fs(), 2 * v.fs().degree()).dot(v.coeffs.head(v.fs().num_dofs()));
}

EffectiveSample solve_cell(const CellProblemSpec& spec, int n, Scalar tol)
{
    auto mesh = std::make_shared<const Mesh>(n, MeshFlavor::periodic);
    const MixedProblem problem(mesh, freeze_cell_family(spec), frozen_certificate(spec));
    HowardOptions opts;
    opts.tol = tol;
    EffectiveSample out;
    out.corrector = howard_solve(problem, opts);
    if (!out.corrector.converged) throw SolverError("solve_cell: " + out.corrector.message);
    out.value = -spec.sigma * mean_value(out.corrector.u);
    out.eta = estimate(problem, out.corrector);
    out.spec = spec;
    out.mesh_n = n;
    return out;
}

namespace {

std::string cache_key(const CellProblemSpec& spec, int n, Scalar tol)
{
    auto r = [](Scalar v) { return std::round(v * 1e12) / 1e12; };
    std::ostringstream os;
    os << std::setprecision(17) << spec.family.name << '|' << r(spec.s(0)) << ',' << r(spec.s(1)) << '|'
       << r(spec.p(0)) << ',' << r(spec.p(1)) << '|' << r(spec.R(0, 0)) << ',' << r(0.5 * (spec.R(0, 1) + spec.R(1, 0)))
       << ',' << r(spec.R(1, 1)) << '|' << r(spec.sigma) << '|' << spec.certificate.lambda << ','
       << spec.certificate.delta << '|' << n << '|' << tol;
    return os.str();
}

} // namespace

Scalar CellCache::value(const CellProblemSpec& spec, int n, Scalar tol)
{
    const std::string key = cache_key(spec, n, tol);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto it = map_.find(key);
        if (it != map_.end()) {
            ++hits_;
            return it->second;
        }
    }
    const Scalar v = solve_cell(spec, n, tol).value;
    std::lock_guard<std::mutex> lock(mutex_);
    map_.emplace(key, v);
    return v;
}

std::size_t CellCache::size() const
{
    std::lock_guard<std::mutex> lock(mutex_);
    return map_.size();
}

std::size_t CellCache::hits() const
{
    std::lock_guard<std::mutex> lock(mutex_);
    return hits_;
}

void CellCache::clear()
{
    std::lock_guard<std::mutex> lock(mutex_);
    map_.clear();
    hits_ = 0;
}

CellCache& CellCache::global()
{
    static CellCache cache;
    return cache;
}

const HarmonicMeans& benchmark_harmonic_means()
{
    static const HarmonicMeans means = [] {
        // Composite tensor Gauss: 8 panels x 16 points per axis.
        const LineRule g = gauss_legendre(16);
        constexpr int panels = 8;
        const CoefficientFamily fam = find_family("fo-benchmark");
        long double inv0 = 0, inv1 = 0;
        for (int pj = 0; pj < panels; ++pj) {
            for (std::size_t j = 0; j < g.points.size(); ++j) {
                for (int pi = 0; pi < panels; ++pi) {
                    for (std::size_t i = 0; i < g.points.size(); ++i) {
                        const Vec2 y((pi + g.points[i]) / panels, (pj + g.points[j]) / panels);
                        const Scalar w = g.weights[i] * g.weights[j] / (panels * panels);
                        // A(y, alpha) = a(y, alpha) B; recover the scalar from the (0,0) entry.
                        inv0 += w / (fam.A(Vec2::Zero(), y, 0.0)(0, 0) / 2.0);
                        inv1 += w / (fam.A(Vec2::Zero(), y, 1.0)(0, 0) / 2.0);
                    }
                }
            }
        }
        return HarmonicMeans{static_cast<Scalar>(1.0L / inv0), static_cast<Scalar>(1.0L / inv1)};
    }();
    return means;
}

bool has_exact_H(const std::string& family) { return family == "fo-benchmark" || family == "fo-benchmark-a1zero"; }

Scalar exact_H(const Mat2& R, const std::string& family)
{
    const Scalar br = frobenius(benchmark_matrix(), R);
    if (family == "fo-benchmark-a1zero") return -br - 1.0;
    if (family != "fo-benchmark") throw std::invalid_argument("exact_H: no closed form for family '" + family + "'");
    const HarmonicMeans& h = benchmark_harmonic_means();
    return std::max(-h.h0 * br, -h.h1 * br) - 1.0;
}

Mat2 exact_H_gradient(const Mat2& R, const std::string& family)
{
    const Mat2 b = benchmark_matrix();
    if (family == "fo-benchmark-a1zero") return -b;
    if (family != "fo-benchmark") throw std::invalid_argument("exact_H: no closed form for family '" + family + "'");
    const HarmonicMeans& h = benchmark_harmonic_means();
    const Scalar br = frobenius(b, R);
    return (-h.h0 * br >= -h.h1 * br ? -h.h0 : -h.h1) * b;
}

} // namespace hjb
