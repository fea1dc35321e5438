#ifndef HJB_CONTROL_HPP
#define HJB_CONTROL_HPP

#include "hjb/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace hjb {

/// Finite, sorted, duplicate-free discretization of the control set.
class ControlGrid {
public:
    explicit ControlGrid(std::vector<Scalar> values);

    /// {0, 1}: enough for families that are affine in the control.
    static ControlGrid endpoints();
    /// n equispaced points in [0, 1].
    static ControlGrid uniform(int n);

    const std::vector<Scalar>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    Scalar operator[](std::size_t i) const { return values_[i]; }

private:
    std::vector<Scalar> values_;
};

using MatrixCoefficient = std::function<Mat2(const Vec2& x, const Vec2& y, Scalar alpha)>;
using VectorCoefficient = std::function<Vec2(const Vec2& x, const Vec2& y, Scalar alpha)>;
using ScalarCoefficient = std::function<Scalar(const Vec2& x, const Vec2& y, Scalar alpha)>;

/// Control-indexed coefficients (A, b, c, f) of the operator
/// -A:D^2u - b.grad(u) + c u - f, Y-periodic in the fast variable y.
/// Cell problems freeze the slow variable x.
struct CoefficientFamily {
    std::string name;
    MatrixCoefficient A;
    VectorCoefficient b;
    ScalarCoefficient c;
    ScalarCoefficient f;
    ControlGrid controls = ControlGrid::endpoints();
    bool x_dependent = false;
    bool affine_in_alpha = false;
};

/// Cordes parameters certified on a sample grid.
struct CordesCertificate {
    Scalar lambda = 1;
    Scalar delta = 0.5;
    /// Smallest sampled value of RHS - LHS of the Cordes inequality.
    Scalar margin = 0;
    std::string sample_description;
};

/// Points at which coefficient properties are checked.
struct SampleGrid {
    std::vector<Vec2> x_points;
    std::vector<Vec2> y_points;
    std::vector<Scalar> controls;

    /// n x n lattice {(i/n, j/n)} in y, a single slow point x, and the given controls.
    static SampleGrid lattice(int n, const std::vector<Scalar>& controls, const Vec2& x = Vec2(0.5, 0.5));
    std::string describe() const;
};

struct EllipticityBounds {
    Scalar zeta1 = 0;
    Scalar zeta2 = 0;
};

/// Extreme eigenvalues of A over the sample grid; also checks c > 0.
EllipticityBounds ellipticity(const CoefficientFamily& family, const SampleGrid& grid);

/// Pointwise Cordes quantities in dimension 2.
template <typename T>
T cordes_lhs(const Mat2T<T>& a, const Vec2T<T>& b, T c, T lambda)
{
    return a.squaredNorm() + b.squaredNorm() / (2 * lambda) + c * c / (lambda * lambda);
}

template <typename T>
T cordes_rhs(const Mat2T<T>& a, T c, T lambda, T delta)
{
    const T s = a.trace() + c / lambda;
    return s * s / (2 + delta);
}

/// gamma = (tr A + c/lambda) / (|A|^2 + |b|^2/(2 lambda) + c^2/lambda^2).
template <typename T>
T gamma_value(const Mat2T<T>& a, const Vec2T<T>& b, T c, T lambda)
{
    return (a.trace() + c / lambda) / cordes_lhs(a, b, c, lambda);
}

/// L_lambda(w, u) = -div(w) + lambda u.
template <typename T>
constexpr T l_lambda(T div_w, T u, T lambda)
{
    return -div_w + lambda * u;
}

/// min over samples of RHS - LHS; nonnegative certifies the Cordes condition on the grid.
Scalar cordes_slack(const CoefficientFamily& family, Scalar lambda, Scalar delta, const SampleGrid& grid);

/// Grid search over log-spaced lambda maximizing the certified delta (ties: smallest lambda).
CordesCertificate select_lambda(const CoefficientFamily& family, const SampleGrid& grid);

Scalar gamma_at(const CoefficientFamily& family, const CordesCertificate& cert, const Vec2& x, const Vec2& y,
                Scalar alpha);

/// gamma-scaled coefficients (gamma A, gamma b, gamma c, gamma f) at one point and control.
struct ScaledCoefficients {
    Mat2 A = Mat2::Zero();
    Vec2 b = Vec2::Zero();
    Scalar c = 0;
    Scalar f = 0;
    Scalar alpha = 0;

    /// gamma (-A:M - b.q + c v - f).
    Scalar residual(const Mat2& m, const Vec2& q, Scalar v) const { return -frobenius(A, m) - b.dot(q) + c * v - f; }
};

ScaledCoefficients scaled_coefficients(const CoefficientFamily& family, const CordesCertificate& cert, const Vec2& x,
                                       const Vec2& y, Scalar alpha);

struct BellmanValue {
    Scalar value = 0;
    Scalar argmax = 0;
    std::size_t index = 0;
};

/// sup over the control grid of gamma (-A:M - b.q + c v - f); ties go to the smallest control.
BellmanValue bellman_max(const CoefficientFamily& family, const CordesCertificate& cert, const Vec2& x, const Vec2& y,
                         const Mat2& m, const Vec2& q, Scalar v);

/// Same maximization over precomputed scaled coefficients (one entry per control, sorted by control).
BellmanValue bellman_max(const std::vector<ScaledCoefficients>& table, const Mat2& m, const Vec2& q, Scalar v);

/// Matrix B of the benchmark family.
Mat2 benchmark_matrix();

/// Named families: "fo-benchmark", "fo-benchmark-a1zero", "laplace-manufactured".
CoefficientFamily find_family(const std::string& name);
std::vector<std::string> family_names();

} // namespace hjb

#endif
