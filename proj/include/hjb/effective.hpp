#ifndef HJB_EFFECTIVE_HPP
#define HJB_EFFECTIVE_HPP

#include "hjb/homogenization.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace hjb {

/// Discrete Hessian on a Dirichlet mesh: symmetric part of D(P grad u), with P the L2 projection
/// onto continuous P1 vector fields (all vertices, boundary included).
class HessianOperator {
public:
    explicit HessianOperator(std::shared_ptr<const FunctionSpace> scalar_space);

    const std::shared_ptr<const FunctionSpace>& scalar_space() const { return scalar_; }
    const std::shared_ptr<const FunctionSpace>& vector_space() const { return vector_; }
    Index num_elements() const { return scalar_->mesh().num_elements(); }

    /// Projected gradient coefficients (component-blocked).
    VectorX gradient(const VectorX& u) const { return projector_.apply(u); }
    /// Per-element symmetric Hessians from projected gradient coefficients.
    std::vector<Mat2> hessians_from_gradient(const VectorX& w) const;
    /// Projected gradient at element barycenters.
    std::vector<Vec2> barycenter_values(const VectorX& w) const;

    std::vector<Mat2> apply(const VectorX& u) const { return hessians_from_gradient(gradient(u)); }

    /// Adjoint: maps per-element matrix weights G_e and vector weights g_e to the u coefficients of
    /// the functional u -> sum_e G_e : hess_e(u) + g_e . grad_e(u).
    VectorX apply_transpose(const std::vector<Mat2>& matrix_weights, const std::vector<Vec2>* vector_weights = nullptr) const;

private:
    std::shared_ptr<const FunctionSpace> scalar_;
    std::shared_ptr<const FunctionSpace> vector_;
    GradientProjector projector_;
};

std::vector<Mat2> discrete_hessian(const FeFunction& u);

/// Nodal average of piecewise constant element values (mean over incident elements).
VectorX nodal_average(const Mesh& mesh, const std::vector<Scalar>& element_values);
/// Transpose of nodal_average.
std::vector<Scalar> nodal_average_transpose(const Mesh& mesh, const VectorX& vertex_values);

/// Element-wise Hamiltonian R -> H(x_e, p, R) with its derivatives.
class ElementHamiltonian {
public:
    virtual ~ElementHamiltonian() = default;
    virtual Scalar value(Index e, const Vec2& x, const Vec2& p, const Mat2& R) const = 0;
    /// dH/dR (symmetric) and dH/dp.
    virtual void gradient(Index e, const Vec2& x, const Vec2& p, const Mat2& R, Mat2& dR, Vec2& dp) const = 0;
};

/// Closed-form effective Hamiltonian of the benchmark families.
class ExactHamiltonian : public ElementHamiltonian {
public:
    explicit ExactHamiltonian(std::string family);
    Scalar value(Index e, const Vec2& x, const Vec2& p, const Mat2& R) const override;
    void gradient(Index e, const Vec2& x, const Vec2& p, const Mat2& R, Mat2& dR, Vec2& dp) const override;

private:
    std::string family_;
};

/// H_{sigma,h} from cached cell solves; derivatives by centred differences.
class CellHamiltonian : public ElementHamiltonian {
public:
    CellHamiltonian(CoefficientFamily family, CordesCertificate certificate, Scalar sigma, int cell_n,
                    Scalar tol = 1e-10, CellCache* cache = nullptr);
    Scalar value(Index e, const Vec2& x, const Vec2& p, const Mat2& R) const override;
    void gradient(Index e, const Vec2& x, const Vec2& p, const Mat2& R, Mat2& dR, Vec2& dp) const override;

private:
    CellProblemSpec spec(const Vec2& x, const Vec2& p, const Mat2& R) const;

    CoefficientFamily family_;
    CordesCertificate certificate_;
    Scalar sigma_;
    int cell_n_;
    Scalar tol_;
    CellCache* cache_;
    bool has_drift_ = false;
};

/// sup_a { -A(x, x/eps, a):R - b(x, x/eps, a).p - f(x, x/eps, a) } for the oscillating problem.
class OscillatingHamiltonian : public ElementHamiltonian {
public:
    OscillatingHamiltonian(CoefficientFamily family, Scalar eps);
    Scalar value(Index e, const Vec2& x, const Vec2& p, const Mat2& R) const override;
    void gradient(Index e, const Vec2& x, const Vec2& p, const Mat2& R, Mat2& dR, Vec2& dp) const override;

private:
    std::size_t argmax(const Vec2& x, const Vec2& p, const Mat2& R, Scalar& best) const;

    CoefficientFamily family_;
    Scalar eps_;
};

/// Nodal average of element Hamiltonian values at the discrete Hessians of u.
FeFunction averaged_hamiltonian(const HessianOperator& op, const VectorX& u, const ElementHamiltonian& h);

enum class HamiltonianMode { exact, cell };

struct TwoScaleConfig {
    int omega_n = 8;
    int cell_n = 4;
    Scalar sigma = 0.1;
    HamiltonianMode mode = HamiltonianMode::exact;
    std::string family = "fo-benchmark";
    /// Stop when the relative objective decrease of an iteration falls below this.
    Scalar rel_tol = 1e-8;
    /// Stop when the gradient norm falls below this.
    Scalar grad_tol = 1e-12;
    int max_iterations = 100;
    /// Objective evaluations allowed per starting point.
    int max_evaluations = 2000;
    Scalar cell_tol = 1e-10;
};

struct EffectiveSolution {
    FeFunction u;
    FeFunction htilde;
    Scalar objective = 0;
    int evaluations = 0;
    int iterations = 0;
    bool converged = false;
    std::string message;
    std::vector<Scalar> objective_trace;
};

struct LeastSquaresOptions {
    Scalar rel_tol = 1e-8;
    Scalar grad_tol = 1e-12;
    int max_iterations = 100;
    int max_evaluations = 2000;
};

/// Minimize ||v + avg(H(D^2_h v))||^2_{L2} over continuous P1 functions vanishing on the boundary.
EffectiveSolution minimize_least_squares(std::shared_ptr<const FunctionSpace> space, const ElementHamiltonian& h,
                                         const VectorX& initial, const LeastSquaresOptions& options);

/// P1 solution of c u - div(A grad u) = f, u = 0 on the boundary, for constant A, c, f.
FeFunction solve_linear_dirichlet(std::shared_ptr<const FunctionSpace> space, const Mat2& a, Scalar c, Scalar f);

/// Effective problem u + H(D^2 u) = 0 on the unit square with exact or cell-problem Hamiltonian.
/// Minimizes from zero and, for benchmark families, from the linear solve with diffusion B; keeps the lower
/// objective. `evaluations` sums over both runs.
EffectiveSolution solve_effective(const TwoScaleConfig& config);
EffectiveSolution solve_effective(const TwoScaleConfig& config, const CoefficientFamily& family,
                                  const CordesCertificate& certificate);

/// Reference solution of the oscillating problem by the same least-squares machinery.
EffectiveSolution solve_eps_problem(Scalar eps, int omega_n, const CoefficientFamily& family,
                                    const LeastSquaresOptions& options = {});

} // namespace hjb

#endif
