#ifndef HJB_MIXED_HPP
#define HJB_MIXED_HPP

#include "hjb/control.hpp"
#include "hjb/fem.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace hjb {

/// Choice of the discrete multiplier space M_h.
enum class MultiplierSpace { trivial, zero_mean };

struct MixedOptions {
    int degree_w = 1;
    int degree_u = 1;
    MultiplierSpace m_space = MultiplierSpace::trivial;
    int quad_order = default_quad_order;
    /// Slow variable at which x-dependent coefficients are frozen.
    std::optional<Vec2> frozen_x;
};

/// Stabilization weights of the mixed form.
Scalar sigma1(Scalar delta);
/// sigma2 / lambda.
Scalar sigma2_tilde(Scalar delta);

/// Explicit constants of the monotonicity / Lipschitz / inf-sup analysis (dimension 2).
struct StabilityConstants {
    Scalar monotonicity = 0; // C_M
    Scalar lipschitz = 0;    // C_L
    Scalar b_bound = 0;      // C_b
    Scalar inf_sup = 0;      // c_b
    Scalar quasi_optimality = 0; // C_e
};
StabilityConstants stability_constants(Scalar delta, Scalar lambda);

/// Control index chosen at every quadrature point (element-major).
using Policy = std::vector<std::uint32_t>;

/// Discrete periodic HJB problem in mixed form on a periodic mesh.
///
/// Unknown vector layout: [w_1 | w_2 | u | m | mu], where mu collects the
/// Lagrange multipliers of the zero-mean constraints on w_1, w_2 (and m).
class MixedProblem {
public:
    MixedProblem(std::shared_ptr<const Mesh> mesh, CoefficientFamily family, CordesCertificate cert,
                 MixedOptions options = {});

    const Mesh& mesh() const { return *mesh_; }
    const CoefficientFamily& family() const { return family_; }
    const CordesCertificate& certificate() const { return cert_; }
    const MixedOptions& options() const { return options_; }
    Scalar lambda() const { return cert_.lambda; }
    Scalar delta() const { return cert_.delta; }
    Scalar sigma1() const { return sigma1_; }
    Scalar sigma2() const { return sigma2_; }

    const std::shared_ptr<const FunctionSpace>& w_space() const { return w_space_; }
    const std::shared_ptr<const FunctionSpace>& u_space() const { return u_space_; }
    /// Null when M_h = {0}.
    const std::shared_ptr<const FunctionSpace>& m_space() const { return m_space_; }

    Index w_offset() const { return 0; }
    Index u_offset() const { return w_space_->size(); }
    Index m_offset() const { return u_offset() + u_space_->size(); }
    Index mu_offset() const { return m_offset() + (m_space_ ? m_space_->size() : 0); }
    Index num_multipliers() const { return m_space_ ? 3 : 2; }
    Index system_size() const { return mu_offset() + num_multipliers(); }

    // Precomputed quadrature data.
    int points_per_element() const { return qp_per_element_; }
    Index num_points() const { return static_cast<Index>(qp_weight_.size()); }
    Scalar qp_weight(Index q) const { return qp_weight_[static_cast<std::size_t>(q)]; }
    const Vec2& qp_point(Index q) const { return qp_point_[static_cast<std::size_t>(q)]; }
    const std::vector<ScaledCoefficients>& coefficients(Index q) const
    {
        return coeffs_[static_cast<std::size_t>(q)];
    }
    /// Basis values / gradients of the w-space (and u-space) at quadrature point q.
    Eigen::Ref<const VectorX> w_values(Index q) const { return w_vals_.col(q); }
    Eigen::Ref<const MatrixX> w_grads(Index q) const;
    Eigen::Ref<const VectorX> u_values(Index q) const { return u_vals_.col(q); }
    Eigen::Ref<const MatrixX> u_grads(Index q) const;

    /// Policy selecting control index `k` everywhere.
    Policy constant_policy(std::uint32_t k) const { return Policy(static_cast<std::size_t>(num_points()), k); }

    /// Factorized |||.|||_lambda Gram system (lazy) used for dual residual norms.
    Scalar dual_norm(const VectorX& residual) const;

private:
    void precompute();

    std::shared_ptr<const Mesh> mesh_;
    CoefficientFamily family_;
    CordesCertificate cert_;
    MixedOptions options_;
    Scalar sigma1_ = 0;
    Scalar sigma2_ = 0;
    std::shared_ptr<const FunctionSpace> w_space_;
    std::shared_ptr<const FunctionSpace> u_space_;
    std::shared_ptr<const FunctionSpace> m_space_;

    int qp_per_element_ = 0;
    std::vector<Scalar> qp_weight_;
    std::vector<Vec2> qp_point_;
    std::vector<std::vector<ScaledCoefficients>> coeffs_;
    MatrixX w_vals_, w_grads_, u_vals_, u_grads_;

    struct GramFactors;
    mutable std::shared_ptr<const GramFactors> gram_;
};

/// Discrete solution (w_h, u_h, m_h) with solver diagnostics.
struct MixedState {
    FeFunction w;
    FeFunction u;
    /// Empty (no space) when M_h = {0}.
    FeFunction m;
    VectorX multipliers;
    Policy policy;
    int iterations = 0;
    std::vector<Scalar> residual_history;
    bool converged = false;
    std::string message;

    Scalar residual() const { return residual_history.empty() ? 0.0 : residual_history.back(); }
};

VectorX pack(const MixedProblem& problem, const MixedState& state);
MixedState unpack(const MixedProblem& problem, const VectorX& x);

struct LinearSystem {
    SparseMatrix matrix;
    VectorX rhs;
};

/// Frozen-policy linear system K x = rhs, including zero-mean and b-form rows.
LinearSystem assemble_policy_system(const MixedProblem& problem, const Policy& policy);

/// Maximizing control at every quadrature point for the state x.
Policy greedy_policy(const MixedProblem& problem, const VectorX& x);

/// Residual of the full discrete system at x. With `frozen` the Bellman sup is
/// replaced by the given policy, otherwise the true maximum is used.
VectorX residual_vector(const MixedProblem& problem, const VectorX& x, const Policy* frozen = nullptr);

/// Dual |||.|||_lambda norm of the residual of the full semilinear system.
Scalar nonlinear_residual(const MixedProblem& problem, const MixedState& state);
Scalar nonlinear_residual(const MixedProblem& problem, const VectorX& x);

/// a((w,u),(z,v)) evaluated by quadrature.
Scalar semilinear_form(const MixedProblem& problem, const FeFunction& w, const FeFunction& u, const FeFunction& z,
                       const FeFunction& v);
/// b(m,(w,u)) = int grad(m).(grad(u) - w).
Scalar b_form(const FeFunction& m, const FeFunction& w, const FeFunction& u, int quad_order = default_quad_order);

/// F_gamma[(w,u)] at every quadrature point of the problem.
std::vector<Scalar> bellman_field(const MixedProblem& problem, const FeFunction& w, const FeFunction& u,
                                  Policy* argmax = nullptr);

struct HowardOptions {
    Scalar tol = 1e-10;
    int max_iter = 50;
    /// Defaults to the smallest control everywhere.
    std::optional<Policy> initial_policy;
    int max_halvings = 10;
    /// Extra Newton steps after convergence, kept only while they halve the residual.
    int polish_steps = 2;
};

/// Policy iteration: alternate greedy control selection and frozen-policy solves,
/// with step halving whenever the residual fails to decrease.
MixedState howard_solve(const MixedProblem& problem, const HowardOptions& options = {});

} // namespace hjb

#endif
