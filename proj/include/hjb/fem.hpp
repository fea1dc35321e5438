#ifndef HJB_FEM_HPP
#define HJB_FEM_HPP

#include "hjb/mesh.hpp"
#include "hjb/quadrature.hpp"

#include <Eigen/SparseCholesky>

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <type_traits>
#include <vector>

namespace hjb {

enum class Constraint { none, zero_mean };

/// Default quadrature order for assembly and norms.
inline constexpr int default_quad_order = 4;

/// Continuous Lagrange space of degree 1 or 2 on a structured mesh.
///
/// Degrees of freedom live on the lattice of mesh vertices (degree 1) or of
/// vertices and edge midpoints (degree 2). On periodic meshes, lattice points
/// on opposite faces share one global index. A vector space with
/// `components == 2` stores its coefficients component-blocked:
/// coeffs[c * num_dofs() + i].
class FunctionSpace {
public:
    FunctionSpace(std::shared_ptr<const Mesh> mesh, int degree, int components, Constraint constraint);

    const Mesh& mesh() const { return *mesh_; }
    const std::shared_ptr<const Mesh>& mesh_ptr() const { return mesh_; }
    int degree() const { return degree_; }
    int components() const { return components_; }
    Constraint constraint() const { return constraint_; }
    bool periodic() const { return mesh_->flavor() == MeshFlavor::periodic; }

    /// Scalar dofs per component.
    Index num_dofs() const { return ndofs_; }
    /// Length of a coefficient vector (num_dofs * components).
    Index size() const { return ndofs_ * components_; }
    int dofs_per_element() const { return local_; }

    /// Global scalar dof of local dof k on element e.
    Index dof(Index e, int k) const { return dof_map_[static_cast<std::size_t>(e * local_ + k)]; }
    /// Representative nodal point of a global dof (in [0,1]^2).
    const Vec2& dof_point(Index i) const { return points_[static_cast<std::size_t>(i)]; }

    bool is_boundary_dof(Index i) const { return boundary_[static_cast<std::size_t>(i)] != 0; }
    /// Scalar dofs that are not on the Dirichlet boundary (all dofs for periodic meshes).
    const std::vector<Index>& free_dofs() const { return free_; }
    Index num_free_dofs() const { return static_cast<Index>(free_.size()); }

    /// Shape function values and physical gradients at a reference point of element e.
    void eval_basis(Index e, const Vec2& ref, Eigen::Ref<VectorX> values, Eigen::Ref<MatrixX> grads) const;

private:
    std::shared_ptr<const Mesh> mesh_;
    int degree_;
    int components_;
    Constraint constraint_;
    int local_ = 0;
    Index ndofs_ = 0;
    std::vector<Index> dof_map_;
    std::vector<Vec2> points_;
    std::vector<char> boundary_;
    std::vector<Index> free_;
};

std::shared_ptr<const FunctionSpace> build_space(std::shared_ptr<const Mesh> mesh, int degree, int components,
                                                 Constraint constraint = Constraint::none);

/// Finite element function: a space and its coefficient vector.
struct FeFunction {
    std::shared_ptr<const FunctionSpace> space;
    VectorX coeffs;

    FeFunction() = default;
    explicit FeFunction(std::shared_ptr<const FunctionSpace> s);
    FeFunction(std::shared_ptr<const FunctionSpace> s, VectorX c);

    const FunctionSpace& fs() const { return *space; }
    /// Coefficients of component c.
    auto component(int c) const { return coeffs.segment(c * space->num_dofs(), space->num_dofs()); }
    auto component(int c) { return coeffs.segment(c * space->num_dofs(), space->num_dofs()); }
};

/// Values and derivatives of a (scalar or 2-vector) function at one quadrature point.
/// For scalar functions only value(0) and grad.row(0) are meaningful.
struct QpSample {
    Vec2 point = Vec2::Zero();
    /// Quadrature weight including the element area.
    Scalar weight = 0;
    Vec2 value = Vec2::Zero();
    /// Row c is the gradient of component c, i.e. (Dw)_{ij} = d_j w_i.
    Mat2 grad = Mat2::Zero();

    Vec2 gradient() const { return grad.row(0).transpose(); }
    Scalar div() const { return grad(0, 0) + grad(1, 1); }
    /// rot(w) = d_2 w_1 - d_1 w_2.
    Scalar rot() const { return grad(0, 1) - grad(1, 0); }
};

/// Per-element, per-point samples; index e * points_per_element + k.
struct QpField {
    int points_per_element = 0;
    std::vector<QpSample> samples;

    const QpSample& at(Index e, int k) const { return samples[static_cast<std::size_t>(e * points_per_element + k)]; }
};

QpField eval_at_qp(const FeFunction& fn, int quad_order = default_quad_order);

/// Point evaluation (value and gradient) at an arbitrary x in [0,1]^2.
QpSample evaluate(const FeFunction& fn, const Vec2& x);

/// Nodal interpolation of g. g returns a scalar for scalar spaces and a Vec2 for vector spaces.
FeFunction interpolate_scalar(std::shared_ptr<const FunctionSpace> space, const std::function<Scalar(const Vec2&)>& g);
FeFunction interpolate_vector(std::shared_ptr<const FunctionSpace> space, const std::function<Vec2(const Vec2&)>& g);

template <typename F>
FeFunction interpolate(std::shared_ptr<const FunctionSpace> space, F&& g)
{
    using R = std::invoke_result_t<F&, const Vec2&>;
    if constexpr (std::is_convertible_v<R, Scalar>) {
        return interpolate_scalar(std::move(space), std::forward<F>(g));
    } else {
        return interpolate_vector(std::move(space), std::forward<F>(g));
    }
}

/// Integral over the domain of each component.
Vec2 integrate(const FeFunction& fn, int quad_order = default_quad_order);

/// Subtracts the mean of each component (periodic spaces; constants are representable).
void remove_mean(FeFunction& fn);

/// Scalar mass and stiffness matrices of size num_dofs.
SparseMatrix assemble_mass(const FunctionSpace& space, int quad_order = default_quad_order);
SparseMatrix assemble_stiffness(const FunctionSpace& space, int quad_order = default_quad_order);
/// Integrals of the scalar basis functions.
VectorX basis_integrals(const FunctionSpace& space, int quad_order = default_quad_order);

/// L2 norms of w (vector) pieces used throughout the mixed method.
Scalar l2_norm_sq(const FeFunction& fn, int quad_order = default_quad_order);
Scalar grad_norm_sq(const FeFunction& fn, int quad_order = default_quad_order);
Scalar div_norm_sq(const FeFunction& w, int quad_order = default_quad_order);
Scalar rot_norm_sq(const FeFunction& w, int quad_order = default_quad_order);

/// |||(w,u)|||_lambda = sqrt(||Dw||^2 + 2 lambda ||grad u||^2 + lambda^2 ||u||^2).
Scalar triple_norm(const FeFunction& w, const FeFunction& u, Scalar lambda, int quad_order = default_quad_order);

/// |||(grad u - w_h, u - u_h)|||_lambda for a smooth exact u given by value, gradient and Hessian.
struct SmoothFunction {
    std::function<Scalar(const Vec2&)> value;
    std::function<Vec2(const Vec2&)> gradient;
    std::function<Mat2(const Vec2&)> hessian;
};
Scalar triple_norm_error(const SmoothFunction& exact, const FeFunction& w, const FeFunction& u, Scalar lambda,
                         int quad_order = 8);

/// L2 projection of grad(u) onto a vector space: find w with (w, v) = (grad u, v) for all v.
/// Holds the mass factorization for repeated use.
class GradientProjector {
public:
    GradientProjector(std::shared_ptr<const FunctionSpace> target, std::shared_ptr<const FunctionSpace> source,
                      int quad_order = default_quad_order);

    FeFunction project(const FeFunction& u) const;
    /// Raw coefficient version: returns component-blocked coefficients of the projection.
    VectorX apply(const Eigen::Ref<const VectorX>& u_coeffs) const;
    /// Adjoint of apply with respect to the Euclidean inner product.
    VectorX apply_transpose(const Eigen::Ref<const VectorX>& w_coeffs) const;

    const std::shared_ptr<const FunctionSpace>& target() const { return target_; }

private:
    std::shared_ptr<const FunctionSpace> target_;
    std::shared_ptr<const FunctionSpace> source_;
    SparseMatrix mass_;
    std::array<SparseMatrix, 2> load_;
    Eigen::SimplicialLDLT<SparseMatrix> solver_;
};

FeFunction l2_project(std::shared_ptr<const FunctionSpace> target, const FeFunction& source,
                      int quad_order = default_quad_order);

/// CSV with columns vertex,x,y,value (scalar) or vertex,x,y,value_1,value_2 (vector).
void write_csv(const FeFunction& fn, std::ostream& out);

} // namespace hjb

#endif
