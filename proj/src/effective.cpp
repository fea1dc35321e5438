#include "hjb/effective.hpp"

#include <Eigen/LU>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace hjb {

namespace {

// Runs body(i) for i in [0, n); each index writes only its own output slot.
template <typename Body>
void parallel_for(Index n, Body&& body)
{
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const Index workers = std::min<Index>(static_cast<Index>(hw), n / 16);
    if (workers <= 1) {
        for (Index i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<Index> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (Index t = 0; t < workers; ++t) {
        pool.emplace_back([&] {
            for (Index i = next++; i < n; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

Mat2 sym_unit(int k)
{
    Mat2 m = Mat2::Zero();
    if (k == 0) m(0, 0) = 1;
    if (k == 1) m(1, 1) = 1;
    if (k == 2) m(0, 1) = m(1, 0) = 1;
    return m;
}

bool is_benchmark(const std::string& name) { return name.rfind("fo-benchmark", 0) == 0; }

// Galerkin matrix of c u - div(A grad u) on the free dofs of a P1 Dirichlet space.
SparseMatrix reduced_dirichlet_matrix(const FunctionSpace& space, const Mat2& a, Scalar c)
{
    if (space.degree() != 1 || space.components() != 1 || space.periodic()) {
        throw std::invalid_argument("solve_linear_dirichlet: expects a scalar P1 space on a dirichlet mesh");
    }
    const Mesh& mesh = space.mesh();
    const Mat2 as = symmetric_part(a);
    std::vector<Triplet> trips;
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        const auto& geo = mesh.geometry(e);
        const Eigen::Matrix3d k = geo.area * geo.grad_lambda.transpose() * as * geo.grad_lambda;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) trips.emplace_back(space.dof(e, i), space.dof(e, j), k(i, j));
        }
    }
    SparseMatrix stiff(space.num_dofs(), space.num_dofs());
    stiff.setFromTriplets(trips.begin(), trips.end());
    const SparseMatrix full = SparseMatrix(stiff + c * assemble_mass(space));

    const auto& free = space.free_dofs();
    std::vector<Index> slot(static_cast<std::size_t>(space.num_dofs()), -1);
    for (std::size_t i = 0; i < free.size(); ++i) slot[static_cast<std::size_t>(free[i])] = static_cast<Index>(i);
    std::vector<Triplet> red;
    for (int k = 0; k < full.outerSize(); ++k) {
        for (SparseMatrix::InnerIterator it(full, k); it; ++it) {
            const Index r = slot[static_cast<std::size_t>(it.row())];
            const Index s = slot[static_cast<std::size_t>(it.col())];
            if (r >= 0 && s >= 0) red.emplace_back(r, s, it.value());
        }
    }
    const auto nf = static_cast<Index>(free.size());
    SparseMatrix k(nf, nf);
    k.setFromTriplets(red.begin(), red.end());
    return k;
}

} // namespace

HessianOperator::HessianOperator(std::shared_ptr<const FunctionSpace> scalar_space)
    : scalar_(std::move(scalar_space)),
      vector_(build_space(scalar_->mesh_ptr(), 1, 2)),
      projector_(vector_, scalar_)
{
    if (scalar_->degree() != 1 || scalar_->components() != 1 || scalar_->periodic()) {
        throw std::invalid_argument("HessianOperator: expects a scalar P1 space on a dirichlet mesh");
    }
    const Mesh& mesh = scalar_->mesh();
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        for (int k = 0; k < 3; ++k) {
            if (scalar_->dof(e, k) != mesh.element(e)[static_cast<std::size_t>(k)]) {
                throw std::logic_error("HessianOperator: P1 dofs are expected to coincide with vertices");
            }
        }
    }
}

std::vector<Mat2> HessianOperator::hessians_from_gradient(const VectorX& w) const
{
    const Mesh& mesh = scalar_->mesh();
    const Index nd = vector_->num_dofs();
    std::vector<Mat2> out(static_cast<std::size_t>(mesh.num_elements()));
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        const auto& t = mesh.element(e);
        const auto& gl = mesh.geometry(e).grad_lambda;
        Mat2 d = Mat2::Zero();
        for (int k = 0; k < 3; ++k) {
            const Index v = t[static_cast<std::size_t>(k)];
            d.row(0) += w(v) * gl.col(k).transpose();
            d.row(1) += w(nd + v) * gl.col(k).transpose();
        }
        out[static_cast<std::size_t>(e)] = symmetric_part(d);
    }
    return out;
}

std::vector<Vec2> HessianOperator::barycenter_values(const VectorX& w) const
{
    const Mesh& mesh = scalar_->mesh();
    const Index nd = vector_->num_dofs();
    std::vector<Vec2> out(static_cast<std::size_t>(mesh.num_elements()), Vec2::Zero());
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        Vec2& s = out[static_cast<std::size_t>(e)];
        for (Index v : mesh.element(e)) s += Vec2(w(v), w(nd + v));
        s /= 3.0;
    }
    return out;
}

VectorX HessianOperator::apply_transpose(const std::vector<Mat2>& matrix_weights,
                                         const std::vector<Vec2>* vector_weights) const
{
    const Mesh& mesh = scalar_->mesh();
    const Index nd = vector_->num_dofs();
    if (static_cast<Index>(matrix_weights.size()) != mesh.num_elements() ||
        (vector_weights && static_cast<Index>(vector_weights->size()) != mesh.num_elements())) {
        throw std::invalid_argument("HessianOperator::apply_transpose: one weight per element expected");
    }
    VectorX wbar = VectorX::Zero(2 * nd);
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        const auto& t = mesh.element(e);
        const auto& gl = mesh.geometry(e).grad_lambda;
        const Mat2 g = symmetric_part(matrix_weights[static_cast<std::size_t>(e)]);
        const Vec2 gv = vector_weights ? Vec2((*vector_weights)[static_cast<std::size_t>(e)] / 3.0) : Vec2::Zero();
        for (int k = 0; k < 3; ++k) {
            const Index v = t[static_cast<std::size_t>(k)];
            const Vec2 contrib = g * gl.col(k) + gv;
            wbar(v) += contrib(0);
            wbar(nd + v) += contrib(1);
        }
    }
    return projector_.apply_transpose(wbar);
}

std::vector<Mat2> discrete_hessian(const FeFunction& u)
{
    HessianOperator op(u.space);
    return op.apply(u.coeffs);
}

VectorX nodal_average(const Mesh& mesh, const std::vector<Scalar>& element_values)
{
    if (static_cast<Index>(element_values.size()) != mesh.num_elements()) {
        throw std::invalid_argument("nodal_average: one value per element expected");
    }
    VectorX sum = VectorX::Zero(mesh.num_vertices());
    VectorX count = VectorX::Zero(mesh.num_vertices());
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        for (Index v : mesh.element(e)) {
            sum(v) += element_values[static_cast<std::size_t>(e)];
            count(v) += 1;
        }
    }
    return sum.cwiseQuotient(count.cwiseMax(1.0));
}

std::vector<Scalar> nodal_average_transpose(const Mesh& mesh, const VectorX& vertex_values)
{
    VectorX count = VectorX::Zero(mesh.num_vertices());
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        for (Index v : mesh.element(e)) count(v) += 1;
    }
    std::vector<Scalar> out(static_cast<std::size_t>(mesh.num_elements()), 0.0);
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        for (Index v : mesh.element(e)) out[static_cast<std::size_t>(e)] += vertex_values(v) / count(v);
    }
    return out;
}

// ---------------------------------------------------------------------------

ExactHamiltonian::ExactHamiltonian(std::string family) : family_(std::move(family))
{
    if (!has_exact_H(family_)) throw std::invalid_argument("ExactHamiltonian: no closed form for '" + family_ + "'");
}

Scalar ExactHamiltonian::value(Index, const Vec2&, const Vec2&, const Mat2& R) const { return exact_H(R, family_); }

void ExactHamiltonian::gradient(Index, const Vec2&, const Vec2&, const Mat2& R, Mat2& dR, Vec2& dp) const
{
    dR = exact_H_gradient(R, family_);
    dp.setZero();
}

CellHamiltonian::CellHamiltonian(CoefficientFamily family, CordesCertificate certificate, Scalar sigma, int cell_n,
                                 Scalar tol, CellCache* cache)
    : family_(std::move(family)), certificate_(std::move(certificate)), sigma_(sigma), cell_n_(cell_n), tol_(tol),
      cache_(cache ? cache : &CellCache::global())
{
    if (!(sigma > 0) || cell_n < 1) throw std::invalid_argument("CellHamiltonian: sigma and cell N must be positive");
    for (Scalar a : family_.controls.values()) {
        for (Scalar y : {0.1, 0.37, 0.8}) {
            if (family_.b(Vec2(0.5, 0.5), Vec2(y, 1 - y), a).norm() > 0) has_drift_ = true;
        }
    }
}

CellProblemSpec CellHamiltonian::spec(const Vec2& x, const Vec2& p, const Mat2& R) const
{
    CellProblemSpec s;
    // x-independent families share one slow point so the cache is reused across elements.
    s.s = family_.x_dependent ? x : Vec2(0.5, 0.5);
    s.p = p;
    s.R = symmetric_part(R);
    s.sigma = sigma_;
    s.family = family_;
    s.certificate = certificate_;
    return s;
}

Scalar CellHamiltonian::value(Index e, const Vec2& x, const Vec2& p, const Mat2& R) const
{
    try {
        return cache_->value(spec(x, p, R), cell_n_, tol_);
    } catch (const SolverError& err) {
        throw SolverError("cell problem on element " + std::to_string(e) + ": " + err.what());
    }
}

void CellHamiltonian::gradient(Index e, const Vec2& x, const Vec2& p, const Mat2& R, Mat2& dR, Vec2& dp) const
{
    const Scalar step = 1e-5 * std::max<Scalar>(1.0, R.cwiseAbs().maxCoeff());
    dR.setZero();
    for (int k = 0; k < 3; ++k) {
        const Mat2 dir = sym_unit(k);
        const Scalar d = (value(e, x, p, R + step * dir) - value(e, x, p, R - step * dir)) / (2 * step);
        if (k < 2) {
            dR(k, k) = d;
        } else {
            dR(0, 1) = dR(1, 0) = 0.5 * d;
        }
    }
    dp.setZero();
    if (has_drift_) {
        const Scalar ps = 1e-5 * std::max<Scalar>(1.0, p.cwiseAbs().maxCoeff());
        for (int k = 0; k < 2; ++k) {
            Vec2 dir = Vec2::Zero();
            dir(k) = ps;
            dp(k) = (value(e, x, p + dir, R) - value(e, x, p - dir, R)) / (2 * ps);
        }
    }
}

OscillatingHamiltonian::OscillatingHamiltonian(CoefficientFamily family, Scalar eps)
    : family_(std::move(family)), eps_(eps)
{
    if (!(eps > 0)) throw std::invalid_argument("OscillatingHamiltonian: eps must be positive");
    for (Scalar a : family_.controls.values()) {
        for (Scalar t : {0.13, 0.5, 0.71}) {
            if (std::abs(family_.c(Vec2(t, 1 - t), Vec2(t, t), a) - 1.0) > 1e-14) {
                throw std::invalid_argument("OscillatingHamiltonian: zeroth-order coefficient must be identically 1");
            }
        }
    }
}

std::size_t OscillatingHamiltonian::argmax(const Vec2& x, const Vec2& p, const Mat2& R, Scalar& best) const
{
    const Vec2 y = x / eps_;
    best = -std::numeric_limits<Scalar>::infinity();
    std::size_t arg = 0;
    for (std::size_t i = 0; i < family_.controls.size(); ++i) {
        const Scalar a = family_.controls[i];
        const Scalar v = -frobenius(family_.A(x, y, a), R) - family_.b(x, y, a).dot(p) - family_.f(x, y, a);
        if (v > best) {
            best = v;
            arg = i;
        }
    }
    return arg;
}

Scalar OscillatingHamiltonian::value(Index, const Vec2& x, const Vec2& p, const Mat2& R) const
{
    Scalar best = 0;
    argmax(x, p, R, best);
    return best;
}

void OscillatingHamiltonian::gradient(Index, const Vec2& x, const Vec2& p, const Mat2& R, Mat2& dR, Vec2& dp) const
{
    Scalar best = 0;
    const Scalar a = family_.controls[argmax(x, p, R, best)];
    const Vec2 y = x / eps_;
    dR = -symmetric_part(family_.A(x, y, a));
    dp = -family_.b(x, y, a);
}

FeFunction averaged_hamiltonian(const HessianOperator& op, const VectorX& u, const ElementHamiltonian& h)
{
    const Mesh& mesh = op.scalar_space()->mesh();
    const VectorX w = op.gradient(u);
    const auto hess = op.hessians_from_gradient(w);
    const auto grads = op.barycenter_values(w);
    std::vector<Scalar> vals(hess.size());
    parallel_for(mesh.num_elements(), [&](Index e) {
        const auto i = static_cast<std::size_t>(e);
        vals[i] = h.value(e, mesh.geometry(e).barycenter, grads[i], hess[i]);
    });
    return FeFunction(op.scalar_space(), nodal_average(mesh, vals));
}

// ---------------------------------------------------------------------------

namespace {

// Residual r(v) = v + avg(H(D^2_h v)) on all vertices, objective r^T M r, and a linearization
// around the current point for Gauss-Newton steps.
class LeastSquaresProblem {
public:
    LeastSquaresProblem(std::shared_ptr<const FunctionSpace> space, const ElementHamiltonian& h)
        : space_(std::move(space)), op_(space_), h_(h), mass_(assemble_mass(*space_))
    {
        free_ = space_->free_dofs();
        build_lumped_gradient();
    }

    Index num_free() const { return static_cast<Index>(free_.size()); }
    const std::vector<Index>& free() const { return free_; }

    VectorX extend(const VectorX& x) const
    {
        VectorX v = VectorX::Zero(space_->num_dofs());
        for (std::size_t i = 0; i < free_.size(); ++i) v(free_[i]) = x(static_cast<Index>(i));
        return v;
    }
    VectorX restrict(const VectorX& v) const
    {
        VectorX x(num_free());
        for (std::size_t i = 0; i < free_.size(); ++i) x(static_cast<Index>(i)) = v(free_[i]);
        return x;
    }

    struct Point {
        VectorX v;
        VectorX htilde;
        VectorX residual;
        Scalar objective = 0;
        std::vector<Mat2> hess;
        std::vector<Vec2> grads;
    };

    Point evaluate(const VectorX& x) const
    {
        Point pt;
        pt.v = extend(x);
        const VectorX w = op_.gradient(pt.v);
        pt.hess = op_.hessians_from_gradient(w);
        pt.grads = op_.barycenter_values(w);
        const Mesh& mesh = space_->mesh();
        std::vector<Scalar> vals(pt.hess.size());
        parallel_for(mesh.num_elements(), [&](Index e) {
            const auto i = static_cast<std::size_t>(e);
            vals[i] = h_.value(e, mesh.geometry(e).barycenter, pt.grads[i], pt.hess[i]);
        });
        pt.htilde = nodal_average(mesh, vals);
        pt.residual = pt.v + pt.htilde;
        pt.objective = pt.residual.dot(mass_ * pt.residual);
        return pt;
    }

    // Element derivatives at a point.
    void linearize(const Point& pt)
    {
        const Mesh& mesh = space_->mesh();
        dR_.assign(pt.hess.size(), Mat2::Zero());
        dp_.assign(pt.hess.size(), Vec2::Zero());
        parallel_for(mesh.num_elements(), [&](Index e) {
            const auto i = static_cast<std::size_t>(e);
            h_.gradient(e, mesh.geometry(e).barycenter, pt.grads[i], pt.hess[i], dR_[i], dp_[i]);
        });
        build_preconditioner();
    }

    VectorX precondition(const VectorX& r) const
    {
        if (!precond_) return r;
        return precond_->solve(r);
    }

    // J x on all vertices.
    VectorX jacobian(const VectorX& x) const
    {
        const VectorX v = extend(x);
        const VectorX w = op_.gradient(v);
        const auto hess = op_.hessians_from_gradient(w);
        const auto grads = op_.barycenter_values(w);
        std::vector<Scalar> vals(hess.size());
        for (std::size_t i = 0; i < hess.size(); ++i) vals[i] = frobenius(dR_[i], hess[i]) + dp_[i].dot(grads[i]);
        return v + nodal_average(space_->mesh(), vals);
    }

    VectorX jacobian_transpose(const VectorX& y) const
    {
        const auto s = nodal_average_transpose(space_->mesh(), y);
        std::vector<Mat2> gm(s.size());
        std::vector<Vec2> gv(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            gm[i] = s[i] * dR_[i];
            gv[i] = s[i] * dp_[i];
        }
        const VectorX back = op_.apply_transpose(gm, &gv) + y;
        return restrict(back);
    }

    VectorX gradient(const Point& pt) const { return 2.0 * jacobian_transpose(mass_ * pt.residual); }

    // (J^T M J + mu) d = rhs by preconditioned conjugate gradients.
    VectorX normal_solve(const VectorX& rhs, Scalar mu, int max_iter, Scalar tol) const
    {
        auto apply = [&](const VectorX& d) { return VectorX(jacobian_transpose(mass_ * jacobian(d)) + mu * d); };
        VectorX d = VectorX::Zero(rhs.size());
        VectorX r = rhs;
        VectorX z = precondition(r);
        VectorX p = z;
        Scalar rz = r.dot(z);
        const Scalar stop = tol * tol * rhs.squaredNorm();
        for (int it = 0; it < max_iter && r.squaredNorm() > stop; ++it) {
            const VectorX ap = apply(p);
            const Scalar pap = p.dot(ap);
            if (!(pap > 0)) break;
            const Scalar alpha = rz / pap;
            d += alpha * p;
            r -= alpha * ap;
            z = precondition(r);
            const Scalar rz_new = r.dot(z);
            p = z + (rz_new / rz) * p;
            rz = rz_new;
        }
        return d;
    }

    const std::shared_ptr<const FunctionSpace>& space() const { return space_; }

private:
    std::shared_ptr<const FunctionSpace> space_;
    HessianOperator op_;
    const ElementHamiltonian& h_;
    SparseMatrix mass_;
    std::vector<Index> free_;
    std::vector<Mat2> dR_;
    std::vector<Vec2> dp_;
    SparseMatrix lumped_gradient_;
    SparseMatrix average_;
    SparseMatrix selection_;
    std::unique_ptr<Eigen::SimplicialLDLT<SparseMatrix>> precond_;

    // Same chain as J but with the gradient projection using the lumped mass, which keeps it sparse.
    void build_lumped_gradient()
    {
        const Mesh& mesh = space_->mesh();
        const Index nv = mesh.num_vertices();
        VectorX weight = VectorX::Zero(nv);
        for (Index e = 0; e < mesh.num_elements(); ++e) {
            for (Index v : mesh.element(e)) weight(v) += mesh.geometry(e).area / 3.0;
        }
        std::vector<Eigen::Triplet<Scalar>> g, a;
        for (Index e = 0; e < mesh.num_elements(); ++e) {
            const auto& geo = mesh.geometry(e);
            const auto& t = mesh.element(e);
            for (Index v : t) {
                const Scalar s = geo.area / 3.0 / weight(v);
                for (int k = 0; k < 3; ++k) {
                    const Index j = t[static_cast<std::size_t>(k)];
                    g.emplace_back(v, j, s * geo.grad_lambda(0, k));
                    g.emplace_back(nv + v, j, s * geo.grad_lambda(1, k));
                }
            }
        }
        lumped_gradient_.resize(2 * nv, nv);
        lumped_gradient_.setFromTriplets(g.begin(), g.end());

        VectorX count = VectorX::Zero(nv);
        for (Index e = 0; e < mesh.num_elements(); ++e) {
            for (Index v : mesh.element(e)) count(v) += 1;
        }
        for (Index e = 0; e < mesh.num_elements(); ++e) {
            for (Index v : mesh.element(e)) a.emplace_back(v, e, 1.0 / count(v));
        }
        average_.resize(nv, mesh.num_elements());
        average_.setFromTriplets(a.begin(), a.end());

        std::vector<Eigen::Triplet<Scalar>> sel;
        for (std::size_t i = 0; i < free_.size(); ++i) sel.emplace_back(free_[i], static_cast<Index>(i), 1.0);
        selection_.resize(nv, num_free());
        selection_.setFromTriplets(sel.begin(), sel.end());
    }

    void build_preconditioner()
    {
        const Mesh& mesh = space_->mesh();
        const Index nv = mesh.num_vertices();
        std::vector<Eigen::Triplet<Scalar>> trip;
        for (Index e = 0; e < mesh.num_elements(); ++e) {
            const auto i = static_cast<std::size_t>(e);
            const auto& t = mesh.element(e);
            const auto& gl = mesh.geometry(e).grad_lambda;
            for (int k = 0; k < 3; ++k) {
                const Index v = t[static_cast<std::size_t>(k)];
                const Vec2 c = dR_[i] * gl.col(k) + dp_[i] / 3.0;
                trip.emplace_back(e, v, c(0));
                trip.emplace_back(e, nv + v, c(1));
            }
        }
        SparseMatrix contract(mesh.num_elements(), 2 * nv);
        contract.setFromTriplets(trip.begin(), trip.end());
        const SparseMatrix jac = SparseMatrix(average_ * (contract * lumped_gradient_) * selection_) + selection_;
        SparseMatrix normal = SparseMatrix(jac.transpose() * mass_ * jac);
        const Scalar shift = 1e-10 * normal.diagonal().maxCoeff();
        for (Index i = 0; i < normal.rows(); ++i) normal.coeffRef(i, i) += shift;
        precond_ = std::make_unique<Eigen::SimplicialLDLT<SparseMatrix>>(normal);
        if (precond_->info() != Eigen::Success) precond_.reset();
    }
};

} // namespace

EffectiveSolution minimize_least_squares(std::shared_ptr<const FunctionSpace> space, const ElementHamiltonian& h,
                                         const VectorX& initial, const LeastSquaresOptions& options)
{
    if (options.max_evaluations < 1 || options.max_iterations < 0) {
        throw std::invalid_argument("minimize_least_squares: budgets must be positive");
    }
    LeastSquaresProblem problem(space, h);
    if (initial.size() != space->num_dofs()) {
        throw std::invalid_argument("minimize_least_squares: initial guess has the wrong size");
    }

    EffectiveSolution sol;
    int evals = 0;
    auto eval = [&](const VectorX& x) {
        ++evals;
        return problem.evaluate(x);
    };

    auto current = eval(problem.restrict(initial));
    sol.objective_trace.push_back(current.objective);
    Scalar mu = 1e-12;
    Scalar step = 1.0;
    std::string message = "iteration limit reached";
    bool converged = false;
    int iter = 0;

    for (; iter < options.max_iterations; ++iter) {
        if (current.objective <= std::numeric_limits<Scalar>::min()) {
            converged = true;
            message = "zero objective";
            break;
        }
        problem.linearize(current);
        const VectorX grad = problem.gradient(current);
        if (grad.norm() <= options.grad_tol) {
            converged = true;
            message = "gradient below tolerance";
            break;
        }
        const VectorX x0 = problem.restrict(current.v);
        const Scalar scale = std::max<Scalar>(1.0, grad.norm());
        const int cg_iters = static_cast<int>(std::min<Index>(x0.size() + 50, 300));

        bool accepted = false;
        bool out_of_budget = false;
        LeastSquaresProblem::Point trial;
        // Gauss-Newton direction with growing damping, then steepest descent.
        for (int attempt = 0; attempt < 4 && !accepted && !out_of_budget; ++attempt) {
            VectorX dir;
            if (attempt < 3) {
                dir = problem.normal_solve(-0.5 * grad, mu * scale, cg_iters, 1e-3);
            } else {
                dir = -grad / scale;
            }
            if (!dir.allFinite() || dir.dot(grad) >= 0) {
                mu *= 100;
                continue;
            }
            // Kinks of H make short steps common; start near the last accepted length.
            const Scalar t0 = attempt < 3 ? std::min<Scalar>(1.0, 4.0 * step) : 1.0;
            for (Scalar t = t0; t > 1e-10; t *= 0.5) {
                if (evals >= options.max_evaluations) {
                    out_of_budget = true;
                    break;
                }
                trial = eval(x0 + t * dir);
                if (trial.objective < current.objective) {
                    accepted = true;
                    if (attempt < 3) step = t;
                    break;
                }
            }
            if (!accepted) mu *= 100;
        }
        if (out_of_budget) {
            message = "evaluation budget exhausted";
            break;
        }
        if (!accepted) {
            converged = true;
            message = "no descent direction improves the objective";
            break;
        }
        mu = std::max<Scalar>(1e-12, mu * 0.01);
        const Scalar decrease = (current.objective - trial.objective) / current.objective;
        current = std::move(trial);
        sol.objective_trace.push_back(current.objective);
        if (decrease < options.rel_tol) {
            converged = true;
            message = "relative decrease below tolerance";
            ++iter;
            break;
        }
        if (evals >= options.max_evaluations) {
            message = "evaluation budget exhausted";
            ++iter;
            break;
        }
    }

    sol.u = FeFunction(space, current.v);
    sol.htilde = FeFunction(space, current.htilde);
    sol.objective = current.objective;
    sol.evaluations = evals;
    sol.iterations = iter;
    sol.converged = converged;
    sol.message = message;
    return sol;
}

FeFunction solve_linear_dirichlet(std::shared_ptr<const FunctionSpace> space, const Mat2& a, Scalar c, Scalar f)
{
    const SparseMatrix k = reduced_dirichlet_matrix(*space, a, c);
    const VectorX load = f * basis_integrals(*space);
    const auto& free = space->free_dofs();
    const auto nf = static_cast<Index>(free.size());
    VectorX rhs(nf);
    for (Index i = 0; i < nf; ++i) rhs(i) = load(free[static_cast<std::size_t>(i)]);
    Eigen::SimplicialLDLT<SparseMatrix> solver(k);
    if (solver.info() != Eigen::Success) throw SolverError("solve_linear_dirichlet: factorization failed");
    const VectorX x = solver.solve(rhs);
    FeFunction out(space);
    for (Index i = 0; i < nf; ++i) out.coeffs(free[static_cast<std::size_t>(i)]) = x(i);
    return out;
}

namespace {

// Zero first; benchmark families also try the linear solve with diffusion B. The squared residual is not
// convex, and the zero start tends to reach the lower minimum.
std::vector<VectorX> initial_guesses(const std::shared_ptr<const FunctionSpace>& space, const std::string& family)
{
    std::vector<VectorX> out{VectorX::Zero(space->num_dofs())};
    if (is_benchmark(family)) out.push_back(solve_linear_dirichlet(space, benchmark_matrix(), 1.0, 1.0).coeffs);
    return out;
}

EffectiveSolution best_of(const std::shared_ptr<const FunctionSpace>& space, const ElementHamiltonian& h,
                          const std::vector<VectorX>& starts, const LeastSquaresOptions& options)
{
    EffectiveSolution best;
    int evaluations = 0;
    for (std::size_t k = 0; k < starts.size(); ++k) {
        EffectiveSolution s = minimize_least_squares(space, h, starts[k], options);
        evaluations += s.evaluations;
        if (k == 0 || s.objective < best.objective) {
            best = std::move(s);
            best.message += " (start " + std::to_string(k) + ")";
        }
    }
    best.evaluations = evaluations;
    return best;
}

LeastSquaresOptions options_of(const TwoScaleConfig& c)
{
    LeastSquaresOptions o;
    o.rel_tol = c.rel_tol;
    o.grad_tol = c.grad_tol;
    o.max_iterations = c.max_iterations;
    o.max_evaluations = c.max_evaluations;
    return o;
}

void validate(const TwoScaleConfig& c)
{
    if (c.omega_n < 1 || c.cell_n < 1 || !(c.sigma > 0) || !(c.rel_tol >= 0) || !(c.grad_tol >= 0) ||
        c.max_evaluations < 1 || !(c.cell_tol > 0)) {
        std::ostringstream msg;
        msg << "TwoScaleConfig: invalid values (omega_n=" << c.omega_n << ", cell_n=" << c.cell_n
            << ", sigma=" << c.sigma << ")";
        throw std::invalid_argument(msg.str());
    }
}

} // namespace

EffectiveSolution solve_effective(const TwoScaleConfig& config)
{
    validate(config);
    const CoefficientFamily family = find_family(config.family);
    if (config.mode == HamiltonianMode::exact) return solve_effective(config, family, CordesCertificate{});
    const CordesCertificate cert = select_lambda(family, SampleGrid::lattice(128, family.controls.values()));
    return solve_effective(config, family, cert);
}

EffectiveSolution solve_effective(const TwoScaleConfig& config, const CoefficientFamily& family,
                                  const CordesCertificate& certificate)
{
    validate(config);
    auto mesh = std::make_shared<const Mesh>(config.omega_n, MeshFlavor::dirichlet);
    auto space = build_space(mesh, 1, 1);
    const auto starts = initial_guesses(space, family.name);
    if (config.mode == HamiltonianMode::exact) {
        if (!has_exact_H(family.name)) {
            throw std::invalid_argument("solve_effective: exact mode needs a benchmark family, got '" + family.name + "'");
        }
        ExactHamiltonian h(family.name);
        return best_of(space, h, starts, options_of(config));
    }
    CellHamiltonian h(family, certificate, config.sigma, config.cell_n, config.cell_tol);
    return best_of(space, h, starts, options_of(config));
}

EffectiveSolution solve_eps_problem(Scalar eps, int omega_n, const CoefficientFamily& family,
                                    const LeastSquaresOptions& options)
{
    if (!(eps > 0)) throw std::invalid_argument("solve_eps_problem: eps must be positive");
    if (omega_n < 1) throw std::invalid_argument("solve_eps_problem: mesh N must be positive");
    auto mesh = std::make_shared<const Mesh>(omega_n, MeshFlavor::dirichlet);
    auto space = build_space(mesh, 1, 1);
    OscillatingHamiltonian h(family, eps);
    // The homogenized linear guess only pays off against costly cell evaluations; here it lands in worse minima.
    return best_of(space, h, {VectorX::Zero(space->num_dofs())}, options);
}

} // namespace hjb
