#include "hjb/fem.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <string>

namespace hjb {

namespace {

constexpr std::array<std::array<int, 2>, 3> kEdges = {{{0, 1}, {1, 2}, {2, 0}}};

} // namespace

FunctionSpace::FunctionSpace(std::shared_ptr<const Mesh> mesh, int degree, int components, Constraint constraint)
    : mesh_(std::move(mesh)), degree_(degree), components_(components), constraint_(constraint)
{
    if (!mesh_) throw std::invalid_argument("build_space: null mesh");
    if (degree_ != 1 && degree_ != 2) {
        throw std::invalid_argument("build_space: unsupported degree " + std::to_string(degree_));
    }
    if (components_ != 1 && components_ != 2) {
        throw std::invalid_argument("build_space: components must be 1 or 2");
    }
    if (constraint_ == Constraint::zero_mean && !periodic()) {
        throw std::invalid_argument("build_space: zero_mean constraint requires a periodic mesh");
    }

    const int n = mesh_->subdivisions();
    const int lat = degree_ * n;
    const bool per = periodic();
    const int stride = per ? lat : lat + 1;
    ndofs_ = static_cast<Index>(stride) * stride;
    local_ = degree_ == 1 ? 3 : 6;

    auto lattice_index = [&](int ii, int jj) {
        if (per) {
            ii %= lat;
            jj %= lat;
        }
        return static_cast<Index>(jj) * stride + ii;
    };

    points_.resize(static_cast<std::size_t>(ndofs_));
    boundary_.assign(static_cast<std::size_t>(ndofs_), 0);
    for (int jj = 0; jj < stride; ++jj) {
        for (int ii = 0; ii < stride; ++ii) {
            const Index id = lattice_index(ii, jj);
            points_[static_cast<std::size_t>(id)] = Vec2(static_cast<Scalar>(ii) / lat, static_cast<Scalar>(jj) / lat);
            if (!per && (ii == 0 || jj == 0 || ii == lat || jj == lat)) boundary_[static_cast<std::size_t>(id)] = 1;
        }
    }
    for (Index i = 0; i < ndofs_; ++i) {
        if (!boundary_[static_cast<std::size_t>(i)]) free_.push_back(i);
    }

    dof_map_.resize(static_cast<std::size_t>(mesh_->num_elements() * local_));
    for (Index e = 0; e < mesh_->num_elements(); ++e) {
        const auto& tri = mesh_->element(e);
        std::array<std::array<int, 2>, 3> lc{};
        for (int k = 0; k < 3; ++k) {
            const auto g = mesh_->grid_coords(tri[static_cast<std::size_t>(k)]);
            lc[static_cast<std::size_t>(k)] = {degree_ * g[0], degree_ * g[1]};
            dof_map_[static_cast<std::size_t>(e * local_ + k)] = lattice_index(degree_ * g[0], degree_ * g[1]);
        }
        if (degree_ == 2) {
            for (int k = 0; k < 3; ++k) {
                const auto& ab = kEdges[static_cast<std::size_t>(k)];
                const auto& pa = lc[static_cast<std::size_t>(ab[0])];
                const auto& pb = lc[static_cast<std::size_t>(ab[1])];
                dof_map_[static_cast<std::size_t>(e * local_ + 3 + k)] =
                    lattice_index((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2);
            }
        }
    }
}

void FunctionSpace::eval_basis(Index e, const Vec2& ref, Eigen::Ref<VectorX> values, Eigen::Ref<MatrixX> grads) const
{
    const auto& g = mesh_->geometry(e).grad_lambda;
    const std::array<Scalar, 3> lam = {1.0 - ref(0) - ref(1), ref(0), ref(1)};
    if (degree_ == 1) {
        for (int k = 0; k < 3; ++k) {
            values(k) = lam[static_cast<std::size_t>(k)];
            grads.col(k) = g.col(k);
        }
        return;
    }
    for (int k = 0; k < 3; ++k) {
        const Scalar l = lam[static_cast<std::size_t>(k)];
        values(k) = l * (2.0 * l - 1.0);
        grads.col(k) = (4.0 * l - 1.0) * g.col(k);
    }
    for (int k = 0; k < 3; ++k) {
        const int a = kEdges[static_cast<std::size_t>(k)][0];
        const int b = kEdges[static_cast<std::size_t>(k)][1];
        values(3 + k) = 4.0 * lam[static_cast<std::size_t>(a)] * lam[static_cast<std::size_t>(b)];
        grads.col(3 + k) = 4.0 * (lam[static_cast<std::size_t>(a)] * g.col(b) + lam[static_cast<std::size_t>(b)] * g.col(a));
    }
}

std::shared_ptr<const FunctionSpace> build_space(std::shared_ptr<const Mesh> mesh, int degree, int components,
                                                 Constraint constraint)
{
    return std::make_shared<const FunctionSpace>(std::move(mesh), degree, components, constraint);
}

FeFunction::FeFunction(std::shared_ptr<const FunctionSpace> s) : space(std::move(s)), coeffs(VectorX::Zero(space->size()))
{
}

FeFunction::FeFunction(std::shared_ptr<const FunctionSpace> s, VectorX c) : space(std::move(s)), coeffs(std::move(c))
{
    if (coeffs.size() != space->size()) {
        throw std::invalid_argument("FeFunction: coefficient length " + std::to_string(coeffs.size()) +
                                    " does not match space size " + std::to_string(space->size()));
    }
}

namespace {

QpSample sample_element(const FeFunction& fn, Index e, const Vec2& ref, VectorX& vals, MatrixX& grads)
{
    const FunctionSpace& sp = fn.fs();
    sp.eval_basis(e, ref, vals, grads);
    QpSample s;
    s.point = sp.mesh().map_to_physical(e, ref);
    const Index nd = sp.num_dofs();
    for (int c = 0; c < sp.components(); ++c) {
        Scalar v = 0;
        Vec2 gr = Vec2::Zero();
        for (int k = 0; k < sp.dofs_per_element(); ++k) {
            const Scalar coef = fn.coeffs(c * nd + sp.dof(e, k));
            v += coef * vals(k);
            gr += coef * grads.col(k);
        }
        s.value(c) = v;
        s.grad.row(c) = gr.transpose();
    }
    return s;
}

} // namespace

QpField eval_at_qp(const FeFunction& fn, int quad_order)
{
    if (quad_order < 1) throw std::invalid_argument("eval_at_qp: quad_order must be >= 1");
    const FunctionSpace& sp = fn.fs();
    const Mesh& mesh = sp.mesh();
    const TriangleRule rule = triangle_rule(quad_order);
    QpField field;
    field.points_per_element = static_cast<int>(rule.size());
    field.samples.resize(static_cast<std::size_t>(mesh.num_elements()) * rule.size());
    VectorX vals(sp.dofs_per_element());
    MatrixX grads(2, sp.dofs_per_element());
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        const Scalar area = mesh.geometry(e).area;
        for (std::size_t k = 0; k < rule.size(); ++k) {
            QpSample s = sample_element(fn, e, rule.points[k], vals, grads);
            s.weight = area * rule.weights[k];
            field.samples[static_cast<std::size_t>(e) * rule.size() + k] = s;
        }
    }
    return field;
}

QpSample evaluate(const FeFunction& fn, const Vec2& x)
{
    const Mesh& mesh = fn.fs().mesh();
    const int n = mesh.subdivisions();
    const Scalar sx = std::clamp(x(0), 0.0, 1.0) * n;
    const Scalar sy = std::clamp(x(1), 0.0, 1.0) * n;
    const int i = std::min(static_cast<int>(std::floor(sx)), n - 1);
    const int j = std::min(static_cast<int>(std::floor(sy)), n - 1);
    const Scalar fx = sx - i;
    const Scalar fy = sy - j;
    // Lower triangle (v00, v10, v11) lies below the diagonal fy <= fx.
    const bool lower = fy <= fx;
    const Index e = 2 * (static_cast<Index>(j) * n + i) + (lower ? 0 : 1);
    // Barycentric coordinates of vertices 1, 2.
    const Vec2 ref = lower ? Vec2(fx - fy, fy) : Vec2(fx, fy - fx);
    VectorX vals(fn.fs().dofs_per_element());
    MatrixX grads(2, fn.fs().dofs_per_element());
    QpSample s = sample_element(fn, e, ref, vals, grads);
    s.point = x;
    return s;
}

FeFunction interpolate_scalar(std::shared_ptr<const FunctionSpace> space, const std::function<Scalar(const Vec2&)>& g)
{
    if (space->components() != 1) throw std::invalid_argument("interpolate: scalar callable on a vector space");
    FeFunction fn(space);
    for (Index i = 0; i < space->num_dofs(); ++i) fn.coeffs(i) = g(space->dof_point(i));
    return fn;
}

FeFunction interpolate_vector(std::shared_ptr<const FunctionSpace> space, const std::function<Vec2(const Vec2&)>& g)
{
    if (space->components() != 2) throw std::invalid_argument("interpolate: vector callable on a scalar space");
    FeFunction fn(space);
    const Index nd = space->num_dofs();
    for (Index i = 0; i < nd; ++i) {
        const Vec2 v = g(space->dof_point(i));
        fn.coeffs(i) = v(0);
        fn.coeffs(nd + i) = v(1);
    }
    return fn;
}

Vec2 integrate(const FeFunction& fn, int quad_order)
{
    const QpField f = eval_at_qp(fn, quad_order);
    Vec2 sum = Vec2::Zero();
    for (const auto& s : f.samples) sum += s.weight * s.value;
    if (fn.fs().components() == 1) sum(1) = 0;
    return sum;
}

void remove_mean(FeFunction& fn)
{
    if (!fn.fs().periodic()) throw std::invalid_argument("remove_mean: requires a periodic space");
    // Lagrange bases form a partition of unity; the unit square has area 1.
    const Vec2 mean = integrate(fn, 2 * fn.fs().degree());
    for (int c = 0; c < fn.fs().components(); ++c) fn.component(c).array() -= mean(c);
}

namespace {

template <typename Kernel>
SparseMatrix assemble_scalar(const FunctionSpace& space, int quad_order, Kernel&& kernel)
{
    const Mesh& mesh = space.mesh();
    const TriangleRule rule = triangle_rule(quad_order);
    const int nl = space.dofs_per_element();
    VectorX vals(nl);
    MatrixX grads(2, nl);
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(mesh.num_elements() * nl * nl));
    MatrixX local(nl, nl);
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        local.setZero();
        const Scalar area = mesh.geometry(e).area;
        for (std::size_t k = 0; k < rule.size(); ++k) {
            space.eval_basis(e, rule.points[k], vals, grads);
            kernel(local, area * rule.weights[k], vals, grads);
        }
        for (int a = 0; a < nl; ++a) {
            for (int b = 0; b < nl; ++b) trips.emplace_back(space.dof(e, a), space.dof(e, b), local(a, b));
        }
    }
    SparseMatrix m(space.num_dofs(), space.num_dofs());
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

} // namespace

SparseMatrix assemble_mass(const FunctionSpace& space, int quad_order)
{
    return assemble_scalar(space, quad_order, [](MatrixX& local, Scalar w, const VectorX& v, const MatrixX&) {
        local.noalias() += w * v * v.transpose();
    });
}

SparseMatrix assemble_stiffness(const FunctionSpace& space, int quad_order)
{
    return assemble_scalar(space, quad_order, [](MatrixX& local, Scalar w, const VectorX&, const MatrixX& g) {
        local.noalias() += w * g.transpose() * g;
    });
}

VectorX basis_integrals(const FunctionSpace& space, int quad_order)
{
    const Mesh& mesh = space.mesh();
    const TriangleRule rule = triangle_rule(quad_order);
    const int nl = space.dofs_per_element();
    VectorX vals(nl);
    MatrixX grads(2, nl);
    VectorX out = VectorX::Zero(space.num_dofs());
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        const Scalar area = mesh.geometry(e).area;
        for (std::size_t k = 0; k < rule.size(); ++k) {
            space.eval_basis(e, rule.points[k], vals, grads);
            for (int a = 0; a < nl; ++a) out(space.dof(e, a)) += area * rule.weights[k] * vals(a);
        }
    }
    return out;
}

Scalar l2_norm_sq(const FeFunction& fn, int quad_order)
{
    Scalar s = 0;
    for (const auto& q : eval_at_qp(fn, quad_order).samples) s += q.weight * q.value.squaredNorm();
    return s;
}

Scalar grad_norm_sq(const FeFunction& fn, int quad_order)
{
    Scalar s = 0;
    for (const auto& q : eval_at_qp(fn, quad_order).samples) s += q.weight * q.grad.squaredNorm();
    return s;
}

Scalar div_norm_sq(const FeFunction& w, int quad_order)
{
    Scalar s = 0;
    for (const auto& q : eval_at_qp(w, quad_order).samples) s += q.weight * q.div() * q.div();
    return s;
}

Scalar rot_norm_sq(const FeFunction& w, int quad_order)
{
    Scalar s = 0;
    for (const auto& q : eval_at_qp(w, quad_order).samples) s += q.weight * q.rot() * q.rot();
    return s;
}

Scalar triple_norm(const FeFunction& w, const FeFunction& u, Scalar lambda, int quad_order)
{
    if (!(lambda > 0)) throw std::invalid_argument("triple_norm: lambda must be positive");
    if (w.fs().mesh_ptr() != u.fs().mesh_ptr() && &w.fs().mesh() != &u.fs().mesh()) {
        throw std::invalid_argument("triple_norm: spaces live on different meshes");
    }
    if (w.fs().components() != 2 || u.fs().components() != 1) {
        throw std::invalid_argument("triple_norm: expects a vector w and a scalar u");
    }
    const Scalar sq = grad_norm_sq(w, quad_order) + 2.0 * lambda * grad_norm_sq(u, quad_order) +
                      lambda * lambda * l2_norm_sq(u, quad_order);
    return std::sqrt(std::max(sq, 0.0));
}

Scalar triple_norm_error(const SmoothFunction& exact, const FeFunction& w, const FeFunction& u, Scalar lambda,
                         int quad_order)
{
    if (!(lambda > 0)) throw std::invalid_argument("triple_norm_error: lambda must be positive");
    const QpField fw = eval_at_qp(w, quad_order);
    const QpField fu = eval_at_qp(u, quad_order);
    Scalar sq = 0;
    for (std::size_t k = 0; k < fw.samples.size(); ++k) {
        const QpSample& sw = fw.samples[k];
        const QpSample& su = fu.samples[k];
        const Vec2& x = sw.point;
        // D(grad u) is the Hessian.
        sq += sw.weight * ((exact.hessian(x) - sw.grad).squaredNorm() +
                           2.0 * lambda * (exact.gradient(x) - su.gradient()).squaredNorm() +
                           lambda * lambda * std::pow(exact.value(x) - su.value(0), 2));
    }
    return std::sqrt(sq);
}

GradientProjector::GradientProjector(std::shared_ptr<const FunctionSpace> target,
                                     std::shared_ptr<const FunctionSpace> source, int quad_order)
    : target_(std::move(target)), source_(std::move(source))
{
    if (&target_->mesh() != &source_->mesh()) {
        throw std::invalid_argument("l2_project: spaces live on different meshes");
    }
    if (target_->components() != 2 || source_->components() != 1) {
        throw std::invalid_argument("l2_project: expects a vector target and a scalar source");
    }
    mass_ = assemble_mass(*target_, quad_order);
    const Mesh& mesh = target_->mesh();
    const TriangleRule rule = triangle_rule(quad_order);
    const int nt = target_->dofs_per_element();
    const int ns = source_->dofs_per_element();
    VectorX tv(nt), sv(ns);
    MatrixX tg(2, nt), sg(2, ns);
    std::array<std::vector<Triplet>, 2> trips;
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        const Scalar area = mesh.geometry(e).area;
        for (std::size_t k = 0; k < rule.size(); ++k) {
            target_->eval_basis(e, rule.points[k], tv, tg);
            source_->eval_basis(e, rule.points[k], sv, sg);
            const Scalar w = area * rule.weights[k];
            for (int a = 0; a < nt; ++a) {
                for (int b = 0; b < ns; ++b) {
                    for (int c = 0; c < 2; ++c) {
                        trips[static_cast<std::size_t>(c)].emplace_back(target_->dof(e, a), source_->dof(e, b),
                                                                         w * tv(a) * sg(c, b));
                    }
                }
            }
        }
    }
    for (int c = 0; c < 2; ++c) {
        auto& l = load_[static_cast<std::size_t>(c)];
        l.resize(target_->num_dofs(), source_->num_dofs());
        l.setFromTriplets(trips[static_cast<std::size_t>(c)].begin(), trips[static_cast<std::size_t>(c)].end());
    }
    solver_.compute(mass_);
    if (solver_.info() != Eigen::Success) throw SolverError("l2_project: mass matrix factorization failed");
}

VectorX GradientProjector::apply(const Eigen::Ref<const VectorX>& u_coeffs) const
{
    const Index nd = target_->num_dofs();
    VectorX out(2 * nd);
    for (int c = 0; c < 2; ++c) {
        const VectorX rhs = load_[static_cast<std::size_t>(c)] * u_coeffs;
        out.segment(c * nd, nd) = solver_.solve(rhs);
    }
    return out;
}

VectorX GradientProjector::apply_transpose(const Eigen::Ref<const VectorX>& w_coeffs) const
{
    const Index nd = target_->num_dofs();
    VectorX out = VectorX::Zero(source_->num_dofs());
    for (int c = 0; c < 2; ++c) {
        const VectorX y = solver_.solve(VectorX(w_coeffs.segment(c * nd, nd)));
        out += load_[static_cast<std::size_t>(c)].transpose() * y;
    }
    return out;
}

FeFunction GradientProjector::project(const FeFunction& u) const
{
    if (u.space.get() != source_.get() && u.fs().size() != source_->size()) {
        throw std::invalid_argument("GradientProjector: source function from a different space");
    }
    return FeFunction(target_, apply(u.coeffs));
}

FeFunction l2_project(std::shared_ptr<const FunctionSpace> target, const FeFunction& source, int quad_order)
{
    GradientProjector proj(std::move(target), source.space, quad_order);
    return proj.project(source);
}

void write_csv(const FeFunction& fn, std::ostream& out)
{
    const Mesh& mesh = fn.fs().mesh();
    const bool vec = fn.fs().components() == 2;
    out << (vec ? "vertex,x,y,value_1,value_2\n" : "vertex,x,y,value\n");
    out << std::setprecision(17);
    for (Index v = 0; v < mesh.num_vertices(); ++v) {
        const Vec2& x = mesh.vertex(v);
        const QpSample s = evaluate(fn, x);
        out << v << ',' << x(0) << ',' << x(1) << ',' << s.value(0);
        if (vec) out << ',' << s.value(1);
        out << '\n';
    }
}

} // namespace hjb
