#include "hjb/mixed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace hjb {

Scalar sigma1(Scalar delta) { return 1.0 - 0.5 * std::sqrt(1.0 - delta); }

Scalar sigma2_tilde(Scalar delta)
{
    const Scalar s = 1.0 - std::sqrt(1.0 - delta);
    return 0.5 * s + 1.0 / (4.0 * s);
}

StabilityConstants stability_constants(Scalar delta, Scalar lambda)
{
    constexpr Scalar n = 2.0;
    const Scalar pi2 = std::numbers::pi * std::numbers::pi;
    const Scalar root = std::sqrt(1.0 - delta);
    StabilityConstants k;
    k.monotonicity = 0.25 * (1.0 - root);
    k.lipschitz = 2.0 + std::sqrt(2.0) * root + sigma1(delta) + sigma2_tilde(delta) * (0.5 + n * lambda / pi2);
    k.b_bound = std::sqrt((0.5 + n * lambda / pi2) / lambda);
    k.inf_sup = 1.0 / std::sqrt(lambda * (2.0 + n * lambda / pi2));
    k.quasi_optimality = 2.0 * k.lipschitz / k.monotonicity * (1.0 + k.b_bound / k.inf_sup);
    return k;
}

MixedProblem::MixedProblem(std::shared_ptr<const Mesh> mesh, CoefficientFamily family, CordesCertificate cert,
                           MixedOptions options)
    : mesh_(std::move(mesh)), family_(std::move(family)), cert_(std::move(cert)), options_(options)
{
    if (!mesh_ || mesh_->flavor() != MeshFlavor::periodic) {
        throw std::invalid_argument("MixedProblem: requires a periodic mesh");
    }
    if (!(cert_.lambda > 0) || !(cert_.delta > 0 && cert_.delta < 1)) {
        throw std::invalid_argument("MixedProblem: invalid Cordes certificate");
    }
    sigma1_ = hjb::sigma1(cert_.delta);
    sigma2_ = cert_.lambda * sigma2_tilde(cert_.delta);
    w_space_ = build_space(mesh_, options_.degree_w, 2, Constraint::zero_mean);
    u_space_ = build_space(mesh_, options_.degree_u, 1, Constraint::none);
    if (options_.m_space == MultiplierSpace::zero_mean) {
        m_space_ = build_space(mesh_, options_.degree_u, 1, Constraint::zero_mean);
    }
    precompute();
}

void MixedProblem::precompute()
{
    const TriangleRule rule = triangle_rule(options_.quad_order);
    qp_per_element_ = static_cast<int>(rule.size());
    const Index ne = mesh_->num_elements();
    const Index nq = ne * qp_per_element_;
    const int nlw = w_space_->dofs_per_element();
    const int nlu = u_space_->dofs_per_element();
    qp_weight_.resize(static_cast<std::size_t>(nq));
    qp_point_.resize(static_cast<std::size_t>(nq));
    coeffs_.resize(static_cast<std::size_t>(nq));
    w_vals_.resize(nlw, nq);
    w_grads_.resize(2, nlw * nq);
    u_vals_.resize(nlu, nq);
    u_grads_.resize(2, nlu * nq);
    const Vec2 x = options_.frozen_x.value_or(Vec2::Zero());
    VectorX vw(nlw), vu(nlu);
    MatrixX gw(2, nlw), gu(2, nlu);
    for (Index e = 0; e < ne; ++e) {
        const Scalar area = mesh_->geometry(e).area;
        for (int k = 0; k < qp_per_element_; ++k) {
            const Index q = e * qp_per_element_ + k;
            const Vec2& ref = rule.points[static_cast<std::size_t>(k)];
            qp_weight_[static_cast<std::size_t>(q)] = area * rule.weights[static_cast<std::size_t>(k)];
            const Vec2 y = mesh_->map_to_physical(e, ref);
            qp_point_[static_cast<std::size_t>(q)] = y;
            w_space_->eval_basis(e, ref, vw, gw);
            u_space_->eval_basis(e, ref, vu, gu);
            w_vals_.col(q) = vw;
            w_grads_.middleCols(q * nlw, nlw) = gw;
            u_vals_.col(q) = vu;
            u_grads_.middleCols(q * nlu, nlu) = gu;
            auto& table = coeffs_[static_cast<std::size_t>(q)];
            table.reserve(family_.controls.size());
            for (Scalar alpha : family_.controls.values()) {
                table.push_back(scaled_coefficients(family_, cert_, x, y, alpha));
            }
        }
    }
}

Eigen::Ref<const MatrixX> MixedProblem::w_grads(Index q) const
{
    const int nl = w_space_->dofs_per_element();
    return w_grads_.middleCols(q * nl, nl);
}

Eigen::Ref<const MatrixX> MixedProblem::u_grads(Index q) const
{
    const int nl = u_space_->dofs_per_element();
    return u_grads_.middleCols(q * nl, nl);
}

namespace {

/// Test/trial function data of all local (w, u) dofs at one quadrature point.
struct LocalBasis {
    VectorX l_lambda; // L_lambda(phi)
    VectorX rot;      // rot(phi_w)
    MatrixX gap;      // grad(phi_u) - phi_w, 2 x n
    MatrixX jac_row;  // for w dofs: grad(phi) placed in the row of its component; 2 x n (gradient), comp index
    std::vector<int> comp; // -1 for u dofs

    void resize(int n)
    {
        l_lambda.resize(n);
        rot.resize(n);
        gap.resize(2, n);
        jac_row.resize(2, n);
        comp.assign(static_cast<std::size_t>(n), -1);
    }
};

void fill_local_basis(const MixedProblem& p, Index q, LocalBasis& lb)
{
    const int nlw = p.w_space()->dofs_per_element();
    const int nlu = p.u_space()->dofs_per_element();
    const auto vw = p.w_values(q);
    const auto gw = p.w_grads(q);
    const auto vu = p.u_values(q);
    const auto gu = p.u_grads(q);
    const Scalar lambda = p.lambda();
    for (int c = 0; c < 2; ++c) {
        for (int k = 0; k < nlw; ++k) {
            const int i = c * nlw + k;
            lb.comp[static_cast<std::size_t>(i)] = c;
            lb.jac_row.col(i) = gw.col(k);
            lb.l_lambda(i) = -gw(c, k);
            lb.rot(i) = c == 0 ? gw(1, k) : -gw(0, k);
            lb.gap.col(i).setZero();
            lb.gap(c, i) = -vw(k);
        }
    }
    for (int k = 0; k < nlu; ++k) {
        const int i = 2 * nlw + k;
        lb.comp[static_cast<std::size_t>(i)] = -1;
        lb.jac_row.col(i) = gu.col(k);
        lb.l_lambda(i) = lambda * vu(k);
        lb.rot(i) = 0;
        lb.gap.col(i) = gu.col(k);
    }
}

/// Linear part of gamma(-A:Dphi - b.grad(phi) + c phi) for every local dof.
void fill_operator_row(const MixedProblem& p, Index q, const ScaledCoefficients& sc, const LocalBasis& lb,
                       VectorX& ell)
{
    const int nlw = p.w_space()->dofs_per_element();
    const auto vu = p.u_values(q);
    const int n = static_cast<int>(lb.comp.size());
    for (int i = 0; i < n; ++i) {
        const int c = lb.comp[static_cast<std::size_t>(i)];
        if (c >= 0) {
            ell(i) = -sc.A.row(c).dot(lb.jac_row.col(i).transpose());
        } else {
            ell(i) = -sc.b.dot(lb.jac_row.col(i)) + sc.c * vu(i - 2 * nlw);
        }
    }
}

std::vector<Index> local_dofs(const MixedProblem& p, Index e)
{
    const FunctionSpace& ws = *p.w_space();
    const FunctionSpace& us = *p.u_space();
    const int nlw = ws.dofs_per_element();
    const int nlu = us.dofs_per_element();
    std::vector<Index> dofs(static_cast<std::size_t>(2 * nlw + nlu));
    for (int c = 0; c < 2; ++c) {
        for (int k = 0; k < nlw; ++k) dofs[static_cast<std::size_t>(c * nlw + k)] = c * ws.num_dofs() + ws.dof(e, k);
    }
    for (int k = 0; k < nlu; ++k) dofs[static_cast<std::size_t>(2 * nlw + k)] = p.u_offset() + us.dof(e, k);
    return dofs;
}

/// Fields of the packed state at one quadrature point.
struct PointFields {
    Mat2 dw = Mat2::Zero();
    Vec2 w = Vec2::Zero();
    Vec2 grad_u = Vec2::Zero();
    Scalar u = 0;
    Vec2 grad_m = Vec2::Zero();
};

PointFields point_fields(const MixedProblem& p, const VectorX& x, Index e, Index q)
{
    const FunctionSpace& ws = *p.w_space();
    const FunctionSpace& us = *p.u_space();
    const auto vw = p.w_values(q);
    const auto gw = p.w_grads(q);
    const auto vu = p.u_values(q);
    const auto gu = p.u_grads(q);
    PointFields f;
    for (int k = 0; k < ws.dofs_per_element(); ++k) {
        const Index d = ws.dof(e, k);
        for (int c = 0; c < 2; ++c) {
            const Scalar coef = x(c * ws.num_dofs() + d);
            f.w(c) += coef * vw(k);
            f.dw.row(c) += coef * gw.col(k).transpose();
        }
    }
    for (int k = 0; k < us.dofs_per_element(); ++k) {
        const Scalar coef = x(p.u_offset() + us.dof(e, k));
        f.u += coef * vu(k);
        f.grad_u += coef * gu.col(k);
        if (p.m_space()) f.grad_m += x(p.m_offset() + p.m_space()->dof(e, k)) * gu.col(k);
    }
    return f;
}

void check_size(const MixedProblem& p, const VectorX& x, const char* who)
{
    if (x.size() != p.system_size()) {
        throw std::invalid_argument(std::string(who) + ": vector size " + std::to_string(x.size()) +
                                    " does not match system size " + std::to_string(p.system_size()));
    }
}

} // namespace

LinearSystem assemble_policy_system(const MixedProblem& problem, const Policy& policy)
{
    if (static_cast<Index>(policy.size()) != problem.num_points()) {
        throw std::invalid_argument("assemble_policy_system: policy size does not match the number of quadrature points");
    }
    const Mesh& mesh = problem.mesh();
    const int nlw = problem.w_space()->dofs_per_element();
    const int nlu = problem.u_space()->dofs_per_element();
    const int nloc = 2 * nlw + nlu;
    const int nqe = problem.points_per_element();
    const Scalar s1 = problem.sigma1();
    const Scalar s2 = problem.sigma2();
    const auto& m_space = problem.m_space();

    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(mesh.num_elements()) * nloc * (nloc + 2 * nlu));
    VectorX rhs = VectorX::Zero(problem.system_size());
    LocalBasis lb;
    lb.resize(nloc);
    VectorX ell(nloc);
    MatrixX kl(nloc, nloc);
    VectorX rl(nloc);
    MatrixX bl(nloc, nlu);
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        kl.setZero();
        rl.setZero();
        bl.setZero();
        for (int k = 0; k < nqe; ++k) {
            const Index q = e * nqe + k;
            const Scalar wt = problem.qp_weight(q);
            fill_local_basis(problem, q, lb);
            const std::uint32_t a = policy[static_cast<std::size_t>(q)];
            const auto& table = problem.coefficients(q);
            if (a >= table.size()) throw std::invalid_argument("assemble_policy_system: control index out of range");
            const ScaledCoefficients& sc = table[a];
            fill_operator_row(problem, q, sc, lb, ell);
            kl.noalias() += wt * (lb.l_lambda * ell.transpose() + s1 * lb.rot * lb.rot.transpose() +
                                  s2 * lb.gap.transpose() * lb.gap);
            rl += (wt * sc.f) * lb.l_lambda;
            if (m_space) bl.noalias() += wt * lb.gap.transpose() * problem.u_grads(q);
        }
        const auto dofs = local_dofs(problem, e);
        for (int i = 0; i < nloc; ++i) {
            rhs(dofs[static_cast<std::size_t>(i)]) += rl(i);
            for (int j = 0; j < nloc; ++j) trips.emplace_back(dofs[static_cast<std::size_t>(i)], dofs[static_cast<std::size_t>(j)], kl(i, j));
        }
        if (m_space) {
            for (int i = 0; i < nloc; ++i) {
                for (int j = 0; j < nlu; ++j) {
                    const Index md = problem.m_offset() + m_space->dof(e, j);
                    trips.emplace_back(dofs[static_cast<std::size_t>(i)], md, bl(i, j));
                    trips.emplace_back(md, dofs[static_cast<std::size_t>(i)], bl(i, j));
                }
            }
        }
    }
    // Zero-mean constraints with Lagrange multipliers.
    const VectorX iw = basis_integrals(*problem.w_space(), problem.options().quad_order);
    const Index nw = problem.w_space()->num_dofs();
    for (int c = 0; c < 2; ++c) {
        for (Index i = 0; i < nw; ++i) {
            trips.emplace_back(c * nw + i, problem.mu_offset() + c, iw(i));
            trips.emplace_back(problem.mu_offset() + c, c * nw + i, iw(i));
        }
    }
    if (m_space) {
        const VectorX im = basis_integrals(*m_space, problem.options().quad_order);
        for (Index i = 0; i < m_space->num_dofs(); ++i) {
            trips.emplace_back(problem.m_offset() + i, problem.mu_offset() + 2, im(i));
            trips.emplace_back(problem.mu_offset() + 2, problem.m_offset() + i, im(i));
        }
    }
    LinearSystem sys;
    sys.matrix.resize(problem.system_size(), problem.system_size());
    sys.matrix.setFromTriplets(trips.begin(), trips.end());
    sys.matrix.makeCompressed();
    sys.rhs = std::move(rhs);
    return sys;
}

Policy greedy_policy(const MixedProblem& problem, const VectorX& x)
{
    check_size(problem, x, "greedy_policy");
    Policy policy(static_cast<std::size_t>(problem.num_points()));
    const int nqe = problem.points_per_element();
    for (Index e = 0; e < problem.mesh().num_elements(); ++e) {
        for (int k = 0; k < nqe; ++k) {
            const Index q = e * nqe + k;
            const PointFields f = point_fields(problem, x, e, q);
            policy[static_cast<std::size_t>(q)] =
                static_cast<std::uint32_t>(bellman_max(problem.coefficients(q), f.dw, f.grad_u, f.u).index);
        }
    }
    return policy;
}

VectorX residual_vector(const MixedProblem& problem, const VectorX& x, const Policy* frozen)
{
    check_size(problem, x, "residual_vector");
    const Mesh& mesh = problem.mesh();
    const int nlw = problem.w_space()->dofs_per_element();
    const int nlu = problem.u_space()->dofs_per_element();
    const int nloc = 2 * nlw + nlu;
    const int nqe = problem.points_per_element();
    const Scalar s1 = problem.sigma1();
    const Scalar s2 = problem.sigma2();
    const auto& m_space = problem.m_space();

    VectorX r = VectorX::Zero(problem.system_size());
    LocalBasis lb;
    lb.resize(nloc);
    VectorX rl(nloc);
    VectorX rm(nlu);
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        rl.setZero();
        rm.setZero();
        for (int k = 0; k < nqe; ++k) {
            const Index q = e * nqe + k;
            const Scalar wt = problem.qp_weight(q);
            fill_local_basis(problem, q, lb);
            const PointFields f = point_fields(problem, x, e, q);
            const auto& table = problem.coefficients(q);
            const Scalar fval = frozen ? table[(*frozen)[static_cast<std::size_t>(q)]].residual(f.dw, f.grad_u, f.u)
                                       : bellman_max(table, f.dw, f.grad_u, f.u).value;
            const Scalar rot = f.dw(0, 1) - f.dw(1, 0);
            const Vec2 gap = f.grad_u - f.w;
            rl += wt * (fval * lb.l_lambda + s1 * rot * lb.rot + s2 * lb.gap.transpose() * gap);
            if (m_space) {
                rl += wt * lb.gap.transpose() * f.grad_m;
                rm += wt * problem.u_grads(q).transpose() * gap;
            }
        }
        const auto dofs = local_dofs(problem, e);
        for (int i = 0; i < nloc; ++i) r(dofs[static_cast<std::size_t>(i)]) += rl(i);
        if (m_space) {
            for (int j = 0; j < nlu; ++j) r(problem.m_offset() + m_space->dof(e, j)) += rm(j);
        }
    }
    const VectorX iw = basis_integrals(*problem.w_space(), problem.options().quad_order);
    const Index nw = problem.w_space()->num_dofs();
    for (int c = 0; c < 2; ++c) {
        const Scalar mu = x(problem.mu_offset() + c);
        r.segment(c * nw, nw) += mu * iw;
        r(problem.mu_offset() + c) = iw.dot(x.segment(c * nw, nw));
    }
    if (m_space) {
        const VectorX im = basis_integrals(*m_space, problem.options().quad_order);
        const Index nm = m_space->num_dofs();
        r.segment(problem.m_offset(), nm) += x(problem.mu_offset() + 2) * im;
        r(problem.mu_offset() + 2) = im.dot(x.segment(problem.m_offset(), nm));
    }
    return r;
}

namespace {

/// SPD factorization of a semidefinite block whose kernel is the constants, made definite by pinning dof 0.
std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> pinned_factor(const SparseMatrix& k)
{
    std::vector<Triplet> trips;
    for (int col = 0; col < k.outerSize(); ++col) {
        for (SparseMatrix::InnerIterator it(k, col); it; ++it) {
            if (it.row() != 0 && it.col() != 0) trips.emplace_back(it.row(), it.col(), it.value());
        }
    }
    trips.emplace_back(0, 0, 1.0);
    SparseMatrix m(k.rows(), k.cols());
    m.setFromTriplets(trips.begin(), trips.end());
    auto f = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>(m);
    if (f->info() != Eigen::Success) throw SolverError("dual_norm: Gram block factorization failed");
    return f;
}

/// r(z) maximized over z modulo constants: remove the constant component, solve, pair.
Scalar seminorm_dual_sq(const Eigen::SimplicialLDLT<SparseMatrix>& f, const VectorX& weights, const VectorX& r)
{
    VectorX rt = r - (r.sum() / weights.sum()) * weights;
    rt(0) = 0;
    const VectorX z = f.solve(rt);
    return rt.dot(z);
}

} // namespace

struct MixedProblem::GramFactors {
    std::shared_ptr<Eigen::SimplicialLDLT<SparseMatrix>> w, u, m;
    VectorX iw, im;
};

Scalar MixedProblem::dual_norm(const VectorX& residual) const
{
    if (residual.size() != system_size()) throw std::invalid_argument("dual_norm: residual has the wrong size");
    if (!gram_) {
        const int order = options_.quad_order;
        auto g = std::make_shared<GramFactors>();
        g->w = pinned_factor(assemble_stiffness(*w_space_, order));
        g->iw = basis_integrals(*w_space_, order);
        const SparseMatrix ku = 2.0 * lambda() * assemble_stiffness(*u_space_, order) +
                                lambda() * lambda() * assemble_mass(*u_space_, order);
        g->u = std::make_shared<Eigen::SimplicialLDLT<SparseMatrix>>(ku);
        if (g->u->info() != Eigen::Success) throw SolverError("dual_norm: Gram block factorization failed");
        if (m_space_) {
            g->m = pinned_factor(assemble_stiffness(*m_space_, order));
            g->im = basis_integrals(*m_space_, order);
        }
        gram_ = std::move(g);
    }
    const Index nw = w_space_->num_dofs();
    Scalar sq = 0;
    for (int c = 0; c < 2; ++c) sq += seminorm_dual_sq(*gram_->w, gram_->iw, residual.segment(c * nw, nw));
    const VectorX ru = residual.segment(u_offset(), u_space_->size());
    sq += ru.dot(gram_->u->solve(ru));
    if (m_space_) sq += seminorm_dual_sq(*gram_->m, gram_->im, residual.segment(m_offset(), m_space_->size()));
    sq += residual.tail(num_multipliers()).squaredNorm();
    return std::sqrt(std::max(sq, 0.0));
}

VectorX pack(const MixedProblem& problem, const MixedState& state)
{
    VectorX x = VectorX::Zero(problem.system_size());
    x.segment(problem.w_offset(), problem.w_space()->size()) = state.w.coeffs;
    x.segment(problem.u_offset(), problem.u_space()->size()) = state.u.coeffs;
    if (problem.m_space() && state.m.space) x.segment(problem.m_offset(), problem.m_space()->size()) = state.m.coeffs;
    if (state.multipliers.size() == problem.num_multipliers()) x.tail(problem.num_multipliers()) = state.multipliers;
    return x;
}

MixedState unpack(const MixedProblem& problem, const VectorX& x)
{
    check_size(problem, x, "unpack");
    MixedState s;
    s.w = FeFunction(problem.w_space(), x.segment(problem.w_offset(), problem.w_space()->size()));
    s.u = FeFunction(problem.u_space(), x.segment(problem.u_offset(), problem.u_space()->size()));
    if (problem.m_space()) s.m = FeFunction(problem.m_space(), x.segment(problem.m_offset(), problem.m_space()->size()));
    s.multipliers = x.tail(problem.num_multipliers());
    return s;
}

Scalar nonlinear_residual(const MixedProblem& problem, const VectorX& x)
{
    return problem.dual_norm(residual_vector(problem, x));
}

Scalar nonlinear_residual(const MixedProblem& problem, const MixedState& state)
{
    return nonlinear_residual(problem, pack(problem, state));
}

std::vector<Scalar> bellman_field(const MixedProblem& problem, const FeFunction& w, const FeFunction& u, Policy* argmax)
{
    const QpField fw = eval_at_qp(w, problem.options().quad_order);
    const QpField fu = eval_at_qp(u, problem.options().quad_order);
    if (static_cast<Index>(fw.samples.size()) != problem.num_points()) {
        throw std::invalid_argument("bellman_field: functions do not live on the problem mesh");
    }
    std::vector<Scalar> out(fw.samples.size());
    if (argmax) argmax->resize(out.size());
    for (std::size_t q = 0; q < out.size(); ++q) {
        const BellmanValue bv = bellman_max(problem.coefficients(static_cast<Index>(q)), fw.samples[q].grad,
                                            fu.samples[q].gradient(), fu.samples[q].value(0));
        out[q] = bv.value;
        if (argmax) (*argmax)[q] = static_cast<std::uint32_t>(bv.index);
    }
    return out;
}

Scalar semilinear_form(const MixedProblem& problem, const FeFunction& w, const FeFunction& u, const FeFunction& z,
                       const FeFunction& v)
{
    const int order = problem.options().quad_order;
    const std::vector<Scalar> fg = bellman_field(problem, w, u);
    const QpField fw = eval_at_qp(w, order);
    const QpField fu = eval_at_qp(u, order);
    const QpField fz = eval_at_qp(z, order);
    const QpField fv = eval_at_qp(v, order);
    const Scalar lambda = problem.lambda();
    Scalar sum = 0;
    for (std::size_t q = 0; q < fg.size(); ++q) {
        const QpSample& sw = fw.samples[q];
        const QpSample& su = fu.samples[q];
        const QpSample& sz = fz.samples[q];
        const QpSample& sv = fv.samples[q];
        const Scalar ll = l_lambda(sz.div(), sv.value(0), lambda);
        const Vec2 gap_x = su.gradient() - sw.value;
        const Vec2 gap_y = sv.gradient() - sz.value;
        sum += sw.weight * (fg[q] * ll + problem.sigma1() * sw.rot() * sz.rot() + problem.sigma2() * gap_x.dot(gap_y));
    }
    return sum;
}

Scalar b_form(const FeFunction& m, const FeFunction& w, const FeFunction& u, int quad_order)
{
    const QpField fm = eval_at_qp(m, quad_order);
    const QpField fw = eval_at_qp(w, quad_order);
    const QpField fu = eval_at_qp(u, quad_order);
    Scalar sum = 0;
    for (std::size_t q = 0; q < fm.samples.size(); ++q) {
        sum += fm.samples[q].weight * fm.samples[q].gradient().dot(fu.samples[q].gradient() - fw.samples[q].value);
    }
    return sum;
}

MixedState howard_solve(const MixedProblem& problem, const HowardOptions& options)
{
    if (!(options.tol > 0)) throw std::invalid_argument("howard_solve: tol must be positive");
    if (options.max_iter < 1) throw std::invalid_argument("howard_solve: max_iter must be >= 1");

    Eigen::SparseLU<SparseMatrix> lu;
    bool analyzed = false;
    // Testing with constant w-fields already forces zero mean of w, so the w multipliers vanish at the
    // solution. Dropping their dense rows keeps the factorization sparse.
    const Index n = problem.system_size();
    std::vector<Index> keep;
    keep.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        if (i != problem.mu_offset() && i != problem.mu_offset() + 1) keep.push_back(i);
    }
    std::vector<Index> slot(static_cast<std::size_t>(n), -1);
    for (std::size_t k = 0; k < keep.size(); ++k) slot[static_cast<std::size_t>(keep[k])] = static_cast<Index>(k);
    const Index nr = static_cast<Index>(keep.size());
    auto restrict_vec = [&](const VectorX& v) {
        VectorX out(nr);
        for (Index k = 0; k < nr; ++k) out(k) = v(keep[static_cast<std::size_t>(k)]);
        return out;
    };
    auto extend_vec = [&](const VectorX& v) {
        VectorX out = VectorX::Zero(n);
        for (Index k = 0; k < nr; ++k) out(keep[static_cast<std::size_t>(k)]) = v(k);
        return out;
    };
    SparseMatrix current;
    auto factorize = [&](const Policy& policy) {
        const LinearSystem sys = assemble_policy_system(problem, policy);
        std::vector<Triplet> trips;
        trips.reserve(static_cast<std::size_t>(sys.matrix.nonZeros()));
        for (int col = 0; col < sys.matrix.outerSize(); ++col) {
            for (SparseMatrix::InnerIterator it(sys.matrix, col); it; ++it) {
                const Index r = slot[static_cast<std::size_t>(it.row())];
                const Index c = slot[static_cast<std::size_t>(it.col())];
                if (r >= 0 && c >= 0) trips.emplace_back(r, c, it.value());
            }
        }
        LinearSystem red;
        red.matrix.resize(nr, nr);
        red.matrix.setFromTriplets(trips.begin(), trips.end());
        red.matrix.makeCompressed();
        red.rhs = restrict_vec(sys.rhs);
        current = red.matrix;
        if (!analyzed) {
            lu.analyzePattern(red.matrix);
            analyzed = true;
        }
        lu.factorize(red.matrix);
        if (lu.info() != Eigen::Success) throw SolverError("howard_solve: frozen-policy factorization failed");
        return red;
    };
    // Solve K d = r on the reduced system with one step of iterative refinement.
    auto solve = [&](const SparseMatrix& k, const VectorX& r_full) {
        const VectorX r = restrict_vec(r_full);
        VectorX d = lu.solve(r);
        d += lu.solve(VectorX(r - k * d));
        return extend_vec(d);
    };

    Policy policy = options.initial_policy.value_or(problem.constant_policy(0));
    if (static_cast<Index>(policy.size()) != problem.num_points()) {
        throw std::invalid_argument("howard_solve: initial policy has the wrong size");
    }
    const LinearSystem first = factorize(policy);
    VectorX x = solve(first.matrix, extend_vec(first.rhs));
    int iterations = 1;
    VectorX r = residual_vector(problem, x);
    Scalar res = problem.dual_norm(r);
    std::vector<Scalar> history{res};
    bool converged = res <= options.tol;
    std::string message;

    while (!converged && iterations < options.max_iter) {
        // Newton step for the greedy policy at x: its frozen residual equals the true residual r.
        const Policy next = greedy_policy(problem, x);
        const LinearSystem sys = factorize(next);
        const VectorX step = solve(sys.matrix, r);
        ++iterations;
        Scalar t = 1.0;
        VectorX x_try = x - step;
        VectorX r_try = residual_vector(problem, x_try);
        Scalar res_try = problem.dual_norm(r_try);
        int halvings = 0;
        while (!(res_try < res) && halvings < options.max_halvings) {
            t *= 0.5;
            x_try = x - t * step;
            r_try = residual_vector(problem, x_try);
            res_try = problem.dual_norm(r_try);
            ++halvings;
        }
        if (!(res_try < res)) {
            std::ostringstream os;
            os << "residual stagnated at " << res << " after " << iterations << " iterations";
            message = os.str();
            break;
        }
        x = std::move(x_try);
        r = std::move(r_try);
        res = res_try;
        policy = next;
        history.push_back(res);
        converged = res <= options.tol;
    }
    // Polish: extra Newton steps with the current factorization while the policy is unchanged and the
    // residual keeps dropping. Removes round-off left over from the first iterate below tol.
    for (int k = 0; converged && k < options.polish_steps; ++k) {
        // The factorization on hand belongs to `policy` (the last accepted step).
        if (greedy_policy(problem, x) != policy) break;
        const VectorX x_try = x - solve(current, r);
        VectorX r_try = residual_vector(problem, x_try);
        const Scalar res_try = problem.dual_norm(r_try);
        if (!(res_try < 0.5 * res)) break;
        x = x_try;
        r = std::move(r_try);
        res = res_try;
        history.push_back(res);
    }
    if (!converged && message.empty()) {
        std::ostringstream os;
        os << "no convergence within " << options.max_iter << " iterations (residual " << res << ")";
        message = os.str();
    }

    MixedState state = unpack(problem, x);
    state.policy = greedy_policy(problem, x);
    state.iterations = iterations;
    state.residual_history = std::move(history);
    state.converged = converged;
    state.message = converged ? "converged" : message;
    return state;
}

} // namespace hjb
