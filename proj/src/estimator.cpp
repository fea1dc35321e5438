#include "hjb/estimator.hpp"

#include <cmath>

namespace hjb {

Scalar EstimatorReport::sqrt_eta() const { return std::sqrt(eta); }

Scalar EstimatorReport::reliability_bound() const
{
    const Scalar cm = stability_constants(delta, lambda).monotonicity;
    return 2.0 / cm * (term_F / cm + term_rot + term_gap);
}

Scalar EstimatorReport::efficiency_lhs() const { return 0.5 * term_F + term_rot + term_gap; }

Scalar EstimatorReport::efficiency_constant() const
{
    return stability_constants(delta, lambda).lipschitz + 0.5 * (1.0 - delta);
}

EstimatorReport estimate(const MixedProblem& problem, const MixedState& state, int quad_order)
{
    const Mesh& mesh = problem.mesh();
    const QpField fw = eval_at_qp(state.w, quad_order);
    const QpField fu = eval_at_qp(state.u, quad_order);
    const bool reuse = quad_order == problem.options().quad_order;
    const Vec2 x = problem.options().frozen_x.value_or(Vec2::Zero());

    EstimatorReport rep;
    rep.delta = problem.delta();
    rep.lambda = problem.lambda();
    rep.local.resize(static_cast<std::size_t>(mesh.num_elements()));
    const int nqe = fw.points_per_element;
    for (Index e = 0; e < mesh.num_elements(); ++e) {
        LocalIndicator& li = rep.local[static_cast<std::size_t>(e)];
        for (int k = 0; k < nqe; ++k) {
            const QpSample& sw = fw.at(e, k);
            const QpSample& su = fu.at(e, k);
            const Index q = e * nqe + k;
            const Scalar fv = reuse ? bellman_max(problem.coefficients(q), sw.grad, su.gradient(), su.value(0)).value
                                    : bellman_max(problem.family(), problem.certificate(), x, sw.point, sw.grad,
                                                  su.gradient(), su.value(0))
                                          .value;
            li.bellman += sw.weight * fv * fv;
            li.rot += sw.weight * problem.sigma1() * sw.rot() * sw.rot();
            li.gap += sw.weight * problem.sigma2() * (sw.value - su.gradient()).squaredNorm();
        }
        rep.term_F += li.bellman;
        rep.term_rot += li.rot;
        rep.term_gap += li.gap;
    }
    rep.eta = rep.term_F + rep.term_rot + rep.term_gap;
    return rep;
}

} // namespace hjb
