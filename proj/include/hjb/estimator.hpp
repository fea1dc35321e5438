#ifndef HJB_ESTIMATOR_HPP
#define HJB_ESTIMATOR_HPP

#include "hjb/mixed.hpp"

#include <vector>

namespace hjb {

struct LocalIndicator {
    Scalar bellman = 0; // ||F_gamma||^2 on the element
    Scalar rot = 0;     // sigma1 ||rot w_h||^2
    Scalar gap = 0;     // sigma2 ||w_h - grad u_h||^2

    Scalar total() const { return bellman + rot + gap; }
};

/// eta = ||F_gamma[(w_h,u_h)]||^2 + sigma1 ||rot w_h||^2 + sigma2 ||w_h - grad u_h||^2.
struct EstimatorReport {
    Scalar eta = 0;
    Scalar term_F = 0;
    Scalar term_rot = 0;
    Scalar term_gap = 0;
    std::vector<LocalIndicator> local;
    Scalar delta = 0;
    Scalar lambda = 0;

    Scalar sqrt_eta() const;
    /// Upper bound for |||error|||^2.
    Scalar reliability_bound() const;
    /// 1/2 term_F + term_rot + term_gap, bounded by efficiency_constant() |||error|||^2.
    Scalar efficiency_lhs() const;
    Scalar efficiency_constant() const;
};

EstimatorReport estimate(const MixedProblem& problem, const MixedState& state, int quad_order = default_quad_order);

} // namespace hjb

#endif
