#ifndef HJB_QUADRATURE_HPP
#define HJB_QUADRATURE_HPP

#include "hjb/types.hpp"

#include <vector>

namespace hjb {

/// Quadrature rule on the reference triangle {(s,t): s,t >= 0, s+t <= 1}.
/// Points are the barycentric coordinates (lambda_1, lambda_2); weights sum to 1
/// so that integral over T = area(T) * sum_k w_k g(x_k).
struct TriangleRule {
    std::vector<Vec2> points;
    std::vector<Scalar> weights;
    int degree = 0;

    std::size_t size() const { return points.size(); }
};

/// Smallest built-in rule exact for polynomials of total degree <= order.
TriangleRule triangle_rule(int order);

/// Gauss-Legendre nodes and weights on [0, 1].
struct LineRule {
    std::vector<Scalar> points;
    std::vector<Scalar> weights;
};

LineRule gauss_legendre(int npoints);

} // namespace hjb

#endif
