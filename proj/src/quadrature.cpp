#include "hjb/quadrature.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hjb {

namespace {

void add_s3(TriangleRule& rule, Scalar w)
{
    rule.points.emplace_back(1.0 / 3.0, 1.0 / 3.0);
    rule.weights.push_back(w);
}

// Three permutations of (a, a, 1-2a).
void add_s21(TriangleRule& rule, Scalar a, Scalar w)
{
    const Scalar b = 1.0 - 2.0 * a;
    rule.points.emplace_back(a, a);
    rule.points.emplace_back(a, b);
    rule.points.emplace_back(b, a);
    for (int k = 0; k < 3; ++k) rule.weights.push_back(w);
}

// Conical product (Duffy) rule: exact for degree <= 2n-2 on the triangle.
TriangleRule collapsed_gauss(int order)
{
    const int n = (order + 3) / 2;
    const LineRule g = gauss_legendre(n);
    TriangleRule rule;
    rule.degree = 2 * n - 2;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const Scalar s = g.points[static_cast<std::size_t>(i)];
            const Scalar t = g.points[static_cast<std::size_t>(j)];
            // (s, t) in unit square -> (s, t (1 - s)) in the triangle; jacobian (1 - s).
            rule.points.emplace_back(s, t * (1.0 - s));
            rule.weights.push_back(2.0 * g.weights[static_cast<std::size_t>(i)] *
                                   g.weights[static_cast<std::size_t>(j)] * (1.0 - s));
        }
    }
    return rule;
}

} // namespace

TriangleRule triangle_rule(int order)
{
    if (order < 1) {
        throw std::invalid_argument("triangle_rule: order must be >= 1, got " + std::to_string(order));
    }
    TriangleRule rule;
    if (order == 1) {
        add_s3(rule, 1.0);
        rule.degree = 1;
    } else if (order == 2) {
        add_s21(rule, 1.0 / 6.0, 1.0 / 3.0);
        rule.degree = 2;
    } else if (order <= 4) {
        // Dunavant, 6 points.
        add_s21(rule, 0.445948490915965, 0.223381589678011);
        add_s21(rule, 0.091576213509771, 0.109951743655322);
        rule.degree = 4;
    } else if (order == 5) {
        add_s3(rule, 0.225);
        add_s21(rule, 0.470142064105115, 0.132394152788506);
        add_s21(rule, 0.101286507323456, 0.125939180544827);
        rule.degree = 5;
    } else {
        rule = collapsed_gauss(order);
    }
    return rule;
}

LineRule gauss_legendre(int npoints)
{
    if (npoints < 1) {
        throw std::invalid_argument("gauss_legendre: need at least one point");
    }
    const auto n = static_cast<std::size_t>(npoints);
    LineRule rule;
    rule.points.resize(n);
    rule.weights.resize(n);
    for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
        // Newton iteration on P_n from the Chebyshev-like initial guess.
        Scalar x = std::cos(std::numbers::pi * (static_cast<Scalar>(i) + 0.75) / (static_cast<Scalar>(n) + 0.5));
        Scalar dp = 0;
        for (int it = 0; it < 100; ++it) {
            Scalar p0 = 1.0;
            Scalar p1 = x;
            for (std::size_t k = 2; k <= n; ++k) {
                const Scalar p2 = ((2.0 * static_cast<Scalar>(k) - 1.0) * x * p1 - (static_cast<Scalar>(k) - 1.0) * p0) /
                                  static_cast<Scalar>(k);
                p0 = p1;
                p1 = p2;
            }
            dp = static_cast<Scalar>(n) * (x * p1 - p0) / (x * x - 1.0);
            const Scalar dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        const Scalar w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1, 1] -> [0, 1].
        rule.points[i] = 0.5 * (1.0 - x);
        rule.points[n - 1 - i] = 0.5 * (1.0 + x);
        rule.weights[i] = 0.5 * w;
        rule.weights[n - 1 - i] = 0.5 * w;
    }
    return rule;
}

} // namespace hjb
