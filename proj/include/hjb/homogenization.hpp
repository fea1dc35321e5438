#ifndef HJB_HOMOGENIZATION_HPP
#define HJB_HOMOGENIZATION_HPP

#include "hjb/estimator.hpp"

#include <mutex>
#include <string>
#include <unordered_map>

namespace hjb {

/// Arguments (s, p, R, sigma) of one approximate-corrector cell problem.
struct CellProblemSpec {
    Vec2 s = Vec2(0.5, 0.5);
    Vec2 p = Vec2::Zero();
    Mat2 R = Mat2::Zero();
    Scalar sigma = 0.01;
    CoefficientFamily family;
    CordesCertificate certificate;
};

/// Y-periodic family y -> (A(s,y,a), 0, sigma, A:R + b.p + f) with certificate (sigma*lambda, delta).
CoefficientFamily freeze_cell_family(const CellProblemSpec& spec);
CordesCertificate frozen_certificate(const CellProblemSpec& spec);

struct EffectiveSample {
    Scalar value = 0; // -sigma * int_Y v_h
    MixedState corrector;
    EstimatorReport eta;
    CellProblemSpec spec;
    int mesh_n = 0;
};

/// Exact integral of a P1 (or P2) periodic function from nodal values.
Scalar mean_value(const FeFunction& v);

EffectiveSample solve_cell(const CellProblemSpec& spec, int n, Scalar tol = 1e-10);

/// Thread-safe memo of cell-problem values keyed by rounded (family, s, p, R, sigma, N, tol).
class CellCache {
public:
    Scalar value(const CellProblemSpec& spec, int n, Scalar tol = 1e-10);
    std::size_t size() const;
    std::size_t hits() const;
    void clear();

    static CellCache& global();

private:
    mutable std::mutex mutex_;
    std::unordered_map<std::string, Scalar> map_;
    std::size_t hits_ = 0;
};

/// Harmonic means (int_Y 1/(1 + alpha a1))^-1 of the benchmark for alpha = 0, 1.
struct HarmonicMeans {
    Scalar h0 = 1;
    Scalar h1 = 1;
};
const HarmonicMeans& benchmark_harmonic_means();

/// Closed-form effective Hamiltonian of the benchmark families.
Scalar exact_H(const Mat2& R, const std::string& family = "fo-benchmark");
/// dH/dR on the active branch (ties: first branch).
Mat2 exact_H_gradient(const Mat2& R, const std::string& family = "fo-benchmark");
bool has_exact_H(const std::string& family);

} // namespace hjb

#endif
