#ifndef HJB_TYPES_HPP
#define HJB_TYPES_HPP

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hjb {

using Scalar = double;
using Index = std::ptrdiff_t;

template <typename T = Scalar>
using Vec2T = Eigen::Matrix<T, 2, 1>;
template <typename T = Scalar>
using Mat2T = Eigen::Matrix<T, 2, 2>;

using Vec2 = Vec2T<>;
using Mat2 = Mat2T<>;
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using SparseMatrix = Eigen::SparseMatrix<Scalar>;
using Triplet = Eigen::Triplet<Scalar>;

/// Frobenius product A:B.
template <typename DerivedA, typename DerivedB>
auto frobenius(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b)
{
    return a.cwiseProduct(b).sum();
}

template <typename Derived>
auto symmetric_part(const Eigen::MatrixBase<Derived>& m)
{
    return (0.5 * (m + m.transpose())).eval();
}

/// Thrown when a numerical procedure fails to meet its contract (nonconvergence, singular solve).
class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace hjb

#endif
