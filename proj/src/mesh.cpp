#include "hjb/mesh.hpp"

#include <Eigen/LU>

#include <cmath>
#include <stdexcept>
#include <string>

namespace hjb {

Mesh::Mesh(int n, MeshFlavor flavor) : n_(n), flavor_(flavor)
{
    if (n < 1) {
        throw std::invalid_argument("build_uniform_mesh: N must be >= 1, got " + std::to_string(n));
    }
    const int np = n + 1;
    vertices_.reserve(static_cast<std::size_t>(np * np));
    for (int j = 0; j < np; ++j) {
        for (int i = 0; i < np; ++i) {
            vertices_.emplace_back(static_cast<Scalar>(i) / n, static_cast<Scalar>(j) / n);
        }
    }
    auto id = [np](int i, int j) { return static_cast<Index>(j * np + i); };

    elements_.reserve(static_cast<std::size_t>(2 * n * n));
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            elements_.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            elements_.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    }

    cache_.resize(elements_.size());
    for (std::size_t e = 0; e < elements_.size(); ++e) {
        const Vec2& p0 = vertices_[static_cast<std::size_t>(elements_[e][0])];
        const Vec2& p1 = vertices_[static_cast<std::size_t>(elements_[e][1])];
        const Vec2& p2 = vertices_[static_cast<std::size_t>(elements_[e][2])];
        Mat2 jac;
        jac.col(0) = p1 - p0;
        jac.col(1) = p2 - p0;
        const Scalar det = jac.determinant();
        ElementGeometry& g = cache_[e];
        g.area = 0.5 * det;
        g.barycenter = (p0 + p1 + p2) / 3.0;
        // grad(lambda_1), grad(lambda_2) are the rows of jac^{-1}.
        const Mat2 inv = jac.inverse();
        g.grad_lambda.col(1) = inv.row(0).transpose();
        g.grad_lambda.col(2) = inv.row(1).transpose();
        g.grad_lambda.col(0) = -g.grad_lambda.col(1) - g.grad_lambda.col(2);
    }

    boundary_flag_.assign(vertices_.size(), 0);
    if (flavor_ == MeshFlavor::dirichlet) {
        for (int j = 0; j < np; ++j) {
            for (int i = 0; i < np; ++i) {
                if (i == 0 || j == 0 || i == n || j == n) {
                    boundary_.push_back(id(i, j));
                    boundary_flag_[static_cast<std::size_t>(id(i, j))] = 1;
                }
            }
        }
    }
}

Scalar Mesh::h() const { return std::sqrt(2.0) / n_; }

bool Mesh::is_boundary_vertex(Index v) const
{
    return boundary_flag_.at(static_cast<std::size_t>(v)) != 0;
}

std::array<int, 2> Mesh::grid_coords(Index v) const
{
    const int np = n_ + 1;
    return {static_cast<int>(v % np), static_cast<int>(v / np)};
}

Vec2 Mesh::map_to_physical(Index e, const Vec2& ref) const
{
    const auto& t = element(e);
    const Vec2& p0 = vertex(t[0]);
    return p0 + ref(0) * (vertex(t[1]) - p0) + ref(1) * (vertex(t[2]) - p0);
}

Mesh build_uniform_mesh(int n, MeshFlavor flavor) { return Mesh(n, flavor); }

Vec2 barycenter(const Mesh& mesh, Index e)
{
    if (e < 0 || e >= mesh.num_elements()) {
        throw std::out_of_range("barycenter: element index " + std::to_string(e) + " out of range");
    }
    const auto& t = mesh.element(e);
    return (mesh.vertex(t[0]) + mesh.vertex(t[1]) + mesh.vertex(t[2])) / 3.0;
}

} // namespace hjb
