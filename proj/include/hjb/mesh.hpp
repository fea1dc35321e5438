#ifndef HJB_MESH_HPP
#define HJB_MESH_HPP

#include "hjb/types.hpp"

#include <array>
#include <vector>

namespace hjb {

enum class MeshFlavor { periodic, dirichlet };

/// Per-element geometry, computed once at mesh construction.
struct ElementGeometry {
    Scalar area = 0;
    Vec2 barycenter = Vec2::Zero();
    /// Column k holds the (constant) gradient of the k-th barycentric coordinate.
    Eigen::Matrix<Scalar, 2, 3> grad_lambda = Eigen::Matrix<Scalar, 2, 3>::Zero();
};

/// Structured criss-cross triangulation of the unit square.
///
/// Every grid square [i/N,(i+1)/N]x[j/N,(j+1)/N] is split along its
/// positive-slope diagonal into two counterclockwise triangles. Vertices
/// are numbered lexicographically, id = j*(N+1) + i, for both flavors;
/// periodic identification of opposite faces happens in the function space.
class Mesh {
public:
    Mesh(int n, MeshFlavor flavor);

    int subdivisions() const { return n_; }
    MeshFlavor flavor() const { return flavor_; }
    /// Element diameter, sqrt(2)/N.
    Scalar h() const;

    Index num_vertices() const { return static_cast<Index>(vertices_.size()); }
    Index num_elements() const { return static_cast<Index>(elements_.size()); }

    const Vec2& vertex(Index v) const { return vertices_[static_cast<std::size_t>(v)]; }
    const std::vector<Vec2>& vertices() const { return vertices_; }
    const std::array<Index, 3>& element(Index e) const { return elements_[static_cast<std::size_t>(e)]; }
    const std::vector<std::array<Index, 3>>& elements() const { return elements_; }
    const ElementGeometry& geometry(Index e) const { return cache_[static_cast<std::size_t>(e)]; }

    /// Vertices on the boundary of the square (dirichlet flavor only; empty otherwise).
    const std::vector<Index>& boundary_vertices() const { return boundary_; }
    bool is_boundary_vertex(Index v) const;

    /// Grid coordinates (i, j) of a vertex.
    std::array<int, 2> grid_coords(Index v) const;

    /// Maps a reference point (barycentric coordinates l1, l2 of vertices 1, 2) to physical space.
    Vec2 map_to_physical(Index e, const Vec2& ref) const;

private:
    int n_;
    MeshFlavor flavor_;
    std::vector<Vec2> vertices_;
    std::vector<std::array<Index, 3>> elements_;
    std::vector<ElementGeometry> cache_;
    std::vector<Index> boundary_;
    std::vector<char> boundary_flag_;
};

Mesh build_uniform_mesh(int n, MeshFlavor flavor);

/// Arithmetic mean of the element's vertices.
Vec2 barycenter(const Mesh& mesh, Index e);

} // namespace hjb

#endif
