#pragma once

// Areal adjacency structures and the intrinsic GMRF precisions built on them.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace gcspatial {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Centroids = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct RegionGraph {
  std::size_t n = 0;
  /// Sorted, duplicate-free, symmetric, no self loops.
  std::vector<std::vector<std::size_t>> neighbors;
  std::optional<Centroids> centroids;

  RegionGraph() = default;
  explicit RegionGraph(std::size_t size) : n(size), neighbors(size) {}

  /// Builds from an undirected edge list; duplicate edges are merged.
  static RegionGraph from_edges(std::size_t n,
                                const std::vector<std::pair<std::size_t, std::size_t>>& edges);

  std::size_t degree(std::size_t i) const { return neighbors[i].size(); }
  std::size_t edge_count() const;
  std::vector<std::pair<std::size_t, std::size_t>> edges() const;

  /// Connected components, each a sorted list of region indices.
  std::vector<std::vector<std::size_t>> components() const;

  /// Throws InputError on asymmetry, self loops or out-of-range indices.
  void validate() const;
};

/// Symmetric sparse precision with linear constraints C x = 0 (one row per
/// constraint) spanning its null space when intrinsic.
struct SparsePrecision {
  SparseMatrix matrix;
  Eigen::MatrixXd constraints;  // k x dim
  int rank_deficiency = 0;

  Eigen::Index dim() const { return matrix.rows(); }
};

/// Cell assignment of regions on an m_rows x m_cols lattice.
/// Cell index = row * m_cols + col; x maps to columns and y to rows.
struct LatticeMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> cell_of_region;
  double cell_width = 1.0;
  double cell_height = 1.0;

  std::size_t cell_count() const { return rows * cols; }
  std::size_t row_of(std::size_t cell) const { return cell / cols; }
  std::size_t col_of(std::size_t cell) const { return cell % cols; }
};

/// ICAR precision A = D - W. Throws GraphError-style InputError naming the
/// components if the graph is disconnected.
SparsePrecision icar_precision(const RegionGraph& graph);

/// Each node i links to its k_per_node[i] nearest centroids (ties broken by
/// smaller index); the result is the union of those directed choices.
RegionGraph knn_graph(const Centroids& centroids, const std::vector<std::size_t>& k_per_node);

/// Second-order random walk on a lattice: Q = D_rr'D_rr + D_cc'D_cc + 2 D_rc'D_rc
/// built from all in-domain second differences. Interior stencil 20, -8, 2, 1;
/// null space spanned by the constant and both coordinate ramps.
SparsePrecision rw2d_precision(const LatticeMap& lattice);

/// Affine rescale of the centroid bounding box onto the grid.
LatticeMap snap_to_lattice(const Centroids& centroids, std::size_t rows, std::size_t cols);

/// Rook-adjacency grid of rows x cols regions with unit-spaced centroids.
RegionGraph rook_lattice_graph(std::size_t rows, std::size_t cols);

/// n x cell_count incidence matrix mapping regions to their cells.
SparseMatrix lattice_incidence(const LatticeMap& lattice);

/// Dense view, mostly for tests and small problems.
Eigen::MatrixXd to_dense(const SparseMatrix& m);

}  // namespace gcspatial
