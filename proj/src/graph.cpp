#include "gcspatial/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>

#include "gcspatial/error.hpp"

namespace gcspatial {

RegionGraph RegionGraph::from_edges(std::size_t n,
                                    const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  RegionGraph g(n);
  for (const auto& [i, j] : edges) {
    if (i >= n || j >= n) {
      std::ostringstream msg;
      msg << "edge (" << i << ", " << j << ") out of range for " << n << " regions";
      throw InputError(msg.str());
    }
    if (i == j) {
      throw InputError("self loop on region " + std::to_string(i));
    }
    g.neighbors[i].push_back(j);
    g.neighbors[j].push_back(i);
  }
  for (auto& nb : g.neighbors) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
  return g;
}

std::size_t RegionGraph::edge_count() const {
  std::size_t total = 0;
  for (const auto& nb : neighbors) total += nb.size();
  return total / 2;
}

std::vector<std::pair<std::size_t, std::size_t>> RegionGraph::edges() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : neighbors[i]) {
      if (i < j) out.emplace_back(i, j);
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> RegionGraph::components() const {
  std::vector<int> label(n, -1);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; ++start) {
    if (label[start] >= 0) continue;
    const int id = static_cast<int>(out.size());
    out.emplace_back();
    std::queue<std::size_t> frontier;
    frontier.push(start);
    label[start] = id;
    while (!frontier.empty()) {
      const auto v = frontier.front();
      frontier.pop();
      out.back().push_back(v);
      for (auto w : neighbors[v]) {
        if (label[w] < 0) {
          label[w] = id;
          frontier.push(w);
        }
      }
    }
    std::sort(out.back().begin(), out.back().end());
  }
  return out;
}

void RegionGraph::validate() const {
  if (neighbors.size() != n) throw InputError("neighbor list count differs from n");
  if (centroids && static_cast<std::size_t>(centroids->rows()) != n) {
    throw InputError("centroid count differs from region count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (auto j : neighbors[i]) {
      if (j >= n) throw InputError("neighbor index out of range at region " + std::to_string(i));
      if (j == i) throw InputError("self loop on region " + std::to_string(i));
      if (!std::binary_search(neighbors[j].begin(), neighbors[j].end(), i)) {
        throw InputError("asymmetric adjacency between regions " + std::to_string(i) + " and " +
                         std::to_string(j));
      }
    }
  }
}

SparsePrecision icar_precision(const RegionGraph& graph) {
  graph.validate();
  if (graph.n == 0) throw InputError("icar_precision: empty graph");
  const auto comps = graph.components();
  if (comps.size() > 1) {
    std::ostringstream msg;
    msg << "icar_precision: graph has " << comps.size() << " connected components:";
    for (std::size_t c = 0; c < comps.size(); ++c) {
      msg << " {";
      const auto shown = std::min<std::size_t>(comps[c].size(), 8);
      for (std::size_t k = 0; k < shown; ++k) msg << (k ? "," : "") << comps[c][k];
      if (comps[c].size() > shown) msg << ",...(" << comps[c].size() << " regions)";
      msg << "}";
    }
    throw InputError(msg.str());
  }
  const auto n = static_cast<Eigen::Index>(graph.n);
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t i = 0; i < graph.n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    trips.emplace_back(ii, ii, static_cast<double>(graph.degree(i)));
    for (auto j : graph.neighbors[i]) trips.emplace_back(ii, static_cast<Eigen::Index>(j), -1.0);
  }
  SparsePrecision out;
  out.matrix.resize(n, n);
  out.matrix.setFromTriplets(trips.begin(), trips.end());
  out.constraints = Eigen::MatrixXd::Ones(1, n);
  out.rank_deficiency = 1;
  return out;
}

RegionGraph knn_graph(const Centroids& centroids, const std::vector<std::size_t>& k_per_node) {
  const auto n = static_cast<std::size_t>(centroids.rows());
  if (k_per_node.size() != n) throw InputError("knn_graph: k_per_node length differs from n");
  if (!centroids.allFinite()) throw InputError("knn_graph: non-finite centroid");
  RegionGraph g(n);
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = k_per_node[i];
    if (k >= n) {
      throw InputError("knn_graph: region " + std::to_string(i) + " asks for " +
                       std::to_string(k) + " neighbors among " + std::to_string(n) + " regions");
    }
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = (centroids.row(static_cast<Eigen::Index>(i)) -
                        centroids.row(static_cast<Eigen::Index>(j)))
                           .squaredNorm();
      if (d == 0.0) {
        throw InputError("knn_graph: regions " + std::to_string(i) + " and " + std::to_string(j) +
                         " share a centroid");
      }
      order.emplace_back(d, j);
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    for (std::size_t r = 0; r < k; ++r) {
      g.neighbors[i].push_back(order[r].second);
      g.neighbors[order[r].second].push_back(i);
    }
  }
  for (auto& nb : g.neighbors) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
  g.centroids = centroids;
  return g;
}

SparsePrecision rw2d_precision(const LatticeMap& lattice) {
  const auto rows = static_cast<Eigen::Index>(lattice.rows);
  const auto cols = static_cast<Eigen::Index>(lattice.cols);
  if (rows < 4 || cols < 4) {
    throw InputError("rw2d_precision: lattice must be at least 4 x 4");
  }
  const auto idx = [cols](Eigen::Index r, Eigen::Index c) { return r * cols + c; };
  std::vector<Eigen::Triplet<double>> trips;
  const auto add_outer = [&trips](const std::vector<std::pair<Eigen::Index, double>>& stencil,
                                  double weight) {
    for (const auto& [i, a] : stencil) {
      for (const auto& [j, b] : stencil) trips.emplace_back(i, j, weight * a * b);
    }
  };
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (r >= 1 && r + 1 < rows) {
        add_outer({{idx(r - 1, c), 1.0}, {idx(r, c), -2.0}, {idx(r + 1, c), 1.0}}, 1.0);
      }
      if (c >= 1 && c + 1 < cols) {
        add_outer({{idx(r, c - 1), 1.0}, {idx(r, c), -2.0}, {idx(r, c + 1), 1.0}}, 1.0);
      }
      if (r + 1 < rows && c + 1 < cols) {
        add_outer({{idx(r, c), 1.0},
                   {idx(r + 1, c), -1.0},
                   {idx(r, c + 1), -1.0},
                   {idx(r + 1, c + 1), 1.0}},
                  2.0);
      }
    }
  }
  const Eigen::Index dim = rows * cols;
  SparsePrecision out;
  out.matrix.resize(dim, dim);
  out.matrix.setFromTriplets(trips.begin(), trips.end());
  out.matrix.prune(0.0);
  out.constraints.resize(3, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      out.constraints(0, idx(r, c)) = 1.0;
      out.constraints(1, idx(r, c)) = static_cast<double>(r);
      out.constraints(2, idx(r, c)) = static_cast<double>(c);
    }
  }
  out.rank_deficiency = 3;
  return out;
}

LatticeMap snap_to_lattice(const Centroids& centroids, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw InputError("snap_to_lattice: empty grid");
  if (centroids.rows() == 0) throw InputError("snap_to_lattice: no centroids");
  if (!centroids.allFinite()) throw InputError("snap_to_lattice: non-finite centroid");
  const Eigen::Vector2d lo = centroids.colwise().minCoeff();
  const Eigen::Vector2d hi = centroids.colwise().maxCoeff();
  const Eigen::Vector2d span = hi - lo;
  if (span.x() == 0.0 && span.y() == 0.0) {
    throw InputError("snap_to_lattice: degenerate bounding box (all centroids identical)");
  }
  LatticeMap out;
  out.rows = rows;
  out.cols = cols;
  out.cell_width = span.x() > 0.0 ? span.x() / static_cast<double>(cols) : 1.0;
  out.cell_height = span.y() > 0.0 ? span.y() / static_cast<double>(rows) : 1.0;
  const auto bin = [](double v, double lo_v, double span_v, std::size_t count) -> std::size_t {
    if (span_v <= 0.0) return 0;
    const double t = (v - lo_v) / span_v * static_cast<double>(count);
    const auto b = static_cast<std::size_t>(std::max(0.0, std::floor(t)));
    return std::min(b, count - 1);
  };
  out.cell_of_region.resize(static_cast<std::size_t>(centroids.rows()));
  for (Eigen::Index i = 0; i < centroids.rows(); ++i) {
    const auto c = bin(centroids(i, 0), lo.x(), span.x(), cols);
    const auto r = bin(centroids(i, 1), lo.y(), span.y(), rows);
    out.cell_of_region[static_cast<std::size_t>(i)] = r * cols + c;
  }
  return out;
}

RegionGraph rook_lattice_graph(std::size_t rows, std::size_t cols) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto i = r * cols + c;
      if (c + 1 < cols) edges.emplace_back(i, i + 1);
      if (r + 1 < rows) edges.emplace_back(i, i + cols);
    }
  }
  auto g = RegionGraph::from_edges(rows * cols, edges);
  Centroids xy(static_cast<Eigen::Index>(rows * cols), 2);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto i = static_cast<Eigen::Index>(r * cols + c);
      xy(i, 0) = static_cast<double>(c);
      xy(i, 1) = static_cast<double>(r);
    }
  }
  g.centroids = std::move(xy);
  return g;
}

SparseMatrix lattice_incidence(const LatticeMap& lattice) {
  const auto n = static_cast<Eigen::Index>(lattice.cell_of_region.size());
  SparseMatrix z(n, static_cast<Eigen::Index>(lattice.cell_count()));
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(lattice.cell_of_region.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto cell = lattice.cell_of_region[static_cast<std::size_t>(i)];
    if (cell >= lattice.cell_count()) throw InputError("lattice cell index out of bounds");
    trips.emplace_back(i, static_cast<Eigen::Index>(cell), 1.0);
  }
  z.setFromTriplets(trips.begin(), trips.end());
  return z;
}

Eigen::MatrixXd to_dense(const SparseMatrix& m) { return Eigen::MatrixXd(m); }

}  // namespace gcspatial
