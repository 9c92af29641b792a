#pragma once

// Spatial deconfounding transforms.
//
//   RHZ      restrict the spatial effect to the orthogonal complement of the
//            design: phi = B Phi_2 with B'X = 0, prior precision tau B'AB.
//   SPOCK    project centroids with I - X(X'X)^-1 X' and rebuild the
//            neighbor graph by knn, each region keeping its original degree.
//   spatial+ replace a confounded covariate by the residual of a Gaussian
//            RW2D smooth of that covariate on the region lattice.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "gcspatial/graph.hpp"
#include "gcspatial/lgm.hpp"

namespace gcspatial {

struct RhzBasis {
  /// n x (n - q), orthonormal columns spanning the complement of span(X).
  Eigen::MatrixXd basis;
  Eigen::Index q = 0;
};

/// Relative tolerance for declaring a design column linearly dependent.
inline constexpr double kRankTolerance = 1e-10;

/// Orthonormal complement of span(X) from a full Householder decomposition.
/// Throws InputError listing dependent columns, or when q >= n.
RhzBasis rhz_basis(const Eigen::MatrixXd& x);

/// Dense B'AB, symmetrized. Warns when the result is not positive definite.
Eigen::MatrixXd rhz_transform(const SparsePrecision& precision, const RhzBasis& basis);

/// Prepends an all-ones column unless X already has a constant column.
Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x);

/// Indices of the linearly dependent columns of X (each relative to the
/// columns before it); empty when X has full column rank.
std::vector<Eigen::Index> dependent_columns(const Eigen::MatrixXd& x);

/// (I - X(X'X)^-1 X') S.
Centroids spock_centroids(const Centroids& centroids, const Eigen::MatrixXd& x);

/// knn graph on the projected centroids with k_i = original degree of i.
/// With `bridge`, disconnected components are joined through their shortest
/// projected-distance edge so the ICAR prior stays well defined.
RegionGraph spock_graph(const RegionGraph& graph, const Eigen::MatrixXd& x, bool bridge = true);

/// beta + (X'X)^-1 X' phi.
Eigen::VectorXd beta_star(const Eigen::VectorXd& beta, const Eigen::MatrixXd& x,
                          const Eigen::VectorXd& phi);

struct StageOneOptions {
  PriorSpec priors;
  /// log(tau_smooth / tau_noise) candidates; the best is kept.
  double log_ratio_min = -4.0;
  double log_ratio_max = 10.0;
  double log_ratio_step = 1.0;
  /// Skips the search and uses this (log tau_noise, log ratio) pair.
  std::optional<std::pair<double, double>> fixed_theta;
};

struct StageOneFit {
  std::string name;
  Eigen::VectorXd smooth;    // posterior mean of the smooth at each region
  Eigen::VectorXd residual;  // x - smooth
  double tau_noise = 0.0;
  double tau_smooth = 0.0;
  double log_posterior = 0.0;
};

/// Gaussian stage-1 fit x = [1 row col] c + Z s + e on the lattice, s RW2D
/// with its null space removed; returns x minus the posterior-mean fit.
StageOneFit spatialplus_residualize(const Eigen::VectorXd& x, const LatticeMap& lattice,
                                    const StageOneOptions& options = {});

struct ResidualizedDesign {
  Eigen::MatrixXd design;
  std::vector<StageOneFit> fits;
};

/// Replaces every column named in `confounded` by its stage-1 residual.
ResidualizedDesign spatialplus_design(const Eigen::MatrixXd& x,
                                      const std::vector<std::string>& names,
                                      const std::vector<std::string>& confounded,
                                      const LatticeMap& lattice,
                                      const StageOneOptions& options = {}, int jobs = 1);

}  // namespace gcspatial
