#pragma once

// Confounded spatial gamma-count simulation study.
//
//   phi ~ ICAR(tau_phi) with sum-to-zero,  x1 ~ N(0, x1_variance)
//   x2 = -0.8 phi + e_x,  e_x ~ N(0, 1 / tau_x)
//   eta = b1 x1 + b2 x2 + phi,  y ~ GC(alpha, alpha exp(eta))
//
// Every (scenario, replication) pair draws from its own seeded streams, so
// results do not depend on scheduling. Fits are scored against beta for the
// PS/NPS models and against beta* = beta + (X'X)^-1 X' phi for the
// deconfounded ones. Method::None fits an oracle with the true phi as offset.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gcspatial/criteria.hpp"
#include "gcspatial/family.hpp"
#include "gcspatial/graph.hpp"
#include "gcspatial/lgm.hpp"

namespace gcspatial {

struct Scenario {
  double alpha = 0.5;
  double tau_x = 11.0;

  bool operator==(const Scenario&) const = default;
};

struct StudyConfig {
  /// Explicit scenario list; empty selects every (alpha, tau_x) pair below.
  std::vector<Scenario> scenarios;
  std::vector<double> alphas{0.5, 1.0, 1.3, 2.0};
  std::vector<double> tau_xs{1.0, 4.0, 11.0};
  std::array<double, 2> beta{0.7, -1.0};
  double tau_phi = 3.33;
  double x1_variance = 0.5;
  double confounding = -0.8;
  std::size_t replications = 50;
  std::uint64_t seed = 20240601;
  /// Generated rook lattice used when no graph file is given.
  std::size_t grid_rows = 12;
  std::size_t grid_cols = 16;
  std::string graph_file;
  std::string centroid_file;
  std::vector<Method> methods{Method::NPS, Method::SpatialPlus, Method::PS, Method::SPOCK,
                              Method::RHZ};
  std::vector<Family> families{Family::GammaCount, Family::Poisson};
  PriorSpec priors;
  std::size_t lattice_rows = 20;
  std::size_t lattice_cols = 20;
  double level = 0.95;
  int jobs = 1;

  /// Scenario list after expanding the default product.
  std::vector<Scenario> expanded_scenarios() const;
  void validate() const;
  bool operator==(const StudyConfig&) const = default;
};

/// Simulated inputs of one replication.
struct ReplicationData {
  Eigen::VectorXd phi;
  Eigen::VectorXd x1;
  Eigen::VectorXd x2;
  Eigen::VectorXd eta;
  Eigen::VectorXd y;
};

struct ModelEstimate {
  Family family = Family::GammaCount;
  Method method = Method::PS;
  bool ok = false;
  std::string error;
  std::array<double, 2> estimate{};
  std::array<double, 2> lower{};
  std::array<double, 2> upper{};
  std::array<double, 2> target{};
  /// Posterior mean of alpha (gamma-count fits only).
  std::optional<double> alpha;
  CriteriaReport criteria;

  bool operator==(const ModelEstimate&) const = default;
};

struct ReplicationRecord {
  Scenario scenario;
  std::size_t rep = 0;
  std::array<double, 2> beta_star{};
  ReplicationData data;
  std::vector<ModelEstimate> fits;
};

struct CellSummary {
  Scenario scenario;
  Family family = Family::GammaCount;
  Method method = Method::PS;
  std::size_t ok = 0;
  std::size_t failed = 0;
  std::array<double, 2> mse{};
  std::array<double, 2> mean_rb{};
  std::array<double, 2> coverage{};
  std::optional<double> alpha_mean;
  double dic = 0.0;
  double waic = 0.0;
  double log_score = 0.0;
  double mspe = 0.0;

  bool operator==(const CellSummary&) const = default;
};

struct StudyReport {
  StudyConfig config;
  std::vector<CellSummary> cells;
  std::vector<ReplicationRecord> records;

  const CellSummary* find(const Scenario& s, Family family, Method method) const;
};

/// Region graph for a study: the configured files, else a rook lattice.
RegionGraph study_graph(const StudyConfig& config);

/// Constrained ICAR draw with precision tau * A.
Eigen::VectorXd sample_icar(const SparsePrecision& precision, double tau, std::mt19937_64& engine);
Eigen::VectorXd sample_icar(const SparsePrecision& precision, double tau, std::uint64_t seed);

ReplicationData generate_replication(const StudyConfig& config, const RegionGraph& graph,
                                     const Scenario& scenario, std::size_t rep);

/// True when estimates of `method` are scored against beta*.
bool targets_beta_star(Method method);

/// Fits every configured (family, method) pair on one replication.
ReplicationRecord run_replication(const StudyConfig& config, const RegionGraph& graph,
                                  const Scenario& scenario, std::size_t rep);

/// Aggregates replication records into per-cell metrics.
std::vector<CellSummary> summarize_cells(const StudyConfig& config,
                                         const std::vector<ReplicationRecord>& records);

/// Runs every replication (in parallel over `config.jobs` workers) and
/// aggregates. Throws ConvergenceError when more than 20% of the fits in any
/// cell fail.
StudyReport run_study(const StudyConfig& config, const RegionGraph& graph);
StudyReport run_study(const StudyConfig& config);

/// Largest tolerated share of failed fits per cell.
inline constexpr double kMaxFailureShare = 0.2;

}  // namespace gcspatial
