#pragma once

// Nested-Laplace inference for latent Gaussian models
//
//   y_i | eta_i, theta ~ family(eta_i)
//   eta = offset + X beta + Z s
//   beta ~ N(0, beta_precision^-1 I),  s ~ N(0, (tau R)^-1) with C s = 0
//
// For each hyperparameter vector theta the latent mode is found by
// constrained Newton iterations and log pi(theta | y) is approximated by
// Laplace's method. theta is integrated over a standardized grid and latent
// marginals are grid-weighted mixtures of the Gaussian conditionals.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <optional>
#include <string>
#include <vector>

#include "gcspatial/criteria.hpp"
#include "gcspatial/factor.hpp"
#include "gcspatial/family.hpp"
#include "gcspatial/graph.hpp"
#include "gcspatial/hpd.hpp"

namespace gcspatial {

struct PriorSpec {
  double beta_precision = 1e-3;
  /// PC prior rate on each precision; the default puts P(1/sqrt(tau) > 1) = 0.01.
  double pc_lambda_tau = 4.605170185988091;
  double log_alpha_mean = 0.0;
  double log_alpha_sd = 1.0;
  /// When set, alpha is fixed rather than integrated.
  std::optional<double> fixed_alpha;

  void validate() const;
  bool operator==(const PriorSpec&) const = default;
};

/// log of the PC prior density of log(tau): log(lambda/2) - t/2 - lambda e^{-t/2}.
double pc_log_prior_log_precision(double log_tau, double lambda);

struct ModelSpec {
  Family family = Family::GammaCount;
  Method method = Method::PS;
  /// Covariates entering the predictor; empty selects every dataset column.
  std::vector<std::string> covariates;
  bool intercept = true;
  /// Covariates replaced by stage-1 residuals under spatial+.
  std::vector<std::string> confounded;
  PriorSpec priors;
  std::size_t lattice_rows = 20;
  std::size_t lattice_cols = 20;

  bool operator==(const ModelSpec&) const = default;
};

struct Dataset {
  std::vector<std::string> region_ids;
  Eigen::VectorXd y;
  /// log expected counts; empty means zero.
  Eigen::VectorXd offset;
  Eigen::MatrixXd covariates;
  std::vector<std::string> covariate_names;
  RegionGraph graph;

  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
};

enum class SpatialKind { None, Icar, Rhz, Rw2d };
enum class HyperKind { LogAlpha, LogTauSpatial, LogTauNoise };

std::string hyper_name(HyperKind kind);

/// Spatial latent block: prior structure, region map and constraints.
struct SpatialBlock {
  SpatialKind kind = SpatialKind::None;
  /// m x m structure matrix R (prior precision is tau R).
  SparseMatrix structure;
  /// n x m map from block coordinates to regions.
  SparseMatrix map;
  /// k x m constraints spanning the null space of R.
  Eigen::MatrixXd constraints;
  bool dense = false;
  std::vector<std::string> coordinate_names;

  Eigen::Index size() const { return structure.rows(); }

  static SpatialBlock none(Eigen::Index n);
  static SpatialBlock icar(const RegionGraph& graph);
  static SpatialBlock rw2d(const LatticeMap& lattice);
  /// tau B'AB on the coordinates Phi_2 with region effects B Phi_2.
  static SpatialBlock rhz(const SparsePrecision& icar, const Eigen::MatrixXd& basis);
};

/// Everything needed to evaluate the posterior for any theta.
struct LatentModel {
  Family family = Family::Poisson;
  Method method = Method::None;
  Eigen::VectorXd y;
  Eigen::VectorXd offset;
  Eigen::MatrixXd fixed_design;
  std::vector<std::string> fixed_names;
  SpatialBlock spatial;
  PriorSpec priors;

  /// n x dim predictor map [X Z].
  SparseMatrix design;
  Eigen::MatrixXd design_dense;
  bool use_dense = false;
  /// k x dim constraints on the full latent vector.
  Eigen::MatrixXd constraints;
  std::vector<HyperKind> hypers;
  /// Pseudo log-determinant and rank of the spatial structure matrix.
  double structure_log_pdet = 0.0;
  Eigen::Index structure_rank = 0;

  /// Regions for spatial effects reported per area.
  std::optional<LatticeMap> lattice;
  std::optional<RegionGraph> graph;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index fixed_count() const { return fixed_design.cols(); }
  Eigen::Index dim() const { return fixed_design.cols() + spatial.size(); }
  Eigen::Index hyper_count() const { return static_cast<Eigen::Index>(hypers.size()); }
  std::vector<std::string> latent_names() const;
};

/// Assembles a model from explicit parts (validates dimensions).
LatentModel assemble_model(Family family, Eigen::VectorXd y, Eigen::VectorXd offset,
                           Eigen::MatrixXd fixed_design, std::vector<std::string> fixed_names,
                           SpatialBlock spatial, PriorSpec priors);

/// Builds the latent model for a spec + dataset, applying the deconfounding
/// method (RHZ basis, SPOCK graph, spatial+ residualization).
LatentModel build_latent_model(const ModelSpec& spec, const Dataset& data);

/// Natural-scale hyperparameters for a theta vector.
struct HyperValues {
  double alpha = 1.0;
  double tau_spatial = 1.0;
  double tau_noise = 1.0;
};

HyperValues hyper_values(const LatentModel& model, const Eigen::VectorXd& theta);
double log_hyperprior(const LatentModel& model, const Eigen::VectorXd& theta);

/// Prior precision over psi = (beta, s) with constraints attached.
SparsePrecision assemble_latent_prior(const LatentModel& model, const Eigen::VectorXd& theta);

struct NewtonOptions {
  int max_iterations = 100;
  double gradient_tol = 1e-8;
};

struct NewtonResult {
  Eigen::VectorXd mode;
  Eigen::VectorXd eta;
  double log_likelihood = 0.0;
  double log_joint = 0.0;
  int iterations = 0;
  double gradient_norm = 0.0;
  /// Factorization of the negative Hessian at the mode.
  ConstrainedFactor factor;
};

/// Constrained Newton ascent on log p(y | psi) + log p(psi | theta) with a
/// backtracking line search. Throws ConvergenceError on iteration overflow.
NewtonResult newton_mode(const LatentModel& model, const Eigen::VectorXd& theta,
                         const Eigen::VectorXd& init = {}, const NewtonOptions& options = {});

/// Log joint density at psi (likelihood + prior, including constants).
double log_joint_density(const LatentModel& model, const Eigen::VectorXd& theta,
                         const Eigen::VectorXd& psi);

/// Gradient of log_joint_density with respect to psi.
Eigen::VectorXd log_joint_gradient(const LatentModel& model, const Eigen::VectorXd& theta,
                                   const Eigen::VectorXd& psi);

struct LaplaceEvaluation {
  double log_posterior = 0.0;  // log pi~(theta | y) up to a constant
  double log_evidence = 0.0;   // Laplace estimate of log p(y | theta)
  NewtonResult newton;
};

LaplaceEvaluation log_marginal_theta(const LatentModel& model, const Eigen::VectorXd& theta,
                                     const Eigen::VectorXd& init = {});

struct HyperPoint {
  Eigen::VectorXd theta;
  double log_posterior = 0.0;
  double weight = 0.0;
  Eigen::VectorXd mode;
  int newton_iterations = 0;
  double gradient_norm = 0.0;
};

struct GridOptions {
  double step = 0.75;
  double drop = 5.0;
  int max_evaluations = 600;
  int max_radius = 8;
  int jobs = 1;
  std::optional<Eigen::VectorXd> start;
};

struct HyperGrid {
  std::vector<HyperPoint> points;
  Eigen::VectorXd mode;
  /// theta = mode + scale * z for standardized z.
  Eigen::MatrixXd scale;
  int evaluations = 0;
};

/// Locates the theta mode by coordinate-wise golden-section ascent (followed
/// by finite-difference Newton polishing), then explores a standardized grid
/// with spacing `step`, keeping points within `drop` log units of the mode.
HyperGrid explore_hypergrid(const LatentModel& model, const GridOptions& options = {});

/// Gaussian conditional at one grid point.
struct ConditionalSummary {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  Eigen::VectorXd eta_mean;
  Eigen::VectorXd eta_sd;
  Eigen::VectorXd region_mean;
  Eigen::VectorXd region_sd;
};

struct MarginalSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double hpd_lower = 0.0;
  double hpd_upper = 0.0;

  bool operator==(const MarginalSummary&) const = default;
};

struct MarginalOptions {
  double level = 0.95;
  /// HPD intervals for the spatial coordinates and region effects as well.
  bool spatial_hpd = true;
  int jobs = 1;
};

struct LatentMarginals {
  std::vector<ConditionalSummary> conditionals;
  std::vector<MarginalSummary> latent;
  std::vector<MarginalSummary> region_effects;
  std::vector<MarginalSummary> hyper;
  Eigen::VectorXd eta_mean;
};

GaussianMixture latent_mixture(const HyperGrid& grid, const std::vector<ConditionalSummary>& cond,
                               Eigen::Index coordinate);

LatentMarginals latent_marginals(const LatentModel& model, const HyperGrid& grid,
                                 const MarginalOptions& options = {});

/// Posterior-mean count means: gc_mean at the posterior-mean predictor and
/// alpha for gamma-count, exp(eta) for Poisson, eta for Gaussian.
Eigen::VectorXd fitted_means(const LatentModel& model, const LatentMarginals& marginals);

/// Linear-predictor posterior handed to the criteria module.
PredictorPosterior predictor_posterior(const LatentModel& model, const HyperGrid& grid,
                                       const LatentMarginals& marginals);

struct HyperGridRecord {
  std::vector<double> theta;
  double log_posterior = 0.0;
  double weight = 0.0;

  bool operator==(const HyperGridRecord&) const = default;
};

struct Diagnostics {
  std::vector<int> newton_iterations;
  std::vector<double> gradient_norms;
  int theta_evaluations = 0;

  bool operator==(const Diagnostics&) const = default;
};

struct FitResult {
  Family family = Family::Poisson;
  Method method = Method::None;
  std::vector<std::string> hyper_names;
  std::vector<HyperGridRecord> grid;
  std::vector<MarginalSummary> hyperparameters;
  std::vector<MarginalSummary> fixed_effects;
  std::vector<MarginalSummary> latent;
  std::vector<MarginalSummary> region_effects;
  std::vector<double> fitted;
  CriteriaReport criteria;
  Diagnostics diagnostics;

  const MarginalSummary* find_fixed(const std::string& name) const;
  const MarginalSummary* find_hyper(const std::string& name) const;
  bool operator==(const FitResult&) const = default;
};

struct FitOptions {
  int jobs = 1;
  double level = 0.95;
  bool spatial_hpd = true;
  GridOptions grid;
};

FitResult fit_model(const LatentModel& model, const FitOptions& options = {});
FitResult fit_model(const ModelSpec& spec, const Dataset& data, const FitOptions& options = {});

}  // namespace gcspatial
