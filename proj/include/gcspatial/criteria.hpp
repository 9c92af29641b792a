#pragma once

// Model comparison scores computed from a fitted linear-predictor posterior.
//
// "Draws" are deterministic sigma points: for every hyperparameter grid point
// and observation, the conditional predictor mean and mean +- sqrt(3) sd with
// three-point Gauss-Hermite weights (2/3, 1/6, 1/6), treating observations as
// independent. These reproduce the conditional mean and variance exactly.

#include <Eigen/Dense>

#include <vector>

#include "gcspatial/family.hpp"

namespace gcspatial {

struct PredictorPosterior {
  Family family = Family::Poisson;
  Eigen::VectorXd y;
  std::vector<double> weights;
  /// alpha (gamma-count) or noise precision (Gaussian) per grid point.
  std::vector<double> dispersion;
  std::vector<Eigen::VectorXd> eta_mean;
  std::vector<Eigen::VectorXd> eta_sd;
};

/// Per-observation log-likelihoods at weighted draws (n x D, weights sum to 1).
struct LogLikDraws {
  Eigen::MatrixXd log_lik;
  Eigen::VectorXd weights;
};

struct CriteriaReport {
  double dic = 0.0;
  double p_dic = 0.0;
  double waic = 0.0;
  double p_waic = 0.0;
  double log_score = 0.0;
  double mspe = 0.0;
  std::vector<double> cpo;

  bool operator==(const CriteriaReport&) const = default;
};

struct DicResult {
  double dic = 0.0;
  double p_dic = 0.0;
};

struct WaicResult {
  double waic = 0.0;
  double p_waic = 0.0;
};

struct CpoResult {
  Eigen::VectorXd cpo;
  double log_score = 0.0;
};

LogLikDraws sigma_point_draws(const PredictorPosterior& posterior);

/// DIC = Dbar + pD with D = -2 log lik, pD = Dbar - D(posterior means).
DicResult compute_dic(const PredictorPosterior& posterior);

/// WAIC = -2 (lppd - p_waic), p_waic = sum_i Var_draws(log lik_i).
WaicResult compute_waic(const LogLikDraws& draws);

/// 1/CPO_i = sum_d w_d / lik_id (evaluated in log space); LS = -sum_i log CPO_i.
CpoResult compute_cpo_ls(const LogLikDraws& draws);

double compute_mspe(const Eigen::VectorXd& y, const Eigen::VectorXd& fitted);

CriteriaReport compute_criteria(const PredictorPosterior& posterior, const Eigen::VectorXd& fitted);

}  // namespace gcspatial
