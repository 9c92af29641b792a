#include "gcspatial/criteria.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "gcspatial/error.hpp"

namespace gcspatial {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;
constexpr double kNodes[3] = {0.0, -kSqrt3, kSqrt3};
constexpr double kNodeWeights[3] = {2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0};

void check_posterior(const PredictorPosterior& p) {
  const auto k = p.weights.size();
  if (k == 0 || p.dispersion.size() != k || p.eta_mean.size() != k || p.eta_sd.size() != k) {
    throw InputError("predictor posterior: inconsistent grid sizes");
  }
  for (std::size_t j = 0; j < k; ++j) {
    if (p.eta_mean[j].size() != p.y.size() || p.eta_sd[j].size() != p.y.size()) {
      throw InputError("predictor posterior: predictor length differs from y");
    }
  }
}

double log_sum_exp_weighted(const Eigen::VectorXd& logs, const Eigen::VectorXd& weights) {
  double hi = -std::numeric_limits<double>::infinity();
  for (Eigen::Index d = 0; d < logs.size(); ++d) {
    if (weights[d] > 0.0) hi = std::max(hi, logs[d]);
  }
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (Eigen::Index d = 0; d < logs.size(); ++d) {
    if (weights[d] > 0.0) s += weights[d] * std::exp(logs[d] - hi);
  }
  return hi + std::log(s);
}

}  // namespace

LogLikDraws sigma_point_draws(const PredictorPosterior& posterior) {
  check_posterior(posterior);
  const auto n = posterior.y.size();
  const auto k = static_cast<Eigen::Index>(posterior.weights.size());
  LogLikDraws draws;
  draws.log_lik.resize(n, 3 * k);
  draws.weights.resize(3 * k);
  for (Eigen::Index g = 0; g < k; ++g) {
    const auto& m = posterior.eta_mean[static_cast<std::size_t>(g)];
    const auto& s = posterior.eta_sd[static_cast<std::size_t>(g)];
    const double disp = posterior.dispersion[static_cast<std::size_t>(g)];
    for (int j = 0; j < 3; ++j) {
      const auto col = 3 * g + j;
      draws.weights[col] = posterior.weights[static_cast<std::size_t>(g)] * kNodeWeights[j];
      for (Eigen::Index i = 0; i < n; ++i) {
        draws.log_lik(i, col) =
            family_log_lik(posterior.family, posterior.y[i], m[i] + kNodes[j] * s[i], disp);
      }
    }
  }
  return draws;
}

DicResult compute_dic(const PredictorPosterior& posterior) {
  check_posterior(posterior);
  const auto n = posterior.y.size();
  const auto k = posterior.weights.size();
  double mean_deviance = 0.0;
  Eigen::VectorXd eta_bar = Eigen::VectorXd::Zero(n);
  double disp_bar = 0.0;
  for (std::size_t g = 0; g < k; ++g) {
    const double w = posterior.weights[g];
    eta_bar += w * posterior.eta_mean[g];
    disp_bar += w * posterior.dispersion[g];
    for (Eigen::Index i = 0; i < n; ++i) {
      double e = 0.0;
      for (int j = 0; j < 3; ++j) {
        const double eta = posterior.eta_mean[g][i] + kNodes[j] * posterior.eta_sd[g][i];
        e += kNodeWeights[j] *
             family_log_lik(posterior.family, posterior.y[i], eta, posterior.dispersion[g]);
      }
      mean_deviance += -2.0 * w * e;
    }
  }
  double plug_in = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    plug_in += -2.0 * family_log_lik(posterior.family, posterior.y[i], eta_bar[i], disp_bar);
  }
  DicResult r;
  r.p_dic = mean_deviance - plug_in;
  r.dic = mean_deviance + r.p_dic;
  if (r.p_dic < 0.0) spdlog::warn("DIC: negative effective parameter count {}", r.p_dic);
  return r;
}

WaicResult compute_waic(const LogLikDraws& draws) {
  const auto n = draws.log_lik.rows();
  if (draws.log_lik.cols() != draws.weights.size() || draws.weights.size() == 0) {
    throw InputError("compute_waic: draw weights do not match the log-likelihood matrix");
  }
  double lppd = 0.0;
  double p = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd row = draws.log_lik.row(i).transpose();
    lppd += log_sum_exp_weighted(row, draws.weights);
    const double mean = draws.weights.dot(row);
    p += draws.weights.dot((row.array() - mean).square().matrix());
  }
  WaicResult r;
  r.p_waic = p;
  r.waic = -2.0 * (lppd - p);
  return r;
}

CpoResult compute_cpo_ls(const LogLikDraws& draws) {
  const auto n = draws.log_lik.rows();
  if (draws.log_lik.cols() != draws.weights.size() || draws.weights.size() == 0) {
    throw InputError("compute_cpo_ls: draw weights do not match the log-likelihood matrix");
  }
  if (std::abs(draws.weights.sum() - 1.0) > 1e-8) {
    throw InputError("compute_cpo_ls: weights must sum to 1");
  }
  CpoResult r;
  r.cpo.resize(n);
  double ls = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd neg = -draws.log_lik.row(i).transpose();
    const double log_inv_cpo = log_sum_exp_weighted(neg, draws.weights);
    r.cpo[i] = std::exp(-log_inv_cpo);
    ls += log_inv_cpo;
  }
  r.log_score = ls;
  return r;
}

double compute_mspe(const Eigen::VectorXd& y, const Eigen::VectorXd& fitted) {
  if (y.size() != fitted.size()) throw InputError("compute_mspe: length mismatch");
  if (y.size() == 0) return 0.0;
  return (y - fitted).squaredNorm() / static_cast<double>(y.size());
}

CriteriaReport compute_criteria(const PredictorPosterior& posterior, const Eigen::VectorXd& fitted) {
  CriteriaReport report;
  const auto dic = compute_dic(posterior);
  report.dic = dic.dic;
  report.p_dic = dic.p_dic;
  const auto draws = sigma_point_draws(posterior);
  const auto waic = compute_waic(draws);
  report.waic = waic.waic;
  report.p_waic = waic.p_waic;
  if (waic.p_waic < 0.0) spdlog::warn("WAIC: negative effective parameter count");
  const auto cpo = compute_cpo_ls(draws);
  report.log_score = cpo.log_score;
  report.cpo.assign(cpo.cpo.data(), cpo.cpo.data() + cpo.cpo.size());
  report.mspe = compute_mspe(posterior.y, fitted);
  return report;
}

}  // namespace gcspatial
