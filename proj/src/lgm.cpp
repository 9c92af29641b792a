#include "gcspatial/lgm.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "gcspatial/deconfound.hpp"
#include "gcspatial/error.hpp"
#include "gcspatial/gcdist.hpp"
#include "gcspatial/parallel.hpp"

namespace gcspatial {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kJitter = 1e-8;
constexpr Eigen::Index kDenseBelow = 64;

struct Bounds {
  double lo;
  double hi;
};

Bounds hyper_bounds(HyperKind kind) {
  if (kind == HyperKind::LogAlpha) return {-4.0, 4.0};
  return {-8.0, 16.0};
}

double default_start(HyperKind kind) {
  switch (kind) {
    case HyperKind::LogAlpha: return 0.0;
    case HyperKind::LogTauSpatial: return 1.0;
    case HyperKind::LogTauNoise: return 0.0;
  }
  return 0.0;
}

SparseMatrix to_sparse(const Eigen::MatrixXd& m) { return m.sparseView(0.0, 0.0); }

bool is_count(double y) { return y >= 0.0 && std::floor(y) == y && std::isfinite(y); }

double dispersion_of(const LatentModel& model, const HyperValues& hv) {
  switch (model.family) {
    case Family::GammaCount: return hv.alpha;
    case Family::Gaussian: return hv.tau_noise;
    default: return 1.0;
  }
}

/// Orthogonal projection onto {x : C x = 0}.
class Projector {
 public:
  explicit Projector(const Eigen::MatrixXd& c) : c_(c) {
    if (c.rows() > 0) cc_.compute(c * c.transpose());
  }
  Eigen::VectorXd operator()(const Eigen::VectorXd& v) const {
    if (c_.rows() == 0) return v;
    return v - c_.transpose() * cc_.solve(c_ * v);
  }

 private:
  Eigen::MatrixXd c_;
  Eigen::LLT<Eigen::MatrixXd> cc_;
};

struct Objective {
  const LatentModel& model;
  HyperValues hv;
  double dispersion;
  SparseMatrix q;

  Objective(const LatentModel& m, const Eigen::VectorXd& theta)
      : model(m),
        hv(hyper_values(m, theta)),
        dispersion(dispersion_of(m, hv)),
        q(assemble_latent_prior(m, theta).matrix) {}

  Eigen::VectorXd eta(const Eigen::VectorXd& psi) const {
    if (model.use_dense) return model.offset + model.design_dense * psi;
    return model.offset + model.design * psi;
  }

  double log_lik(const Eigen::VectorXd& eta) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      s += family_log_lik(model.family, model.y[i], eta[i], dispersion);
      if (!std::isfinite(s)) return kNegInf;
    }
    return s;
  }

  double quad(const Eigen::VectorXd& psi) const { return psi.dot(q * psi); }

  double value(const Eigen::VectorXd& psi) const {
    const double ll = log_lik(eta(psi));
    if (!std::isfinite(ll)) return kNegInf;
    return ll - 0.5 * quad(psi);
  }
};

double prior_log_det(const LatentModel& model, const HyperValues& hv) {
  double v = static_cast<double>(model.fixed_count()) * std::log(model.priors.beta_precision);
  if (model.spatial.size() > 0) {
    v += static_cast<double>(model.structure_rank) * std::log(hv.tau_spatial) +
         model.structure_log_pdet;
  }
  return v;
}

Eigen::Index constrained_dim(const LatentModel& model) {
  return model.dim() - model.constraints.rows();
}

}  // namespace

void PriorSpec::validate() const {
  if (!(beta_precision > 0.0 && std::isfinite(beta_precision))) {
    throw InputError("priors: beta_precision must be positive");
  }
  if (!(pc_lambda_tau > 0.0 && std::isfinite(pc_lambda_tau))) {
    throw InputError("priors: pc_lambda_tau must be positive");
  }
  if (!(log_alpha_sd > 0.0 && std::isfinite(log_alpha_sd)) || !std::isfinite(log_alpha_mean)) {
    throw InputError("priors: log_alpha_sd must be positive and log_alpha_mean finite");
  }
  if (fixed_alpha && !(*fixed_alpha > 0.0 && std::isfinite(*fixed_alpha))) {
    throw InputError("priors: fixed_alpha must be positive");
  }
}

double pc_log_prior_log_precision(double log_tau, double lambda) {
  return std::log(lambda / 2.0) - 0.5 * log_tau - lambda * std::exp(-0.5 * log_tau);
}

std::string hyper_name(HyperKind kind) {
  switch (kind) {
    case HyperKind::LogAlpha: return "alpha";
    case HyperKind::LogTauSpatial: return "tau_spatial";
    case HyperKind::LogTauNoise: return "tau_noise";
  }
  return "unknown";
}

SpatialBlock SpatialBlock::none(Eigen::Index n) {
  SpatialBlock b;
  b.structure.resize(0, 0);
  b.map.resize(n, 0);
  b.constraints.resize(0, 0);
  return b;
}

SpatialBlock SpatialBlock::icar(const RegionGraph& graph) {
  const auto prec = icar_precision(graph);
  SpatialBlock b;
  b.kind = SpatialKind::Icar;
  b.structure = prec.matrix;
  const auto n = prec.dim();
  b.map.resize(n, n);
  b.map.setIdentity();
  b.constraints = prec.constraints;
  for (Eigen::Index i = 0; i < n; ++i) b.coordinate_names.push_back("phi[" + std::to_string(i) + "]");
  return b;
}

SpatialBlock SpatialBlock::rw2d(const LatticeMap& lattice) {
  const auto prec = rw2d_precision(lattice);
  SpatialBlock b;
  b.kind = SpatialKind::Rw2d;
  b.structure = prec.matrix;
  b.map = lattice_incidence(lattice);
  b.constraints = prec.constraints;
  for (std::size_t c = 0; c < lattice.cell_count(); ++c) {
    b.coordinate_names.push_back("cell[" + std::to_string(lattice.row_of(c)) + "," +
                                 std::to_string(lattice.col_of(c)) + "]");
  }
  return b;
}

SpatialBlock SpatialBlock::rhz(const SparsePrecision& icar, const Eigen::MatrixXd& basis) {
  RhzBasis rb;
  rb.basis = basis;
  rb.q = basis.rows() - basis.cols();
  SpatialBlock b;
  b.kind = SpatialKind::Rhz;
  b.structure = to_sparse(rhz_transform(icar, rb));
  b.map = to_sparse(basis);
  b.constraints.resize(0, basis.cols());
  b.dense = true;
  for (Eigen::Index j = 0; j < basis.cols(); ++j) {
    b.coordinate_names.push_back("Phi2[" + std::to_string(j) + "]");
  }
  return b;
}

std::vector<std::string> LatentModel::latent_names() const {
  std::vector<std::string> names = fixed_names;
  names.insert(names.end(), spatial.coordinate_names.begin(), spatial.coordinate_names.end());
  return names;
}

LatentModel assemble_model(Family family, Eigen::VectorXd y, Eigen::VectorXd offset,
                           Eigen::MatrixXd fixed_design, std::vector<std::string> fixed_names,
                           SpatialBlock spatial, PriorSpec priors) {
  priors.validate();
  if (family == Family::NegativeBinomial || family == Family::GeneralizedPoisson) {
    throw InputError("family '" + to_string(family) + "' is reserved but not supported for fitting");
  }
  const auto n = y.size();
  if (n == 0) throw InputError("model has no observations");
  if (offset.size() == 0) offset = Eigen::VectorXd::Zero(n);
  if (offset.size() != n) throw InputError("offset length differs from the response length");
  if (!offset.allFinite()) throw InputError("offset contains non-finite values");
  if (fixed_design.rows() != n && !(fixed_design.size() == 0)) {
    throw InputError("fixed design rows differ from the response length");
  }
  if (fixed_design.size() == 0) fixed_design.resize(n, 0);
  if (!fixed_design.allFinite()) throw InputError("fixed design contains non-finite values");
  if (static_cast<Eigen::Index>(fixed_names.size()) != fixed_design.cols()) {
    throw InputError("fixed-effect names do not match the design columns");
  }
  if (spatial.map.rows() != n || spatial.map.cols() != spatial.size()) {
    throw InputError("spatial map has the wrong shape");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (family_is_count(family) && !is_count(y[i])) {
      throw InputError("observation " + std::to_string(i) + " is not a non-negative integer count");
    }
    if (!std::isfinite(y[i])) throw InputError("observation " + std::to_string(i) + " is not finite");
  }

  LatentModel m;
  m.family = family;
  m.y = std::move(y);
  m.offset = std::move(offset);
  m.fixed_design = std::move(fixed_design);
  m.fixed_names = std::move(fixed_names);
  m.spatial = std::move(spatial);
  m.priors = priors;
  if (m.spatial.coordinate_names.size() != static_cast<std::size_t>(m.spatial.size())) {
    m.spatial.coordinate_names.clear();
    for (Eigen::Index j = 0; j < m.spatial.size(); ++j) {
      m.spatial.coordinate_names.push_back("s[" + std::to_string(j) + "]");
    }
  }

  const auto q = m.fixed_count();
  const auto dim = m.dim();
  std::vector<Eigen::Triplet<double>> trips;
  for (Eigen::Index j = 0; j < q; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (m.fixed_design(i, j) != 0.0) trips.emplace_back(i, j, m.fixed_design(i, j));
    }
  }
  for (int k = 0; k < m.spatial.map.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m.spatial.map, k); it; ++it) {
      trips.emplace_back(it.row(), q + it.col(), it.value());
    }
  }
  m.design.resize(n, dim);
  m.design.setFromTriplets(trips.begin(), trips.end());
  m.use_dense = m.spatial.dense || dim < kDenseBelow;
  if (m.use_dense) m.design_dense = to_dense(m.design);

  const auto k = m.spatial.constraints.rows();
  m.constraints = Eigen::MatrixXd::Zero(k, dim);
  if (k > 0) {
    if (m.spatial.constraints.cols() != m.spatial.size()) {
      throw InputError("spatial constraints have the wrong width");
    }
    m.constraints.rightCols(m.spatial.size()) = m.spatial.constraints;
  }

  if (family == Family::GammaCount && !priors.fixed_alpha) m.hypers.push_back(HyperKind::LogAlpha);
  if (family == Family::Gaussian) m.hypers.push_back(HyperKind::LogTauNoise);
  if (m.spatial.size() > 0) m.hypers.push_back(HyperKind::LogTauSpatial);

  if (m.spatial.size() > 0) {
    const auto size = m.spatial.size();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(to_dense(m.spatial.structure),
                                                       Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();  // ascending
    m.structure_rank = size - k;
    const double top = ev[size - 1];
    if (m.structure_rank <= 0 || !(ev[k] > 1e-10 * top)) {
      throw InputError("spatial structure has a larger null space than its constraints cover");
    }
    if (k > 0 && std::abs(ev[k - 1]) > 1e-8 * top) {
      spdlog::warn("spatial constraints do not match the structure null space");
    }
    m.structure_log_pdet = ev.tail(m.structure_rank).array().log().sum();
  }
  return m;
}

HyperValues hyper_values(const LatentModel& model, const Eigen::VectorXd& theta) {
  if (theta.size() != model.hyper_count()) {
    throw InputError("expected " + std::to_string(model.hyper_count()) +
                     " hyperparameters, got " + std::to_string(theta.size()));
  }
  HyperValues hv;
  if (model.priors.fixed_alpha) hv.alpha = *model.priors.fixed_alpha;
  for (std::size_t h = 0; h < model.hypers.size(); ++h) {
    const double v = std::exp(theta[static_cast<Eigen::Index>(h)]);
    switch (model.hypers[h]) {
      case HyperKind::LogAlpha: hv.alpha = v; break;
      case HyperKind::LogTauSpatial: hv.tau_spatial = v; break;
      case HyperKind::LogTauNoise: hv.tau_noise = v; break;
    }
  }
  return hv;
}

double log_hyperprior(const LatentModel& model, const Eigen::VectorXd& theta) {
  const auto& p = model.priors;
  double lp = 0.0;
  for (std::size_t h = 0; h < model.hypers.size(); ++h) {
    const double t = theta[static_cast<Eigen::Index>(h)];
    if (model.hypers[h] == HyperKind::LogAlpha) {
      const double z = (t - p.log_alpha_mean) / p.log_alpha_sd;
      lp += -0.5 * z * z - std::log(p.log_alpha_sd) - 0.5 * std::log(2.0 * std::numbers::pi);
    } else {
      lp += pc_log_prior_log_precision(t, p.pc_lambda_tau);
    }
  }
  return lp;
}

SparsePrecision assemble_latent_prior(const LatentModel& model, const Eigen::VectorXd& theta) {
  const auto hv = hyper_values(model, theta);
  const auto q = model.fixed_count();
  std::vector<Eigen::Triplet<double>> trips;
  for (Eigen::Index j = 0; j < q; ++j) trips.emplace_back(j, j, model.priors.beta_precision);
  for (int k = 0; k < model.spatial.structure.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(model.spatial.structure, k); it; ++it) {
      trips.emplace_back(q + it.row(), q + it.col(), hv.tau_spatial * it.value());
    }
  }
  SparsePrecision out;
  out.matrix.resize(model.dim(), model.dim());
  out.matrix.setFromTriplets(trips.begin(), trips.end());
  out.constraints = model.constraints;
  out.rank_deficiency = static_cast<int>(model.constraints.rows());
  return out;
}

double log_joint_density(const LatentModel& model, const Eigen::VectorXd& theta,
                         const Eigen::VectorXd& psi) {
  const Objective obj(model, theta);
  const double r = static_cast<double>(constrained_dim(model));
  return obj.value(psi) + 0.5 * prior_log_det(model, obj.hv) -
         0.5 * r * std::log(2.0 * std::numbers::pi);
}

Eigen::VectorXd log_joint_gradient(const LatentModel& model, const Eigen::VectorXd& theta,
                                   const Eigen::VectorXd& psi) {
  const Objective obj(model, theta);
  const Eigen::VectorXd eta = obj.eta(psi);
  Eigen::VectorXd d1(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    d1[i] = family_log_lik_terms(model.family, model.y[i], eta[i], obj.dispersion).d1;
  }
  return model.design.transpose() * d1 - obj.q * psi;
}

NewtonResult newton_mode(const LatentModel& model, const Eigen::VectorXd& theta,
                         const Eigen::VectorXd& init, const NewtonOptions& options) {
  const Objective obj(model, theta);
  const Projector project(model.constraints);
  const auto dim = model.dim();
  const auto n = model.n();
  const auto q = model.fixed_count();

  Eigen::VectorXd psi = Eigen::VectorXd::Zero(dim);
  if (init.size() == dim && init.allFinite()) psi = project(init);
  double f = obj.value(psi);
  if (!std::isfinite(f)) {
    psi.setZero();
    f = obj.value(psi);
    if (!std::isfinite(f)) {
      throw ConvergenceError("newton_mode: log-likelihood is not finite at the starting point");
    }
  }

  Eigen::VectorXd jitter = Eigen::VectorXd::Zero(dim);
  jitter.tail(dim - q).setConstant(kJitter * obj.hv.tau_spatial);
  Eigen::MatrixXd q_dense;
  if (model.use_dense) q_dense = to_dense(obj.q);

  Eigen::VectorXd d1(n);
  Eigen::VectorXd w(n);
  for (int iter = 0;; ++iter) {
    const Eigen::VectorXd eta = obj.eta(psi);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto t = family_log_lik_terms(model.family, model.y[i], eta[i], obj.dispersion);
      if (t.flat) {
        // Poisson-shaped surrogate pulls the predictor back into range.
        const double mu = std::exp(std::min(eta[i], 700.0));
        t.d1 = model.y[i] - mu;
        t.d2 = -mu;
      }
      d1[i] = t.d1;
      w[i] = std::max(-t.d2, 0.0);
    }
    const Eigen::VectorXd grad = model.design.transpose() * d1 - obj.q * psi;
    const double gnorm = project(grad).norm();

    std::optional<ConstrainedFactor> factor;
    if (model.use_dense) {
      Eigen::MatrixXd h = q_dense;
      const Eigen::MatrixXd scaled = w.cwiseSqrt().asDiagonal() * model.design_dense;
      h.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
      h.triangularView<Eigen::StrictlyUpper>() = h.transpose();
      factor = ConstrainedFactor::dense(h, model.constraints);
    } else {
      const SparseMatrix h = obj.q + SparseMatrix(model.design.transpose() * w.asDiagonal() *
                                                  model.design);
      factor = ConstrainedFactor::sparse(h, model.constraints, jitter);
    }

    if (gnorm <= options.gradient_tol * (1.0 + psi.norm())) {
      NewtonResult r{psi, eta, obj.log_lik(eta), f, iter, gnorm, std::move(*factor)};
      return r;
    }
    if (iter >= options.max_iterations) {
      std::ostringstream msg;
      msg << "newton_mode: no convergence after " << options.max_iterations
          << " iterations (gradient norm " << gnorm << ")";
      throw ConvergenceError(msg.str(), gnorm);
    }

    const Eigen::VectorXd step = factor->solve(grad);
    const double predicted = grad.dot(step);
    double s = 1.0;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving, s *= 0.5) {
      const Eigen::VectorXd trial = project(psi + s * step);
      const double ft = obj.value(trial);
      const bool roundoff = s * std::abs(predicted) <= 1e-12 * (1.0 + std::abs(f));
      if (std::isfinite(ft) && (ft >= f || roundoff)) {
        psi = trial;
        f = std::max(ft, f);
        accepted = true;
        if (roundoff) f = ft;
        break;
      }
    }
    if (!accepted) {
      std::ostringstream msg;
      msg << "newton_mode: line search failed (gradient norm " << gnorm << ")";
      throw ConvergenceError(msg.str(), gnorm);
    }
  }
}

LaplaceEvaluation log_marginal_theta(const LatentModel& model, const Eigen::VectorXd& theta,
                                     const Eigen::VectorXd& init) {
  LaplaceEvaluation out{0.0, 0.0, newton_mode(model, theta, init)};
  const auto hv = hyper_values(model, theta);
  const auto prior = assemble_latent_prior(model, theta);
  const auto& psi = out.newton.mode;
  out.log_evidence = out.newton.log_likelihood - 0.5 * psi.dot(prior.matrix * psi) +
                     0.5 * prior_log_det(model, hv) - 0.5 * out.newton.factor.log_det();
  out.log_posterior = out.log_evidence + log_hyperprior(model, theta);
  return out;
}

namespace {

class GridEvaluator {
 public:
  GridEvaluator(const LatentModel& model, int max_evaluations)
      : model_(model), max_(max_evaluations) {}

  bool in_bounds(const Eigen::VectorXd& theta) const {
    for (Eigen::Index h = 0; h < theta.size(); ++h) {
      const auto b = hyper_bounds(model_.hypers[static_cast<std::size_t>(h)]);
      if (theta[h] < b.lo - 1e-12 || theta[h] > b.hi + 1e-12) return false;
    }
    return true;
  }

  /// Returns -inf (with an empty mode) when the inner optimization fails.
  HyperPoint evaluate(const Eigen::VectorXd& theta, const Eigen::VectorXd& init) {
    if (++count_ > max_) {
      throw ConvergenceError("hyperparameter search exceeded " + std::to_string(max_) +
                             " evaluations");
    }
    HyperPoint p;
    p.theta = theta;
    try {
      auto ev = log_marginal_theta(model_, theta, init);
      p.log_posterior = ev.log_posterior;
      p.mode = std::move(ev.newton.mode);
      p.newton_iterations = ev.newton.iterations;
      p.gradient_norm = ev.newton.gradient_norm;
    } catch (const ConvergenceError& e) {
      spdlog::debug("theta evaluation failed: {}", e.what());
      p.log_posterior = kNegInf;
    }
    if (!std::isfinite(p.log_posterior)) p.log_posterior = kNegInf;
    return p;
  }

  int count() const { return count_.load(); }

 private:
  const LatentModel& model_;
  int max_;
  std::atomic<int> count_{0};
};

struct ModeSearch {
  HyperPoint best;
  Eigen::MatrixXd neg_hessian;
};

ModeSearch locate_mode(const LatentModel& model, GridEvaluator& ev, Eigen::VectorXd theta) {
  const auto h = theta.size();
  ModeSearch out;
  out.best = ev.evaluate(theta, {});
  if (!std::isfinite(out.best.log_posterior)) {
    throw ConvergenceError("hyperparameter search: the starting point could not be evaluated");
  }
  const auto at = [&](const Eigen::VectorXd& t) -> HyperPoint {
    return ev.evaluate(t, out.best.mode);
  };
  const auto consider = [&](HyperPoint&& p) {
    if (p.log_posterior > out.best.log_posterior) out.best = std::move(p);
  };

  constexpr double kGolden = 0.6180339887498949;
  for (const double width : {3.0, 0.75}) {
    for (Eigen::Index j = 0; j < h; ++j) {
      const auto b = hyper_bounds(model.hypers[static_cast<std::size_t>(j)]);
      for (int shift = 0; shift < 6; ++shift) {
        const double centre = out.best.theta[j];
        double lo = std::max(b.lo, centre - width);
        double hi = std::min(b.hi, centre + width);
        Eigen::VectorXd t = out.best.theta;
        double c = hi - kGolden * (hi - lo);
        double d = lo + kGolden * (hi - lo);
        t[j] = c;
        auto pc = at(t);
        t[j] = d;
        auto pd = at(t);
        while (hi - lo > 0.02 * width) {
          if (pc.log_posterior >= pd.log_posterior) {
            hi = d;
            d = c;
            pd = std::move(pc);
            c = hi - kGolden * (hi - lo);
            t[j] = c;
            pc = at(t);
          } else {
            lo = c;
            c = d;
            pc = std::move(pd);
            d = lo + kGolden * (hi - lo);
            t[j] = d;
            pd = at(t);
          }
        }
        const double prev = out.best.theta[j];
        consider(std::move(pc));
        consider(std::move(pd));
        const double moved = std::abs(out.best.theta[j] - prev);
        const bool at_edge = moved > 0.9 * width && out.best.theta[j] > b.lo + 1e-6 &&
                             out.best.theta[j] < b.hi - 1e-6;
        if (!at_edge) break;
      }
    }
  }

  // Finite-difference Newton polishing and the curvature used for scaling.
  constexpr double delta = 0.05;
  const auto fd = [&](Eigen::VectorXd& grad, Eigen::MatrixXd& hess) {
    const double f0 = out.best.log_posterior;
    Eigen::VectorXd fp(h), fm(h);
    for (Eigen::Index i = 0; i < h; ++i) {
      Eigen::VectorXd t = out.best.theta;
      t[i] += delta;
      fp[i] = at(t).log_posterior;
      t[i] -= 2.0 * delta;
      fm[i] = at(t).log_posterior;
      grad[i] = (fp[i] - fm[i]) / (2.0 * delta);
      hess(i, i) = (fp[i] - 2.0 * f0 + fm[i]) / (delta * delta);
    }
    for (Eigen::Index i = 0; i < h; ++i) {
      for (Eigen::Index k = i + 1; k < h; ++k) {
        Eigen::VectorXd t = out.best.theta;
        t[i] += delta;
        t[k] += delta;
        const double fpp = at(t).log_posterior;
        t[i] -= 2.0 * delta;
        t[k] -= 2.0 * delta;
        const double fmm = at(t).log_posterior;
        hess(i, k) = hess(k, i) =
            (fpp + fmm + 2.0 * f0 - fp[i] - fm[i] - fp[k] - fm[k]) / (2.0 * delta * delta);
      }
    }
  };

  Eigen::VectorXd grad(h);
  Eigen::MatrixXd hess(h, h);
  for (int polish = 0; polish < 3; ++polish) {
    fd(grad, hess);
    if (!grad.allFinite() || !hess.allFinite()) break;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(-hess);
    if (eig.eigenvalues().minCoeff() <= 0.0) break;
    Eigen::VectorXd step = eig.eigenvectors() *
                           (eig.eigenvalues().cwiseInverse().asDiagonal() *
                            (eig.eigenvectors().transpose() * grad));
    if (step.norm() > 1.0) step *= 1.0 / step.norm();
    if (step.norm() < 1e-3) break;
    Eigen::VectorXd t = out.best.theta + step;
    if (!ev.in_bounds(t)) break;
    auto p = at(t);
    if (!(p.log_posterior > out.best.log_posterior)) break;
    out.best = std::move(p);
  }
  fd(grad, hess);
  out.neg_hessian = -hess;
  return out;
}

Eigen::MatrixXd grid_scale(const Eigen::MatrixXd& neg_hessian) {
  const auto h = neg_hessian.rows();
  if (h == 0) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd sym = 0.5 * (neg_hessian + neg_hessian.transpose());
  if (!sym.allFinite()) sym = Eigen::MatrixXd::Identity(h, h);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  Eigen::VectorXd lambda = eig.eigenvalues();
  // Curvature clamp: standardized sds between 1e-4 and 3 log units.
  for (Eigen::Index i = 0; i < h; ++i) lambda[i] = std::clamp(lambda[i], 1.0 / 9.0, 1e8);
  return eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal();
}

}  // namespace

HyperGrid explore_hypergrid(const LatentModel& model, const GridOptions& options) {
  const auto h = model.hyper_count();
  GridEvaluator ev(model, options.max_evaluations);
  HyperGrid grid;

  Eigen::VectorXd start(h);
  for (Eigen::Index j = 0; j < h; ++j) {
    const auto kind = model.hypers[static_cast<std::size_t>(j)];
    const auto b = hyper_bounds(kind);
    start[j] = options.start && options.start->size() == h ? (*options.start)[j]
                                                            : default_start(kind);
    start[j] = std::clamp(start[j], b.lo, b.hi);
  }

  if (h == 0) {
    auto p = ev.evaluate(start, {});
    if (!std::isfinite(p.log_posterior)) {
      throw ConvergenceError("model evaluation failed at the only grid point");
    }
    p.weight = 1.0;
    grid.points.push_back(std::move(p));
    grid.mode = start;
    grid.scale.resize(0, 0);
    grid.evaluations = ev.count();
    return grid;
  }

  auto search = locate_mode(model, ev, start);
  grid.mode = search.best.theta;
  grid.scale = grid_scale(search.neg_hessian);

  struct Node {
    std::vector<int> z;
    Eigen::VectorXd init;
  };
  std::map<std::vector<int>, bool> visited;
  std::vector<HyperPoint> kept;
  double best = search.best.log_posterior;

  const std::vector<int> origin(static_cast<std::size_t>(h), 0);
  visited[origin] = true;
  search.best.theta = grid.mode;
  kept.push_back(search.best);
  std::vector<std::pair<std::vector<int>, std::size_t>> expand{{origin, 0}};

  while (!expand.empty()) {
    std::vector<Node> frontier;
    for (const auto& [z, idx] : expand) {
      for (Eigen::Index j = 0; j < h; ++j) {
        for (const int dir : {-1, 1}) {
          auto nz = z;
          nz[static_cast<std::size_t>(j)] += dir;
          if (std::abs(nz[static_cast<std::size_t>(j)]) > options.max_radius) continue;
          if (visited.count(nz)) continue;
          visited[nz] = true;
          frontier.push_back({nz, kept[idx].mode});
        }
      }
    }
    std::vector<HyperPoint> wave(frontier.size());
    std::vector<char> valid(frontier.size(), 0);
    parallel_for(frontier.size(), options.jobs, [&](std::size_t i) {
      Eigen::VectorXd z(h);
      for (Eigen::Index j = 0; j < h; ++j) z[j] = frontier[i].z[static_cast<std::size_t>(j)];
      const Eigen::VectorXd theta = grid.mode + options.step * (grid.scale * z);
      if (!ev.in_bounds(theta)) return;
      wave[i] = ev.evaluate(theta, frontier[i].init);
      valid[i] = 1;
    });
    expand.clear();
    for (std::size_t i = 0; i < frontier.size(); ++i) {
      if (!valid[i] || !std::isfinite(wave[i].log_posterior)) continue;
      if (wave[i].log_posterior < best - options.drop) continue;
      best = std::max(best, wave[i].log_posterior);
      kept.push_back(std::move(wave[i]));
      expand.emplace_back(frontier[i].z, kept.size() - 1);
    }
  }

  double total = 0.0;
  for (const auto& p : kept) {
    if (p.log_posterior >= best - options.drop) total += std::exp(p.log_posterior - best);
  }
  for (auto& p : kept) {
    if (p.log_posterior < best - options.drop) continue;
    p.weight = std::exp(p.log_posterior - best) / total;
    grid.points.push_back(std::move(p));
  }
  grid.evaluations = ev.count();
  spdlog::debug("hyper grid: {} points from {} evaluations", grid.points.size(), grid.evaluations);
  return grid;
}

GaussianMixture latent_mixture(const HyperGrid& grid, const std::vector<ConditionalSummary>& cond,
                               Eigen::Index coordinate) {
  GaussianMixture m;
  for (std::size_t k = 0; k < grid.points.size(); ++k) {
    m.weights.push_back(grid.points[k].weight);
    m.means.push_back(cond[k].mean[coordinate]);
    m.sds.push_back(cond[k].sd[coordinate]);
  }
  return m;
}

namespace {

MarginalSummary summarize(const std::string& name, const GaussianMixture& mix, double level,
                          bool with_hpd) {
  MarginalSummary s;
  s.name = name;
  s.mean = mix.mean();
  s.sd = std::sqrt(std::max(mix.variance(), 0.0));
  if (with_hpd) {
    const auto iv = hpd_interval(mix, level);
    s.hpd_lower = iv.lower;
    s.hpd_upper = iv.upper;
  } else {
    const double z = boost::math::quantile(boost::math::normal(), 0.5 + 0.5 * level);
    s.hpd_lower = s.mean - z * s.sd;
    s.hpd_upper = s.mean + z * s.sd;
  }
  return s;
}

}  // namespace

LatentMarginals latent_marginals(const LatentModel& model, const HyperGrid& grid,
                                 const MarginalOptions& options) {
  if (grid.points.empty()) throw InputError("latent_marginals: empty grid");
  const auto q = model.fixed_count();
  const auto m = model.spatial.size();
  const auto n = model.n();
  LatentMarginals out;
  out.conditionals.resize(grid.points.size());
  parallel_for(grid.points.size(), options.jobs, [&](std::size_t k) {
    const auto& p = grid.points[k];
    const auto nr = newton_mode(model, p.theta, p.mode);
    const Eigen::MatrixXd cov = nr.factor.covariance();
    auto& c = out.conditionals[k];
    c.mean = nr.mode;
    c.sd = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    c.eta_mean = nr.eta;
    const Eigen::MatrixXd d = model.use_dense ? model.design_dense : to_dense(model.design);
    c.eta_sd = ((d * cov).array() * d.array()).rowwise().sum().matrix().cwiseMax(0.0).cwiseSqrt();
    if (m > 0) {
      const Eigen::MatrixXd z = to_dense(model.spatial.map);
      c.region_mean = z * nr.mode.tail(m);
      c.region_sd = ((z * cov.bottomRightCorner(m, m)).array() * z.array())
                        .rowwise()
                        .sum()
                        .matrix()
                        .cwiseMax(0.0)
                        .cwiseSqrt();
    } else {
      c.region_mean = Eigen::VectorXd::Zero(n);
      c.region_sd = Eigen::VectorXd::Zero(n);
    }
  });

  const auto names = model.latent_names();
  out.latent.resize(static_cast<std::size_t>(model.dim()));
  parallel_for(out.latent.size(), options.jobs, [&](std::size_t j) {
    const auto coord = static_cast<Eigen::Index>(j);
    const bool hpd = coord < q || options.spatial_hpd;
    out.latent[j] = summarize(names[j], latent_mixture(grid, out.conditionals, coord),
                              options.level, hpd);
  });

  if (m > 0) {
    out.region_effects.resize(static_cast<std::size_t>(n));
    parallel_for(out.region_effects.size(), options.jobs, [&](std::size_t i) {
      GaussianMixture mix;
      for (std::size_t k = 0; k < grid.points.size(); ++k) {
        mix.weights.push_back(grid.points[k].weight);
        mix.means.push_back(out.conditionals[k].region_mean[static_cast<Eigen::Index>(i)]);
        mix.sds.push_back(out.conditionals[k].region_sd[static_cast<Eigen::Index>(i)]);
      }
      out.region_effects[i] =
          summarize("region[" + std::to_string(i) + "]", mix, options.level, options.spatial_hpd);
    });
  }

  out.eta_mean = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < grid.points.size(); ++k) {
    out.eta_mean += grid.points[k].weight * out.conditionals[k].eta_mean;
  }

  // Hyperparameters: natural-scale moments from the grid weights and an HPD
  // from a log-scale kernel mixture centred on the grid points.
  const auto h = model.hyper_count();
  for (Eigen::Index j = 0; j < h; ++j) {
    double mean = 0.0;
    double second = 0.0;
    GaussianMixture mix;
    const double bandwidth =
        0.5 * 0.75 * std::max(std::sqrt((grid.scale * grid.scale.transpose())(j, j)), 1e-3);
    for (const auto& p : grid.points) {
      const double v = std::exp(p.theta[j]);
      mean += p.weight * v;
      second += p.weight * v * v;
      mix.weights.push_back(p.weight);
      mix.means.push_back(p.theta[j]);
      mix.sds.push_back(bandwidth);
    }
    MarginalSummary s;
    s.name = hyper_name(model.hypers[static_cast<std::size_t>(j)]);
    s.mean = mean;
    s.sd = std::sqrt(std::max(second - mean * mean, 0.0));
    const auto iv = hpd_interval(mix, options.level);
    s.hpd_lower = std::exp(iv.lower);
    s.hpd_upper = std::exp(iv.upper);
    out.hyper.push_back(s);
  }
  return out;
}

Eigen::VectorXd fitted_means(const LatentModel& model, const LatentMarginals& marginals) {
  const auto n = model.n();
  Eigen::VectorXd mu(n);
  switch (model.family) {
    case Family::GammaCount: {
      double alpha = model.priors.fixed_alpha.value_or(1.0);
      for (const auto& s : marginals.hyper) {
        if (s.name == hyper_name(HyperKind::LogAlpha)) alpha = s.mean;
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        GcParams p{alpha, alpha * std::exp(marginals.eta_mean[i]), 1.0};
        mu[i] = gc_mean(p);
      }
      break;
    }
    case Family::Poisson: mu = marginals.eta_mean.array().exp(); break;
    default: mu = marginals.eta_mean; break;
  }
  return mu;
}

PredictorPosterior predictor_posterior(const LatentModel& model, const HyperGrid& grid,
                                       const LatentMarginals& marginals) {
  PredictorPosterior p;
  p.family = model.family;
  p.y = model.y;
  for (std::size_t k = 0; k < grid.points.size(); ++k) {
    const auto hv = hyper_values(model, grid.points[k].theta);
    p.weights.push_back(grid.points[k].weight);
    p.dispersion.push_back(dispersion_of(model, hv));
    p.eta_mean.push_back(marginals.conditionals[k].eta_mean);
    p.eta_sd.push_back(marginals.conditionals[k].eta_sd);
  }
  return p;
}

const MarginalSummary* FitResult::find_fixed(const std::string& name) const {
  for (const auto& s : fixed_effects) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const MarginalSummary* FitResult::find_hyper(const std::string& name) const {
  for (const auto& s : hyperparameters) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

FitResult fit_model(const LatentModel& model, const FitOptions& options) {
  GridOptions go = options.grid;
  go.jobs = std::max(go.jobs, options.jobs);
  const auto grid = explore_hypergrid(model, go);
  MarginalOptions mo;
  mo.level = options.level;
  mo.spatial_hpd = options.spatial_hpd;
  mo.jobs = go.jobs;
  const auto marginals = latent_marginals(model, grid, mo);
  const Eigen::VectorXd fitted = fitted_means(model, marginals);

  FitResult r;
  r.family = model.family;
  r.method = model.method;
  for (const auto kind : model.hypers) r.hyper_names.push_back("log_" + hyper_name(kind));
  for (const auto& p : grid.points) {
    r.grid.push_back({std::vector<double>(p.theta.data(), p.theta.data() + p.theta.size()),
                      p.log_posterior, p.weight});
    r.diagnostics.newton_iterations.push_back(p.newton_iterations);
    r.diagnostics.gradient_norms.push_back(p.gradient_norm);
  }
  r.diagnostics.theta_evaluations = grid.evaluations;
  r.hyperparameters = marginals.hyper;
  const auto q = static_cast<std::size_t>(model.fixed_count());
  r.fixed_effects.assign(marginals.latent.begin(), marginals.latent.begin() + static_cast<long>(q));
  r.latent.assign(marginals.latent.begin() + static_cast<long>(q), marginals.latent.end());
  r.region_effects = marginals.region_effects;
  r.fitted.assign(fitted.data(), fitted.data() + fitted.size());
  r.criteria = compute_criteria(predictor_posterior(model, grid, marginals), fitted);
  return r;
}

namespace {

Eigen::MatrixXd select_covariates(const ModelSpec& spec, const Dataset& data,
                                  std::vector<std::string>& names) {
  const auto n = static_cast<Eigen::Index>(data.size());
  if (data.covariates.cols() != static_cast<Eigen::Index>(data.covariate_names.size())) {
    throw InputError("dataset covariate names do not match its columns");
  }
  if (data.covariates.cols() > 0 && data.covariates.rows() != n) {
    throw InputError("dataset covariate rows differ from the response length");
  }
  std::vector<Eigen::Index> cols;
  if (spec.covariates.empty()) {
    for (Eigen::Index j = 0; j < data.covariates.cols(); ++j) cols.push_back(j);
  } else {
    std::vector<std::string> unknown;
    for (const auto& c : spec.covariates) {
      const auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), c);
      if (it == data.covariate_names.end()) {
        unknown.push_back(c);
      } else {
        cols.push_back(it - data.covariate_names.begin());
      }
    }
    if (!unknown.empty()) {
      std::string msg = "unknown covariates:";
      for (const auto& u : unknown) msg += " " + u;
      throw InputError(msg);
    }
  }
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(cols.size()));
  names.clear();
  for (std::size_t k = 0; k < cols.size(); ++k) {
    x.col(static_cast<Eigen::Index>(k)) = data.covariates.col(cols[k]);
    names.push_back(data.covariate_names[static_cast<std::size_t>(cols[k])]);
  }
  return x;
}

}  // namespace

LatentModel build_latent_model(const ModelSpec& spec, const Dataset& data) {
  spec.priors.validate();
  const auto n = static_cast<Eigen::Index>(data.size());
  if (data.graph.n != data.size() && spec.method != Method::None) {
    throw InputError("adjacency graph covers " + std::to_string(data.graph.n) + " regions but the data has " +
                     std::to_string(n));
  }
  std::vector<std::string> names;
  Eigen::MatrixXd x = select_covariates(spec, data, names);

  const auto lattice_of = [&]() {
    if (!data.graph.centroids) {
      throw InputError("method " + to_string(spec.method) + " requires region centroids");
    }
    return snap_to_lattice(*data.graph.centroids, spec.lattice_rows, spec.lattice_cols);
  };

  SpatialBlock block = SpatialBlock::none(n);
  std::optional<LatticeMap> lattice;
  std::optional<RegionGraph> graph;
  switch (spec.method) {
    case Method::None: break;
    case Method::PS:
      block = SpatialBlock::icar(data.graph);
      graph = data.graph;
      break;
    case Method::NPS:
      lattice = lattice_of();
      block = SpatialBlock::rw2d(*lattice);
      break;
    case Method::RHZ: {
      const auto basis = rhz_basis(with_intercept(x));
      block = SpatialBlock::rhz(icar_precision(data.graph), basis.basis);
      graph = data.graph;
      break;
    }
    case Method::SPOCK: {
      graph = spock_graph(data.graph, with_intercept(x));
      block = SpatialBlock::icar(*graph);
      break;
    }
    case Method::SpatialPlus: {
      lattice = lattice_of();
      if (spec.confounded.empty()) {
        spdlog::warn("spatial+ without confounded covariates is the NPS model");
      }
      StageOneOptions so;
      so.priors = spec.priors;
      x = spatialplus_design(x, names, spec.confounded, *lattice, so).design;
      block = SpatialBlock::rw2d(*lattice);
      break;
    }
  }

  Eigen::MatrixXd fixed = x;
  if (spec.intercept) {
    fixed.resize(n, x.cols() + 1);
    fixed.col(0).setOnes();
    fixed.rightCols(x.cols()) = x;
    names.insert(names.begin(), "(Intercept)");
  }
  Eigen::VectorXd offset = data.offset.size() == 0 ? Eigen::VectorXd::Zero(n) : data.offset;
  auto model = assemble_model(spec.family, data.y, offset, fixed, names, std::move(block), spec.priors);
  model.method = spec.method;
  model.lattice = lattice;
  model.graph = graph;
  return model;
}

FitResult fit_model(const ModelSpec& spec, const Dataset& data, const FitOptions& options) {
  const auto model = build_latent_model(spec, data);
  auto result = fit_model(model, options);
  if (data.region_ids.size() == result.region_effects.size()) {
    for (std::size_t i = 0; i < data.region_ids.size(); ++i) {
      result.region_effects[i].name = data.region_ids[i];
    }
  }
  return result;
}

}  // namespace gcspatial
