#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <cmath>
#include <numbers>
#include <random>

#include "gcspatial/deconfound.hpp"
#include "gcspatial/error.hpp"
#include "gcspatial/gcdist.hpp"
#include "gcspatial/lgm.hpp"
#include "support/gaussian_oracle.hpp"

using namespace gcspatial;

namespace {

struct Toy {
  Dataset data;
  Eigen::VectorXd phi;
};

// Rook lattice with two covariates, one of them spatially smooth.
Toy make_toy(std::size_t rows, std::size_t cols, Family family, std::uint64_t seed,
             double alpha = 0.7) {
  Toy t;
  auto& d = t.data;
  d.graph = rook_lattice_graph(rows, cols);
  const auto n = static_cast<Eigen::Index>(rows * cols);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  t.phi.resize(n);
  d.covariates.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = (*d.graph.centroids)(i, 1);
    const double c = (*d.graph.centroids)(i, 0);
    t.phi[i] = 0.5 * std::sin(r / 2.0) + 0.4 * std::cos(c / 3.0);
    d.covariates(i, 0) = z(rng);
    d.covariates(i, 1) = -0.8 * t.phi[i] + 0.3 * z(rng);
  }
  t.phi.array() -= t.phi.mean();
  d.covariate_names = {"x1", "x2"};
  const Eigen::VectorXd eta =
      0.5 + 0.7 * d.covariates.col(0).array() - 1.0 * d.covariates.col(1).array() + t.phi.array();
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    switch (family) {
      case Family::Gaussian: d.y[i] = eta[i] + 0.4 * z(rng); break;
      case Family::Poisson: d.y[i] = std::poisson_distribution<int>(std::exp(eta[i]))(rng); break;
      default: d.y[i] = static_cast<double>(gc_draw({alpha, alpha * std::exp(eta[i]), 1.0}, rng));
    }
    d.region_ids.push_back("r" + std::to_string(i));
  }
  d.offset = Eigen::VectorXd::Zero(n);
  return t;
}

Eigen::VectorXd theta_for(const LatentModel& m, double log_tau_noise, double log_tau_spatial,
                          double log_alpha = 0.0) {
  Eigen::VectorXd th(m.hyper_count());
  for (std::size_t h = 0; h < m.hypers.size(); ++h) {
    switch (m.hypers[h]) {
      case HyperKind::LogAlpha: th[h] = log_alpha; break;
      case HyperKind::LogTauNoise: th[h] = log_tau_noise; break;
      case HyperKind::LogTauSpatial: th[h] = log_tau_spatial; break;
    }
  }
  return th;
}

HyperGrid single_point(const LatentModel& m, const Eigen::VectorXd& theta) {
  HyperGrid g;
  HyperPoint p;
  p.theta = theta;
  p.weight = 1.0;
  p.mode = newton_mode(m, theta).mode;
  g.points.push_back(p);
  g.mode = theta;
  g.scale = Eigen::MatrixXd::Identity(theta.size(), theta.size());
  return g;
}

void check_gaussian_exact(const LatentModel& m, double tol) {
  for (const auto& [tn, ts] : {std::pair{0.5, 1.0}, std::pair{2.0, -0.5}, std::pair{1.2, 3.0}}) {
    const Eigen::VectorXd theta = theta_for(m, tn, ts);
    const auto o = oracle::gaussian_posterior(m, std::exp(tn), std::exp(ts));
    const auto ev = log_marginal_theta(m, theta);
    CHECK(std::abs(ev.log_evidence - o.log_evidence) < tol);
    CHECK((ev.newton.mode - o.mean).cwiseAbs().maxCoeff() < tol);
    CHECK(ev.log_posterior - ev.log_evidence == doctest::Approx(log_hyperprior(m, theta)));

    MarginalOptions mo;
    const auto marg = latent_marginals(m, single_point(m, theta), mo);
    for (Eigen::Index j = 0; j < m.dim(); ++j) {
      CHECK(std::abs(marg.latent[static_cast<std::size_t>(j)].mean - o.mean[j]) < tol);
      CHECK(std::abs(marg.latent[static_cast<std::size_t>(j)].sd - std::sqrt(o.cov(j, j))) < tol);
    }
  }
}

}  // namespace

TEST_CASE("Gaussian ICAR model matches the dense conjugate oracle") {
  const auto t = make_toy(5, 6, Family::Gaussian, 1);
  ModelSpec spec;
  spec.family = Family::Gaussian;
  spec.method = Method::PS;
  const auto m = build_latent_model(spec, t.data);
  REQUIRE(m.use_dense);
  REQUIRE(m.hypers == std::vector<HyperKind>{HyperKind::LogTauNoise, HyperKind::LogTauSpatial});
  check_gaussian_exact(m, 1e-6);
}

TEST_CASE("Gaussian RHZ and RW2D models match the dense conjugate oracle") {
  const auto t = make_toy(6, 7, Family::Gaussian, 2);
  for (Method method : {Method::RHZ, Method::NPS}) {
    ModelSpec spec;
    spec.family = Family::Gaussian;
    spec.method = method;
    spec.lattice_rows = 5;
    spec.lattice_cols = 5;
    const auto m = build_latent_model(spec, t.data);
    check_gaussian_exact(m, 1e-6);
  }
}

TEST_CASE("Gaussian model without a spatial term") {
  const auto t = make_toy(4, 5, Family::Gaussian, 3);
  ModelSpec spec;
  spec.family = Family::Gaussian;
  spec.method = Method::None;
  const auto m = build_latent_model(spec, t.data);
  REQUIRE(m.hyper_count() == 1);
  const auto o = oracle::gaussian_posterior(m, std::exp(0.7), 1.0);
  const auto ev = log_marginal_theta(m, Eigen::VectorXd::Constant(1, 0.7));
  CHECK(std::abs(ev.log_evidence - o.log_evidence) < 1e-8);
}

TEST_CASE("sparse path stays close to the oracle") {
  const auto t = make_toy(8, 9, Family::Gaussian, 4);
  ModelSpec spec;
  spec.family = Family::Gaussian;
  spec.method = Method::PS;
  const auto m = build_latent_model(spec, t.data);
  REQUIRE_FALSE(m.use_dense);
  const Eigen::VectorXd theta = theta_for(m, 1.0, 0.5);
  const auto o = oracle::gaussian_posterior(m, std::exp(1.0), std::exp(0.5));
  const auto ev = log_marginal_theta(m, theta);
  CHECK(std::abs(ev.log_evidence - o.log_evidence) < 1e-5);
  CHECK((ev.newton.mode - o.mean).cwiseAbs().maxCoeff() < 1e-5);
  const Eigen::MatrixXd cov = ev.newton.factor.covariance();
  CHECK((cov - o.cov).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("grid log posterior equals the exact Gaussian posterior of theta") {
  const auto t = make_toy(4, 5, Family::Gaussian, 5);
  ModelSpec spec;
  spec.family = Family::Gaussian;
  spec.method = Method::PS;
  const auto m = build_latent_model(spec, t.data);
  const auto grid = explore_hypergrid(m);
  REQUIRE(grid.points.size() > 5);
  double total = 0.0;
  for (const auto& p : grid.points) {
    const auto hv = hyper_values(m, p.theta);
    const auto o = oracle::gaussian_posterior(m, hv.tau_noise, hv.tau_spatial);
    CHECK(std::abs(p.log_posterior - (o.log_evidence + log_hyperprior(m, p.theta))) < 1e-6);
    total += p.weight;
  }
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("log joint gradient matches finite differences") {
  const auto t = make_toy(4, 5, Family::GammaCount, 6);
  ModelSpec spec;
  spec.method = Method::PS;
  const auto m = build_latent_model(spec, t.data);
  const Eigen::VectorXd theta = theta_for(m, 0.0, 1.0, std::log(0.7));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z(0.0, 0.3);
  Eigen::VectorXd psi(m.dim());
  for (auto& v : psi) v = z(rng);
  const Eigen::VectorXd g = log_joint_gradient(m, theta, psi);
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < m.dim(); ++j) {
    Eigen::VectorXd a = psi, b = psi;
    a[j] += h;
    b[j] -= h;
    const double fd = (log_joint_density(m, theta, a) - log_joint_density(m, theta, b)) / (2 * h);
    CHECK(g[j] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("converged modes have vanishing gradients and centred spatial effects") {
  for (Family family : {Family::GammaCount, Family::Poisson}) {
    for (Method method : {Method::PS, Method::SPOCK, Method::NPS}) {
      const auto t = make_toy(6, 8, family, 7);
      ModelSpec spec;
      spec.family = family;
      spec.method = method;
      spec.lattice_rows = 6;
      spec.lattice_cols = 8;
      const auto m = build_latent_model(spec, t.data);
      const Eigen::VectorXd theta = theta_for(m, 0.0, 1.5, std::log(0.8));
      const auto nr = newton_mode(m, theta);
      // Finite-difference gradient projected on the constraint subspace.
      const double h = 1e-5;
      Eigen::VectorXd fd(m.dim());
      for (Eigen::Index j = 0; j < m.dim(); ++j) {
        Eigen::VectorXd a = nr.mode, b = nr.mode;
        a[j] += h;
        b[j] -= h;
        fd[j] = (log_joint_density(m, theta, a) - log_joint_density(m, theta, b)) / (2 * h);
      }
      if (m.constraints.rows() > 0) {
        const Eigen::MatrixXd c = m.constraints;
        fd -= c.transpose() * (c * c.transpose()).ldlt().solve(c * fd);
      }
      CHECK(fd.cwiseAbs().maxCoeff() <= 1e-6);
      if (m.constraints.rows() > 0) {
        CHECK((m.constraints * nr.mode).cwiseAbs().maxCoeff() <= 1e-8);
      }
      if (method == Method::PS || method == Method::SPOCK) {
        CHECK(std::abs(nr.mode.tail(m.spatial.size()).sum()) <= 1e-8);
      }
    }
  }
}

TEST_CASE("gamma-count with alpha fixed at one is the Poisson model") {
  const auto t = make_toy(5, 5, Family::Poisson, 8);
  ModelSpec gc;
  gc.family = Family::GammaCount;
  gc.method = Method::PS;
  gc.priors.fixed_alpha = 1.0;
  ModelSpec pois = gc;
  pois.family = Family::Poisson;
  const auto mg = build_latent_model(gc, t.data);
  const auto mp = build_latent_model(pois, t.data);
  REQUIRE(mg.hyper_count() == 1);
  const Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 1.3);
  const auto a = log_marginal_theta(mg, theta);
  const auto b = log_marginal_theta(mp, theta);
  CHECK(a.log_evidence == doctest::Approx(b.log_evidence).epsilon(1e-10));
  CHECK((a.newton.mode - b.newton.mode).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("gamma-count fit recovers the design and reports consistent summaries") {
  const auto t = make_toy(8, 10, Family::GammaCount, 9, 0.6);
  ModelSpec spec;
  spec.method = Method::PS;
  const auto r = fit_model(spec, t.data);
  CHECK(r.hyper_names == std::vector<std::string>{"log_alpha", "log_tau_spatial"});
  const auto* alpha = r.find_hyper("alpha");
  REQUIRE(alpha);
  CHECK(alpha->mean > 0.25);
  CHECK(alpha->mean < 1.5);
  CHECK(alpha->hpd_lower < alpha->mean);
  CHECK(alpha->mean < alpha->hpd_upper);
  const auto* b1 = r.find_fixed("x1");
  REQUIRE(b1);
  CHECK(b1->hpd_lower < 0.7);
  CHECK(0.7 < b1->hpd_upper);
  double wsum = 0.0;
  for (const auto& g : r.grid) wsum += g.weight;
  CHECK(wsum == doctest::Approx(1.0));
  CHECK(r.region_effects.size() == t.data.size());
  CHECK(r.region_effects[3].name == "r3");
  double phi_sum = 0.0;
  for (const auto& s : r.latent) phi_sum += s.mean;
  CHECK(std::abs(phi_sum) <= 1e-8);
  CHECK(r.fitted.size() == t.data.size());
  CHECK(std::isfinite(r.criteria.dic));
  CHECK(r.criteria.p_waic >= 0.0);
  for (double c : r.criteria.cpo) {
    CHECK(c > 0.0);
    CHECK(c <= 1.0);
  }
  for (double gn : r.diagnostics.gradient_norms) CHECK(gn < 1e-6);
}

TEST_CASE("deconfounded models have the expected latent structure") {
  const auto t = make_toy(6, 6, Family::Poisson, 10);
  ModelSpec spec;
  spec.family = Family::Poisson;
  spec.method = Method::RHZ;
  const auto rhz = build_latent_model(spec, t.data);
  CHECK(rhz.spatial.size() == 36 - 3);
  CHECK(rhz.constraints.rows() == 0);
  CHECK((rhz.fixed_design.transpose() * to_dense(rhz.spatial.map)).cwiseAbs().maxCoeff() < 1e-10);

  spec.method = Method::SPOCK;
  const auto spock = build_latent_model(spec, t.data);
  REQUIRE(spock.graph);
  CHECK(spock.graph->components().size() == 1);

  spec.method = Method::SpatialPlus;
  spec.confounded = {"x2"};
  spec.lattice_rows = 6;
  spec.lattice_cols = 6;
  const auto sp = build_latent_model(spec, t.data);
  CHECK(sp.fixed_design.col(1) == t.data.covariates.col(0));
  CHECK(sp.fixed_design.col(2) != t.data.covariates.col(1));
  CHECK(sp.spatial.kind == SpatialKind::Rw2d);
}

TEST_CASE("model assembly rejects bad input") {
  auto t = make_toy(4, 4, Family::Poisson, 11);
  ModelSpec spec;
  spec.family = Family::Poisson;
  spec.covariates = {"x1", "nope", "zip"};
  try {
    build_latent_model(spec, t.data);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()) == "unknown covariates: nope zip");
  }
  spec.covariates.clear();
  spec.family = Family::NegativeBinomial;
  CHECK_THROWS_AS(build_latent_model(spec, t.data), InputError);
  spec.family = Family::Poisson;
  t.data.y[2] = 1.5;
  CHECK_THROWS_AS(build_latent_model(spec, t.data), InputError);
  t.data.y[2] = 1.0;
  spec.priors.beta_precision = -1.0;
  CHECK_THROWS_AS(build_latent_model(spec, t.data), InputError);
  spec.priors.beta_precision = 1e-3;
  auto m = build_latent_model(spec, t.data);
  CHECK_THROWS_AS(log_marginal_theta(m, Eigen::VectorXd::Zero(3)), InputError);
}

TEST_CASE("offsets shift the intercept") {
  auto t = make_toy(5, 5, Family::Poisson, 12);
  ModelSpec spec;
  spec.family = Family::Poisson;
  spec.method = Method::None;
  // A near-flat coefficient prior, so shrinkage does not break the shift.
  spec.priors.beta_precision = 1e-9;
  const auto a = fit_model(spec, t.data);
  t.data.offset = Eigen::VectorXd::Constant(25, 0.4);
  const auto b = fit_model(spec, t.data);
  CHECK(b.find_fixed("(Intercept)")->mean ==
        doctest::Approx(a.find_fixed("(Intercept)")->mean - 0.4).epsilon(1e-6));
  CHECK(b.find_fixed("x1")->mean == doctest::Approx(a.find_fixed("x1")->mean).epsilon(1e-6));
}

TEST_CASE("PC prior density integrates to one over log precision") {
  double s = 0.0;
  const double h = 0.001;
  for (double t = -30.0; t < 60.0; t += h) s += std::exp(pc_log_prior_log_precision(t, 4.6)) * h;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("parallel grid evaluation gives identical results") {
  const auto t = make_toy(5, 6, Family::GammaCount, 13);
  ModelSpec spec;
  spec.method = Method::PS;
  FitOptions one;
  FitOptions three;
  three.jobs = 3;
  CHECK(fit_model(spec, t.data, one) == fit_model(spec, t.data, three));
}
