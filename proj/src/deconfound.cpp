#include "gcspatial/deconfound.hpp"

#include <spdlog/spdlog.h>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gcspatial/error.hpp"
#include "gcspatial/parallel.hpp"

namespace gcspatial {

namespace {

std::string list_indices(const std::vector<Eigen::Index>& idx) {
  std::ostringstream s;
  for (std::size_t k = 0; k < idx.size(); ++k) s << (k ? ", " : "") << idx[k];
  return s.str();
}

void require_full_rank(const Eigen::MatrixXd& x, const char* where) {
  const auto dep = dependent_columns(x);
  if (!dep.empty()) {
    throw InputError(std::string(where) + ": design is rank deficient; dependent columns: " +
                     list_indices(dep));
  }
}

}  // namespace

std::vector<Eigen::Index> dependent_columns(const Eigen::MatrixXd& x) {
  std::vector<Eigen::Index> dep;
  Eigen::MatrixXd basis(x.rows(), 0);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::VectorXd v = x.col(j);
    const double norm = v.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      dep.push_back(j);
      continue;
    }
    // Two passes of Gram-Schmidt against the accepted columns.
    for (int pass = 0; pass < 2; ++pass) v -= basis * (basis.transpose() * v);
    if (v.norm() <= std::sqrt(kRankTolerance) * norm) {
      dep.push_back(j);
      continue;
    }
    basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
    basis.col(basis.cols() - 1) = v / v.norm();
  }
  return dep;
}

RhzBasis rhz_basis(const Eigen::MatrixXd& x) {
  const auto n = x.rows();
  const auto q = x.cols();
  if (n == 0) throw InputError("rhz_basis: empty design");
  if (q >= n) {
    throw InputError("rhz_basis: design with " + std::to_string(q) + " columns spans all " +
                     std::to_string(n) + " regions; the complement is empty");
  }
  RhzBasis out;
  out.q = q;
  if (q == 0) {
    out.basis = Eigen::MatrixXd::Identity(n, n);
    return out;
  }
  require_full_rank(x, "rhz_basis");
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
  const Eigen::MatrixXd full = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  out.basis = full.rightCols(n - q);
  return out;
}

Eigen::MatrixXd rhz_transform(const SparsePrecision& precision, const RhzBasis& basis) {
  if (precision.dim() != basis.basis.rows()) {
    throw InputError("rhz_transform: precision dimension differs from basis rows");
  }
  const Eigen::MatrixXd ab = precision.matrix * basis.basis;
  Eigen::MatrixXd m = basis.basis.transpose() * ab;
  m = 0.5 * (m + m.transpose()).eval();
  if (m.rows() > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-10 * std::max(hi, 1.0))) {
      spdlog::warn(
          "rhz_transform: B'AB is not positive definite (smallest eigenvalue {:.3g}); the design "
          "probably lacks an intercept",
          lo);
    }
  }
  return m;
}

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double v = x(0, j);
    if (v != 0.0 && (x.col(j).array() == v).all()) return x;
  }
  Eigen::MatrixXd out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

Centroids spock_centroids(const Centroids& centroids, const Eigen::MatrixXd& x) {
  if (x.rows() != centroids.rows()) {
    throw InputError("spock_centroids: design rows differ from centroid count");
  }
  if (x.cols() == 0) return centroids;
  require_full_rank(x, "spock_centroids");
  // Projection through a thin orthonormal basis keeps the result idempotent
  // to rounding error.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(x.rows(), x.cols());
  Centroids out = centroids - q * (q.transpose() * centroids);
  out -= q * (q.transpose() * out);
  return out;
}

RegionGraph spock_graph(const RegionGraph& graph, const Eigen::MatrixXd& x, bool bridge) {
  graph.validate();
  if (!graph.centroids) throw InputError("spock_graph: the graph has no centroids");
  const Centroids projected = spock_centroids(*graph.centroids, x);
  std::vector<std::size_t> k(graph.n);
  for (std::size_t i = 0; i < graph.n; ++i) k[i] = graph.degree(i);
  RegionGraph out = knn_graph(projected, k);
  out.centroids = graph.centroids;
  if (!bridge) return out;
  auto comps = out.components();
  if (comps.size() > 1) {
    spdlog::debug("spock_graph: joining {} components", comps.size());
  }
  while (comps.size() > 1) {
    std::vector<char> in_first(graph.n, 0);
    for (auto v : comps.front()) in_first[v] = 1;
    double best = std::numeric_limits<double>::infinity();
    std::pair<std::size_t, std::size_t> edge{0, 0};
    for (auto i : comps.front()) {
      for (std::size_t j = 0; j < graph.n; ++j) {
        if (in_first[j]) continue;
        const double d = (projected.row(static_cast<Eigen::Index>(i)) -
                          projected.row(static_cast<Eigen::Index>(j)))
                             .squaredNorm();
        if (d < best) {
          best = d;
          edge = {i, j};
        }
      }
    }
    auto& a = out.neighbors[edge.first];
    auto& b = out.neighbors[edge.second];
    a.insert(std::lower_bound(a.begin(), a.end(), edge.second), edge.second);
    b.insert(std::lower_bound(b.begin(), b.end(), edge.first), edge.first);
    comps = out.components();
  }
  return out;
}

Eigen::VectorXd beta_star(const Eigen::VectorXd& beta, const Eigen::MatrixXd& x,
                          const Eigen::VectorXd& phi) {
  if (x.cols() != beta.size() || x.rows() != phi.size()) {
    throw InputError("beta_star: dimension mismatch");
  }
  return beta + x.colPivHouseholderQr().solve(phi);
}

StageOneFit spatialplus_residualize(const Eigen::VectorXd& x, const LatticeMap& lattice,
                                    const StageOneOptions& options) {
  const auto n = x.size();
  if (static_cast<std::size_t>(n) != lattice.cell_of_region.size()) {
    throw InputError("spatialplus_residualize: lattice does not cover every region");
  }
  if (!x.allFinite()) throw InputError("spatialplus_residualize: non-finite covariate value");
  Eigen::MatrixXd fixed(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto cell = lattice.cell_of_region[static_cast<std::size_t>(i)];
    fixed(i, 0) = 1.0;
    fixed(i, 1) = static_cast<double>(lattice.row_of(cell));
    fixed(i, 2) = static_cast<double>(lattice.col_of(cell));
  }
  const double centre_r = 0.5 * static_cast<double>(lattice.rows - 1);
  const double centre_c = 0.5 * static_cast<double>(lattice.cols - 1);
  fixed.col(1).array() -= centre_r;
  fixed.col(2).array() -= centre_c;
  // Without spread in both directions the ramps are not identified by the data.
  const auto dep = dependent_columns(fixed);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < 3; ++j) {
    if (std::find(dep.begin(), dep.end(), j) == dep.end()) keep.push_back(j);
  }
  Eigen::MatrixXd design(n, static_cast<Eigen::Index>(keep.size()));
  std::vector<std::string> names;
  const char* labels[3] = {"(Intercept)", "row", "col"};
  for (std::size_t k = 0; k < keep.size(); ++k) {
    design.col(static_cast<Eigen::Index>(k)) = fixed.col(keep[k]);
    names.emplace_back(labels[keep[k]]);
  }

  PriorSpec priors = options.priors;
  priors.fixed_alpha.reset();
  const LatentModel model = assemble_model(Family::Gaussian, x, Eigen::VectorXd::Zero(n), design,
                                           names, SpatialBlock::rw2d(lattice), priors);

  // theta = (log tau_noise, log tau_smooth) with log tau_smooth = t + rho.
  const auto evaluate = [&model](double t, double rho, const Eigen::VectorXd& init) {
    Eigen::VectorXd theta(2);
    for (Eigen::Index h = 0; h < 2; ++h) {
      theta[h] = model.hypers[static_cast<std::size_t>(h)] == HyperKind::LogTauNoise ? t : t + rho;
    }
    return log_marginal_theta(model, theta, init);
  };

  const double scale = std::max((x.array() - x.mean()).square().mean(), 1e-12);
  double best_t = -std::log(scale);
  double best_rho = 0.0;
  double best_lp = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd mode;
  if (options.fixed_theta) {
    best_t = options.fixed_theta->first;
    best_rho = options.fixed_theta->second;
  } else {
    constexpr double kGolden = 0.6180339887498949;
    constexpr double kTlo = -8.0;
    constexpr double kThi = 16.0;
    for (double rho = options.log_ratio_min; rho <= options.log_ratio_max + 1e-12;
         rho += options.log_ratio_step) {
      // Golden-section profile over log tau_noise for this ratio.
      double a = kTlo;
      double b = kThi;
      double c = b - kGolden * (b - a);
      double d = a + kGolden * (b - a);
      Eigen::VectorXd init = mode;
      double fc = evaluate(c, rho, init).log_posterior;
      double fd = evaluate(d, rho, init).log_posterior;
      while (b - a > 1e-3) {
        if (fc >= fd) {
          b = d;
          d = c;
          fd = fc;
          c = b - kGolden * (b - a);
          fc = evaluate(c, rho, init).log_posterior;
        } else {
          a = c;
          c = d;
          fc = fd;
          d = a + kGolden * (b - a);
          fd = evaluate(d, rho, init).log_posterior;
        }
      }
      const double t = 0.5 * (a + b);
      const auto ev = evaluate(t, rho, init);
      if (ev.log_posterior > best_lp) {
        best_lp = ev.log_posterior;
        best_t = t;
        best_rho = rho;
        mode = ev.newton.mode;
      }
    }
  }
  const auto ev = evaluate(best_t, best_rho, mode);
  StageOneFit fit;
  fit.smooth = model.design * ev.newton.mode;
  fit.residual = x - fit.smooth;
  fit.tau_noise = std::exp(best_t);
  fit.tau_smooth = std::exp(best_t + best_rho);
  fit.log_posterior = ev.log_posterior;
  return fit;
}

ResidualizedDesign spatialplus_design(const Eigen::MatrixXd& x,
                                      const std::vector<std::string>& names,
                                      const std::vector<std::string>& confounded,
                                      const LatticeMap& lattice, const StageOneOptions& options,
                                      int jobs) {
  if (static_cast<std::size_t>(x.cols()) != names.size()) {
    throw InputError("spatialplus_design: column names do not match the design");
  }
  std::vector<Eigen::Index> cols;
  std::vector<std::string> missing;
  for (const auto& c : confounded) {
    const auto it = std::find(names.begin(), names.end(), c);
    if (it == names.end()) {
      missing.push_back(c);
    } else {
      cols.push_back(it - names.begin());
    }
  }
  if (!missing.empty()) {
    std::string msg = "spatialplus_design: unknown confounded covariates:";
    for (const auto& m : missing) msg += " " + m;
    throw InputError(msg);
  }
  ResidualizedDesign out;
  out.design = x;
  out.fits.resize(cols.size());
  parallel_for(cols.size(), jobs, [&](std::size_t k) {
    out.fits[k] = spatialplus_residualize(x.col(cols[k]), lattice, options);
    out.fits[k].name = names[static_cast<std::size_t>(cols[k])];
  });
  for (std::size_t k = 0; k < cols.size(); ++k) out.design.col(cols[k]) = out.fits[k].residual;
  return out;
}

}  // namespace gcspatial
