#include "gcspatial/simstudy.hpp"

#include <spdlog/spdlog.h>

#include <boost/random/normal_distribution.hpp>

#include <bit>
#include <cmath>
#include <sstream>

#include "gcspatial/deconfound.hpp"
#include "gcspatial/error.hpp"
#include "gcspatial/factor.hpp"
#include "gcspatial/gcdist.hpp"
#include "gcspatial/io.hpp"
#include "gcspatial/parallel.hpp"

namespace gcspatial {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::initializer_list<std::uint64_t> key) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (auto k : key) {
    words.push_back(static_cast<std::uint32_t>(k));
    words.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

Eigen::VectorXd normals(std::mt19937_64& engine, Eigen::Index n) {
  boost::random::normal_distribution<double> z(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = z(engine);
  return v;
}

}  // namespace

std::vector<Scenario> StudyConfig::expanded_scenarios() const {
  if (!scenarios.empty()) return scenarios;
  std::vector<Scenario> out;
  for (double a : alphas) {
    for (double t : tau_xs) out.push_back({a, t});
  }
  return out;
}

void StudyConfig::validate() const {
  if (replications < 1) throw InputError("study: replications must be at least 1");
  const auto sc = expanded_scenarios();
  if (sc.empty()) throw InputError("study: no scenarios");
  for (const auto& s : sc) {
    if (!(s.alpha > 0.0 && std::isfinite(s.alpha))) throw InputError("study: alpha must be positive");
    if (!(s.tau_x > 0.0 && std::isfinite(s.tau_x))) throw InputError("study: tau_x must be positive");
  }
  if (!(tau_phi > 0.0) || !(x1_variance > 0.0)) {
    throw InputError("study: tau_phi and x1_variance must be positive");
  }
  if (methods.empty() || families.empty()) throw InputError("study: no models to fit");
  for (auto f : families) {
    if (f != Family::GammaCount && f != Family::Poisson) {
      throw InputError("study: only gammacount and poisson families can be simulated");
    }
  }
  if (graph_file.empty() && (grid_rows < 2 || grid_cols < 2)) {
    throw InputError("study: generated lattice must be at least 2 x 2");
  }
  priors.validate();
}

const CellSummary* StudyReport::find(const Scenario& s, Family family, Method method) const {
  for (const auto& c : cells) {
    if (c.scenario == s && c.family == family && c.method == method) return &c;
  }
  return nullptr;
}

RegionGraph study_graph(const StudyConfig& config) {
  if (config.graph_file.empty()) return rook_lattice_graph(config.grid_rows, config.grid_cols);
  if (config.centroid_file.empty()) {
    throw InputError("study: a graph file needs a centroid file as well");
  }
  const auto cents = read_centroids_csv(config.centroid_file);
  auto graph = RegionGraph::from_edges(cents.ids.size(), read_edge_list(config.graph_file));
  graph.centroids = cents.coords;
  graph.validate();
  return graph;
}

Eigen::VectorXd sample_icar(const SparsePrecision& precision, double tau, std::mt19937_64& engine) {
  if (!(tau > 0.0)) throw InputError("sample_icar: tau must be positive");
  const SparseMatrix h = tau * precision.matrix;
  const Eigen::VectorXd jitter = Eigen::VectorXd::Constant(precision.dim(), 1e-8 * tau);
  const auto factor = ConstrainedFactor::sparse(h, precision.constraints, jitter);
  return factor.sample(normals(engine, precision.dim()));
}

Eigen::VectorXd sample_icar(const SparsePrecision& precision, double tau, std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  return sample_icar(precision, tau, engine);
}

ReplicationData generate_replication(const StudyConfig& config, const RegionGraph& graph,
                                     const Scenario& scenario, std::size_t rep) {
  const auto n = static_cast<Eigen::Index>(graph.n);
  // Field and covariates share one stream per replication across scenarios.
  auto base = stream(config.seed, {rep, 1});
  ReplicationData d;
  d.phi = sample_icar(icar_precision(graph), config.tau_phi, base);
  d.x1 = std::sqrt(config.x1_variance) * normals(base, n);
  const Eigen::VectorXd e = normals(base, n) / std::sqrt(scenario.tau_x);
  d.x2 = config.confounding * d.phi + e;
  d.eta = config.beta[0] * d.x1 + config.beta[1] * d.x2 + d.phi;
  auto counts = stream(config.seed, {rep, 2, std::bit_cast<std::uint64_t>(scenario.alpha),
                                     std::bit_cast<std::uint64_t>(scenario.tau_x)});
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const GcParams p{scenario.alpha, scenario.alpha * std::exp(d.eta[i]), 1.0};
    d.y[i] = static_cast<double>(gc_draw(p, counts));
  }
  return d;
}

bool targets_beta_star(Method method) {
  return method == Method::RHZ || method == Method::SPOCK || method == Method::SpatialPlus;
}

ReplicationRecord run_replication(const StudyConfig& config, const RegionGraph& graph,
                                  const Scenario& scenario, std::size_t rep) {
  ReplicationRecord rec;
  rec.scenario = scenario;
  rec.rep = rep;
  rec.data = generate_replication(config, graph, scenario, rep);
  const auto n = static_cast<Eigen::Index>(graph.n);

  Dataset data;
  data.y = rec.data.y;
  data.offset = Eigen::VectorXd::Zero(n);
  data.covariates.resize(n, 2);
  data.covariates.col(0) = rec.data.x1;
  data.covariates.col(1) = rec.data.x2;
  data.covariate_names = {"x1", "x2"};
  data.graph = graph;
  for (Eigen::Index i = 0; i < n; ++i) data.region_ids.push_back(std::to_string(i));

  const Eigen::Vector2d beta(config.beta[0], config.beta[1]);
  const Eigen::VectorXd bstar = beta_star(beta, data.covariates, rec.data.phi);
  rec.beta_star = {bstar[0], bstar[1]};

  FitOptions fo;
  fo.level = config.level;
  fo.spatial_hpd = false;
  for (const auto family : config.families) {
    for (const auto method : config.methods) {
      ModelEstimate est;
      est.family = family;
      est.method = method;
      est.target = targets_beta_star(method) ? rec.beta_star
                                             : std::array<double, 2>{beta[0], beta[1]};
      ModelSpec spec;
      spec.family = family;
      spec.method = method;
      spec.intercept = false;
      spec.priors = config.priors;
      spec.lattice_rows = config.lattice_rows;
      spec.lattice_cols = config.lattice_cols;
      if (method == Method::SpatialPlus) spec.confounded = {"x2"};
      Dataset fit_data = data;
      if (method == Method::None) fit_data.offset = rec.data.phi;
      try {
        const auto r = fit_model(spec, fit_data, fo);
        for (int j = 0; j < 2; ++j) {
          const auto& s = r.fixed_effects[static_cast<std::size_t>(j)];
          est.estimate[static_cast<std::size_t>(j)] = s.mean;
          est.lower[static_cast<std::size_t>(j)] = s.hpd_lower;
          est.upper[static_cast<std::size_t>(j)] = s.hpd_upper;
        }
        if (const auto* a = r.find_hyper("alpha")) est.alpha = a->mean;
        est.criteria = r.criteria;
        est.criteria.cpo.clear();
        est.ok = true;
      } catch (const ConvergenceError& e) {
        est.error = e.what();
        spdlog::warn("alpha={} tau_x={} rep={} {}/{}: {}", scenario.alpha, scenario.tau_x, rep,
                     to_string(family), to_string(method), e.what());
      }
      rec.fits.push_back(std::move(est));
    }
  }
  return rec;
}

std::vector<CellSummary> summarize_cells(const StudyConfig& config,
                                         const std::vector<ReplicationRecord>& records) {
  std::vector<CellSummary> cells;
  for (const auto& scenario : config.expanded_scenarios()) {
    for (const auto family : config.families) {
      for (const auto method : config.methods) {
        CellSummary c;
        c.scenario = scenario;
        c.family = family;
        c.method = method;
        double alpha_sum = 0.0;
        std::size_t alpha_count = 0;
        for (const auto& rec : records) {
          if (!(rec.scenario == scenario)) continue;
          for (const auto& f : rec.fits) {
            if (f.family != family || f.method != method) continue;
            if (!f.ok) {
              ++c.failed;
              continue;
            }
            ++c.ok;
            for (std::size_t j = 0; j < 2; ++j) {
              const double err = f.estimate[j] - f.target[j];
              c.mse[j] += err * err;
              c.mean_rb[j] += f.estimate[j] / f.target[j] - 1.0;
              c.coverage[j] += (f.lower[j] <= f.target[j] && f.target[j] <= f.upper[j]) ? 1.0 : 0.0;
            }
            if (f.alpha) {
              alpha_sum += *f.alpha;
              ++alpha_count;
            }
            c.dic += f.criteria.dic;
            c.waic += f.criteria.waic;
            c.log_score += f.criteria.log_score;
            c.mspe += f.criteria.mspe;
          }
        }
        if (c.ok > 0) {
          const double k = static_cast<double>(c.ok);
          for (std::size_t j = 0; j < 2; ++j) {
            c.mse[j] /= k;
            c.mean_rb[j] /= k;
            c.coverage[j] /= k;
          }
          c.dic /= k;
          c.waic /= k;
          c.log_score /= k;
          c.mspe /= k;
        }
        if (alpha_count > 0) c.alpha_mean = alpha_sum / static_cast<double>(alpha_count);
        cells.push_back(c);
      }
    }
  }
  return cells;
}

StudyReport run_study(const StudyConfig& config, const RegionGraph& graph) {
  config.validate();
  const auto scenarios = config.expanded_scenarios();
  const auto reps = config.replications;
  StudyReport report;
  report.config = config;
  report.records.resize(scenarios.size() * reps);
  parallel_for(report.records.size(), resolve_jobs(config.jobs), [&](std::size_t job) {
    const auto& s = scenarios[job / reps];
    const auto rep = job % reps;
    report.records[job] = run_replication(config, graph, s, rep);
    spdlog::info("alpha={} tau_x={} replication {} done", s.alpha, s.tau_x, rep);
  });
  report.cells = summarize_cells(config, report.records);
  std::ostringstream failures;
  bool any = false;
  for (const auto& c : report.cells) {
    const double total = static_cast<double>(c.ok + c.failed);
    if (static_cast<double>(c.failed) > kMaxFailureShare * total) {
      failures << " [alpha=" << c.scenario.alpha << " tau_x=" << c.scenario.tau_x << " "
               << to_string(c.family) << "/" << to_string(c.method) << ": " << c.failed << " of "
               << (c.ok + c.failed) << " failed]";
      any = true;
    }
  }
  if (any) throw ConvergenceError("study: too many failed fits:" + failures.str());
  return report;
}

StudyReport run_study(const StudyConfig& config) { return run_study(config, study_graph(config)); }

}  // namespace gcspatial
