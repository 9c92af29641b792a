// gcspatial command-line interface.
//
//   gcspatial fit --spec spec.json --out result.json
//   gcspatial simulate --scenarios alpha=1,tau_x=11 --reps 1 --out-dir report/
//   gcspatial gcdist --alpha 0.5 --gamma 1 --max-y 20
//   gcspatial synth --out-dir data/
//
// Exit codes: 0 success, 2 input error, 3 convergence error, 4 internal.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "gcspatial/error.hpp"
#include "gcspatial/gcdist.hpp"
#include "gcspatial/io.hpp"
#include "gcspatial/lgm.hpp"
#include "gcspatial/parallel.hpp"
#include "gcspatial/simstudy.hpp"

namespace fs = std::filesystem;
using namespace gcspatial;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitConvergence = 3;
constexpr int kExitInternal = 4;

void configure_logging(const std::string& level) {
  std::string name = level;
  if (name.empty()) {
    const char* env = std::getenv("GCSPATIAL_LOG_LEVEL");
    name = env ? env : "warn";
  }
  const auto lvl = spdlog::level::from_str(name);
  if (lvl == spdlog::level::off && name != "off") throw InputError("unknown log level '" + name + "'");
  spdlog::set_level(lvl);
  spdlog::set_pattern("[%l] %v");
}

fs::path resolve(const fs::path& base, const std::string& file) {
  if (file.empty()) return {};
  const fs::path p(file);
  return p.is_absolute() ? p : base / p;
}

struct FitArgs {
  std::string spec;
  std::string regions;
  std::string adjacency;
  std::string centroids;
  std::string family;
  std::string method;
  std::string out = "fit.json";
  std::string criteria_csv;
  std::string regions_csv;
  int jobs = 0;
};

int cmd_fit(const FitArgs& a) {
  FitRequest req;
  fs::path base = fs::current_path();
  if (!a.spec.empty()) {
    req = read_json_file(a.spec).get<FitRequest>();
    base = fs::absolute(a.spec).parent_path();
  }
  DataFiles files;
  files.regions = resolve(base, req.data.regions).string();
  files.adjacency = resolve(base, req.data.adjacency).string();
  files.centroids = resolve(base, req.data.centroids).string();
  if (!a.regions.empty()) files.regions = a.regions;
  if (!a.adjacency.empty()) files.adjacency = a.adjacency;
  if (!a.centroids.empty()) files.centroids = a.centroids;
  if (!a.family.empty()) req.spec.family = parse_family(a.family);
  if (!a.method.empty()) req.spec.method = parse_method(a.method);

  const auto data = load_dataset(files);
  FitOptions opts;
  opts.jobs = resolve_jobs(a.jobs);
  const auto result = fit_model(req.spec, data, opts);
  write_text_file(a.out, nlohmann::json(result).dump(2) + "\n");
  if (!a.criteria_csv.empty()) {
    write_text_file(a.criteria_csv,
                    criteria_csv_header() +
                        criteria_csv_row(to_string(result.family) + "/" + to_string(result.method),
                                         result));
  }
  if (!a.regions_csv.empty()) write_text_file(a.regions_csv, region_effects_csv(result));
  for (const auto& s : result.hyperparameters) {
    std::printf("%-12s mean %.5g  sd %.5g  hpd [%.5g, %.5g]\n", s.name.c_str(), s.mean, s.sd,
                s.hpd_lower, s.hpd_upper);
  }
  for (const auto& s : result.fixed_effects) {
    std::printf("%-12s mean %.5g  sd %.5g  hpd [%.5g, %.5g]\n", s.name.c_str(), s.mean, s.sd,
                s.hpd_lower, s.hpd_upper);
  }
  std::printf("DIC %.4f  WAIC %.4f  LS %.4f  MSPE %.4f\n", result.criteria.dic,
              result.criteria.waic, result.criteria.log_score, result.criteria.mspe);
  return 0;
}

struct SimArgs {
  std::string config;
  std::string scenarios;
  std::string methods;
  std::string families;
  std::size_t reps = 0;
  int jobs = 0;
  std::int64_t seed = -1;
  std::string out_dir = "study";
  bool raw = false;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  for (char c : s + ",") {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else if (c != ' ') {
      item += c;
    }
  }
  return out;
}

int cmd_simulate(const SimArgs& a) {
  StudyConfig cfg;
  if (!a.config.empty()) cfg = read_json_file(a.config).get<StudyConfig>();
  if (!a.scenarios.empty()) cfg.scenarios = parse_scenarios(a.scenarios);
  if (!a.methods.empty()) {
    cfg.methods.clear();
    for (const auto& m : split_list(a.methods)) cfg.methods.push_back(parse_method(m));
  }
  if (!a.families.empty()) {
    cfg.families.clear();
    for (const auto& f : split_list(a.families)) cfg.families.push_back(parse_family(f));
  }
  if (a.reps > 0) cfg.replications = a.reps;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  cfg.jobs = resolve_jobs(a.jobs);
  const auto report = run_study(cfg);
  const fs::path dir(a.out_dir);
  write_text_file(dir / "cells.csv", cells_csv(report));
  write_text_file(dir / "report.json", nlohmann::json(report).dump(2) + "\n");
  if (a.raw) write_text_file(dir / "replications.ndjson", records_ndjson(report));
  std::printf("%zu cells written to %s\n", report.cells.size(), dir.string().c_str());
  return 0;
}

int cmd_gcdist(double alpha, double gamma, std::int64_t max_y) {
  if (max_y < 0) throw InputError("--max-y must be non-negative");
  const GcParams p{alpha, gamma, 1.0};
  try {
    p.validate();
  } catch (const std::domain_error& e) {
    throw InputError(e.what());
  }
  std::printf("y,pmf,log_pmf\n");
  for (std::int64_t y = 0; y <= max_y; ++y) {
    std::printf("%lld,%.17g,%.17g\n", static_cast<long long>(y), gc_pmf(p, y), gc_log_pmf(p, y));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gamma-count spatial regression with spatial deconfounding"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level;
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit one model to region data");
  fit_cmd->add_option("--spec", fit.spec, "Model spec JSON (with optional data file references)");
  fit_cmd->add_option("--regions", fit.regions, "Region CSV: id,y[,expected],covariates...");
  fit_cmd->add_option("--adjacency", fit.adjacency, "Edge list of 0-based region indices");
  fit_cmd->add_option("--centroids", fit.centroids, "Centroid CSV: id,x,y");
  fit_cmd->add_option("--family", fit.family, "gammacount, poisson");
  fit_cmd->add_option("--method", fit.method, "none, PS, NPS, RHZ, SPOCK, S+");
  fit_cmd->add_option("--out", fit.out, "FitResult JSON output path");
  fit_cmd->add_option("--criteria-csv", fit.criteria_csv, "Write a criteria CSV row");
  fit_cmd->add_option("--regions-csv", fit.regions_csv, "Write per-region posterior means");
  fit_cmd->add_option("--jobs", fit.jobs, "Worker threads (default GCSPATIAL_JOBS or 1)");
  fit_cmd->add_option("--seed", "Accepted for symmetry; fits are deterministic");

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run the confounding simulation study");
  sim_cmd->add_option("--config", sim.config, "StudyConfig JSON");
  sim_cmd->add_option("--scenarios", sim.scenarios, "e.g. alpha=1,tau_x=11;alpha=0.5,tau_x=4");
  sim_cmd->add_option("--methods", sim.methods, "Comma-separated methods");
  sim_cmd->add_option("--families", sim.families, "Comma-separated families");
  sim_cmd->add_option("--reps", sim.reps, "Replications per scenario");
  sim_cmd->add_option("--jobs", sim.jobs, "Worker threads (default GCSPATIAL_JOBS or 1)");
  sim_cmd->add_option("--seed", sim.seed, "Base seed");
  sim_cmd->add_option("--out-dir", sim.out_dir, "Output directory");
  sim_cmd->add_flag("--raw", sim.raw, "Also write per-replication NDJSON records");

  double alpha = 1.0;
  double gamma = 1.0;
  std::int64_t max_y = 10;
  auto* gc_cmd = app.add_subcommand("gcdist", "Print a gamma-count pmf table");
  gc_cmd->add_option("--alpha", alpha, "Shape of the waiting times")->required();
  gc_cmd->add_option("--gamma", gamma, "Rate of the waiting times")->required();
  gc_cmd->add_option("--max-y", max_y, "Largest count listed");

  std::string synth_dir = "synthetic";
  std::size_t synth_rows = 12;
  std::size_t synth_cols = 16;
  double synth_alpha = 0.55;
  std::uint64_t synth_seed = 7;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic region dataset");
  synth_cmd->add_option("--out-dir", synth_dir, "Output directory");
  synth_cmd->add_option("--rows", synth_rows, "Grid rows");
  synth_cmd->add_option("--cols", synth_cols, "Grid columns");
  synth_cmd->add_option("--alpha", synth_alpha, "Gamma-count dispersion");
  synth_cmd->add_option("--seed", synth_seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    configure_logging(log_level);
    if (*fit_cmd) return cmd_fit(fit);
    if (*sim_cmd) return cmd_simulate(sim);
    if (*gc_cmd) return cmd_gcdist(alpha, gamma, max_y);
    if (*synth_cmd) {
      write_synthetic_dataset(synth_dir, synth_rows, synth_cols, synth_alpha, synth_seed);
      std::printf("synthetic dataset written to %s\n", synth_dir.c_str());
      return 0;
    }
  } catch (const InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitInput;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitInput;
  } catch (const ConvergenceError& e) {
    std::fprintf(stderr, "convergence error: %s\n", e.what());
    return kExitConvergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kExitInternal;
  }
  return kExitInternal;
}
