// Python bindings. Structured results cross the boundary as JSON text and
// are decoded on the Python side; arrays go through Eigen.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <spdlog/spdlog.h>

#include "gcspatial/deconfound.hpp"
#include "gcspatial/error.hpp"
#include "gcspatial/gcdist.hpp"
#include "gcspatial/io.hpp"
#include "gcspatial/lgm.hpp"
#include "gcspatial/parallel.hpp"
#include "gcspatial/simstudy.hpp"

namespace py = pybind11;
using namespace gcspatial;

namespace {

Dataset make_dataset(const Eigen::VectorXd& y, const Eigen::MatrixXd& covariates,
                     const std::vector<std::string>& names,
                     const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                     const std::optional<Centroids>& centroids,
                     const std::optional<Eigen::VectorXd>& expected) {
  const auto n = static_cast<std::size_t>(y.size());
  if (static_cast<std::size_t>(covariates.rows()) != n) {
    throw InputError("covariates must have one row per region");
  }
  if (static_cast<std::size_t>(covariates.cols()) != names.size()) {
    throw InputError("one name per covariate column is required");
  }
  Dataset d;
  d.y = y;
  d.covariates = covariates;
  d.covariate_names = names;
  d.graph = RegionGraph::from_edges(n, edges);
  if (centroids) {
    if (static_cast<std::size_t>(centroids->rows()) != n) {
      throw InputError("centroids must have one row per region");
    }
    d.graph.centroids = *centroids;
  }
  d.offset = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (expected) {
    if (expected->size() != y.size()) throw InputError("expected must have one entry per region");
    d.offset = expected->array().log().matrix();
  }
  for (std::size_t i = 0; i < n; ++i) d.region_ids.push_back(std::to_string(i));
  return d;
}

}  // namespace

PYBIND11_MODULE(_gcspatial, m) {
  m.doc() = "Gamma-count spatial regression";
  spdlog::set_level(spdlog::level::err);

  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);

  m.def("set_log_level", [](const std::string& level) {
    spdlog::set_level(spdlog::level::from_str(level));
  });

  m.def(
      "gc_pmf",
      [](double alpha, double gamma, std::int64_t y, double exposure) {
        return gc_pmf({alpha, gamma, exposure}, y);
      },
      py::arg("alpha"), py::arg("gamma"), py::arg("y"), py::arg("exposure") = 1.0);
  m.def(
      "gc_log_pmf",
      [](double alpha, double gamma, std::int64_t y, double exposure) {
        return gc_log_pmf({alpha, gamma, exposure}, y);
      },
      py::arg("alpha"), py::arg("gamma"), py::arg("y"), py::arg("exposure") = 1.0);
  m.def(
      "gc_mean",
      [](double alpha, double gamma, double exposure) { return gc_mean({alpha, gamma, exposure}); },
      py::arg("alpha"), py::arg("gamma"), py::arg("exposure") = 1.0);
  m.def(
      "gc_sample",
      [](double alpha, double gamma, std::size_t n, std::uint64_t seed, double exposure) {
        return gc_sample({alpha, gamma, exposure}, seed, n);
      },
      py::arg("alpha"), py::arg("gamma"), py::arg("n"), py::arg("seed"),
      py::arg("exposure") = 1.0);

  m.def("rhz_basis", [](const Eigen::MatrixXd& x) { return rhz_basis(x).basis; }, py::arg("x"));
  m.def("spock_centroids", &spock_centroids, py::arg("centroids"), py::arg("x"));
  m.def("beta_star", &beta_star, py::arg("beta"), py::arg("x"), py::arg("phi"));

  m.def(
      "_fit_arrays",
      [](const std::string& spec_json, const Eigen::VectorXd& y, const Eigen::MatrixXd& covariates,
         const std::vector<std::string>& names,
         const std::vector<std::pair<std::size_t, std::size_t>>& edges,
         const std::optional<Centroids>& centroids, const std::optional<Eigen::VectorXd>& expected,
         int jobs) {
        const auto spec = nlohmann::json::parse(spec_json).get<ModelSpec>();
        const auto data = make_dataset(y, covariates, names, edges, centroids, expected);
        FitOptions opts;
        opts.jobs = resolve_jobs(jobs);
        FitResult r;
        {
          py::gil_scoped_release release;
          r = fit_model(spec, data, opts);
        }
        return nlohmann::json(r).dump();
      },
      py::arg("spec_json"), py::arg("y"), py::arg("covariates"), py::arg("names"),
      py::arg("edges"), py::arg("centroids") = py::none(), py::arg("expected") = py::none(),
      py::arg("jobs") = 0);

  m.def(
      "_fit_files",
      [](const std::string& spec_json, const std::string& regions, const std::string& adjacency,
         const std::string& centroids, int jobs) {
        const auto spec = nlohmann::json::parse(spec_json).get<ModelSpec>();
        const auto data = load_dataset({regions, adjacency, centroids});
        FitOptions opts;
        opts.jobs = resolve_jobs(jobs);
        FitResult r;
        {
          py::gil_scoped_release release;
          r = fit_model(spec, data, opts);
        }
        return nlohmann::json(r).dump();
      },
      py::arg("spec_json"), py::arg("regions"), py::arg("adjacency"), py::arg("centroids") = "",
      py::arg("jobs") = 0);

  m.def(
      "_simulate",
      [](const std::string& config_json) {
        auto cfg = nlohmann::json::parse(config_json).get<StudyConfig>();
        cfg.jobs = resolve_jobs(cfg.jobs);
        StudyReport report;
        {
          py::gil_scoped_release release;
          report = run_study(cfg);
        }
        return nlohmann::json(report).dump();
      },
      py::arg("config_json"));
}
