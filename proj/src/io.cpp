#include "gcspatial/io.hpp"

#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "gcspatial/error.hpp"
#include "gcspatial/gcdist.hpp"

namespace gcspatial {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(field));
      field.clear();
    } else {
      field += c;
    }
  }
  out.push_back(trim(field));
  return out;
}

[[noreturn]] void fail_at(const std::string& source, std::size_t line, const std::string& what) {
  throw InputError(source + ":" + std::to_string(line) + ": " + what);
}

double parse_number(const std::string& text, const std::string& source, std::size_t line,
                    const std::string& column) {
  double v = 0.0;
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    fail_at(source, line, "column '" + column + "': cannot parse '" + text + "' as a number");
  }
  if (!std::isfinite(v)) fail_at(source, line, "column '" + column + "' is not finite");
  return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

std::string list(const std::vector<std::string>& items, std::size_t limit = 50) {
  std::string s;
  for (std::size_t i = 0; i < items.size() && i < limit; ++i) s += (i ? ", " : "") + items[i];
  if (items.size() > limit) s += ", ... (" + std::to_string(items.size()) + " total)";
  return s;
}

}  // namespace

RegionTable parse_regions_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split_csv(line);
      break;
    }
  }
  if (header.empty()) throw InputError(source + ": empty region file");
  if (header.size() < 2 || header[0] != "id" || header[1] != "y") {
    fail_at(source, lineno, "header must start with 'id,y'");
  }
  const bool has_expected = header.size() > 2 && header[2] == "expected";
  const std::size_t first_cov = has_expected ? 3 : 2;
  RegionTable t;
  t.covariate_names.assign(header.begin() + static_cast<long>(first_cov), header.end());
  {
    std::set<std::string> seen;
    for (const auto& h : header) {
      if (!seen.insert(h).second) fail_at(source, lineno, "duplicate column '" + h + "'");
    }
  }
  std::vector<double> y, expected;
  std::vector<std::vector<double>> cov;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      fail_at(source, lineno,
              "expected " + std::to_string(header.size()) + " fields, found " +
                  std::to_string(fields.size()));
    }
    if (fields[0].empty()) fail_at(source, lineno, "empty id");
    if (!ids.insert(fields[0]).second) fail_at(source, lineno, "duplicate id '" + fields[0] + "'");
    t.ids.push_back(fields[0]);
    const double yv = parse_number(fields[1], source, lineno, "y");
    if (yv < 0.0 || std::floor(yv) != yv) {
      fail_at(source, lineno, "y must be a non-negative integer count");
    }
    y.push_back(yv);
    if (has_expected) {
      const double e = parse_number(fields[2], source, lineno, "expected");
      if (!(e > 0.0)) fail_at(source, lineno, "expected must be positive");
      expected.push_back(e);
    } else {
      expected.push_back(1.0);
    }
    std::vector<double> row;
    for (std::size_t c = first_cov; c < fields.size(); ++c) {
      row.push_back(parse_number(fields[c], source, lineno, header[c]));
    }
    cov.push_back(std::move(row));
  }
  if (t.ids.empty()) throw InputError(source + ": no region rows");
  const auto n = static_cast<Eigen::Index>(t.ids.size());
  t.y = Eigen::Map<Eigen::VectorXd>(y.data(), n);
  t.expected = Eigen::Map<Eigen::VectorXd>(expected.data(), n);
  t.covariates.resize(n, static_cast<Eigen::Index>(t.covariate_names.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < t.covariates.cols(); ++j) {
      t.covariates(i, j) = cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  return t;
}

RegionTable read_regions_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_regions_csv(in, path.string());
}

CentroidTable parse_centroids_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  std::vector<std::array<double, 2>> xy;
  CentroidTable t;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    if (!header) {
      if (f.size() != 3 || f[0] != "id" || f[1] != "x" || f[2] != "y") {
        fail_at(source, lineno, "header must be 'id,x,y'");
      }
      header = true;
      continue;
    }
    if (f.size() != 3) {
      fail_at(source, lineno, "expected 3 fields, found " + std::to_string(f.size()));
    }
    if (!ids.insert(f[0]).second) fail_at(source, lineno, "duplicate id '" + f[0] + "'");
    t.ids.push_back(f[0]);
    xy.push_back({parse_number(f[1], source, lineno, "x"), parse_number(f[2], source, lineno, "y")});
  }
  if (!header) throw InputError(source + ": empty centroid file");
  t.coords.resize(static_cast<Eigen::Index>(xy.size()), 2);
  for (std::size_t i = 0; i < xy.size(); ++i) {
    t.coords(static_cast<Eigen::Index>(i), 0) = xy[i][0];
    t.coords(static_cast<Eigen::Index>(i), 1) = xy[i][1];
  }
  return t;
}

CentroidTable read_centroids_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_centroids_csv(in, path.string());
}

std::vector<std::pair<std::size_t, std::size_t>> parse_edge_list(std::istream& in,
                                                                 const std::string& source) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream s(line);
    std::string a, b, extra;
    if (!(s >> a)) continue;
    if (!(s >> b) || (s >> extra)) fail_at(source, lineno, "expected two region indices");
    const auto idx = [&](const std::string& v) {
      std::size_t out = 0;
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
      if (ec != std::errc() || ptr != v.data() + v.size()) {
        fail_at(source, lineno, "'" + v + "' is not a region index");
      }
      return out;
    };
    edges.emplace_back(idx(a), idx(b));
  }
  return edges;
}

std::vector<std::pair<std::size_t, std::size_t>> read_edge_list(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_edge_list(in, path.string());
}

Dataset load_dataset(const DataFiles& files) {
  if (files.regions.empty()) throw InputError("no region file given");
  const auto regions = read_regions_csv(files.regions);
  const auto n = regions.ids.size();
  Dataset d;
  d.region_ids = regions.ids;
  d.y = regions.y;
  d.offset = regions.expected.array().log();
  d.covariates = regions.covariates;
  d.covariate_names = regions.covariate_names;
  if (!files.adjacency.empty()) {
    const auto edges = read_edge_list(files.adjacency);
    for (const auto& [i, j] : edges) {
      if (i >= n || j >= n) {
        throw InputError(files.adjacency + ": edge (" + std::to_string(i) + ", " +
                         std::to_string(j) + ") refers to a region beyond the " +
                         std::to_string(n) + " in " + files.regions);
      }
    }
    d.graph = RegionGraph::from_edges(n, edges);
  } else {
    d.graph = RegionGraph(n);
  }
  if (!files.centroids.empty()) {
    const auto cents = read_centroids_csv(files.centroids);
    std::map<std::string, Eigen::Index> where;
    for (std::size_t i = 0; i < cents.ids.size(); ++i) {
      where[cents.ids[i]] = static_cast<Eigen::Index>(i);
    }
    std::vector<std::string> missing;
    std::vector<std::string> extra;
    std::set<std::string> region_set(regions.ids.begin(), regions.ids.end());
    for (const auto& id : regions.ids) {
      if (!where.count(id)) missing.push_back(id);
    }
    for (const auto& id : cents.ids) {
      if (!region_set.count(id)) extra.push_back(id);
    }
    if (!missing.empty() || !extra.empty()) {
      std::string msg = "region ids differ between " + files.regions + " and " + files.centroids;
      if (!missing.empty()) {
        msg += "; without centroid: " + list(missing, missing.size());
      }
      if (!extra.empty()) msg += "; centroid without region: " + list(extra, extra.size());
      throw InputError(msg);
    }
    Centroids c(static_cast<Eigen::Index>(n), 2);
    for (std::size_t i = 0; i < n; ++i) {
      c.row(static_cast<Eigen::Index>(i)) = cents.coords.row(where[regions.ids[i]]);
    }
    d.graph.centroids = c;
  }
  d.graph.validate();
  return d;
}

void write_synthetic_dataset(const std::filesystem::path& dir, std::size_t rows, std::size_t cols,
                             double alpha, std::uint64_t seed) {
  if (rows < 4 || cols < 4) throw InputError("synthetic map must be at least 4 x 4");
  if (!(alpha > 0.0)) throw InputError("alpha must be positive");
  std::filesystem::create_directories(dir);
  std::mt19937_64 engine(seed);
  boost::random::normal_distribution<double> z(0.0, 1.0);
  boost::random::uniform_real_distribution<double> u(-0.3, 0.3);
  boost::random::uniform_real_distribution<double> expected_draw(3.0, 40.0);

  auto graph = rook_lattice_graph(rows, cols);
  const auto n = static_cast<Eigen::Index>(graph.n);
  Centroids cents = *graph.centroids;
  for (Eigen::Index i = 0; i < n; ++i) {
    cents(i, 0) += u(engine);
    cents(i, 1) += u(engine);
  }
  const Eigen::VectorXd phi = sample_icar(icar_precision(graph), 3.0, engine);
  Eigen::VectorXd sec(n);
  for (Eigen::Index i = 0; i < n; ++i) sec[i] = -0.8 * phi[i] + 0.3 * z(engine);
  sec = (sec.array() - sec.mean()) / std::sqrt((sec.array() - sec.mean()).square().mean());

  std::ostringstream regions;
  regions << "id,y,expected,SEc\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = std::round(expected_draw(engine) * 10.0) / 10.0;
    const double eta = std::log(e) - 0.05 * sec[i] + 0.5 * phi[i];
    const GcParams p{alpha, alpha * std::exp(eta), 1.0};
    regions << "m" << i << "," << gc_draw(p, engine) << "," << number(e) << "," << number(sec[i])
            << "\n";
  }
  write_text_file(dir / "regions.csv", regions.str());

  std::ostringstream c;
  c << "id,x,y\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    c << "m" << i << "," << number(cents(i, 0)) << "," << number(cents(i, 1)) << "\n";
  }
  write_text_file(dir / "centroids.csv", c.str());

  std::ostringstream adj;
  adj << "# rook adjacency, 0-based row indices of regions.csv\n";
  for (const auto& [i, j] : graph.edges()) adj << i << " " << j << "\n";
  write_text_file(dir / "adjacency.txt", adj.str());

  FitRequest req;
  req.spec.family = Family::GammaCount;
  req.spec.method = Method::SPOCK;
  req.spec.covariates = {"SEc"};
  req.spec.confounded = {"SEc"};
  req.data = {"regions.csv", "adjacency.txt", "centroids.csv"};
  write_text_file(dir / "spec.json", json(req).dump(2) + "\n");
}

void to_json(json& j, const PriorSpec& p) {
  j = json{{"beta_precision", p.beta_precision},
           {"pc_lambda_tau", p.pc_lambda_tau},
           {"log_alpha_mean", p.log_alpha_mean},
           {"log_alpha_sd", p.log_alpha_sd},
           {"fixed_alpha", p.fixed_alpha ? json(*p.fixed_alpha) : json(nullptr)}};
}

void from_json(const json& j, PriorSpec& p) {
  p = PriorSpec{};
  if (j.contains("beta_precision")) j.at("beta_precision").get_to(p.beta_precision);
  if (j.contains("pc_lambda_tau")) j.at("pc_lambda_tau").get_to(p.pc_lambda_tau);
  if (j.contains("log_alpha_mean")) j.at("log_alpha_mean").get_to(p.log_alpha_mean);
  if (j.contains("log_alpha_sd")) j.at("log_alpha_sd").get_to(p.log_alpha_sd);
  if (j.contains("fixed_alpha") && !j.at("fixed_alpha").is_null()) {
    p.fixed_alpha = j.at("fixed_alpha").get<double>();
  }
}

void to_json(json& j, const ModelSpec& s) {
  j = json{{"family", to_string(s.family)},
           {"method", to_string(s.method)},
           {"covariates", s.covariates},
           {"intercept", s.intercept},
           {"confounded", s.confounded},
           {"priors", s.priors},
           {"lattice", {s.lattice_rows, s.lattice_cols}}};
}

void from_json(const json& j, ModelSpec& s) {
  s = ModelSpec{};
  if (j.contains("family")) s.family = parse_family(j.at("family").get<std::string>());
  if (j.contains("method")) s.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("covariates")) j.at("covariates").get_to(s.covariates);
  if (j.contains("intercept")) j.at("intercept").get_to(s.intercept);
  if (j.contains("confounded")) j.at("confounded").get_to(s.confounded);
  if (j.contains("priors")) j.at("priors").get_to(s.priors);
  if (j.contains("lattice")) {
    const auto& l = j.at("lattice");
    if (!l.is_array() || l.size() != 2) throw InputError("'lattice' must be [rows, cols]");
    s.lattice_rows = l[0].get<std::size_t>();
    s.lattice_cols = l[1].get<std::size_t>();
  }
}

void to_json(json& j, const DataFiles& f) {
  j = json{{"regions", f.regions}, {"adjacency", f.adjacency}, {"centroids", f.centroids}};
}

void from_json(const json& j, DataFiles& f) {
  f = DataFiles{};
  if (j.contains("regions")) j.at("regions").get_to(f.regions);
  if (j.contains("adjacency")) j.at("adjacency").get_to(f.adjacency);
  if (j.contains("centroids")) j.at("centroids").get_to(f.centroids);
}

void to_json(json& j, const FitRequest& r) {
  j = r.spec;
  j["data"] = r.data;
}

void from_json(const json& j, FitRequest& r) {
  r.spec = j.get<ModelSpec>();
  r.data = j.contains("data") ? j.at("data").get<DataFiles>() : DataFiles{};
}

void to_json(json& j, const MarginalSummary& s) {
  j = json{{"name", s.name},
           {"mean", s.mean},
           {"sd", s.sd},
           {"hpd_lower", s.hpd_lower},
           {"hpd_upper", s.hpd_upper}};
}

void from_json(const json& j, MarginalSummary& s) {
  j.at("name").get_to(s.name);
  j.at("mean").get_to(s.mean);
  j.at("sd").get_to(s.sd);
  j.at("hpd_lower").get_to(s.hpd_lower);
  j.at("hpd_upper").get_to(s.hpd_upper);
}

void to_json(json& j, const CriteriaReport& c) {
  j = json{{"dic", c.dic},           {"p_dic", c.p_dic},         {"waic", c.waic},
           {"p_waic", c.p_waic},     {"log_score", c.log_score}, {"mspe", c.mspe},
           {"cpo", c.cpo}};
}

void from_json(const json& j, CriteriaReport& c) {
  j.at("dic").get_to(c.dic);
  j.at("p_dic").get_to(c.p_dic);
  j.at("waic").get_to(c.waic);
  j.at("p_waic").get_to(c.p_waic);
  j.at("log_score").get_to(c.log_score);
  j.at("mspe").get_to(c.mspe);
  c.cpo = j.value("cpo", std::vector<double>{});
}

void to_json(json& j, const FitResult& r) {
  json grid = json::array();
  for (const auto& g : r.grid) {
    grid.push_back({{"theta", g.theta}, {"log_posterior", g.log_posterior}, {"weight", g.weight}});
  }
  j = json{{"family", to_string(r.family)},
           {"method", to_string(r.method)},
           {"hyper_names", r.hyper_names},
           {"grid", grid},
           {"hyperparameters", r.hyperparameters},
           {"fixed_effects", r.fixed_effects},
           {"latent", r.latent},
           {"region_effects", r.region_effects},
           {"fitted", r.fitted},
           {"criteria", r.criteria},
           {"diagnostics",
            {{"newton_iterations", r.diagnostics.newton_iterations},
             {"gradient_norms", r.diagnostics.gradient_norms},
             {"theta_evaluations", r.diagnostics.theta_evaluations}}}};
}

void from_json(const json& j, FitResult& r) {
  r = FitResult{};
  r.family = parse_family(j.at("family").get<std::string>());
  r.method = parse_method(j.at("method").get<std::string>());
  j.at("hyper_names").get_to(r.hyper_names);
  for (const auto& g : j.at("grid")) {
    r.grid.push_back({g.at("theta").get<std::vector<double>>(), g.at("log_posterior").get<double>(),
                      g.at("weight").get<double>()});
  }
  j.at("hyperparameters").get_to(r.hyperparameters);
  j.at("fixed_effects").get_to(r.fixed_effects);
  j.at("latent").get_to(r.latent);
  j.at("region_effects").get_to(r.region_effects);
  j.at("fitted").get_to(r.fitted);
  j.at("criteria").get_to(r.criteria);
  const auto& d = j.at("diagnostics");
  d.at("newton_iterations").get_to(r.diagnostics.newton_iterations);
  d.at("gradient_norms").get_to(r.diagnostics.gradient_norms);
  d.at("theta_evaluations").get_to(r.diagnostics.theta_evaluations);
}

void to_json(json& j, const StudyConfig& c) {
  json scenarios = json::array();
  for (const auto& s : c.scenarios) scenarios.push_back({{"alpha", s.alpha}, {"tau_x", s.tau_x}});
  std::vector<std::string> methods, families;
  for (auto m : c.methods) methods.push_back(to_string(m));
  for (auto f : c.families) families.push_back(to_string(f));
  j = json{{"scenarios", scenarios},
           {"alphas", c.alphas},
           {"tau_xs", c.tau_xs},
           {"beta", c.beta},
           {"tau_phi", c.tau_phi},
           {"x1_variance", c.x1_variance},
           {"confounding", c.confounding},
           {"replications", c.replications},
           {"seed", c.seed},
           {"grid", {c.grid_rows, c.grid_cols}},
           {"graph_file", c.graph_file},
           {"centroid_file", c.centroid_file},
           {"methods", methods},
           {"families", families},
           {"priors", c.priors},
           {"lattice", {c.lattice_rows, c.lattice_cols}},
           {"level", c.level}};
}

void from_json(const json& j, StudyConfig& c) {
  c = StudyConfig{};
  if (j.contains("scenarios")) {
    for (const auto& s : j.at("scenarios")) {
      c.scenarios.push_back({s.at("alpha").get<double>(), s.at("tau_x").get<double>()});
    }
  }
  if (j.contains("alphas")) j.at("alphas").get_to(c.alphas);
  if (j.contains("tau_xs")) j.at("tau_xs").get_to(c.tau_xs);
  if (j.contains("beta")) j.at("beta").get_to(c.beta);
  if (j.contains("tau_phi")) j.at("tau_phi").get_to(c.tau_phi);
  if (j.contains("x1_variance")) j.at("x1_variance").get_to(c.x1_variance);
  if (j.contains("confounding")) j.at("confounding").get_to(c.confounding);
  if (j.contains("replications")) j.at("replications").get_to(c.replications);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("grid")) {
    c.grid_rows = j.at("grid").at(0).get<std::size_t>();
    c.grid_cols = j.at("grid").at(1).get<std::size_t>();
  }
  if (j.contains("graph_file")) j.at("graph_file").get_to(c.graph_file);
  if (j.contains("centroid_file")) j.at("centroid_file").get_to(c.centroid_file);
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
  }
  if (j.contains("families")) {
    c.families.clear();
    for (const auto& f : j.at("families")) c.families.push_back(parse_family(f.get<std::string>()));
  }
  if (j.contains("priors")) j.at("priors").get_to(c.priors);
  if (j.contains("lattice")) {
    c.lattice_rows = j.at("lattice").at(0).get<std::size_t>();
    c.lattice_cols = j.at("lattice").at(1).get<std::size_t>();
  }
  if (j.contains("level")) j.at("level").get_to(c.level);
}

void to_json(json& j, const CellSummary& c) {
  j = json{{"alpha", c.scenario.alpha},
           {"tau_x", c.scenario.tau_x},
           {"family", to_string(c.family)},
           {"method", to_string(c.method)},
           {"ok", c.ok},
           {"failed", c.failed},
           {"mse", c.mse},
           {"mean_rb", c.mean_rb},
           {"coverage", c.coverage},
           {"alpha_mean", c.alpha_mean ? json(*c.alpha_mean) : json(nullptr)},
           {"dic", c.dic},
           {"waic", c.waic},
           {"log_score", c.log_score},
           {"mspe", c.mspe}};
}

void to_json(json& j, const ReplicationRecord& r) {
  json fits = json::array();
  for (const auto& f : r.fits) {
    json c = f.criteria;
    c.erase("cpo");
    fits.push_back({{"family", to_string(f.family)},
                    {"method", to_string(f.method)},
                    {"ok", f.ok},
                    {"error", f.error},
                    {"estimate", f.estimate},
                    {"hpd_lower", f.lower},
                    {"hpd_upper", f.upper},
                    {"target", f.target},
                    {"alpha", f.alpha ? json(*f.alpha) : json(nullptr)},
                    {"criteria", c}});
  }
  j = json{{"alpha", r.scenario.alpha},
           {"tau_x", r.scenario.tau_x},
           {"rep", r.rep},
           {"beta_star", r.beta_star},
           {"phi", vec(r.data.phi)},
           {"x1", vec(r.data.x1)},
           {"x2", vec(r.data.x2)},
           {"y", vec(r.data.y)},
           {"fits", fits}};
}

void to_json(json& j, const StudyReport& r) {
  j = json{{"config", r.config}, {"cells", r.cells}};
}

json read_json_file(const std::filesystem::path& path) {
  auto in = open_input(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<Scenario> parse_scenarios(const std::string& text) {
  std::vector<Scenario> out;
  std::istringstream groups(text);
  std::string group;
  while (std::getline(groups, group, ';')) {
    if (trim(group).empty()) continue;
    Scenario s;
    bool have_alpha = false;
    bool have_tau = false;
    std::istringstream parts(group);
    std::string part;
    while (std::getline(parts, part, ',')) {
      const auto eq = part.find('=');
      if (eq == std::string::npos) throw InputError("scenario term '" + part + "' lacks '='");
      const auto key = trim(part.substr(0, eq));
      const auto value = trim(part.substr(eq + 1));
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
        throw InputError("scenario value '" + value + "' is not a number");
      }
      if (key == "alpha") {
        s.alpha = v;
        have_alpha = true;
      } else if (key == "tau_x") {
        s.tau_x = v;
        have_tau = true;
      } else {
        throw InputError("unknown scenario key '" + key + "' (expected alpha or tau_x)");
      }
    }
    if (!have_alpha || !have_tau) throw InputError("scenario '" + group + "' needs alpha and tau_x");
    out.push_back(s);
  }
  if (out.empty()) throw InputError("no scenarios in '" + text + "'");
  return out;
}

std::string criteria_csv_header() { return "model,family,method,dic,p_dic,waic,p_waic,log_score,mspe\n"; }

std::string criteria_csv_row(const std::string& label, const FitResult& r) {
  const auto& c = r.criteria;
  return csv_field(label) + "," + to_string(r.family) + "," + csv_field(to_string(r.method)) + "," +
         number(c.dic) + "," + number(c.p_dic) + "," + number(c.waic) + "," + number(c.p_waic) +
         "," + number(c.log_score) + "," + number(c.mspe) + "\n";
}

std::string region_effects_csv(const FitResult& r) {
  std::string out = "id,fitted,effect_mean,effect_sd\n";
  for (std::size_t i = 0; i < r.fitted.size(); ++i) {
    const bool has = i < r.region_effects.size();
    out += csv_field(has ? r.region_effects[i].name : std::to_string(i)) + "," + number(r.fitted[i]) +
           "," + (has ? number(r.region_effects[i].mean) : "") + "," +
           (has ? number(r.region_effects[i].sd) : "") + "\n";
  }
  return out;
}

std::string cells_csv(const StudyReport& report) {
  std::string out =
      "alpha,tau_x,family,method,ok,failed,mse_b1,mse_b2,rb_b1,rb_b2,coverage_b1,coverage_b2,"
      "alpha_mean,dic,waic,log_score,mspe\n";
  for (const auto& c : report.cells) {
    out += number(c.scenario.alpha) + "," + number(c.scenario.tau_x) + "," + to_string(c.family) +
           "," + csv_field(to_string(c.method)) + "," + std::to_string(c.ok) + "," +
           std::to_string(c.failed) + "," + number(c.mse[0]) + "," + number(c.mse[1]) + "," +
           number(c.mean_rb[0]) + "," + number(c.mean_rb[1]) + "," + number(c.coverage[0]) + "," +
           number(c.coverage[1]) + "," + (c.alpha_mean ? number(*c.alpha_mean) : "") + "," +
           number(c.dic) + "," + number(c.waic) + "," + number(c.log_score) + "," +
           number(c.mspe) + "\n";
  }
  return out;
}

std::string records_ndjson(const StudyReport& report) {
  std::string out;
  for (const auto& r : report.records) out += json(r).dump() + "\n";
  return out;
}

}  // namespace gcspatial
