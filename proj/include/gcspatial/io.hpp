#pragma once

// File formats.
//
//   regions    CSV, header `id,y[,expected][,covariate...]`; expected defaults to 1
//              and enters the predictor as the offset log(expected)
//   centroids  CSV, header `id,x,y`
//   adjacency  edge list, one `i j` pair of 0-based region indices per line;
//              `#` starts a comment
//
// JSON documents (ModelSpec, FitResult, StudyConfig, StudyReport) use the
// field names of the corresponding structs.

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "gcspatial/lgm.hpp"
#include "gcspatial/simstudy.hpp"

namespace gcspatial {

struct RegionTable {
  std::vector<std::string> ids;
  Eigen::VectorXd y;
  Eigen::VectorXd expected;
  Eigen::MatrixXd covariates;
  std::vector<std::string> covariate_names;
};

struct CentroidTable {
  std::vector<std::string> ids;
  Centroids coords;
};

RegionTable read_regions_csv(const std::filesystem::path& path);
RegionTable parse_regions_csv(std::istream& in, const std::string& source = "<input>");
CentroidTable read_centroids_csv(const std::filesystem::path& path);
CentroidTable parse_centroids_csv(std::istream& in, const std::string& source = "<input>");
std::vector<std::pair<std::size_t, std::size_t>> read_edge_list(const std::filesystem::path& path);
std::vector<std::pair<std::size_t, std::size_t>> parse_edge_list(std::istream& in,
                                                                 const std::string& source = "<input>");

struct DataFiles {
  std::string regions;
  std::string adjacency;
  std::string centroids;

  bool operator==(const DataFiles&) const = default;
};

/// A fit request: model spec plus the files it reads.
struct FitRequest {
  ModelSpec spec;
  DataFiles data;
};

/// Reads and cross-checks the files; every id mismatch is listed.
Dataset load_dataset(const DataFiles& files);

/// Writes a synthetic dataset shaped like a municipality map: regions on a
/// jittered grid, rook adjacency, one spatially confounded covariate `SEc`.
void write_synthetic_dataset(const std::filesystem::path& dir, std::size_t rows, std::size_t cols,
                             double alpha, std::uint64_t seed);

// JSON conversions (found by nlohmann::json through ADL).
void to_json(nlohmann::json& j, const PriorSpec& p);
void from_json(const nlohmann::json& j, PriorSpec& p);
void to_json(nlohmann::json& j, const ModelSpec& s);
void from_json(const nlohmann::json& j, ModelSpec& s);
void to_json(nlohmann::json& j, const DataFiles& f);
void from_json(const nlohmann::json& j, DataFiles& f);
void to_json(nlohmann::json& j, const FitRequest& r);
void from_json(const nlohmann::json& j, FitRequest& r);
void to_json(nlohmann::json& j, const MarginalSummary& s);
void from_json(const nlohmann::json& j, MarginalSummary& s);
void to_json(nlohmann::json& j, const CriteriaReport& c);
void from_json(const nlohmann::json& j, CriteriaReport& c);
void to_json(nlohmann::json& j, const FitResult& r);
void from_json(const nlohmann::json& j, FitResult& r);
void to_json(nlohmann::json& j, const StudyConfig& c);
void from_json(const nlohmann::json& j, StudyConfig& c);
void to_json(nlohmann::json& j, const CellSummary& c);
void to_json(nlohmann::json& j, const ReplicationRecord& r);
void to_json(nlohmann::json& j, const StudyReport& r);

/// Parses a JSON file, reporting the path on failure.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// `--scenarios` syntax: `alpha=1,tau_x=11;alpha=0.5,tau_x=4`.
std::vector<Scenario> parse_scenarios(const std::string& text);

/// One CSV row of criteria per fitted model.
std::string criteria_csv_header();
std::string criteria_csv_row(const std::string& label, const FitResult& r);

/// Per-region posterior means for external mapping.
std::string region_effects_csv(const FitResult& r);

/// One row per (alpha, tau_x, family, method) cell.
std::string cells_csv(const StudyReport& report);

/// Newline-delimited JSON, one replication per line.
std::string records_ndjson(const StudyReport& report);

}  // namespace gcspatial
