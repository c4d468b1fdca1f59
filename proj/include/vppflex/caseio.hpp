#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "vppflex/ccopf.hpp"

namespace vppflex::io {

using json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

// A JSON document plus the line of every value, keyed by JSON pointer, so
// field errors can cite a line.
class Document {
 public:
  static Document load(const std::string& path);
  static Document parse(const std::string& text, const std::string& name);

  const json& root() const { return root_; }
  const std::string& name() const { return name_; }
  int line_of(const std::string& pointer) const;
  [[noreturn]] void fail(const std::string& pointer, const std::string& message) const;

  // Typed field access; missing or mistyped fields throw ParseError.
  const json& at(const json::json_pointer& p) const;
  const json& array(const json::json_pointer& p) const;
  double number(const json::json_pointer& p) const;
  double number_or(const json::json_pointer& p, double fallback) const;
  int integer(const json::json_pointer& p) const;
  int integer_or(const json::json_pointer& p, int fallback) const;
  std::string string(const json::json_pointer& p) const;
  std::string string_or(const json::json_pointer& p, const std::string& fallback) const;
  std::vector<double> numbers(const json::json_pointer& p) const;
  bool has(const json::json_pointer& p) const { return root_.contains(p); }
  // Throws unless the document carries a supported format_version.
  void check_version() const;

 private:
  json root_;
  std::string name_;
  std::map<std::string, int> lines_;
};

struct RunConfig {
  std::vector<double> gamma_grid = {0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.99};
  int angles = 32;
  int partitions = 16;
  double outside_margin = 0.01;
  double gamma = 0.9;  // TCF, cost and polygon export level
  double theta = 0.9;
  double eps = 1e-4;
  int max_iter = 50;
  int cost_samples = 41;
  int cost_partitions = 5;
  int mc_grid = 40;
  int mc_scenarios = 500;
  std::uint64_t seed = 1;
  int components = 0;  // 0: chosen by BIC
  int max_components = 5;

  void validate() const;
};

struct Profiles {
  int periods = 1;
  double dt = 0.25;
  std::vector<fleet::LoadSpec> loads;
  fleet::ForecastSeries forecast;
};

struct CaseBundle {
  std::string path;
  std::string name;
  std::string network_file;
  std::string fleet_file;
  std::string profiles_file;
  std::string samples_file;  // historical forecast errors, one column per error label
  std::string gmm_file;      // optional pre-fitted mixture; skips EM
  RunConfig config;
};

net::MultiphaseNetwork read_network(const std::string& path);
std::vector<fleet::DerUnit> read_fleet(const std::string& path, const net::MultiphaseNetwork& network);
Profiles read_profiles(const std::string& path, const net::MultiphaseNetwork& network);
RunConfig parse_config(const Document& doc, const json::json_pointer& at);
CaseBundle read_case(const std::string& path);

// Samples CSV: a header of error labels, then one observation per row.
// Lines starting with '#' are comments.
struct SampleTable {
  std::vector<std::string> labels;
  Eigen::MatrixXd values;
};
SampleTable read_samples_csv(const std::string& path);
void write_samples_csv(const std::string& path, const SampleTable& table);

json gmm_to_json(const uq::Gmm& g, const std::vector<std::string>& labels);
uq::Gmm gmm_from_json(const Document& doc, const json::json_pointer& at, std::vector<std::string>* labels = nullptr);

// Network, fleet and profiles of the bundle; the mixture comes from the
// gmm file when given, otherwise from EM on the samples.
cc::VppModel load_model(const CaseBundle& bundle);
uq::EmResult fit_case_gmm(const SampleTable& table, const RunConfig& config);

}  // namespace vppflex::io
