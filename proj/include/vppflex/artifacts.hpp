#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "vppflex/caseio.hpp"
#include "vppflex/costagg.hpp"
#include "vppflex/mcoracle.hpp"
#include "vppflex/pfr.hpp"
#include "vppflex/tcf.hpp"

namespace vppflex::art {

using io::json;

struct Base {
  double mva = 1.0;
  double kv = 12.47;
};

// Leading block of every JSON artifact: version, kind and units.
json header(const std::string& kind, const Base& base);
// First line of every CSV artifact.
std::string csv_header(const std::string& kind, const Base& base);

json matrix_to_json(const Eigen::MatrixXd& m);
json vector_to_json(const Eigen::VectorXd& v);
Eigen::MatrixXd matrix_from_json(const io::Document& d, const json::json_pointer& at, int cols);
Eigen::VectorXd vector_from_json(const io::Document& d, const json::json_pointer& at);

json surface_to_json(const pfr::PfrSurface& s);
json polygon_to_json(const pfr::PfrPolygon& p);
pfr::PfrPolygon polygon_from_json(const io::Document& d, const json::json_pointer& at);
json envelope_to_json(const tcf::TcfEnvelope& e);
tcf::TcfEnvelope envelope_from_json(const io::Document& d, const json::json_pointer& at);
json cost_curve_to_json(const cost::CostCurve& c);
json linearization_to_json(const cc::VppModel& model, const cc::LinearizationCheck& check);

// Swept boundary points and outside targets of each surface.
void write_scatter_csv(const std::string& path, const std::vector<pfr::PfrSurface>& surfaces, const Base& base);
// MC confidence per cell next to the analytic value.
void write_grid_csv(const std::string& path, const mc::McGrid& grid, const pfr::PfrSurface& analytic,
                    const Base& base);
void write_cost_samples_csv(const std::string& path, const std::vector<cost::CostCurve>& curves, const Base& base);

// Max-affine cost of one period: cost = max_j slope_j P + intercept_j on
// [p_min, p_max].
struct FlexCost {
  int period = 0;
  double p_min = 0.0, p_max = 0.0;
  Eigen::VectorXd slope;
  Eigen::VectorXd intercept;
};

// Exported flexibility model: PQ polygon per period at one confidence,
// time-coupling envelope and cost curves.
struct FlexBundle {
  std::string case_name;
  Base base;
  int periods = 0;
  double dt = 1.0;
  double gamma = 0.0;
  std::vector<pfr::PfrPolygon> polygons;
  tcf::TcfEnvelope envelope;
  std::vector<FlexCost> costs;
};

FlexCost flex_cost(const cost::CostCurve& c);
json flex_to_json(const FlexBundle& b);
FlexBundle flex_from_json(const io::Document& d);
FlexBundle read_flex(const std::string& path);

// Pretty-printed with a trailing newline.
void write_json(const std::string& path, const json& j);

}  // namespace vppflex::art
