#include "vppflex/artifacts.hpp"

#include <charconv>
#include <fstream>

#include "vppflex/error.hpp"

namespace vppflex::art {

using ptr = json::json_pointer;

namespace {

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  return out;
}

json fit_stats(double rmse, double r2) { return {{"rmse", rmse}, {"r2", r2}}; }

}  // namespace

json header(const std::string& kind, const Base& base) {
  return {{"format_version", io::kFormatVersion},
          {"kind", kind},
          {"units", {{"power", "p.u."}, {"energy", "p.u.h"}, {"time", "h"}, {"base_mva", base.mva}, {"base_kv", base.kv}}}};
}

std::string csv_header(const std::string& kind, const Base& base) {
  return "# format_version=" + std::to_string(io::kFormatVersion) + " kind=" + kind + " units=p.u. base_mva=" +
         fmt(base.mva) + " base_kv=" + fmt(base.kv) + "\n";
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::MatrixXd matrix_from_json(const io::Document& d, const ptr& at, int cols) {
  const auto& j = d.at(at);
  if (!j.is_array()) d.fail(at.to_string(), "expected an array of rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (size_t r = 0; r < j.size(); ++r) {
    const auto row = d.numbers(at / r);
    if (static_cast<int>(row.size()) != cols) d.fail((at / r).to_string(), "expected " + std::to_string(cols) + " entries");
    for (int c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = row[static_cast<size_t>(c)];
  }
  return m;
}

Eigen::VectorXd vector_from_json(const io::Document& d, const ptr& at) {
  const auto v = d.numbers(at);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json surface_to_json(const pfr::PfrSurface& s) {
  return {{"period", s.period},
          {"anchor", {s.anchor.p, s.anchor.q}},
          {"gammas", s.gammas},
          {"fit", fit_stats(s.rmse, s.r2)},
          {"max_confidence", pfr::max_confidence(s)},
          {"a", matrix_to_json(s.model.a)},
          {"b", vector_to_json(s.model.b)}};
}

json polygon_to_json(const pfr::PfrPolygon& p) {
  json j = {{"period", p.period}, {"gamma", p.gamma}, {"empty", p.empty}};
  if (p.empty) {
    j["max_gamma"] = p.max_gamma;
  } else {
    j["A"] = matrix_to_json(p.A);
    j["b"] = vector_to_json(p.b);
  }
  return j;
}

pfr::PfrPolygon polygon_from_json(const io::Document& d, const ptr& at) {
  pfr::PfrPolygon p;
  p.period = d.integer(at / "period");
  p.gamma = d.number(at / "gamma");
  const auto& e = d.at(at / "empty");
  if (!e.is_boolean()) d.fail((at / "empty").to_string(), "expected true or false");
  p.empty = e.get<bool>();
  if (p.empty) {
    p.max_gamma = d.number(at / "max_gamma");
    return p;
  }
  p.A = matrix_from_json(d, at / "A", 2);
  p.b = vector_from_json(d, at / "b");
  if (p.A.rows() != p.b.size()) d.fail((at / "b").to_string(), "A and b differ in length");
  return p;
}

json envelope_to_json(const tcf::TcfEnvelope& e) {
  return {{"periods", e.periods}, {"dt", e.dt},         {"gamma", e.gamma},   {"p_min", e.p_min},
          {"p_max", e.p_max},     {"r_down", e.r_down}, {"r_up", e.r_up},     {"e_min", e.e_min},
          {"e_max", e.e_max}};
}

tcf::TcfEnvelope envelope_from_json(const io::Document& d, const ptr& at) {
  tcf::TcfEnvelope e;
  e.periods = d.integer(at / "periods");
  e.dt = d.number(at / "dt");
  e.gamma = d.number(at / "gamma");
  e.p_min = d.numbers(at / "p_min");
  e.p_max = d.numbers(at / "p_max");
  e.r_down = d.numbers(at / "r_down");
  e.r_up = d.numbers(at / "r_up");
  e.e_min = d.numbers(at / "e_min");
  e.e_max = d.numbers(at / "e_max");
  try {
    e.validate();
  } catch (const Error& err) {
    d.fail(at.to_string(), err.what());
  }
  return e;
}

json cost_curve_to_json(const cost::CostCurve& c) {
  return {{"period", c.period},
          {"gamma", c.gamma},
          {"p_min", c.p_min},
          {"p_max", c.p_max},
          {"fit", fit_stats(c.stats.rmse, c.stats.r2)},
          {"slope", vector_to_json(c.model.a.col(0))},
          {"intercept", vector_to_json(c.model.b)}};
}

json linearization_to_json(const cc::VppModel& model, const cc::LinearizationCheck& check) {
  const auto& lin = model.linear;
  const auto& net = model.network;
  std::vector<std::string> slots, nodes, branches;
  for (int i = 0; i < lin.ordering.size(); ++i) slots.push_back(lin.ordering.slot_label(i));
  for (int n : lin.monitored_nodes)
    nodes.push_back(net.buses()[net.node_bus(n)].id + ":" + net::phase_name(net.node_phase(n)));
  for (const auto& bp : lin.branch_rows) {
    const auto& br = net.branches()[bp.branch];
    branches.push_back(br.from + "-" + br.to + ":" + net::phase_name(bp.phase));
  }
  return {{"injections", slots},
          {"voltage_nodes", nodes},
          {"branch_phases", branches},
          {"K", matrix_to_json(lin.K)},
          {"b", vector_to_json(lin.b)},
          {"J", matrix_to_json(lin.J)},
          {"d", vector_to_json(lin.d)},
          {"m", vector_to_json(lin.m)},
          {"g", lin.g_const},
          {"h", vector_to_json(lin.h)},
          {"l", lin.l},
          {"base_x", vector_to_json(lin.base_x)},
          {"accuracy",
           {{"samples", check.samples},
            {"diverged", check.diverged},
            {"max_voltage_error", check.max_voltage_error},
            {"max_pcc_error", check.max_pcc_error}}}};
}

void write_scatter_csv(const std::string& path, const std::vector<pfr::PfrSurface>& surfaces, const Base& base) {
  auto out = open_out(path);
  out << csv_header("pfr-scatter", base) << "period,kind,gamma,phi,r,p,q\n";
  for (const auto& s : surfaces)
    for (const auto* set : {&s.points, &s.outside})
      for (const auto& p : *set)
        out << s.period << "," << (set == &s.points ? "boundary" : "outside") << "," << fmt(p.gamma) << ","
            << fmt(p.phi) << "," << fmt(p.r) << "," << fmt(p.p) << "," << fmt(p.q) << "\n";
}

void write_grid_csv(const std::string& path, const mc::McGrid& grid, const pfr::PfrSurface& analytic,
                    const Base& base) {
  auto out = open_out(path);
  out << csv_header("mc-grid", base) << "p,q,mc,analytic\n";
  for (size_t i = 0; i < grid.p_axis.size(); ++i)
    for (size_t j = 0; j < grid.q_axis.size(); ++j)
      out << fmt(grid.p_axis[i]) << "," << fmt(grid.q_axis[j]) << ","
          << fmt(grid.conf(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << ","
          << fmt(pfr::conf_at(analytic, grid.p_axis[i], grid.q_axis[j])) << "\n";
}

void write_cost_samples_csv(const std::string& path, const std::vector<cost::CostCurve>& curves, const Base& base) {
  auto out = open_out(path);
  out << csv_header("cost-samples", base) << "period,p,cost,fitted\n";
  for (const auto& c : curves)
    for (const auto& s : c.samples)
      out << c.period << "," << fmt(s.p) << "," << fmt(s.cost) << "," << fmt(cost::eval_cost(c, s.p)) << "\n";
}

FlexCost flex_cost(const cost::CostCurve& c) {
  return {c.period, c.p_min, c.p_max, c.model.a.col(0), c.model.b};
}

json flex_to_json(const FlexBundle& b) {
  json j = header("flexibility-model", b.base);
  j["case"] = b.case_name;
  j["periods"] = b.periods;
  j["dt"] = b.dt;
  j["gamma"] = b.gamma;
  j["polygons"] = json::array();
  for (const auto& p : b.polygons) j["polygons"].push_back(polygon_to_json(p));
  j["envelope"] = envelope_to_json(b.envelope);
  j["costs"] = json::array();
  for (const auto& c : b.costs)
    j["costs"].push_back({{"period", c.period},
                          {"p_min", c.p_min},
                          {"p_max", c.p_max},
                          {"slope", vector_to_json(c.slope)},
                          {"intercept", vector_to_json(c.intercept)}});
  return j;
}

FlexBundle flex_from_json(const io::Document& d) {
  d.check_version();
  if (d.string(ptr("/kind")) != "flexibility-model") d.fail("/kind", "not a flexibility model");
  FlexBundle b;
  b.case_name = d.string_or(ptr("/case"), "");
  b.base.mva = d.number(ptr("/units/base_mva"));
  b.base.kv = d.number(ptr("/units/base_kv"));
  b.periods = d.integer(ptr("/periods"));
  b.dt = d.number(ptr("/dt"));
  b.gamma = d.number(ptr("/gamma"));
  const auto& jp = d.array(ptr("/polygons"));
  for (size_t i = 0; i < jp.size(); ++i) b.polygons.push_back(polygon_from_json(d, ptr("/polygons") / i));
  b.envelope = envelope_from_json(d, ptr("/envelope"));
  const auto& jc = d.array(ptr("/costs"));
  for (size_t i = 0; i < jc.size(); ++i) {
    const ptr p = ptr("/costs") / i;
    FlexCost c;
    c.period = d.integer(p / "period");
    c.p_min = d.number(p / "p_min");
    c.p_max = d.number(p / "p_max");
    c.slope = vector_from_json(d, p / "slope");
    c.intercept = vector_from_json(d, p / "intercept");
    if (c.slope.size() != c.intercept.size()) d.fail((p / "intercept").to_string(), "slope and intercept differ in length");
    b.costs.push_back(std::move(c));
  }
  if (static_cast<int>(b.polygons.size()) != b.periods) d.fail("/polygons", "expected one polygon per period");
  if (b.envelope.periods != b.periods) d.fail("/envelope/periods", "does not match /periods");
  return b;
}

FlexBundle read_flex(const std::string& path) { return flex_from_json(io::Document::load(path)); }

void write_json(const std::string& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

}  // namespace vppflex::art
