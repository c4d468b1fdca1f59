#include "vppflex/derfleet.hpp"

#include <algorithm>
#include <cmath>

#include "vppflex/error.hpp"

namespace vppflex::fleet {

const char* kind_name(DerKind k) {
  switch (k) {
    case DerKind::CHP: return "CHP";
    case DerKind::PV: return "PV";
    case DerKind::ESS: return "ESS";
    case DerKind::WT: return "WT";
  }
  return "?";
}

DerKind parse_kind(const std::string& s) {
  if (s == "CHP" || s == "chp") return DerKind::CHP;
  if (s == "PV" || s == "pv") return DerKind::PV;
  if (s == "ESS" || s == "ess") return DerKind::ESS;
  if (s == "WT" || s == "wt") return DerKind::WT;
  throw StructuralError("unknown DER kind '" + s + "'");
}

std::vector<Eigen::Vector2d> polygon_vertices(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double tol) {
  std::vector<Eigen::Vector2d> pts;
  const int n = static_cast<int>(b.size());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      Eigen::Matrix2d m;
      m << A(i, 0), A(i, 1), A(j, 0), A(j, 1);
      const double det = m.determinant();
      const double scale = m.row(0).norm() * m.row(1).norm();
      if (std::abs(det) <= 1e-12 * scale) continue;
      const Eigen::Vector2d v = m.inverse() * Eigen::Vector2d(b(i), b(j));
      bool ok = true;
      for (int r = 0; r < n && ok; ++r)
        ok = A.row(r).dot(v) <= b(r) + tol * std::max(1.0, A.row(r).norm());
      if (!ok) continue;
      bool dup = false;
      for (const auto& p : pts) dup = dup || (p - v).norm() <= 1e-9;
      if (!dup) pts.push_back(v);
    }
  }
  if (pts.size() < 2) return pts;
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  std::sort(pts.begin(), pts.end(), [&](const Eigen::Vector2d& a, const Eigen::Vector2d& bb) {
    return std::atan2(a.y() - c.y(), a.x() - c.x()) < std::atan2(bb.y() - c.y(), bb.x() - c.x());
  });
  return pts;
}

double polygon_area(const std::vector<Eigen::Vector2d>& v) {
  double s = 0.0;
  for (size_t i = 0; i < v.size(); ++i) {
    const auto& a = v[i];
    const auto& b = v[(i + 1) % v.size()];
    s += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * std::abs(s);
}

bool CapabilityPolygon::contains(double p, double q, double tol) const {
  for (int r = 0; r < rows(); ++r)
    if (A(r, 0) * p + A(r, 1) * q > b(r) + tol) return false;
  return true;
}

std::vector<Eigen::Vector2d> CapabilityPolygon::vertices(double tol) const { return polygon_vertices(A, b, tol); }

double CapabilityPolygon::area() const { return polygon_area(vertices()); }

std::array<double, 4> CapabilityPolygon::bounding_box() const {
  lp::LinearProgram prog;
  prog.add_variable(-lp::kInf, lp::kInf);
  prog.add_variable(-lp::kInf, lp::kInf);
  for (int r = 0; r < rows(); ++r) prog.add_row({{0, A(r, 0)}, {1, A(r, 1)}}, lp::Relation::LessEqual, b(r));
  std::array<double, 4> out{};
  for (int k = 0; k < 4; ++k) {
    prog.set_cost(0, k < 2 ? 1.0 : 0.0);
    prog.set_cost(1, k < 2 ? 0.0 : 1.0);
    prog.set_sense(k % 2 == 0 ? lp::Sense::Minimize : lp::Sense::Maximize);
    const auto sol = lp::solve_lp(prog);
    if (sol.status == lp::Status::Infeasible) throw InfeasibleError("empty capability polygon");
    if (sol.status == lp::Status::Unbounded) throw InfeasibleError("unbounded capability polygon");
    if (sol.status != lp::Status::Optimal)
      throw InfeasibleError(std::string("capability polygon check failed: ") + lp::to_string(sol.status));
    out[k] = sol.objective;
  }
  return out;
}

void CapabilityPolygon::validate() const {
  if (A.cols() != 2 || A.rows() != b.size()) throw DimensionError("capability polygon needs an n x 2 matrix");
  bounding_box();
}

namespace {

void push_row(std::vector<Eigen::RowVector2d>& rows, std::vector<double>& rhs, double a0, double a1, double c) {
  rows.emplace_back(a0, a1);
  rhs.push_back(c);
}

void add_box_limits(const ChartParams& c, std::vector<Eigen::RowVector2d>& rows, std::vector<double>& rhs) {
  if (std::isfinite(c.p_max)) push_row(rows, rhs, 1.0, 0.0, c.p_max);
  if (std::isfinite(c.p_min)) push_row(rows, rhs, -1.0, 0.0, -c.p_min);
  if (std::isfinite(c.q_max)) push_row(rows, rhs, 0.0, 1.0, c.q_max);
  if (std::isfinite(c.q_min)) push_row(rows, rhs, 0.0, -1.0, -c.q_min);
}

void add_inscribed_circle(double s, int n, std::vector<Eigen::RowVector2d>& rows, std::vector<double>& rhs) {
  if (!(s > 0.0)) throw InfeasibleError("empty capability: zero apparent-power radius");
  const double half = M_PI / n;
  for (int k = 0; k < n; ++k) {
    const double th = 2.0 * M_PI * k / n + half;
    push_row(rows, rhs, std::cos(th), std::sin(th), s * std::cos(half));
  }
}

}  // namespace

CapabilityPolygon polygonize_chart(const ChartParams& c, int n_sides) {
  if (n_sides < 4) throw RangeError("polygonization needs at least 4 sides");
  std::vector<Eigen::RowVector2d> rows;
  std::vector<double> rhs;
  switch (c.shape) {
    case ChartShape::Box:
      if (!(std::isfinite(c.p_min) && std::isfinite(c.p_max) && std::isfinite(c.q_min) && std::isfinite(c.q_max)))
        throw RangeError("box chart needs finite P and Q limits");
      if (c.p_max < c.p_min || c.q_max < c.q_min) throw InfeasibleError("empty capability: crossed box limits");
      add_box_limits(c, rows, rhs);
      break;
    case ChartShape::Circle:
    case ChartShape::Chp:
      add_inscribed_circle(c.s_max, n_sides, rows, rhs);
      add_box_limits(c, rows, rhs);
      break;
    case ChartShape::Dfig: {
      add_inscribed_circle(c.s_max, n_sides, rows, rhs);
      add_box_limits(c, rows, rhs);
      if (!std::isfinite(c.p_max) || !(c.p_max > 0.0)) throw RangeError("DFIG chart needs a positive p_max");
      const double r = c.q_full_load_ratio;
      if (std::isfinite(c.q_max)) push_row(rows, rhs, -(r - 1.0) * c.q_max / c.p_max, 1.0, c.q_max);
      if (std::isfinite(c.q_min)) push_row(rows, rhs, (r - 1.0) * c.q_min / c.p_max, -1.0, -c.q_min);
      break;
    }
    case ChartShape::Polygon:
      if (c.A.cols() != 2 || c.A.rows() != c.b.size()) throw DimensionError("polygon chart needs an n x 2 matrix");
      for (int r = 0; r < c.A.rows(); ++r) push_row(rows, rhs, c.A(r, 0), c.A(r, 1), c.b(r));
      break;
  }
  CapabilityPolygon poly;
  poly.A.resize(static_cast<Eigen::Index>(rows.size()), 2);
  poly.b.resize(static_cast<Eigen::Index>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    poly.A.row(static_cast<Eigen::Index>(r)) = rows[r];
    poly.b(static_cast<Eigen::Index>(r)) = rhs[r];
  }
  poly.validate();
  return poly;
}

void DerUnit::validate() const {
  if (slots.empty()) throw StructuralError("unit '" + id + "' has no phases");
  if (charts.size() != slots.size()) throw StructuralError("unit '" + id + "' needs one chart per phase");
  for (const auto& ch : charts) ch.validate();
  if (kind == DerKind::ESS) {
    if (!(ess.alpha > 0.0 && ess.alpha <= 1.0)) throw RangeError("unit '" + id + "': ESS alpha must lie in (0, 1]");
    if (!(ess.e_min <= ess.e0 && ess.e0 <= ess.e_max))
      throw RangeError("unit '" + id + "': ESS needs e_min <= e0 <= e_max");
  }
  if (kind == DerKind::CHP && !(ramp >= 0.0)) throw RangeError("unit '" + id + "': ramp must be nonnegative");
  if (cost.a < 0.0) throw RangeError("unit '" + id + "': CHP quadratic cost must be convex");
  if (cost.k_ch < 0.0 || cost.k_dis < 0.0) throw RangeError("unit '" + id + "': ESS cost rates must be nonnegative");
}

double ForecastSeries::at(const std::string& unit, int period, int slot) const {
  const auto it = pmax.find(unit);
  if (it == pmax.end()) throw StructuralError("no forecast for unit '" + unit + "'");
  if (period < 0 || period >= static_cast<int>(it->second.size()))
    throw StructuralError("no forecast for unit '" + unit + "' at period " + std::to_string(period));
  const auto& row = it->second[period];
  if (slot < 0 || slot >= static_cast<int>(row.size()))
    throw StructuralError("forecast of unit '" + unit + "' lacks phase slot " + std::to_string(slot));
  return row[slot];
}

namespace {

std::string slot_name(const DerUnit& u, int k) {
  return u.connection == net::Connection::Wye ? net::phase_name(static_cast<net::Phase>(u.slots[k]))
                                              : net::pair_name(static_cast<net::PhasePair>(u.slots[k]));
}

}  // namespace

DecisionLayout::DecisionLayout(const std::vector<DerUnit>& fleet) {
  p_.resize(fleet.size());
  q_.resize(fleet.size());
  for (size_t u = 0; u < fleet.size(); ++u) {
    p_[u].assign(fleet[u].slots.size(), -1);
    q_[u].assign(fleet[u].slots.size(), -1);
  }
  for (DerKind kind : {DerKind::CHP, DerKind::PV, DerKind::ESS, DerKind::WT}) {
    for (int pass = 0; pass < 2; ++pass) {
      for (size_t u = 0; u < fleet.size(); ++u) {
        if (fleet[u].kind != kind) continue;
        for (size_t k = 0; k < fleet[u].slots.size(); ++k) {
          (pass == 0 ? p_ : q_)[u][k] = size_++;
          labels_.push_back(std::string(pass == 0 ? "P:" : "Q:") + fleet[u].id + ":" +
                            slot_name(fleet[u], static_cast<int>(k)));
        }
      }
    }
  }
}

ErrorLayout::ErrorLayout(const std::vector<DerUnit>& fleet, const std::vector<LoadSpec>& loads) {
  ren_.resize(fleet.size());
  for (DerKind kind : {DerKind::PV, DerKind::WT}) {
    for (size_t u = 0; u < fleet.size(); ++u) {
      if (fleet[u].kind != kind) continue;
      ren_[u].resize(fleet[u].slots.size());
      for (size_t k = 0; k < fleet[u].slots.size(); ++k) {
        ren_[u][k] = size_++;
        labels_.push_back("e:" + fleet[u].id + ":" + slot_name(fleet[u], static_cast<int>(k)));
      }
    }
  }
  num_ren_ = size_;
  for (size_t i = 0; i < loads.size(); ++i) {
    load_.push_back(size_++);
    labels_.push_back("e:load:" + loads[i].bus + ":" + std::to_string(loads[i].slot));
  }
}

Eigen::VectorXd InjectionMap::apply(const Eigen::VectorXd& u, const Eigen::VectorXd& e, int period) const {
  return M * u + x0.col(period) + E * e;
}

namespace {

std::pair<int, int> injection_slot(const net::MultiphaseNetwork& net, const net::InjectionOrdering& ord,
                                   const std::string& bus_id, net::Connection conn, int slot,
                                   const std::string& who) {
  const int bus = net.bus_index(bus_id);
  int p = -1, q = -1;
  if (conn == net::Connection::Wye) {
    if (slot < 0 || slot > 2) throw StructuralError(who + ": bad phase slot");
    p = ord.p_wye(bus, static_cast<net::Phase>(slot));
    q = ord.q_wye(bus, static_cast<net::Phase>(slot));
  } else {
    if (slot < 0 || slot > 2) throw StructuralError(who + ": bad phase-pair slot");
    p = ord.p_delta(bus, static_cast<net::PhasePair>(slot));
    q = ord.q_delta(bus, static_cast<net::PhasePair>(slot));
  }
  if (p < 0 || q < 0)
    throw StructuralError(who + ": phase or connection does not exist at bus '" + bus_id + "'");
  return {p, q};
}

}  // namespace

InjectionMap build_injection_map(const net::MultiphaseNetwork& net, const net::InjectionOrdering& ord,
                                 const std::vector<DerUnit>& fleet, const std::vector<LoadSpec>& loads,
                                 const DecisionLayout& dec, const ErrorLayout& err, int periods) {
  InjectionMap map;
  map.M = Eigen::MatrixXd::Zero(ord.size(), dec.size());
  map.E = Eigen::MatrixXd::Zero(ord.size(), err.size());
  map.x0 = Eigen::MatrixXd::Zero(ord.size(), periods);
  for (size_t u = 0; u < fleet.size(); ++u) {
    const auto& unit = fleet[u];
    for (size_t k = 0; k < unit.slots.size(); ++k) {
      const auto [pi, qi] = injection_slot(net, ord, unit.bus, unit.connection, unit.slots[k], "unit '" + unit.id + "'");
      map.M(pi, dec.p(static_cast<int>(u), static_cast<int>(k))) += 1.0;
      map.M(qi, dec.q(static_cast<int>(u), static_cast<int>(k))) += 1.0;
    }
  }
  for (size_t i = 0; i < loads.size(); ++i) {
    const auto& ld = loads[i];
    if (!(std::abs(ld.phi) < M_PI / 2)) throw RangeError("load power factor angle must satisfy |phi| < pi/2");
    if (static_cast<int>(ld.p.size()) != periods)
      throw StructuralError("load at bus '" + ld.bus + "' has " + std::to_string(ld.p.size()) +
                            " periods, expected " + std::to_string(periods));
    const auto& bus = net.buses()[net.bus_index(ld.bus)];
    const auto [pi, qi] = injection_slot(net, ord, ld.bus, bus.connection, ld.slot, "load at '" + ld.bus + "'");
    const double tphi = std::tan(ld.phi);
    for (int t = 0; t < periods; ++t) {
      map.x0(pi, t) -= ld.p[t];
      map.x0(qi, t) -= ld.p[t] * tphi;
    }
    map.E(pi, err.load(static_cast<int>(i))) -= 1.0;
    map.E(qi, err.load(static_cast<int>(i))) -= tphi;
  }
  return map;
}

void build_unit_constraints(const std::vector<DerUnit>& fleet, int u, const DecisionLayout& dec, int t,
                            const ForecastSeries& forecast, std::span<const int> period_offsets,
                            lp::LinearProgram& lp, const UnitBlockOptions& opts) {
  const DerUnit& unit = fleet.at(u);
  if (static_cast<int>(period_offsets.size()) <= t)
    throw StructuralError("unit '" + unit.id + "': no columns for period " + std::to_string(t));
  const int off = period_offsets[t];
  const int nk = static_cast<int>(unit.slots.size());
  for (int k = 0; k < nk; ++k) {
    const auto& ch = unit.charts[k];
    const auto box = ch.bounding_box();
    const int pc = off + dec.p(u, k), qc = off + dec.q(u, k);
    double plo = box[0], phi = box[1];
    if (is_renewable(unit.kind)) {
      const double pm = forecast.at(unit.id, t, k);
      if (pm < 0.0) throw RangeError("unit '" + unit.id + "': negative renewable forecast");
      plo = std::max(plo, 0.0);
      phi = std::min(phi, pm);
      if (phi < plo) phi = plo;  // forecast below the chart's minimum output: pinned at it
    }
    lp.set_bounds(pc, std::max(lp.lower()[pc], plo), std::min(lp.upper()[pc], phi));
    lp.set_bounds(qc, std::max(lp.lower()[qc], box[2]), std::min(lp.upper()[qc], box[3]));
    for (int r = 0; r < ch.rows(); ++r) {
      // Single-variable rows are implied by the bounding box.
      if (ch.A(r, 0) == 0.0 || ch.A(r, 1) == 0.0) continue;
      lp.add_row({{pc, ch.A(r, 0)}, {qc, ch.A(r, 1)}}, lp::Relation::LessEqual, ch.b(r),
                 unit.id + ":chart:" + std::to_string(k) + ":" + std::to_string(r) + ":t" + std::to_string(t));
    }
    if (unit.equal_share && k > 0) {
      lp.add_row({{pc, 1.0}, {off + dec.p(u, 0), -1.0}}, lp::Relation::Equal, 0.0, unit.id + ":share:p");
      lp.add_row({{qc, 1.0}, {off + dec.q(u, 0), -1.0}}, lp::Relation::Equal, 0.0, unit.id + ":share:q");
    }
  }
  if (!opts.time_coupling) return;

  if (unit.kind == DerKind::CHP && t > 0 && std::isfinite(unit.ramp)) {
    std::vector<lp::Term> terms;
    for (int k = 0; k < nk; ++k) {
      terms.push_back({off + dec.p(u, k), 1.0});
      terms.push_back({period_offsets[t - 1] + dec.p(u, k), -1.0});
    }
    lp.add_range_row(std::move(terms), -unit.ramp, unit.ramp, unit.id + ":ramp:t" + std::to_string(t));
  }
  if (unit.kind == DerKind::ESS) {
    std::vector<lp::Term> terms;
    for (int tau = 0; tau <= t; ++tau) {
      const double coef = -opts.dt * std::pow(unit.ess.alpha, t - tau);
      for (int k = 0; k < nk; ++k) terms.push_back({period_offsets[tau] + dec.p(u, k), coef});
    }
    const double carry = std::pow(unit.ess.alpha, t + 1) * unit.ess.e0;
    lp.add_range_row(std::move(terms), unit.ess.e_min - carry, unit.ess.e_max - carry,
                     unit.id + ":energy:t" + std::to_string(t));
  }
}

std::vector<double> ess_energy(const EssParams& ess, std::span<const double> power, double dt) {
  std::vector<double> e;
  double cur = ess.e0;
  for (double p : power) {
    cur = ess.alpha * cur - dt * p;
    e.push_back(cur);
  }
  return e;
}

}  // namespace vppflex::fleet
