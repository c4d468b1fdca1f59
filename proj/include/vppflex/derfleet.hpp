#pragma once

#include <Eigen/Dense>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vppflex/lpcore.hpp"
#include "vppflex/netmodel.hpp"

namespace vppflex::fleet {

enum class DerKind { CHP = 0, PV = 1, ESS = 2, WT = 3 };

const char* kind_name(DerKind k);
DerKind parse_kind(const std::string& s);  // throws StructuralError
inline bool is_renewable(DerKind k) { return k == DerKind::PV || k == DerKind::WT; }

// {(P,Q) : A [P;Q] <= b}
struct CapabilityPolygon {
  Eigen::MatrixXd A;  // rows x 2
  Eigen::VectorXd b;

  int rows() const { return static_cast<int>(b.size()); }
  bool contains(double p, double q, double tol = 1e-9) const;
  // Counter-clockwise vertices; empty when the polygon is empty.
  std::vector<Eigen::Vector2d> vertices(double tol = 1e-9) const;
  double area() const;
  // {p_min, p_max, q_min, q_max}; throws InfeasibleError if empty or unbounded.
  std::array<double, 4> bounding_box() const;
  // Throws InfeasibleError when empty or unbounded (checked by LP).
  void validate() const;
};

// Shoelace area of a closed polygon given by its vertices in order.
double polygon_area(const std::vector<Eigen::Vector2d>& v);
// Vertices of {x : A x <= b} in two dimensions, counter-clockwise.
std::vector<Eigen::Vector2d> polygon_vertices(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                              double tol = 1e-9);

enum class ChartShape { Box, Circle, Chp, Dfig, Polygon };

// Nonlinear chart description. Fields that a shape does not use are ignored.
struct ChartParams {
  ChartShape shape = ChartShape::Box;
  // Infinite limits are omitted from the polygon.
  double p_min = -std::numeric_limits<double>::infinity();
  double p_max = std::numeric_limits<double>::infinity();
  double q_min = -std::numeric_limits<double>::infinity();
  double q_max = std::numeric_limits<double>::infinity();
  double s_max = 0.0;  // apparent-power radius (Circle, Chp, Dfig stator limit)
  // Dfig: reactive range at full active output, as a fraction of q_min/q_max
  // at zero output (slip-power trapezoid).
  double q_full_load_ratio = 1.0;
  Eigen::MatrixXd A;  // Polygon only
  Eigen::VectorXd b;
};

// Inscribed polygon of the chart: every point of the result is chart-feasible.
CapabilityPolygon polygonize_chart(const ChartParams& params, int n_sides = 8);

struct EssParams {
  double alpha = 1.0;  // self-discharge retention per period
  double e_min = 0.0;
  double e_max = 0.0;
  double e0 = 0.0;
};

struct CostParams {
  double a = 0.0, b = 0.0, c = 0.0;  // CHP quadratic
  double k_ch = 0.0, k_dis = 0.0;    // ESS, cost per p.u.h
};

struct DerUnit {
  std::string id;
  DerKind kind = DerKind::PV;
  std::string bus;
  net::Connection connection = net::Connection::Wye;
  // Phase (wye) or PhasePair (delta) per connected slot, as integers.
  std::vector<int> slots;
  std::vector<CapabilityPolygon> charts;  // one per slot
  double ramp = std::numeric_limits<double>::infinity();  // CHP, p.u. per period on the phase sum
  EssParams ess;
  CostParams cost;
  bool equal_share = false;  // tie all phases to the same (P,Q)

  void validate() const;
};

// Per bus-phase (wye) or bus-pair (delta) load.
struct LoadSpec {
  std::string bus;
  int slot = 0;
  std::vector<double> p;  // forecast active power per period
  double phi = 0.0;       // power factor angle, Q = P tan(phi)
};

// Expected maximum renewable output per unit, [period][slot].
struct ForecastSeries {
  std::map<std::string, std::vector<std::vector<double>>> pmax;
  double at(const std::string& unit, int period, int slot) const;
};

// Column layout of the per-period decision vector:
// [P_CHP; Q_CHP; P_PV; Q_PV; P_ESS; Q_ESS; P_WT; Q_WT].
class DecisionLayout {
 public:
  explicit DecisionLayout(const std::vector<DerUnit>& fleet);
  int size() const { return size_; }
  int p(int unit, int k) const { return p_[unit][k]; }
  int q(int unit, int k) const { return q_[unit][k]; }
  std::string label(int col) const { return labels_.at(col); }

 private:
  int size_ = 0;
  std::vector<std::vector<int>> p_, q_;
  std::vector<std::string> labels_;
};

// Layout of the forecast-error vector: [PV slots; WT slots; load entries].
class ErrorLayout {
 public:
  ErrorLayout(const std::vector<DerUnit>& fleet, const std::vector<LoadSpec>& loads);
  int size() const { return size_; }
  // -1 for non-renewable units.
  int renewable(int unit, int k) const { return ren_[unit].empty() ? -1 : ren_[unit][k]; }
  int load(int entry) const { return load_[entry]; }
  int num_renewable() const { return num_ren_; }
  std::string label(int i) const { return labels_.at(i); }

 private:
  int size_ = 0;
  int num_ren_ = 0;
  std::vector<std::vector<int>> ren_;
  std::vector<int> load_;
  std::vector<std::string> labels_;
};

// x = M u + x0[:,t] + E e  (network injection ordering).
struct InjectionMap {
  Eigen::MatrixXd M;
  Eigen::MatrixXd E;
  Eigen::MatrixXd x0;  // one column per period

  Eigen::VectorXd apply(const Eigen::VectorXd& u, const Eigen::VectorXd& e, int period) const;
};

InjectionMap build_injection_map(const net::MultiphaseNetwork& net, const net::InjectionOrdering& ord,
                                 const std::vector<DerUnit>& fleet, const std::vector<LoadSpec>& loads,
                                 const DecisionLayout& dec, const ErrorLayout& err, int periods);

struct UnitBlockOptions {
  bool time_coupling = false;
  double dt = 1.0;
};

// Adds unit `u`'s rows and bounds for period t. `period_offsets[τ]` is the
// first LP column of period τ's decision vector; coupling rows need every
// τ <= t.
void build_unit_constraints(const std::vector<DerUnit>& fleet, int u, const DecisionLayout& dec, int t,
                            const ForecastSeries& forecast, std::span<const int> period_offsets,
                            lp::LinearProgram& lp, const UnitBlockOptions& opts = {});

// ESS energies implied by a power trajectory: E^t = alpha E^{t-1} - dt P^t.
std::vector<double> ess_energy(const EssParams& ess, std::span<const double> power, double dt);

}  // namespace vppflex::fleet
