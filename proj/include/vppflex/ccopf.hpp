#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vppflex/derfleet.hpp"
#include "vppflex/lpcore.hpp"
#include "vppflex/netmodel.hpp"
#include "vppflex/uncert.hpp"

namespace vppflex::cc {

// Everything the stage modules need about one VPP: network, linear model,
// fleet, profiles and the per-period error mixtures.
struct VppModel {
  net::MultiphaseNetwork network;
  net::LinearNetworkModel linear;
  std::vector<fleet::DerUnit> fleet;
  std::vector<fleet::LoadSpec> loads;
  fleet::ForecastSeries forecast;
  fleet::DecisionLayout decision;
  fleet::ErrorLayout errors;
  fleet::InjectionMap injection;
  std::vector<uq::Gmm> gmms;  // one per period, or a single shared mixture
  int periods = 1;
  double dt = 1.0;

  const uq::Gmm& gmm(int t) const { return gmms.size() == 1 ? gmms.front() : gmms.at(t); }
};

// Linearizes at the fleet's central operating point (chart box centres,
// renewables at half their mean forecast, mean loads) and validates every
// ordering against the mixtures.
VppModel build_vpp_model(net::MultiphaseNetwork network, std::vector<fleet::DerUnit> fleet,
                         std::vector<fleet::LoadSpec> loads, fleet::ForecastSeries forecast,
                         std::vector<uq::Gmm> gmms, int periods, double dt);

enum class RowKind { VoltageUpper, VoltageLower, CurrentUpper, CurrentLower, Capability };
const char* row_kind_name(RowKind k);

struct ConstraintId {
  RowKind kind = RowKind::Capability;
  int index = 0;  // voltage: row of K; current: row of J; capability: 0
};

// quantity = a'e + b'u + c
struct AffineRow {
  Eigen::VectorXd a;
  Eigen::VectorXd b;
  double c = 0.0;
  double lower = 0.0;  // operating limits of the quantity
  double upper = 0.0;
  std::string tag;
};

struct AffineConstraintCoeffs {
  int period = 0;
  std::vector<AffineRow> voltage;
  std::vector<AffineRow> current;
  // Random capability a_p'e + c_p1, decision-side capability b_p'u + c_p2.
  Eigen::VectorXd a_p;
  Eigen::VectorXd b_p;
  double c_p1 = 0.0;
  double c_p2 = 0.0;
  bool has_renewables = false;
};

AffineConstraintCoeffs build_affine_coeffs(const VppModel& model, int t);

struct ChanceSpec {
  double alpha_v_plus = 0.05;
  double alpha_v_minus = 0.05;
  double alpha_i_plus = 0.05;
  double alpha_i_minus = 0.05;
  double alpha_p = 0.05;

  static ChanceSpec from_gamma(double gamma);
  void validate() const;  // each risk in (0, 0.5]
};

struct RowFilter {
  bool voltages = true;
  bool currents = true;
  bool capability = true;
};

// coef'u <= rhs (upper) or coef'u >= rhs.
struct DetRow {
  ConstraintId id;
  Eigen::VectorXd coef;
  double rhs = 0.0;
  bool upper = true;
  double quantile = 0.0;
  double alpha = 0.0;  // the risk level the quantile was taken at
  std::string label;
};

struct DeterministicConstraintSet {
  int period = 0;
  std::vector<DetRow> rows;
};

DeterministicConstraintSet reformulate_chance(const AffineConstraintCoeffs& coeffs, const uq::Gmm& gmm,
                                              const ChanceSpec& spec, const RowFilter& filter = {});

// P_PCC and Q_PCC as affine expressions of one period's decision columns,
// evaluated at zero forecast error.
struct PccExpression {
  std::vector<lp::Term> p_terms;
  double p_const = 0.0;
  std::vector<lp::Term> q_terms;
  double q_const = 0.0;
};

PccExpression pcc_expression(const VppModel& model, int t, int offset);
// (P_PCC, Q_PCC) of a decision vector at zero error.
std::pair<double, double> pcc_value(const VppModel& model, int t, const Eigen::VectorXd& u);

// Appends one period's decision columns (free) and returns their offset.
int add_decision_columns(lp::LinearProgram& lp, const VppModel& model, int t);
// Fleet rows for period t; coupling rows need every offsets[tau], tau <= t.
void add_fleet_rows(lp::LinearProgram& lp, const VppModel& model, int t, std::span<const int> offsets,
                    bool time_coupling);
void add_det_rows(lp::LinearProgram& lp, const DeterministicConstraintSet& det, int offset);

struct CcopfObjective {
  lp::Sense sense = lp::Sense::Maximize;
  double w_p = 0.0;
  double w_q = 0.0;
};

struct CcopfResult {
  lp::Status status = lp::Status::Infeasible;
  double objective = 0.0;
  Eigen::VectorXd u;
  double p_pcc = 0.0;
  double q_pcc = 0.0;
};

using ExtraRows = std::function<void(lp::LinearProgram&, int offset, const PccExpression&)>;

// Single-period chance-constrained OPF over fleet rows and `det`.
CcopfResult solve_ccopf(const VppModel& model, int t, const DeterministicConstraintSet& det,
                        const CcopfObjective& obj, const ExtraRows& extra = {});

struct LinearizationCheck {
  double max_voltage_error = 0.0;  // relative, over monitored nodes
  double max_pcc_error = 0.0;      // absolute, |dP| and |dQ| at the PCC (p.u.)
  int samples = 0;
  int diverged = 0;  // load flow failed at these points; excluded
  Eigen::VectorXd worst_x;
};

// Linear network model against the full load flow over the injection box
// the fleet can reach (chart bounding boxes, renewables capped by their
// forecast, forecast loads), cycling through the periods. Each coordinate
// is drawn at its lower bound, upper bound or uniformly in between.
LinearizationCheck check_linearization(const VppModel& model, int samples, std::uint64_t seed, int jobs = 0);

}  // namespace vppflex::cc
