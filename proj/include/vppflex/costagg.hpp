#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "vppflex/ccopf.hpp"
#include "vppflex/cpwl.hpp"

namespace vppflex::cost {

inline constexpr int kChpSegments = 10;

struct CostSample {
  double p = 0.0;     // P_PCC target
  double cost = 0.0;  // minimum fleet operating cost there
};

// CHP quadratic cost replaced by the chord interpolant over [p0, p1] with
// `segments` equal pieces, as (slope, intercept) lines whose maximum is the
// interpolant.
std::vector<std::pair<double, double>> chp_secants(const fleet::CostParams& c, double p0, double p1,
                                                   int segments = kChpSegments);

// Minimum-cost dispatch at P_PCC = target under fleet and chance rows.
// nullopt when the target is infeasible.
std::optional<double> min_cost_at(const cc::VppModel& model, int t, const cc::DeterministicConstraintSet& det,
                                  double target);

// K equally spaced targets across the P range at gamma.
std::vector<CostSample> sample_cost_points(const cc::VppModel& model, double gamma, int t, int k = 41, int jobs = 1);

struct CostCurve {
  int period = 0;
  double gamma = 0.0;
  double p_min = 0.0, p_max = 0.0;
  pwl::PwlModel model;  // Max mode, one input
  pwl::FitStats stats;
  std::vector<CostSample> samples;
};

CostCurve fit_cost_curve(const std::vector<CostSample>& samples, int m, const pwl::FitOptions& opts = {});

double eval_cost(const CostCurve& curve, double p);

struct CostOptions {
  int samples = 41;
  int pieces = 5;
  int jobs = 0;
};

// One curve per period.
std::vector<CostCurve> build_cost_curves(const cc::VppModel& model, double gamma, const CostOptions& opts = {});

}  // namespace vppflex::cost
