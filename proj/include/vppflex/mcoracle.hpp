#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "vppflex/ccopf.hpp"
#include "vppflex/pfr.hpp"

namespace vppflex::mc {

// Cell centres of an n_p x n_q grid over the box.
struct GridSpec {
  double p_min = 0.0, p_max = 0.0;
  double q_min = 0.0, q_max = 0.0;
  int n_p = 40;
  int n_q = 40;

  std::vector<double> p_axis() const;
  std::vector<double> q_axis() const;
};

// Box around a surface's training points, widened by `margin` of its size.
GridSpec grid_around(const pfr::PfrSurface& s, int n, double margin = 0.05);

struct McGrid {
  std::vector<double> p_axis;
  std::vector<double> q_axis;
  Eigen::MatrixXd conf;  // conf(i, j) at (p_axis[i], q_axis[j])
  int n_scenarios = 0;
  std::uint64_t seed = 0;
};

struct McOptions {
  // Also require the LP dispatch to respect the limits under the full
  // nonlinear load flow.
  bool nonlinear = false;
  int jobs = 0;  // 0: default_jobs()
};

// Fraction of sampled error scenarios in which some dispatch realizes
// (P, Q) at the PCC. Each cell draws its own scenarios from (seed, i, j).
McGrid mc_confidence_grid(const cc::VppModel& model, int t, const GridSpec& grid, int n_scenarios,
                          std::uint64_t seed, const McOptions& opts = {});

// Whether (P, Q) is realizable under one error realization.
bool scenario_feasible(const cc::VppModel& model, int t, double p, double q, const Eigen::VectorXd& e,
                       bool nonlinear = false);

// Empirical violation frequency of one chance row at a fixed decision u.
double per_constraint_violation_rate(const cc::VppModel& model, int t, const Eigen::VectorXd& u,
                                     const cc::ConstraintId& id, int n_samples, std::uint64_t seed);

struct Comparison {
  double rmse = 0.0;
  double r2 = 0.0;
  double max_abs = 0.0;
  int cells = 0;
};

// Analytic surface at the cell centres against the grid, which is the
// reference for R^2.
Comparison compare_surfaces(const pfr::PfrSurface& analytic, const McGrid& mc);

}  // namespace vppflex::mc
