#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "vppflex/ccopf.hpp"

namespace vppflex::tcf {

// Battery-plus-generator envelope of the PCC trajectory P'^1..P'^T:
//   p_min <= P'^t <= p_max
//   r_down <= P'^{t+1} - P'^t <= r_up
//   e_min <= dt * sum_{tau<=t} P'^tau <= e_max
// Energies are cumulative PCC energy, not ESS state of charge.
struct TcfEnvelope {
  int periods = 0;
  double dt = 1.0;
  double gamma = 0.0;
  std::vector<double> p_min, p_max;  // T
  std::vector<double> r_down, r_up;  // T-1
  std::vector<double> e_min, e_max;  // T

  void validate() const;
  bool contains(const Eigen::VectorXd& traj, double tol = 1e-9) const;
  // Every bound as a row a'P <= b.
  void halfspaces(Eigen::MatrixXd& A, Eigen::VectorXd& b) const;
};

// Bounds from per-period max/min P_PCC chance-constrained OPFs; ramp and
// energy bounds are the ones implied by them. Throws InfeasibleError when a
// period is infeasible at gamma.
TcfEnvelope init_envelope(const cc::VppModel& model, double gamma);

// Vertices of {x : A x <= b} (bounded, nonempty) by double description,
// starting from the box formed by the first 2n rows (x_i <= u_i, -x_i <= -l_i
// in that order).
std::vector<Eigen::VectorXd> enumerate_vertices(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                                double tol = 1e-9);

// Multi-period disaggregation LP: minimal total tracking slack of a PCC
// trajectory under fleet rows (time-coupled) and chance rows at gamma.
class InnerProblem {
 public:
  InnerProblem(const cc::VppModel& model, double gamma);
  double slack(const Eigen::VectorXd& traj) const;

 private:
  lp::LinearProgram lp_;
  std::vector<int> track_rows_;
  std::vector<double> p_const_;
};

struct ViolationOptions {
  int max_enumeration_periods = 8;
  int random_extremes = 200;  // above max_enumeration_periods
  std::uint64_t seed = 1;
  int jobs = 0;
};

struct ViolationResult {
  double f = 0.0;
  Eigen::VectorXd worst;
  int candidates = 0;
  bool exact = true;  // false: lower bound from sampled extreme points
};

ViolationResult max_violation(const TcfEnvelope& env, const cc::VppModel& model, const ViolationOptions& opts = {});
ViolationResult max_violation(const TcfEnvelope& env, const InnerProblem& inner, const ViolationOptions& opts = {});

struct ShrinkFactors {
  double p = 0.9, r = 0.9, e = 0.9;
};

TcfEnvelope shrink(const TcfEnvelope& env, double theta);
TcfEnvelope shrink(const TcfEnvelope& env, const ShrinkFactors& theta);

struct RobustOptions {
  double theta = 0.9;
  double eps = 1e-4;
  int max_iter = 50;
  // Shrink only the bound families active at the worst trajectory.
  bool selective = false;
  ViolationOptions violation;
};

struct RobustResult {
  TcfEnvelope envelope;
  bool converged = false;
  int iterations = 0;
  std::vector<double> f_history;
  std::vector<TcfEnvelope> history;  // envelope before each check
};

RobustResult robust_modify(const cc::VppModel& model, double gamma, const RobustOptions& opts = {});

// Points of the envelope: its vertices' random convex combinations.
std::vector<Eigen::VectorXd> random_trajectories(const TcfEnvelope& env, int n, std::uint64_t seed);

}  // namespace vppflex::tcf
