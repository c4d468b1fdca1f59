#include "vppflex/tcf.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "vppflex/error.hpp"
#include "vppflex/log.hpp"
#include "vppflex/parallel.hpp"

namespace vppflex::tcf {

void TcfEnvelope::validate() const {
  if (periods < 1) throw RangeError("envelope needs at least one period");
  const size_t T = static_cast<size_t>(periods);
  if (p_min.size() != T || p_max.size() != T || e_min.size() != T || e_max.size() != T || r_down.size() != T - 1 ||
      r_up.size() != T - 1)
    throw DimensionError("envelope bound vectors do not match the horizon");
  auto ordered = [](const std::vector<double>& lo, const std::vector<double>& hi, const char* what) {
    for (size_t i = 0; i < lo.size(); ++i)
      if (!(lo[i] <= hi[i])) throw RangeError(std::string("envelope ") + what + " bounds cross");
  };
  ordered(p_min, p_max, "power");
  ordered(r_down, r_up, "ramp");
  ordered(e_min, e_max, "energy");
}

void TcfEnvelope::halfspaces(Eigen::MatrixXd& A, Eigen::VectorXd& b) const {
  const int T = periods;
  A = Eigen::MatrixXd::Zero(6 * T - 2, T);
  b.resize(6 * T - 2);
  int r = 0;
  for (int t = 0; t < T; ++t) {
    A(r, t) = 1.0;
    b(r++) = p_max[t];
    A(r, t) = -1.0;
    b(r++) = -p_min[t];
  }
  for (int t = 0; t + 1 < T; ++t) {
    A(r, t + 1) = 1.0;
    A(r, t) = -1.0;
    b(r++) = r_up[t];
    A(r, t + 1) = -1.0;
    A(r, t) = 1.0;
    b(r++) = -r_down[t];
  }
  for (int t = 0; t < T; ++t) {
    A.block(r, 0, 1, t + 1).setConstant(dt);
    b(r++) = e_max[t];
    A.block(r, 0, 1, t + 1).setConstant(-dt);
    b(r++) = -e_min[t];
  }
}

bool TcfEnvelope::contains(const Eigen::VectorXd& traj, double tol) const {
  if (traj.size() != periods) return false;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  halfspaces(A, b);
  return ((A * traj - b).array() <= tol).all();
}

TcfEnvelope init_envelope(const cc::VppModel& model, double gamma) {
  TcfEnvelope env;
  env.periods = model.periods;
  env.dt = model.dt;
  env.gamma = gamma;
  const auto spec = cc::ChanceSpec::from_gamma(gamma);
  for (int t = 0; t < model.periods; ++t) {
    const auto det = cc::reformulate_chance(cc::build_affine_coeffs(model, t), model.gmm(t), spec);
    const auto hi = cc::solve_ccopf(model, t, det, {lp::Sense::Maximize, 1.0, 0.0});
    const auto lo = cc::solve_ccopf(model, t, det, {lp::Sense::Minimize, 1.0, 0.0});
    if (hi.status != lp::Status::Optimal || lo.status != lp::Status::Optimal)
      throw InfeasibleError("period " + std::to_string(t) + " is infeasible at confidence " + std::to_string(gamma));
    env.p_max.push_back(hi.p_pcc);
    env.p_min.push_back(lo.p_pcc);
  }
  double emin = 0.0, emax = 0.0;
  for (int t = 0; t < model.periods; ++t) {
    if (t + 1 < model.periods) {
      env.r_up.push_back(env.p_max[t + 1] - env.p_min[t]);
      env.r_down.push_back(env.p_min[t + 1] - env.p_max[t]);
    }
    emin += env.dt * env.p_min[t];
    emax += env.dt * env.p_max[t];
    env.e_min.push_back(emin);
    env.e_max.push_back(emax);
  }
  return env;
}

namespace {

struct Vertex {
  Eigen::VectorXd x;
  std::vector<int> active;  // sorted row indices
};

int rank_of(const Eigen::MatrixXd& A, const std::vector<int>& rows) {
  if (rows.empty()) return 0;
  Eigen::MatrixXd M(rows.size(), A.cols());
  for (size_t i = 0; i < rows.size(); ++i) M.row(static_cast<Eigen::Index>(i)) = A.row(rows[i]);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(M);
  lu.setThreshold(1e-10);
  return static_cast<int>(lu.rank());
}

}  // namespace

std::vector<Eigen::VectorXd> enumerate_vertices(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double tol) {
  const int n = static_cast<int>(A.cols());
  const int m = static_cast<int>(A.rows());
  if (m < 2 * n) throw DimensionError("vertex enumeration needs the box rows first");
  if (n > 20) throw RangeError("vertex enumeration is limited to 20 dimensions");
  for (int i = 0; i < n; ++i)
    if (!(b(2 * i) >= -b(2 * i + 1) - tol)) return {};

  std::vector<Vertex> verts;
  for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
    Vertex v;
    v.x.resize(n);
    for (int i = 0; i < n; ++i) v.x(i) = (mask >> i) & 1 ? b(2 * i) : -b(2 * i + 1);
    verts.push_back(std::move(v));
  }
  auto dedupe = [&](std::vector<Vertex>& vs, int processed) {
    std::vector<Vertex> out;
    for (auto& v : vs) {
      bool dup = false;
      for (const auto& w : out)
        if ((w.x - v.x).lpNorm<Eigen::Infinity>() <= tol * (1.0 + v.x.lpNorm<Eigen::Infinity>())) {
          dup = true;
          break;
        }
      if (dup) continue;
      v.active.clear();
      for (int r = 0; r < processed; ++r)
        if (std::abs(A.row(r).dot(v.x) - b(r)) <= tol * (1.0 + std::abs(b(r)))) v.active.push_back(r);
      out.push_back(std::move(v));
    }
    vs = std::move(out);
  };
  dedupe(verts, 2 * n);

  for (int r = 2 * n; r < m; ++r) {
    std::vector<double> s(verts.size());
    const double scale = tol * (1.0 + std::abs(b(r)));
    bool any_out = false, any_in = false;
    for (size_t i = 0; i < verts.size(); ++i) {
      s[i] = A.row(r).dot(verts[i].x) - b(r);
      any_out = any_out || s[i] > scale;
      any_in = any_in || s[i] <= scale;
    }
    if (!any_in) return {};
    std::vector<Vertex> next;
    if (any_out) {
      for (size_t p = 0; p < verts.size(); ++p) {
        if (s[p] <= scale) continue;
        for (size_t q = 0; q < verts.size(); ++q) {
          if (s[q] >= -scale) continue;
          std::vector<int> common;
          std::set_intersection(verts[p].active.begin(), verts[p].active.end(), verts[q].active.begin(),
                                verts[q].active.end(), std::back_inserter(common));
          if (static_cast<int>(common.size()) < n - 1 || rank_of(A, common) != n - 1) continue;
          const double w = -s[q] / (s[p] - s[q]);
          Vertex v;
          v.x = verts[q].x + w * (verts[p].x - verts[q].x);
          v.active = std::move(common);
          v.active.push_back(r);
          next.push_back(std::move(v));
        }
      }
    }
    for (size_t i = 0; i < verts.size(); ++i) {
      if (s[i] > scale) continue;
      if (std::abs(s[i]) <= scale) verts[i].active.push_back(r);
      next.push_back(std::move(verts[i]));
    }
    dedupe(next, r + 1);
    verts = std::move(next);
  }
  std::vector<Eigen::VectorXd> out;
  for (auto& v : verts) out.push_back(std::move(v.x));
  std::sort(out.begin(), out.end(), [](const Eigen::VectorXd& a, const Eigen::VectorXd& c) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), c.data(), c.data() + c.size());
  });
  return out;
}

InnerProblem::InnerProblem(const cc::VppModel& model, double gamma) {
  const auto spec = cc::ChanceSpec::from_gamma(gamma);
  std::vector<int> offsets;
  for (int t = 0; t < model.periods; ++t) offsets.push_back(cc::add_decision_columns(lp_, model, t));
  for (int t = 0; t < model.periods; ++t) {
    cc::add_fleet_rows(lp_, model, t, offsets, true);
    cc::add_det_rows(lp_, cc::reformulate_chance(cc::build_affine_coeffs(model, t), model.gmm(t), spec), offsets[t]);
    const auto pcc = cc::pcc_expression(model, t, offsets[t]);
    track_rows_.push_back(lp_.add_row(pcc.p_terms, lp::Relation::Equal, 0.0, "track:t" + std::to_string(t)));
    p_const_.push_back(pcc.p_const);
  }
}

double InnerProblem::slack(const Eigen::VectorXd& traj) const {
  if (traj.size() != static_cast<Eigen::Index>(track_rows_.size()))
    throw DimensionError("trajectory length does not match the horizon");
  lp::LinearProgram prog = lp_;
  for (size_t t = 0; t < track_rows_.size(); ++t) {
    const double rhs = traj(static_cast<Eigen::Index>(t)) - p_const_[t];
    prog.set_row_bounds(track_rows_[t], rhs, rhs);
  }
  const auto res = lp::solve_feasibility(prog, track_rows_);
  if (res.status != lp::Status::Optimal)
    throw Error("disaggregation LP failed even with tracking slacks: fleet or chance rows are infeasible");
  return res.violation;
}

namespace {

std::vector<Eigen::VectorXd> extreme_points(const TcfEnvelope& env, const ViolationOptions& opts, bool& exact) {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  env.halfspaces(A, b);
  if (env.periods <= opts.max_enumeration_periods) {
    exact = true;
    return enumerate_vertices(A, b);
  }
  exact = false;
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> nd;
  std::vector<Eigen::VectorXd> out;
  for (int k = 0; k < opts.random_extremes; ++k) {
    lp::LinearProgram prog;
    for (int t = 0; t < env.periods; ++t) prog.add_variable(-lp::kInf, lp::kInf, nd(rng));
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
      std::vector<lp::Term> terms;
      for (Eigen::Index c = 0; c < A.cols(); ++c)
        if (A(r, c) != 0.0) terms.push_back({static_cast<int>(c), A(r, c)});
      prog.add_row(std::move(terms), lp::Relation::LessEqual, b(r));
    }
    prog.set_sense(lp::Sense::Maximize);
    const auto sol = lp::solve_lp(prog);
    if (sol.status != lp::Status::Optimal) continue;
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(sol.x.data(), env.periods);
    const bool seen = std::any_of(out.begin(), out.end(), [&](const Eigen::VectorXd& y) {
      return (y - x).lpNorm<Eigen::Infinity>() <= 1e-9;
    });
    if (!seen) out.push_back(std::move(x));
  }
  return out;
}

}  // namespace

ViolationResult max_violation(const TcfEnvelope& env, const InnerProblem& inner, const ViolationOptions& opts) {
  env.validate();
  ViolationResult res;
  const auto pts = extreme_points(env, opts, res.exact);
  if (pts.empty()) throw InfeasibleError("envelope polytope is empty");
  std::vector<double> f(pts.size());
  parallel_for(static_cast<int>(pts.size()), opts.jobs, [&](int i) { f[i] = inner.slack(pts[i]); });
  const auto it = std::max_element(f.begin(), f.end());
  res.f = *it;
  res.worst = pts[it - f.begin()];
  res.candidates = static_cast<int>(pts.size());
  return res;
}

ViolationResult max_violation(const TcfEnvelope& env, const cc::VppModel& model, const ViolationOptions& opts) {
  return max_violation(env, InnerProblem(model, env.gamma), opts);
}

TcfEnvelope shrink(const TcfEnvelope& env, const ShrinkFactors& th) {
  for (double v : {th.p, th.r, th.e})
    if (!(v > 0.5 && v <= 1.0)) throw RangeError("shrink factor must lie in (0.5, 1]");
  TcfEnvelope out = env;
  auto pull = [](std::vector<double>& lo, std::vector<double>& hi, double theta) {
    for (size_t i = 0; i < lo.size(); ++i) {
      const double l = lo[i], h = hi[i];
      lo[i] = theta * l + (1.0 - theta) * h;
      hi[i] = theta * h + (1.0 - theta) * l;
    }
  };
  pull(out.p_min, out.p_max, th.p);
  pull(out.r_down, out.r_up, th.r);
  pull(out.e_min, out.e_max, th.e);
  return out;
}

TcfEnvelope shrink(const TcfEnvelope& env, double theta) { return shrink(env, ShrinkFactors{theta, theta, theta}); }

RobustResult robust_modify(const cc::VppModel& model, double gamma, const RobustOptions& opts) {
  if (!(opts.theta > 0.5 && opts.theta < 1.0)) throw RangeError("theta must lie in (0.5, 1)");
  if (!(opts.eps > 0.0)) throw RangeError("eps must be positive");
  RobustResult out;
  TcfEnvelope env = init_envelope(model, gamma);
  const InnerProblem inner(model, gamma);
  for (int it = 0; it < opts.max_iter; ++it) {
    out.history.push_back(env);
    const auto v = max_violation(env, inner, opts.violation);
    out.f_history.push_back(v.f);
    out.iterations = it + 1;
    if (v.f < opts.eps) {
      out.converged = true;
      break;
    }
    ShrinkFactors th{opts.theta, opts.theta, opts.theta};
    if (opts.selective) {
      // Families with a bound active at the worst trajectory.
      Eigen::MatrixXd A;
      Eigen::VectorXd b;
      env.halfspaces(A, b);
      const Eigen::VectorXd s = A * v.worst - b;
      const int T = env.periods;
      bool fam[3] = {false, false, false};
      for (Eigen::Index r = 0; r < s.size(); ++r)
        if (std::abs(s(r)) <= 1e-9 * (1.0 + std::abs(b(r)))) fam[r < 2 * T ? 0 : (r < 4 * T - 2 ? 1 : 2)] = true;
      th = {fam[0] ? opts.theta : 1.0, fam[1] ? opts.theta : 1.0, fam[2] ? opts.theta : 1.0};
    }
    env = shrink(env, th);
  }
  if (!out.converged)
    warn("robust modification did not converge in " + std::to_string(opts.max_iter) + " iterations (last f* = " +
         std::to_string(out.f_history.back()) + ")");
  out.envelope = env;
  return out;
}

std::vector<Eigen::VectorXd> random_trajectories(const TcfEnvelope& env, int n, std::uint64_t seed) {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  env.halfspaces(A, b);
  std::vector<Eigen::VectorXd> verts;
  if (env.periods <= 8) {
    verts = enumerate_vertices(A, b);
  } else {
    bool exact = false;
    verts = extreme_points(env, {8, 200, seed, 1}, exact);
  }
  if (verts.empty()) throw InfeasibleError("envelope polytope is empty");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, verts.size() - 1);
  std::exponential_distribution<double> ex(1.0);
  std::vector<Eigen::VectorXd> out;
  const int k = env.periods + 1;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(env.periods);
    double tot = 0.0;
    for (int j = 0; j < k; ++j) {
      const double w = ex(rng);
      x += w * verts[pick(rng)];
      tot += w;
    }
    out.push_back(x / tot);
  }
  return out;
}

}  // namespace vppflex::tcf
