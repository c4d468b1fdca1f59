#include "vppflex/mcoracle.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "vppflex/error.hpp"
#include "vppflex/parallel.hpp"

namespace vppflex::mc {

std::vector<double> GridSpec::p_axis() const {
  std::vector<double> a(n_p);
  for (int i = 0; i < n_p; ++i) a[i] = p_min + (i + 0.5) * (p_max - p_min) / n_p;
  return a;
}

std::vector<double> GridSpec::q_axis() const {
  std::vector<double> a(n_q);
  for (int j = 0; j < n_q; ++j) a[j] = q_min + (j + 0.5) * (q_max - q_min) / n_q;
  return a;
}

GridSpec grid_around(const pfr::PfrSurface& s, int n, double margin) {
  if (n < 1) throw RangeError("grid needs at least one cell per axis");
  GridSpec g;
  g.p_min = g.q_min = lp::kInf;
  g.p_max = g.q_max = -lp::kInf;
  for (const auto* set : {&s.points, &s.outside})
    for (const auto& pt : *set) {
      g.p_min = std::min(g.p_min, pt.p);
      g.p_max = std::max(g.p_max, pt.p);
      g.q_min = std::min(g.q_min, pt.q);
      g.q_max = std::max(g.q_max, pt.q);
    }
  if (g.p_min > g.p_max) throw RangeError("surface has no points");
  const double wp = margin * (g.p_max - g.p_min), wq = margin * (g.q_max - g.q_min);
  g.p_min -= wp;
  g.p_max += wp;
  g.q_min -= wq;
  g.q_max += wq;
  g.n_p = g.n_q = n;
  return g;
}

namespace {

struct NetRow {
  int lp_row = -1;  // -1: no decision dependence, checked directly
  Eigen::VectorXd a;
  double c, lower, upper;
};

struct RenewableCol {
  int col;
  double lo, hi;  // chart limits, lo clipped at zero
  double forecast;
  int err;
};

// Scenario feasibility LP for one period; the error realization only moves
// bounds.
class ScenarioLp {
 public:
  ScenarioLp(const cc::VppModel& model, int t) : model_(model), t_(t) {
    const int off = cc::add_decision_columns(lp_, model, t);
    const std::vector<int> offsets(t + 1, off);
    cc::add_fleet_rows(lp_, model, t, offsets, false);
    const auto co = cc::build_affine_coeffs(model, t);
    for (const auto* set : {&co.voltage, &co.current})
      for (const auto& r : *set) {
        NetRow nr{-1, r.a, r.c, r.lower, r.upper};
        std::vector<lp::Term> terms;
        for (Eigen::Index c = 0; c < r.b.size(); ++c)
          if (r.b(c) != 0.0) terms.push_back({off + static_cast<int>(c), r.b(c)});
        if (!terms.empty()) nr.lp_row = lp_.add_range_row(std::move(terms), r.lower - r.c, r.upper - r.c, r.tag);
        net_.push_back(std::move(nr));
      }
    pcc_ = cc::pcc_expression(model, t, off);
    p_row_ = lp_.add_row(pcc_.p_terms, lp::Relation::Equal, 0.0, "pcc:P");
    q_row_ = lp_.add_row(pcc_.q_terms, lp::Relation::Equal, 0.0, "pcc:Q");
    // PCC shift per unit error.
    pe_ = model.injection.E.transpose() * model.linear.m;
    qe_ = model.injection.E.transpose() * model.linear.h;
    for (int u = 0; u < static_cast<int>(model.fleet.size()); ++u) {
      const auto& unit = model.fleet[u];
      if (!fleet::is_renewable(unit.kind)) continue;
      for (int k = 0; k < static_cast<int>(unit.slots.size()); ++k) {
        const auto bb = unit.charts[k].bounding_box();
        ren_.push_back({off + model.decision.p(u, k), std::max(bb[0], 0.0), bb[1], model.forecast.at(unit.id, t, k),
                        model.errors.renewable(u, k)});
      }
    }
    off_ = off;
  }

  bool feasible(double p, double q, const Eigen::VectorXd& e, bool nonlinear) {
    for (const auto& r : net_) {
      const double shift = r.a.dot(e);
      if (r.lp_row < 0) {
        const double v = r.c + shift;
        if (v < r.lower - 1e-9 || v > r.upper + 1e-9) return false;
      } else {
        lp_.set_row_bounds(r.lp_row, r.lower - r.c - shift, r.upper - r.c - shift);
      }
    }
    for (const auto& rc : ren_) {
      const double avail = std::max(0.0, rc.forecast + e(rc.err));
      double hi = std::min(rc.hi, avail);
      const double lo = std::min(rc.lo, hi);
      if (hi < lo) hi = lo;
      lp_.set_bounds(rc.col, lo, hi);
    }
    const double rp = p - pcc_.p_const - pe_.dot(e);
    const double rq = q - pcc_.q_const - qe_.dot(e);
    lp_.set_row_bounds(p_row_, rp, rp);
    lp_.set_row_bounds(q_row_, rq, rq);
    const auto sol = lp::solve_lp(lp_);
    if (sol.status != lp::Status::Optimal) return false;
    if (!nonlinear) return true;

    const Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(sol.x.data() + off_, model_.decision.size());
    const Eigen::VectorXd x = model_.injection.apply(u, e, t_);
    net::LinearState st;
    try {
      st = net::nonlinear_state(model_.network, model_.linear, x);
    } catch (const DivergenceError&) {
      return false;
    }
    size_t i = 0;
    for (Eigen::Index r = 0; r < st.voltage.size(); ++r, ++i)
      if (st.voltage(r) < net_[i].lower - 1e-9 || st.voltage(r) > net_[i].upper + 1e-9) return false;
    for (Eigen::Index r = 0; r < st.current.size(); ++r, ++i)
      if (st.current(r) < net_[i].lower - 1e-9 || st.current(r) > net_[i].upper + 1e-9) return false;
    return true;
  }

 private:
  const cc::VppModel& model_;
  int t_;
  lp::LinearProgram lp_;
  std::vector<NetRow> net_;
  std::vector<RenewableCol> ren_;
  cc::PccExpression pcc_;
  Eigen::VectorXd pe_, qe_;
  int p_row_ = -1, q_row_ = -1, off_ = 0;
};

std::mt19937_64 cell_rng(std::uint64_t seed, int i, int j) {
  std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                   static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)};
  return std::mt19937_64(ss);
}

}  // namespace

bool scenario_feasible(const cc::VppModel& model, int t, double p, double q, const Eigen::VectorXd& e,
                       bool nonlinear) {
  if (e.size() != model.errors.size()) throw DimensionError("error vector does not match the model");
  ScenarioLp lp(model, t);
  return lp.feasible(p, q, e, nonlinear);
}

McGrid mc_confidence_grid(const cc::VppModel& model, int t, const GridSpec& grid, int n_scenarios,
                          std::uint64_t seed, const McOptions& opts) {
  if (n_scenarios < 1) throw RangeError("need at least one scenario");
  if (grid.n_p < 1 || grid.n_q < 1) throw RangeError("grid needs at least one cell per axis");
  McGrid out;
  out.p_axis = grid.p_axis();
  out.q_axis = grid.q_axis();
  out.conf = Eigen::MatrixXd::Zero(grid.n_p, grid.n_q);
  out.n_scenarios = n_scenarios;
  out.seed = seed;
  const uq::Sampler sampler(model.gmm(t));
  const ScenarioLp base(model, t);
  parallel_for(grid.n_p * grid.n_q, opts.jobs, [&](int cell) {
    const int i = cell / grid.n_q, j = cell % grid.n_q;
    ScenarioLp lp = base;
    auto rng = cell_rng(seed, i, j);
    Eigen::VectorXd e(sampler.dim());
    int ok = 0;
    for (int s = 0; s < n_scenarios; ++s) {
      sampler.draw(rng, e);
      ok += lp.feasible(out.p_axis[i], out.q_axis[j], e, opts.nonlinear);
    }
    out.conf(i, j) = static_cast<double>(ok) / n_scenarios;
  });
  return out;
}

double per_constraint_violation_rate(const cc::VppModel& model, int t, const Eigen::VectorXd& u,
                                     const cc::ConstraintId& id, int n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw RangeError("need at least one sample");
  if (u.size() != model.decision.size()) throw DimensionError("decision vector does not match the model");
  const auto co = cc::build_affine_coeffs(model, t);
  const cc::AffineRow* row = nullptr;
  switch (id.kind) {
    case cc::RowKind::VoltageUpper:
    case cc::RowKind::VoltageLower: row = &co.voltage.at(id.index); break;
    case cc::RowKind::CurrentUpper:
    case cc::RowKind::CurrentLower: row = &co.current.at(id.index); break;
    case cc::RowKind::Capability: break;
  }
  const Eigen::MatrixXd S = uq::sample(model.gmm(t), n_samples, seed);
  int viol = 0;
  if (!row) {
    const double lhs = co.b_p.dot(u) - co.c_p1 + co.c_p2;
    const Eigen::VectorXd ae = S * co.a_p;
    for (Eigen::Index i = 0; i < ae.size(); ++i) viol += lhs > ae(i);
  } else {
    const double base = row->b.dot(u) + row->c;
    const Eigen::VectorXd ae = S * row->a;
    const bool upper = id.kind == cc::RowKind::VoltageUpper || id.kind == cc::RowKind::CurrentUpper;
    for (Eigen::Index i = 0; i < ae.size(); ++i) {
      const double v = base + ae(i);
      viol += upper ? v > row->upper : v < row->lower;
    }
  }
  return static_cast<double>(viol) / n_samples;
}

Comparison compare_surfaces(const pfr::PfrSurface& analytic, const McGrid& mc) {
  Comparison c;
  const Eigen::Index n = mc.conf.size();
  if (n == 0) return c;
  const double mean = mc.conf.mean();
  double sse = 0.0, sst = 0.0;
  for (Eigen::Index i = 0; i < mc.conf.rows(); ++i)
    for (Eigen::Index j = 0; j < mc.conf.cols(); ++j) {
      const double d = pfr::conf_at(analytic, mc.p_axis[i], mc.q_axis[j]) - mc.conf(i, j);
      sse += d * d;
      sst += (mc.conf(i, j) - mean) * (mc.conf(i, j) - mean);
      c.max_abs = std::max(c.max_abs, std::abs(d));
    }
  c.cells = static_cast<int>(n);
  c.rmse = std::sqrt(sse / static_cast<double>(n));
  c.r2 = sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : 0.0);
  return c;
}

}  // namespace vppflex::mc
