#include "vppflex/costagg.hpp"

#include <algorithm>
#include <cmath>

#include "vppflex/error.hpp"
#include "vppflex/log.hpp"
#include "vppflex/parallel.hpp"

namespace vppflex::cost {

std::vector<std::pair<double, double>> chp_secants(const fleet::CostParams& c, double p0, double p1, int segments) {
  if (segments < 1) throw RangeError("need at least one secant segment");
  if (c.a < 0.0) throw RangeError("CHP quadratic coefficient must be nonnegative");
  auto f = [&](double p) { return c.a * p * p + c.b * p + c.c; };
  std::vector<std::pair<double, double>> out;
  if (!(p1 > p0)) {
    // Degenerate range: one line through the only point.
    out.push_back({2.0 * c.a * p0 + c.b, f(p0) - (2.0 * c.a * p0 + c.b) * p0});
    return out;
  }
  const double w = (p1 - p0) / segments;
  for (int k = 0; k < segments; ++k) {
    const double x0 = p0 + k * w, x1 = x0 + w;
    const double s = (f(x1) - f(x0)) / w;
    out.push_back({s, f(x0) - s * x0});
  }
  return out;
}

namespace {

// Adds cost columns for CHP and ESS units of period t.
void add_cost_rows(lp::LinearProgram& prog, const cc::VppModel& model, int t, int off) {
  for (int u = 0; u < static_cast<int>(model.fleet.size()); ++u) {
    const auto& unit = model.fleet[u];
    std::vector<lp::Term> p_sum;
    double p0 = 0.0, p1 = 0.0;
    for (int k = 0; k < static_cast<int>(unit.slots.size()); ++k) {
      const int col = off + model.decision.p(u, k);
      p_sum.push_back({col, 1.0});
      p0 += prog.lower()[col];
      p1 += prog.upper()[col];
    }
    const std::string tag = unit.id + ":cost:t" + std::to_string(t);
    if (unit.kind == fleet::DerKind::CHP) {
      if (unit.cost.a == 0.0) {
        for (const auto& term : p_sum) prog.set_cost(term.col, prog.cost()[term.col] + unit.cost.b);
        prog.add_variable(1.0, 1.0, unit.cost.c, tag);
        continue;
      }
      // z >= each secant line.
      const int z = prog.add_variable(-lp::kInf, lp::kInf, 1.0, tag);
      for (const auto& [s, c0] : chp_secants(unit.cost, p0, p1)) {
        std::vector<lp::Term> row{{z, 1.0}};
        for (const auto& term : p_sum) row.push_back({term.col, -s});
        prog.add_row(std::move(row), lp::Relation::GreaterEqual, c0, tag);
      }
    } else if (unit.kind == fleet::DerKind::ESS) {
      if (unit.cost.k_ch < 0.0 || unit.cost.k_dis < 0.0) throw RangeError("unit '" + unit.id + "': negative ESS cost");
      if (unit.cost.k_ch == 0.0 && unit.cost.k_dis == 0.0) continue;
      const int r = prog.add_variable(0.0, lp::kInf, 1.0, tag);
      std::vector<lp::Term> dis{{r, 1.0}}, ch{{r, 1.0}};
      for (const auto& term : p_sum) {
        dis.push_back({term.col, -unit.cost.k_dis * model.dt});
        ch.push_back({term.col, unit.cost.k_ch * model.dt});
      }
      prog.add_row(std::move(dis), lp::Relation::GreaterEqual, 0.0, tag + ":dis");
      prog.add_row(std::move(ch), lp::Relation::GreaterEqual, 0.0, tag + ":ch");
    }
  }
}

}  // namespace

std::optional<double> min_cost_at(const cc::VppModel& model, int t, const cc::DeterministicConstraintSet& det,
                                  double target) {
  const auto res = cc::solve_ccopf(model, t, det, {lp::Sense::Minimize, 0.0, 0.0},
                                   [&](lp::LinearProgram& prog, int off, const cc::PccExpression& pcc) {
                                     add_cost_rows(prog, model, t, off);
                                     prog.add_row(pcc.p_terms, lp::Relation::Equal, target - pcc.p_const, "pcc:pin");
                                   });
  if (res.status != lp::Status::Optimal) return std::nullopt;
  return res.objective;
}

std::vector<CostSample> sample_cost_points(const cc::VppModel& model, double gamma, int t, int k, int jobs) {
  if (k < 2) throw RangeError("need at least two cost samples");
  const auto det = cc::reformulate_chance(cc::build_affine_coeffs(model, t), model.gmm(t),
                                          cc::ChanceSpec::from_gamma(gamma));
  const auto hi = cc::solve_ccopf(model, t, det, {lp::Sense::Maximize, 1.0, 0.0});
  const auto lo = cc::solve_ccopf(model, t, det, {lp::Sense::Minimize, 1.0, 0.0});
  if (hi.status != lp::Status::Optimal || lo.status != lp::Status::Optimal)
    throw InfeasibleError("period " + std::to_string(t) + " has no P range at confidence " + std::to_string(gamma));
  std::vector<std::optional<double>> c(k);
  std::vector<double> p(k);
  for (int i = 0; i < k; ++i) p[i] = lo.p_pcc + (hi.p_pcc - lo.p_pcc) * i / (k - 1);
  parallel_for(k, jobs, [&](int i) { c[i] = min_cost_at(model, t, det, p[i]); });
  std::vector<CostSample> out;
  for (int i = 0; i < k; ++i) {
    if (c[i]) {
      out.push_back({p[i], *c[i]});
    } else {
      warn("cost target P = " + std::to_string(p[i]) + " infeasible in period " + std::to_string(t) + ", dropped");
    }
  }
  if (out.empty()) throw Error("every cost target is infeasible: P range and chance rows disagree");
  return out;
}

CostCurve fit_cost_curve(const std::vector<CostSample>& samples, int m, const pwl::FitOptions& opts) {
  if (static_cast<int>(samples.size()) < m + 1)
    throw RangeError("cost fit needs at least " + std::to_string(m + 1) + " samples");
  Eigen::MatrixXd X(samples.size(), 1);
  Eigen::VectorXd y(samples.size());
  CostCurve cv;
  cv.p_min = lp::kInf;
  cv.p_max = -lp::kInf;
  for (size_t i = 0; i < samples.size(); ++i) {
    X(static_cast<Eigen::Index>(i), 0) = samples[i].p;
    y(static_cast<Eigen::Index>(i)) = samples[i].cost;
    cv.p_min = std::min(cv.p_min, samples[i].p);
    cv.p_max = std::max(cv.p_max, samples[i].p);
  }
  auto fit = pwl::fit_cpwl(X, y, m, pwl::Mode::Max, false, opts);
  cv.model = std::move(fit.model);
  cv.stats = fit.stats;
  cv.samples = samples;
  return cv;
}

double eval_cost(const CostCurve& curve, double p) {
  const double tol = 1e-9 * (1.0 + std::abs(curve.p_max) + std::abs(curve.p_min));
  if (!(p >= curve.p_min - tol && p <= curve.p_max + tol))
    throw RangeError("P = " + std::to_string(p) + " outside the cost curve range [" + std::to_string(curve.p_min) +
                     ", " + std::to_string(curve.p_max) + "]");
  return curve.model.eval(Eigen::VectorXd::Constant(1, p));
}

std::vector<CostCurve> build_cost_curves(const cc::VppModel& model, double gamma, const CostOptions& opts) {
  std::vector<CostCurve> out;
  for (int t = 0; t < model.periods; ++t) {
    auto cv = fit_cost_curve(sample_cost_points(model, gamma, t, opts.samples, opts.jobs), opts.pieces);
    cv.period = t;
    cv.gamma = gamma;
    out.push_back(std::move(cv));
  }
  return out;
}

}  // namespace vppflex::cost
