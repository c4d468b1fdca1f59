#include "vppflex/pfr.hpp"

#include <algorithm>
#include <cmath>

#include "vppflex/error.hpp"
#include "vppflex/log.hpp"
#include "vppflex/parallel.hpp"

namespace vppflex::pfr {

namespace {

cc::DeterministicConstraintSet det_rows(const cc::VppModel& model, int t, double gamma) {
  if (!(gamma > 0.5 && gamma < 1.0)) throw RangeError("confidence level must lie in (0.5, 1)");
  return cc::reformulate_chance(cc::build_affine_coeffs(model, t), model.gmm(t), cc::ChanceSpec::from_gamma(gamma));
}

SweepResult sweep_with(const cc::VppModel& model, int t, double gamma, const cc::DeterministicConstraintSet& det,
                       const Anchor& anchor, int n_angles, int jobs) {
  if (n_angles < 8) throw RangeError("need at least 8 sweep angles");
  SweepResult out;
  out.anchor = anchor;
  out.points.resize(n_angles);
  std::vector<char> ok(n_angles, 0);
  parallel_for(n_angles, jobs, [&](int k) {
    const double phi = 2.0 * M_PI * k / n_angles;
    const double c = std::cos(phi), s = std::sin(phi);
    auto ray = [&](lp::LinearProgram& lp, int, const cc::PccExpression& e) {
      const int r = lp.add_variable(0.0, lp::kInf, 1.0, "r");
      auto p = e.p_terms;
      p.push_back({r, -c});
      lp.add_row(std::move(p), lp::Relation::Equal, anchor.p - e.p_const, "ray:P");
      auto q = e.q_terms;
      q.push_back({r, -s});
      lp.add_row(std::move(q), lp::Relation::Equal, anchor.q - e.q_const, "ray:Q");
    };
    const auto res = cc::solve_ccopf(model, t, det, {lp::Sense::Maximize, 0.0, 0.0}, ray);
    if (res.status != lp::Status::Optimal) return;
    out.points[k] = {res.p_pcc, res.q_pcc, phi, gamma, res.objective, t};
    ok[k] = 1;
  });
  out.achievable = std::all_of(ok.begin(), ok.end(), [](char v) { return v != 0; });
  if (!out.achievable) out.points.clear();
  return out;
}

}  // namespace

std::vector<double> default_gamma_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 8; ++i) g.push_back(0.55 + 0.05 * i);
  g.push_back(0.99);
  return g;
}

std::optional<Anchor> find_anchor(const cc::VppModel& model, int t, double gamma) {
  const auto det = det_rows(model, t, gamma);
  double sp = 0.0, sq = 0.0;
  for (auto [sense, wp, wq] : {std::tuple{lp::Sense::Maximize, 1.0, 0.0}, std::tuple{lp::Sense::Minimize, 1.0, 0.0},
                               std::tuple{lp::Sense::Maximize, 0.0, 1.0}, std::tuple{lp::Sense::Minimize, 0.0, 1.0}}) {
    const auto res = cc::solve_ccopf(model, t, det, {sense, wp, wq});
    if (res.status != lp::Status::Optimal) return std::nullopt;
    sp += res.p_pcc;
    sq += res.q_pcc;
  }
  return Anchor{sp / 4.0, sq / 4.0};
}

SweepResult sweep_pfr(const cc::VppModel& model, int t, double gamma, const Anchor& anchor, int n_angles,
                      int jobs) {
  return sweep_with(model, t, gamma, det_rows(model, t, gamma), anchor, n_angles, jobs);
}

SweepResult sweep_pfr(const cc::VppModel& model, int t, double gamma, int n_angles, int jobs) {
  const auto anchor = find_anchor(model, t, gamma);
  if (!anchor) return {};
  return sweep_pfr(model, t, gamma, *anchor, n_angles, jobs);
}

PfrSurface build_surface(const cc::VppModel& model, int t, const SurfaceOptions& opts) {
  std::vector<double> gammas = opts.gammas;
  std::sort(gammas.begin(), gammas.end());
  if (gammas.size() < 4) throw RangeError("surface needs at least four confidence levels");
  for (double g : gammas)
    if (!(g > 0.5 && g < 1.0)) throw RangeError("confidence level must lie in (0.5, 1)");

  // Anchor at the highest achievable level so it is interior to all of them.
  std::optional<Anchor> anchor;
  for (auto it = gammas.rbegin(); it != gammas.rend() && !anchor; ++it) anchor = find_anchor(model, t, *it);
  if (!anchor) throw InfeasibleError("no confidence level is achievable in period " + std::to_string(t));

  PfrSurface s;
  s.period = t;
  s.anchor = *anchor;
  std::vector<SweepResult> sweeps;
  for (double g : gammas) {
    auto sw = sweep_with(model, t, g, det_rows(model, t, g), *anchor, opts.n_angles, opts.jobs);
    if (!sw.achievable) {
      warn("confidence level " + std::to_string(g) + " is not achievable in period " + std::to_string(t) +
           "; skipped");
      continue;
    }
    s.gammas.push_back(g);
    sweeps.push_back(std::move(sw));
  }
  if (sweeps.empty()) throw InfeasibleError("no confidence level is achievable in period " + std::to_string(t));

  // A boundary point shared with a higher level is feasible there too, so it
  // is kept once, under the highest level that reaches it.
  for (size_t i = 0; i < sweeps.size(); ++i)
    for (size_t k = 0; k < sweeps[i].points.size(); ++k) {
      const double r = sweeps[i].points[k].r;
      const bool shared = i + 1 < sweeps.size() && sweeps[i + 1].points[k].r >= r - 1e-7 * (1.0 + r);
      if (!shared) s.points.push_back(sweeps[i].points[k]);
    }

  // Zero targets continue the outermost segment of each ray down to zero,
  // which keeps them consistent with a concave surface; rays whose boundary
  // does not move with the level get the minimum margin.
  const auto& lo = sweeps.front().points;
  double extent = 0.0;
  for (const auto& p : lo) extent = std::max(extent, p.r);
  const double margin = std::max(opts.outside_margin * extent, 1e-9);
  for (size_t k = 0; k < lo.size(); ++k) {
    double step = margin;
    if (sweeps.size() > 1) {
      const double dr = lo[k].r - sweeps[1].points[k].r;
      const double dg = s.gammas[1] - s.gammas[0];
      step = std::max(margin, s.gammas[0] * dr / dg);
    }
    const double r = lo[k].r + step;
    s.outside.push_back({anchor->p + r * std::cos(lo[k].phi), anchor->q + r * std::sin(lo[k].phi), lo[k].phi, 0.0,
                         r, t});
  }

  const Eigen::Index n = static_cast<Eigen::Index>(s.points.size() + s.outside.size());
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  Eigen::Index i = 0;
  for (const auto* set : {&s.points, &s.outside})
    for (const auto& p : *set) {
      X.row(i) << p.p, p.q;
      y(i++) = p.gamma;
    }
  const auto fit = pwl::fit_cpwl(X, y, opts.pieces, pwl::Mode::Min, true, opts.fit);
  s.model = fit.model;
  s.rmse = fit.stats.rmse;
  s.r2 = fit.stats.r2;
  return s;
}

double conf_at(const PfrSurface& s, double p, double q) {
  return std::min(1.0, s.model.eval(Eigen::Vector2d(p, q)));
}

double max_confidence(const PfrSurface& s) {
  // max z s.t. z <= a_j'x + b_j, x inside the training extent
  double pl = lp::kInf, ph = -lp::kInf, ql = lp::kInf, qh = -lp::kInf;
  for (const auto* set : {&s.points, &s.outside})
    for (const auto& pt : *set) {
      pl = std::min(pl, pt.p);
      ph = std::max(ph, pt.p);
      ql = std::min(ql, pt.q);
      qh = std::max(qh, pt.q);
    }
  if (pl > ph) {
    pl = ph = s.anchor.p;
    ql = qh = s.anchor.q;
  }
  lp::LinearProgram prog;
  const int P = prog.add_variable(pl, ph, 0.0, "P");
  const int Q = prog.add_variable(ql, qh, 0.0, "Q");
  const int z = prog.add_variable(-lp::kInf, lp::kInf, 1.0, "z");
  for (int j = 0; j < s.model.pieces(); ++j)
    prog.add_row({{z, 1.0}, {P, -s.model.a(j, 0)}, {Q, -s.model.a(j, 1)}}, lp::Relation::LessEqual, s.model.b(j));
  prog.set_sense(lp::Sense::Maximize);
  const auto sol = lp::solve_lp(prog);
  if (sol.status != lp::Status::Optimal) throw InfeasibleError("surface maximum could not be computed");
  return std::clamp(sol.objective, 0.0, 1.0);
}

PfrPolygon polygon_at(const PfrSurface& s, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw RangeError("confidence level must lie in (0, 1)");
  PfrPolygon poly;
  poly.period = s.period;
  poly.gamma = gamma;
  poly.max_gamma = max_confidence(s);
  poly.A = -s.model.a;
  poly.b = s.model.b.array() - gamma;
  poly.empty = gamma >= poly.max_gamma;
  return poly;
}

}  // namespace vppflex::pfr
