#include "vppflex/ccopf.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "vppflex/error.hpp"
#include "vppflex/parallel.hpp"

namespace vppflex::cc {

VppModel build_vpp_model(net::MultiphaseNetwork network, std::vector<fleet::DerUnit> fleet,
                         std::vector<fleet::LoadSpec> loads, fleet::ForecastSeries forecast,
                         std::vector<uq::Gmm> gmms, int periods, double dt) {
  if (periods < 1) throw RangeError("horizon must have at least one period");
  if (!(dt > 0.0)) throw RangeError("period length must be positive");
  for (const auto& u : fleet) u.validate();
  fleet::DecisionLayout dec(fleet);
  fleet::ErrorLayout err(fleet, loads);
  const net::InjectionOrdering ord(network);
  auto inj = fleet::build_injection_map(network, ord, fleet, loads, dec, err, periods);

  if (gmms.empty()) throw DimensionError("no forecast-error mixture given");
  if (gmms.size() != 1 && static_cast<int>(gmms.size()) != periods)
    throw DimensionError("need one error mixture per period or a single shared one");
  for (const auto& g : gmms) {
    g.validate();
    if (g.dim() != err.size())
      throw DimensionError("error mixture has dimension " + std::to_string(g.dim()) + ", fleet and loads need " +
                           std::to_string(err.size()));
  }

  Eigen::VectorXd u0 = Eigen::VectorXd::Zero(dec.size());
  for (size_t u = 0; u < fleet.size(); ++u) {
    const auto& unit = fleet[u];
    for (size_t k = 0; k < unit.slots.size(); ++k) {
      const auto bb = unit.charts[k].bounding_box();
      double p = 0.5 * (bb[0] + bb[1]);
      if (fleet::is_renewable(unit.kind)) {
        double mean = 0.0;
        for (int t = 0; t < periods; ++t) mean += forecast.at(unit.id, t, static_cast<int>(k));
        p = std::clamp(0.5 * mean / periods, std::max(bb[0], 0.0), bb[1]);
      }
      u0(dec.p(static_cast<int>(u), static_cast<int>(k))) = p;
      u0(dec.q(static_cast<int>(u), static_cast<int>(k))) = 0.5 * (bb[2] + bb[3]);
    }
  }
  const Eigen::VectorXd x_base = inj.M * u0 + inj.x0.rowwise().mean();
  auto linear = net::linearize(network, net::Injections::from_vector(ord, x_base));
  return VppModel{std::move(network), std::move(linear), std::move(fleet), std::move(loads), std::move(forecast),
                  std::move(dec),     std::move(err),    std::move(inj),   std::move(gmms),  periods,
                  dt};
}

const char* row_kind_name(RowKind k) {
  switch (k) {
    case RowKind::VoltageUpper: return "V+";
    case RowKind::VoltageLower: return "V-";
    case RowKind::CurrentUpper: return "I+";
    case RowKind::CurrentLower: return "I-";
    case RowKind::Capability: return "P";
  }
  return "?";
}

AffineConstraintCoeffs build_affine_coeffs(const VppModel& model, int t) {
  if (t < 0 || t >= model.periods) throw RangeError("period out of range");
  const auto& lin = model.linear;
  const auto& inj = model.injection;
  if (inj.M.rows() != lin.K.cols() || inj.E.cols() != model.errors.size() || inj.M.cols() != model.decision.size())
    throw DimensionError("network, fleet and error orderings disagree");
  AffineConstraintCoeffs out;
  out.period = t;

  const Eigen::MatrixXd KE = lin.K * inj.E, KM = lin.K * inj.M;
  const Eigen::VectorXd cv = lin.K * inj.x0.col(t) + lin.b;
  for (Eigen::Index r = 0; r < lin.K.rows(); ++r) {
    const int node = lin.monitored_nodes[r];
    const auto& bus = model.network.buses()[model.network.node_bus(node)];
    out.voltage.push_back({KE.row(r).transpose(), KM.row(r).transpose(), cv(r), bus.v_min, bus.v_max,
                           "V:" + bus.id + ":" + net::phase_name(model.network.node_phase(node))});
  }
  const Eigen::MatrixXd JE = lin.J * inj.E, JM = lin.J * inj.M;
  const Eigen::VectorXd ci = lin.J * inj.x0.col(t) + lin.d;
  for (Eigen::Index r = 0; r < lin.J.rows(); ++r) {
    const auto& bp = lin.branch_rows[r];
    const auto& br = model.network.branches()[bp.branch];
    out.current.push_back({JE.row(r).transpose(), JM.row(r).transpose(), ci(r), -br.i_max, br.i_max,
                           "I:" + br.from + "-" + br.to + ":" + net::phase_name(bp.phase)});
  }

  const auto& err = model.errors;
  out.a_p = Eigen::VectorXd::Zero(err.size());
  out.b_p = Eigen::VectorXd::Zero(model.decision.size());
  double pmax = 0.0, pload = 0.0;
  for (size_t u = 0; u < model.fleet.size(); ++u) {
    const auto& unit = model.fleet[u];
    if (!fleet::is_renewable(unit.kind)) continue;
    out.has_renewables = true;
    for (size_t k = 0; k < unit.slots.size(); ++k) {
      out.a_p(err.renewable(static_cast<int>(u), static_cast<int>(k))) = 1.0;
      out.b_p(model.decision.p(static_cast<int>(u), static_cast<int>(k))) = 1.0;
      pmax += model.forecast.at(unit.id, t, static_cast<int>(k));
    }
  }
  for (size_t i = 0; i < model.loads.size(); ++i) {
    out.a_p(err.load(static_cast<int>(i))) = -1.0;
    pload += model.loads[i].p[t];
  }
  out.c_p1 = pmax - pload;
  out.c_p2 = -pload;
  return out;
}

ChanceSpec ChanceSpec::from_gamma(double gamma) {
  const double a = 1.0 - gamma;
  ChanceSpec s{a, a, a, a, a};
  s.validate();
  return s;
}

void ChanceSpec::validate() const {
  for (double a : {alpha_v_plus, alpha_v_minus, alpha_i_plus, alpha_i_minus, alpha_p})
    if (!(a > 0.0 && a <= 0.5)) throw RangeError("risk levels must lie in (0, 0.5]");
}

DeterministicConstraintSet reformulate_chance(const AffineConstraintCoeffs& co, const uq::Gmm& gmm,
                                              const ChanceSpec& spec, const RowFilter& filter) {
  spec.validate();
  DeterministicConstraintSet out;
  out.period = co.period;
  auto quant = [&](const Eigen::VectorXd& a, double level, const std::string& label) {
    try {
      return uq::quantile(uq::project(gmm, a), level);
    } catch (const Error& e) {
      throw Error("quantile failed for row " + label + ": " + e.what());
    }
  };
  auto emit = [&](RowKind kind, int idx, const AffineRow& r, bool upper, double limit, double level, double risk) {
    const std::string label = std::string(row_kind_name(kind)) + ":" + r.tag;
    const double q = quant(r.a, level, label);
    out.rows.push_back({{kind, idx}, r.b, limit - r.c - q, upper, q, risk, label});
  };
  if (filter.voltages) {
    for (size_t i = 0; i < co.voltage.size(); ++i) {
      const auto& r = co.voltage[i];
      emit(RowKind::VoltageUpper, static_cast<int>(i), r, true, r.upper, 1.0 - spec.alpha_v_plus, spec.alpha_v_plus);
      emit(RowKind::VoltageLower, static_cast<int>(i), r, false, r.lower, spec.alpha_v_minus, spec.alpha_v_minus);
    }
  }
  if (filter.currents) {
    for (size_t i = 0; i < co.current.size(); ++i) {
      const auto& r = co.current[i];
      emit(RowKind::CurrentUpper, static_cast<int>(i), r, true, r.upper, 1.0 - spec.alpha_i_plus, spec.alpha_i_plus);
      emit(RowKind::CurrentLower, static_cast<int>(i), r, false, r.lower, spec.alpha_i_minus, spec.alpha_i_minus);
    }
  }
  if (filter.capability && co.has_renewables) {
    const double q = quant(co.a_p, spec.alpha_p, "P:capability");
    out.rows.push_back({{RowKind::Capability, 0}, co.b_p, co.c_p1 - co.c_p2 + q, true, q, spec.alpha_p, "P:capability"});
  }
  return out;
}

PccExpression pcc_expression(const VppModel& model, int t, int offset) {
  const auto& lin = model.linear;
  const auto& inj = model.injection;
  const Eigen::VectorXd mp = inj.M.transpose() * lin.m;
  const Eigen::VectorXd mq = inj.M.transpose() * lin.h;
  PccExpression e;
  for (Eigen::Index c = 0; c < mp.size(); ++c) {
    if (mp(c) != 0.0) e.p_terms.push_back({offset + static_cast<int>(c), mp(c)});
    if (mq(c) != 0.0) e.q_terms.push_back({offset + static_cast<int>(c), mq(c)});
  }
  e.p_const = lin.m.dot(inj.x0.col(t)) + lin.g_const;
  e.q_const = lin.h.dot(inj.x0.col(t)) + lin.l;
  return e;
}

std::pair<double, double> pcc_value(const VppModel& model, int t, const Eigen::VectorXd& u) {
  const Eigen::VectorXd x = model.injection.M * u + model.injection.x0.col(t);
  return {model.linear.m.dot(x) + model.linear.g_const, model.linear.h.dot(x) + model.linear.l};
}

int add_decision_columns(lp::LinearProgram& lp, const VppModel& model, int t) {
  const int off = lp.num_variables();
  for (int c = 0; c < model.decision.size(); ++c)
    lp.add_variable(-lp::kInf, lp::kInf, 0.0, model.decision.label(c) + ":t" + std::to_string(t));
  return off;
}

void add_fleet_rows(lp::LinearProgram& lp, const VppModel& model, int t, std::span<const int> offsets,
                    bool time_coupling) {
  for (int u = 0; u < static_cast<int>(model.fleet.size()); ++u)
    fleet::build_unit_constraints(model.fleet, u, model.decision, t, model.forecast, offsets, lp,
                                  {time_coupling, model.dt});
}

void add_det_rows(lp::LinearProgram& lp, const DeterministicConstraintSet& det, int offset) {
  for (const auto& r : det.rows) {
    std::vector<lp::Term> terms;
    for (Eigen::Index c = 0; c < r.coef.size(); ++c)
      if (r.coef(c) != 0.0) terms.push_back({offset + static_cast<int>(c), r.coef(c)});
    if (terms.empty()) {
      // Constant row: either always satisfied or the set is empty.
      const bool ok = r.upper ? 0.0 <= r.rhs + 1e-12 : 0.0 >= r.rhs - 1e-12;
      if (ok) continue;
    }
    lp.add_row(std::move(terms), r.upper ? lp::Relation::LessEqual : lp::Relation::GreaterEqual, r.rhs,
               r.label + ":t" + std::to_string(det.period));
  }
}

CcopfResult solve_ccopf(const VppModel& model, int t, const DeterministicConstraintSet& det,
                        const CcopfObjective& obj, const ExtraRows& extra) {
  lp::LinearProgram prog;
  const int off = add_decision_columns(prog, model, t);
  const std::vector<int> offsets(t + 1, off);
  add_fleet_rows(prog, model, t, offsets, false);
  add_det_rows(prog, det, off);
  const auto pcc = pcc_expression(model, t, off);
  for (const auto& term : pcc.p_terms) prog.set_cost(term.col, prog.cost()[term.col] + obj.w_p * term.coef);
  for (const auto& term : pcc.q_terms) prog.set_cost(term.col, prog.cost()[term.col] + obj.w_q * term.coef);
  prog.set_sense(obj.sense);
  if (extra) extra(prog, off, pcc);

  const auto sol = lp::solve_lp(prog);
  CcopfResult res;
  res.status = sol.status;
  if (sol.status != lp::Status::Optimal) return res;
  res.u = Eigen::Map<const Eigen::VectorXd>(sol.x.data() + off, model.decision.size());
  std::tie(res.p_pcc, res.q_pcc) = pcc_value(model, t, res.u);
  res.objective = sol.objective + obj.w_p * pcc.p_const + obj.w_q * pcc.q_const;
  return res;
}

LinearizationCheck check_linearization(const VppModel& model, int samples, std::uint64_t seed, int jobs) {
  if (samples < 1) throw RangeError("need at least one linearization sample");
  const int n = model.decision.size();
  // Box of one period's decision vector.
  auto box = [&](int t) {
    Eigen::MatrixXd lohi(n, 2);
    for (size_t u = 0; u < model.fleet.size(); ++u) {
      const auto& unit = model.fleet[u];
      for (size_t k = 0; k < unit.slots.size(); ++k) {
        const auto bb = unit.charts[k].bounding_box();
        double p0 = bb[0], p1 = bb[1];
        if (fleet::is_renewable(unit.kind)) {
          p0 = std::max(p0, 0.0);
          p1 = std::clamp(model.forecast.at(unit.id, t, static_cast<int>(k)), p0, p1);
        }
        const int pc = model.decision.p(static_cast<int>(u), static_cast<int>(k));
        const int qc = model.decision.q(static_cast<int>(u), static_cast<int>(k));
        lohi.row(pc) << p0, p1;
        lohi.row(qc) << bb[2], bb[3];
      }
    }
    return lohi;
  };
  std::vector<Eigen::MatrixXd> boxes;
  for (int t = 0; t < model.periods; ++t) boxes.push_back(box(t));

  struct One {
    double v = 0.0, pcc = 0.0;
    bool ok = true;
    Eigen::VectorXd x;
  };
  std::vector<One> res(samples);
  parallel_for(samples, jobs, [&](int s) {
    std::mt19937_64 rng(seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(s + 1));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> mode(0, 2);
    const int t = s % model.periods;
    const auto& lohi = boxes[t];
    Eigen::VectorXd u(n);
    for (int i = 0; i < n; ++i) {
      const int m = s < 2 * model.periods ? (s / model.periods) : mode(rng);
      const double w = m == 0 ? 0.0 : (m == 1 ? 1.0 : unit(rng));
      u(i) = lohi(i, 0) + w * (lohi(i, 1) - lohi(i, 0));
    }
    const Eigen::VectorXd x = model.injection.M * u + model.injection.x0.col(t);
    res[s].x = x;
    try {
      const auto lin = model.linear.eval_state(x);
      const auto nl = net::nonlinear_state(model.network, model.linear, x);
      res[s].v = ((lin.voltage - nl.voltage).array() / nl.voltage.array()).abs().maxCoeff();
      res[s].pcc = std::max(std::abs(lin.p_pcc - nl.p_pcc), std::abs(lin.q_pcc - nl.q_pcc));
    } catch (const DivergenceError&) {
      res[s].ok = false;
    }
  });
  LinearizationCheck out;
  out.samples = samples;
  for (const auto& r : res) {
    if (!r.ok) {
      ++out.diverged;
      continue;
    }
    if (r.v > out.max_voltage_error || out.worst_x.size() == 0) {
      out.max_voltage_error = std::max(out.max_voltage_error, r.v);
      out.worst_x = r.x;
    }
    out.max_pcc_error = std::max(out.max_pcc_error, r.pcc);
  }
  return out;
}

}  // namespace vppflex::cc
