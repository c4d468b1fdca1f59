#include "vppflex/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <set>

#include "vppflex/error.hpp"

namespace vppflex::net {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::A: return "a";
    case Phase::B: return "b";
    case Phase::C: return "c";
  }
  return "?";
}

const char* pair_name(PhasePair p) {
  switch (p) {
    case PhasePair::AB: return "ab";
    case PhasePair::BC: return "bc";
    case PhasePair::CA: return "ca";
  }
  return "?";
}

std::optional<Phase> parse_phase(const std::string& s) {
  if (s == "a" || s == "A") return Phase::A;
  if (s == "b" || s == "B") return Phase::B;
  if (s == "c" || s == "C") return Phase::C;
  return std::nullopt;
}

std::optional<PhasePair> parse_pair(const std::string& s) {
  if (s == "ab" || s == "AB") return PhasePair::AB;
  if (s == "bc" || s == "BC") return PhasePair::BC;
  if (s == "ca" || s == "CA") return PhasePair::CA;
  return std::nullopt;
}

std::array<Phase, 2> pair_phases(PhasePair p) {
  switch (p) {
    case PhasePair::AB: return {Phase::A, Phase::B};
    case PhasePair::BC: return {Phase::B, Phase::C};
    case PhasePair::CA: return {Phase::C, Phase::A};
  }
  return {Phase::A, Phase::B};
}

bool Bus::has_phase(Phase p) const {
  return std::find(phases.begin(), phases.end(), p) != phases.end();
}

bool Bus::has_pair(PhasePair p) const {
  const auto ph = pair_phases(p);
  return has_phase(ph[0]) && has_phase(ph[1]);
}

MultiphaseNetwork::MultiphaseNetwork(std::vector<Bus> buses, std::vector<Branch> branches,
                                     std::string pcc_id, std::array<cplx, 3> slack_voltage,
                                     double base_mva, double base_kv)
    : buses_(std::move(buses)),
      branches_(std::move(branches)),
      pcc_id_(std::move(pcc_id)),
      slack_voltage_(slack_voltage),
      base_mva_(base_mva),
      base_kv_(base_kv) {
  if (!(base_mva_ > 0.0) || !(base_kv_ > 0.0)) throw StructuralError("base power and voltage must be positive");
  std::set<std::string> ids;
  for (auto& bus : buses_) {
    if (!ids.insert(bus.id).second) throw StructuralError("duplicate bus id '" + bus.id + "'");
    if (bus.phases.empty()) throw StructuralError("bus '" + bus.id + "' has no phases");
    std::sort(bus.phases.begin(), bus.phases.end());
    if (std::adjacent_find(bus.phases.begin(), bus.phases.end()) != bus.phases.end())
      throw StructuralError("bus '" + bus.id + "' lists a phase twice");
    if (!(bus.v_min < bus.v_max)) throw StructuralError("bus '" + bus.id + "' needs v_min < v_max");
  }
  pcc_ = bus_index(pcc_id_);

  for (const auto& br : branches_) {
    const int f = bus_index(br.from);
    const int t = bus_index(br.to);
    if (f == t) throw StructuralError("branch " + br.from + "-" + br.to + " is a self loop");
    const auto np = static_cast<Eigen::Index>(br.phases.size());
    if (np == 0 || br.admittance.rows() != np || br.admittance.cols() != np)
      throw StructuralError("branch " + br.from + "-" + br.to + " admittance does not match its phases");
    for (Phase p : br.phases) {
      if (!buses_[f].has_phase(p) || !buses_[t].has_phase(p))
        throw StructuralError("branch " + br.from + "-" + br.to + " uses phase " + phase_name(p) +
                              " absent at an end bus");
    }
    if ((br.admittance - br.admittance.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw StructuralError("branch " + br.from + "-" + br.to + " admittance is not symmetric");
    if (!(br.i_max > 0.0)) throw StructuralError("branch " + br.from + "-" + br.to + " needs i_max > 0");
  }

  // Connectivity from the PCC.
  std::vector<std::vector<int>> adj(buses_.size());
  for (const auto& br : branches_) {
    adj[bus_index(br.from)].push_back(bus_index(br.to));
    adj[bus_index(br.to)].push_back(bus_index(br.from));
  }
  std::vector<bool> seen(buses_.size(), false);
  std::queue<int> q;
  q.push(pcc_);
  seen[pcc_] = true;
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        q.push(v);
      }
    }
  }
  for (size_t i = 0; i < buses_.size(); ++i) {
    if (!seen[i]) throw StructuralError("bus '" + buses_[i].id + "' is not connected to the PCC");
  }

  node_of_.assign(buses_.size(), {-1, -1, -1});
  for (Phase p : buses_[pcc_].phases) {
    node_of_[pcc_][static_cast<int>(p)] = static_cast<int>(node_bus_.size());
    node_bus_.push_back(pcc_);
    node_phase_.push_back(p);
  }
  num_slack_ = static_cast<int>(node_bus_.size());
  for (int b = 0; b < static_cast<int>(buses_.size()); ++b) {
    if (b == pcc_) continue;
    for (Phase p : buses_[b].phases) {
      node_of_[b][static_cast<int>(p)] = static_cast<int>(node_bus_.size());
      node_bus_.push_back(b);
      node_phase_.push_back(p);
    }
  }

  const int n = num_nodes();
  ybus_ = Eigen::MatrixXcd::Zero(n, n);
  for (const auto& br : branches_) {
    const int f = bus_index(br.from);
    const int t = bus_index(br.to);
    const int np = static_cast<int>(br.phases.size());
    for (int r = 0; r < np; ++r) {
      for (int c = 0; c < np; ++c) {
        const cplx y = br.admittance(r, c);
        const int fr = node_index(f, br.phases[r]);
        const int fc = node_index(f, br.phases[c]);
        const int tr = node_index(t, br.phases[r]);
        const int tc = node_index(t, br.phases[c]);
        ybus_(fr, fc) += y;
        ybus_(tr, tc) += y;
        ybus_(fr, tc) -= y;
        ybus_(tr, fc) -= y;
      }
    }
  }
}

int MultiphaseNetwork::bus_index(const std::string& id) const {
  for (size_t i = 0; i < buses_.size(); ++i) {
    if (buses_[i].id == id) return static_cast<int>(i);
  }
  throw StructuralError("unknown bus '" + id + "'");
}

int MultiphaseNetwork::node_index(int bus, Phase p) const {
  return node_of_.at(bus)[static_cast<int>(p)];
}

InjectionOrdering::InjectionOrdering(const MultiphaseNetwork& net) {
  for (const auto& b : net.buses()) bus_ids_.push_back(b.id);
  for (int b = 0; b < static_cast<int>(net.buses().size()); ++b) {
    if (b == net.pcc_index()) continue;
    const auto& bus = net.buses()[b];
    if (bus.connection == Connection::Wye) {
      for (Phase p : bus.phases) wye_.push_back({b, p});
    } else {
      for (PhasePair pp : {PhasePair::AB, PhasePair::BC, PhasePair::CA}) {
        if (bus.has_pair(pp)) delta_.push_back({b, pp});
      }
    }
  }
}

int InjectionOrdering::p_wye(int bus, Phase p) const {
  for (size_t i = 0; i < wye_.size(); ++i) {
    if (wye_[i].bus == bus && wye_[i].phase == p) return static_cast<int>(i);
  }
  return -1;
}

int InjectionOrdering::q_wye(int bus, Phase p) const {
  const int i = p_wye(bus, p);
  return i < 0 ? -1 : i + num_wye();
}

int InjectionOrdering::p_delta(int bus, PhasePair p) const {
  for (size_t i = 0; i < delta_.size(); ++i) {
    if (delta_[i].bus == bus && delta_[i].pair == p) return 2 * num_wye() + static_cast<int>(i);
  }
  return -1;
}

int InjectionOrdering::q_delta(int bus, PhasePair p) const {
  const int i = p_delta(bus, p);
  return i < 0 ? -1 : i + num_delta();
}

std::string InjectionOrdering::slot_label(int index) const {
  const int nw = num_wye();
  const int nd = num_delta();
  if (index < 0 || index >= size()) return "?";
  if (index < 2 * nw) {
    const auto& s = wye_[index % nw];
    return std::string(index < nw ? "pY:" : "qY:") + bus_ids_[s.bus] + "." + phase_name(s.phase);
  }
  const int k = index - 2 * nw;
  const auto& s = delta_[k % nd];
  return std::string(k < nd ? "pD:" : "qD:") + bus_ids_[s.bus] + "." + pair_name(s.pair);
}

Injections Injections::zero(const InjectionOrdering& ord) {
  Injections inj;
  inj.wye.assign(ord.num_wye(), cplx{});
  inj.delta.assign(ord.num_delta(), cplx{});
  return inj;
}

Injections Injections::from_vector(const InjectionOrdering& ord, const Eigen::VectorXd& x) {
  if (x.size() != ord.size()) throw DimensionError("injection vector does not match the ordering");
  Injections inj;
  const int nw = ord.num_wye();
  const int nd = ord.num_delta();
  for (int i = 0; i < nw; ++i) inj.wye.emplace_back(x(i), x(nw + i));
  for (int i = 0; i < nd; ++i) inj.delta.emplace_back(x(2 * nw + i), x(2 * nw + nd + i));
  return inj;
}

Eigen::VectorXd Injections::to_vector(const InjectionOrdering& ord) const {
  const int nw = ord.num_wye();
  const int nd = ord.num_delta();
  if (static_cast<int>(wye.size()) != nw || static_cast<int>(delta.size()) != nd)
    throw StructuralError("injections do not conform to the network phase structure");
  Eigen::VectorXd x(ord.size());
  for (int i = 0; i < nw; ++i) {
    x(i) = wye[i].real();
    x(nw + i) = wye[i].imag();
  }
  for (int i = 0; i < nd; ++i) {
    x(2 * nw + i) = delta[i].real();
    x(2 * nw + nd + i) = delta[i].imag();
  }
  return x;
}

std::vector<BranchPhase> branch_phases(const MultiphaseNetwork& net) {
  std::vector<BranchPhase> out;
  for (int k = 0; k < static_cast<int>(net.branches().size()); ++k) {
    const auto& br = net.branches()[k];
    for (int l = 0; l < static_cast<int>(br.phases.size()); ++l) out.push_back({k, l, br.phases[l]});
  }
  return out;
}

namespace {

// Partitioned admittance data shared by the solver and the linearisation.
struct Partition {
  int ns = 0;
  int nl = 0;
  Eigen::VectorXcd vs;
  Eigen::MatrixXcd ysl;  // slack rows, load cols
  Eigen::MatrixXcd yss;
  Eigen::MatrixXcd yls;
  Eigen::MatrixXcd yll;
  Eigen::MatrixXcd zll;  // yll^-1
  Eigen::VectorXcd w;    // no-load voltage of load nodes
  // Slot -> load-node maps (load node index = node - ns).
  std::vector<int> wye_node;
  std::vector<std::array<int, 2>> delta_nodes;
};

Partition partition(const MultiphaseNetwork& net, const InjectionOrdering& ord) {
  Partition p;
  p.ns = net.num_slack_nodes();
  p.nl = net.num_nodes() - p.ns;
  const auto& y = net.ybus();
  p.yss = y.topLeftCorner(p.ns, p.ns);
  p.ysl = y.topRightCorner(p.ns, p.nl);
  p.yls = y.bottomLeftCorner(p.nl, p.ns);
  p.yll = y.bottomRightCorner(p.nl, p.nl);
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(p.yll);
  p.zll = lu.inverse();
  if (!p.zll.allFinite()) throw StructuralError("load-node admittance matrix is singular");
  p.vs.resize(p.ns);
  for (int s = 0; s < p.ns; ++s) p.vs(s) = net.slack_voltage()[static_cast<int>(net.node_phase(s))];
  p.w = -p.zll * (p.yls * p.vs);
  for (const auto& s : ord.wye()) p.wye_node.push_back(net.node_index(s.bus, s.phase) - p.ns);
  for (const auto& s : ord.delta()) {
    const auto ph = pair_phases(s.pair);
    p.delta_nodes.push_back({net.node_index(s.bus, ph[0]) - p.ns, net.node_index(s.bus, ph[1]) - p.ns});
  }
  return p;
}

Eigen::VectorXcd injected_current(const Partition& p, const Injections& inj, const Eigen::VectorXcd& vl) {
  Eigen::VectorXcd i = Eigen::VectorXcd::Zero(p.nl);
  for (size_t k = 0; k < inj.wye.size(); ++k) {
    const int n = p.wye_node[k];
    i(n) += std::conj(inj.wye[k] / vl(n));
  }
  for (size_t k = 0; k < inj.delta.size(); ++k) {
    const auto [n1, n2] = p.delta_nodes[k];
    const cplx id = std::conj(inj.delta[k] / (vl(n1) - vl(n2)));
    i(n1) += id;
    i(n2) -= id;
  }
  return i;
}

PhasorState assemble_state(const MultiphaseNetwork& net, const Partition& p, const Eigen::VectorXcd& vl) {
  PhasorState st;
  st.voltage.resize(net.num_nodes());
  st.voltage.head(p.ns) = p.vs;
  st.voltage.tail(p.nl) = vl;
  const auto bps = branch_phases(net);
  st.branch_current.resize(static_cast<Eigen::Index>(bps.size()));
  int row = 0;
  for (const auto& br : net.branches()) {
    const int f = net.bus_index(br.from);
    const int t = net.bus_index(br.to);
    const int np = static_cast<int>(br.phases.size());
    Eigen::VectorXcd dv(np);
    for (int l = 0; l < np; ++l)
      dv(l) = st.voltage(net.node_index(f, br.phases[l])) - st.voltage(net.node_index(t, br.phases[l]));
    const Eigen::VectorXcd i = br.admittance * dv;
    for (int l = 0; l < np; ++l) st.branch_current(row++) = i(l);
  }
  const Eigen::VectorXcd is = p.yss * p.vs + p.ysl * vl;
  st.s0 = cplx{};
  for (int s = 0; s < p.ns; ++s) st.s0 += p.vs(s) * std::conj(is(s));
  return st;
}

}  // namespace

PhasorState solve_load_flow(const MultiphaseNetwork& net, const InjectionOrdering& ord,
                            const Injections& inj, const LoadFlowOptions& opts) {
  if (static_cast<int>(inj.wye.size()) != ord.num_wye() || static_cast<int>(inj.delta.size()) != ord.num_delta())
    throw StructuralError("injections do not conform to the network phase structure");
  const Partition p = partition(net, ord);
  Eigen::VectorXcd vl = p.w;
  double residual = 0.0;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Eigen::VectorXcd next = p.w + p.zll * injected_current(p, inj, vl);
    vl = (1.0 - opts.damping) * vl + opts.damping * next;
    if (!vl.allFinite()) throw DivergenceError("load flow produced non-finite voltages", residual);
    residual = (p.yls * p.vs + p.yll * vl - injected_current(p, inj, vl)).cwiseAbs().maxCoeff();
    if (residual <= opts.tolerance) {
      PhasorState st = assemble_state(net, p, vl);
      st.iterations = it;
      st.residual = residual;
      return st;
    }
  }
  throw DivergenceError("load flow did not converge after " + std::to_string(opts.max_iterations) +
                            " iterations (residual " + std::to_string(residual) + ")",
                        residual);
}

LinearState LinearNetworkModel::eval_state(const Eigen::VectorXd& x) const {
  if (x.size() != K.cols()) throw DimensionError("injection vector does not match the model ordering");
  LinearState s;
  s.voltage = K * x + b;
  s.current = J * x + d;
  s.p_pcc = m.dot(x) + g_const;
  s.q_pcc = h.dot(x) + l;
  return s;
}

namespace {

Eigen::VectorXcd current_direction(const Eigen::VectorXcd& ib) {
  Eigen::VectorXcd u(ib.size());
  for (Eigen::Index k = 0; k < ib.size(); ++k) {
    const double mag = std::abs(ib(k));
    u(k) = mag > 1e-9 ? std::conj(ib(k)) / mag : cplx{1.0, 0.0};
  }
  return u;
}

}  // namespace

LinearNetworkModel linearize(const MultiphaseNetwork& net, const Injections& base,
                             const LoadFlowOptions& opts) {
  InjectionOrdering ord(net);
  const Partition p = partition(net, ord);
  PhasorState no_load = solve_load_flow(net, ord, Injections::zero(ord), opts);
  PhasorState st = solve_load_flow(net, ord, base, opts);
  const Eigen::VectorXcd vl = st.voltage.tail(p.nl);
  const int nx = ord.size();
  const int nw = ord.num_wye();
  const int nd = ord.num_delta();

  // Implicit differentiation of v = w + Z i(v, s):
  //   dv + Z D conj(dv) = Z G conj(ds)
  Eigen::MatrixXcd dmat = Eigen::MatrixXcd::Zero(p.nl, p.nl);
  for (int k = 0; k < nw; ++k) {
    const int n = p.wye_node[k];
    dmat(n, n) += std::conj(base.wye[k]) / std::pow(std::conj(vl(n)), 2);
  }
  for (int k = 0; k < nd; ++k) {
    const auto [n1, n2] = p.delta_nodes[k];
    const cplx c = std::conj(base.delta[k]) / std::pow(std::conj(vl(n1) - vl(n2)), 2);
    dmat(n1, n1) += c;
    dmat(n1, n2) -= c;
    dmat(n2, n1) -= c;
    dmat(n2, n2) += c;
  }
  const Eigen::MatrixXcd e = p.zll * dmat;

  // Columns of Z G conj(ds) for unit real p and q perturbations.
  Eigen::MatrixXcd rhs = Eigen::MatrixXcd::Zero(p.nl, nx);
  const cplx mj{0.0, -1.0};
  for (int k = 0; k < nw; ++k) {
    const int n = p.wye_node[k];
    const Eigen::VectorXcd col = p.zll.col(n) / std::conj(vl(n));
    rhs.col(k) = col;
    rhs.col(nw + k) = mj * col;
  }
  for (int k = 0; k < nd; ++k) {
    const auto [n1, n2] = p.delta_nodes[k];
    const Eigen::VectorXcd col = (p.zll.col(n1) - p.zll.col(n2)) / std::conj(vl(n1) - vl(n2));
    rhs.col(2 * nw + k) = col;
    rhs.col(2 * nw + nd + k) = mj * col;
  }

  const int nl = p.nl;
  Eigen::MatrixXd sys(2 * nl, 2 * nl);
  const Eigen::MatrixXd er = e.real();
  const Eigen::MatrixXd ei = e.imag();
  sys.topLeftCorner(nl, nl) = Eigen::MatrixXd::Identity(nl, nl) + er;
  sys.topRightCorner(nl, nl) = ei;
  sys.bottomLeftCorner(nl, nl) = ei;
  sys.bottomRightCorner(nl, nl) = Eigen::MatrixXd::Identity(nl, nl) - er;
  Eigen::MatrixXd rr(2 * nl, nx);
  rr.topRows(nl) = rhs.real();
  rr.bottomRows(nl) = rhs.imag();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys);
  const Eigen::MatrixXd ab = lu.solve(rr);
  Eigen::MatrixXcd sens(nl, nx);
  sens.real() = ab.topRows(nl);
  sens.imag() = ab.bottomRows(nl);

  LinearNetworkModel model{ord, {}, {}, {}, {}, {}, {}, {}, 0.0, {}, 0.0, {}, st, no_load};
  model.base_x = base.to_vector(ord);

  // Voltage magnitudes projected on the base phasor direction.
  model.K.resize(nl, nx);
  model.b.resize(nl);
  for (int n = 0; n < nl; ++n) {
    model.monitored_nodes.push_back(p.ns + n);
    const cplx u = std::conj(vl(n)) / std::abs(vl(n));
    model.K.row(n) = (u * sens.row(n)).real();
    model.b(n) = std::abs(vl(n)) - model.K.row(n).dot(model.base_x);
  }

  // Signed branch currents projected on the base current direction.
  model.branch_rows = branch_phases(net);
  const int nb = static_cast<int>(model.branch_rows.size());
  const Eigen::VectorXcd u = current_direction(st.branch_current);
  model.J.resize(nb, nx);
  model.d.resize(nb);
  auto node_sens = [&](int node) -> Eigen::RowVectorXcd {
    if (node < p.ns) return Eigen::RowVectorXcd::Zero(nx);
    return sens.row(node - p.ns);
  };
  int row = 0;
  for (const auto& br : net.branches()) {
    const int f = net.bus_index(br.from);
    const int t = net.bus_index(br.to);
    const int np = static_cast<int>(br.phases.size());
    Eigen::MatrixXcd dv(np, nx);
    for (int l = 0; l < np; ++l)
      dv.row(l) = node_sens(net.node_index(f, br.phases[l])) - node_sens(net.node_index(t, br.phases[l]));
    const Eigen::MatrixXcd di = br.admittance * dv;
    for (int l = 0; l < np; ++l, ++row) {
      model.J.row(row) = (u(row) * di.row(l)).real();
      model.d(row) = (u(row) * st.branch_current(row)).real() - model.J.row(row).dot(model.base_x);
    }
  }

  // PCC export = -sum_s v_s conj(i_s); only the load-node voltages move.
  const Eigen::MatrixXcd dis = p.ysl * sens;
  Eigen::RowVectorXcd ds0 = Eigen::RowVectorXcd::Zero(nx);
  for (int s = 0; s < p.ns; ++s) ds0 += p.vs(s) * dis.row(s).conjugate();
  model.m = -ds0.real().transpose();
  model.h = -ds0.imag().transpose();
  const cplx exp0 = pcc_export(st);
  model.g_const = exp0.real() - model.m.dot(model.base_x);
  model.l = exp0.imag() - model.h.dot(model.base_x);
  return model;
}

LinearState nonlinear_state(const MultiphaseNetwork& net, const LinearNetworkModel& model,
                            const Eigen::VectorXd& x, const LoadFlowOptions& opts) {
  const auto inj = Injections::from_vector(model.ordering, x);
  const PhasorState st = solve_load_flow(net, model.ordering, inj, opts);
  LinearState out;
  out.voltage.resize(static_cast<Eigen::Index>(model.monitored_nodes.size()));
  for (size_t k = 0; k < model.monitored_nodes.size(); ++k)
    out.voltage(static_cast<Eigen::Index>(k)) = std::abs(st.voltage(model.monitored_nodes[k]));
  const Eigen::VectorXcd u = current_direction(model.base_state.branch_current);
  out.current.resize(st.branch_current.size());
  for (Eigen::Index k = 0; k < st.branch_current.size(); ++k) out.current(k) = (u(k) * st.branch_current(k)).real();
  const cplx e = pcc_export(st);
  out.p_pcc = e.real();
  out.q_pcc = e.imag();
  return out;
}

}  // namespace vppflex::net
