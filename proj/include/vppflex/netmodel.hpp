#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <optional>
#include <string>
#include <vector>

namespace vppflex::net {

using cplx = std::complex<double>;

enum class Phase { A = 0, B = 1, C = 2 };
// Delta phase pairs: AB, BC, CA.
enum class PhasePair { AB = 0, BC = 1, CA = 2 };
enum class Connection { Wye, Delta };

const char* phase_name(Phase p);
const char* pair_name(PhasePair p);
std::optional<Phase> parse_phase(const std::string& s);
std::optional<PhasePair> parse_pair(const std::string& s);
std::array<Phase, 2> pair_phases(PhasePair p);

struct Bus {
  std::string id;
  std::vector<Phase> phases;  // sorted, unique
  Connection connection = Connection::Wye;
  double v_min = 0.95;  // p.u.
  double v_max = 1.05;

  bool has_phase(Phase p) const;
  bool has_pair(PhasePair p) const;
};

struct Branch {
  std::string from;
  std::string to;
  std::vector<Phase> phases;
  // Series admittance, rows/cols follow `phases`.
  Eigen::MatrixXcd admittance;
  double i_max = 1.0;  // p.u., per phase
};

// Immutable after construction; validated by the constructor.
class MultiphaseNetwork {
 public:
  MultiphaseNetwork(std::vector<Bus> buses, std::vector<Branch> branches, std::string pcc_id,
                    std::array<cplx, 3> slack_voltage, double base_mva, double base_kv);

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  const std::string& pcc_id() const { return pcc_id_; }
  int pcc_index() const { return pcc_; }
  int bus_index(const std::string& id) const;  // throws StructuralError
  const std::array<cplx, 3>& slack_voltage() const { return slack_voltage_; }
  double base_mva() const { return base_mva_; }
  double base_kv() const { return base_kv_; }

  // Node numbering: every (bus, phase) pair gets a node index; slack nodes
  // first, then the remaining nodes in bus order.
  int num_nodes() const { return static_cast<int>(node_bus_.size()); }
  int num_slack_nodes() const { return num_slack_; }
  int node_index(int bus, Phase p) const;  // -1 if absent
  int node_bus(int node) const { return node_bus_[node]; }
  Phase node_phase(int node) const { return node_phase_[node]; }
  const Eigen::MatrixXcd& ybus() const { return ybus_; }

 private:
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  std::string pcc_id_;
  int pcc_ = -1;
  std::array<cplx, 3> slack_voltage_;
  double base_mva_;
  double base_kv_;
  std::vector<int> node_bus_;
  std::vector<Phase> node_phase_;
  std::vector<std::array<int, 3>> node_of_;
  int num_slack_ = 0;
  Eigen::MatrixXcd ybus_;
};

struct WyeSlot {
  int bus;
  Phase phase;
};
struct DeltaSlot {
  int bus;
  PhasePair pair;
};

// Ordering of x = [pY; qY; pD; qD]. Wye slots cover every phase of every
// Y-tagged non-PCC bus, delta slots every available pair of Delta-tagged
// buses.
class InjectionOrdering {
 public:
  explicit InjectionOrdering(const MultiphaseNetwork& net);

  int num_wye() const { return static_cast<int>(wye_.size()); }
  int num_delta() const { return static_cast<int>(delta_.size()); }
  int size() const { return 2 * (num_wye() + num_delta()); }
  const std::vector<WyeSlot>& wye() const { return wye_; }
  const std::vector<DeltaSlot>& delta() const { return delta_; }

  // Indices into x; -1 if the slot does not exist.
  int p_wye(int bus, Phase p) const;
  int q_wye(int bus, Phase p) const;
  int p_delta(int bus, PhasePair p) const;
  int q_delta(int bus, PhasePair p) const;
  std::string slot_label(int index) const;

 private:
  std::vector<WyeSlot> wye_;
  std::vector<DeltaSlot> delta_;
  std::vector<std::string> bus_ids_;
};

// Complex wye/delta injections (p.u., positive = into the network).
struct Injections {
  std::vector<cplx> wye;    // per InjectionOrdering::wye()
  std::vector<cplx> delta;  // per InjectionOrdering::delta()

  static Injections zero(const InjectionOrdering& ord);
  static Injections from_vector(const InjectionOrdering& ord, const Eigen::VectorXd& x);
  Eigen::VectorXd to_vector(const InjectionOrdering& ord) const;
};

struct BranchPhase {
  int branch;
  int local;  // index into Branch::phases
  Phase phase;
};

struct PhasorState {
  Eigen::VectorXcd voltage;         // per node
  Eigen::VectorXcd branch_current;  // per branch-phase (see branch_phases())
  cplx s0;                          // power injected into the network at the PCC
  int iterations = 0;
  double residual = 0.0;
};

std::vector<BranchPhase> branch_phases(const MultiphaseNetwork& net);

struct LoadFlowOptions {
  int max_iterations = 200;
  double tolerance = 1e-9;
  double damping = 1.0;
};

PhasorState solve_load_flow(const MultiphaseNetwork& net, const InjectionOrdering& ord,
                            const Injections& inj, const LoadFlowOptions& opts = {});

// Export at the PCC as seen from the VPP: P + jQ = -s0.
inline cplx pcc_export(const PhasorState& s) { return -s.s0; }

struct LinearState {
  Eigen::VectorXd voltage;  // magnitude per monitored node (non-slack)
  Eigen::VectorXd current;  // signed projected current per branch-phase
  double p_pcc = 0.0;
  double q_pcc = 0.0;
};

// V = K x + b, I = J x + d, P_PCC = m'x + g_const, Q_PCC = h'x + l.
struct LinearNetworkModel {
  InjectionOrdering ordering;
  std::vector<int> monitored_nodes;  // node index per row of K
  std::vector<BranchPhase> branch_rows;
  Eigen::MatrixXd K;
  Eigen::VectorXd b;
  Eigen::MatrixXd J;
  Eigen::VectorXd d;
  Eigen::VectorXd m;
  double g_const = 0.0;
  Eigen::VectorXd h;
  double l = 0.0;
  Eigen::VectorXd base_x;
  PhasorState base_state;
  PhasorState no_load_state;

  LinearState eval_state(const Eigen::VectorXd& x) const;
};

LinearNetworkModel linearize(const MultiphaseNetwork& net, const Injections& base,
                             const LoadFlowOptions& opts = {});

// Nonlinear quantities in the same layout as LinearState (for accuracy checks).
LinearState nonlinear_state(const MultiphaseNetwork& net, const LinearNetworkModel& model,
                            const Eigen::VectorXd& x, const LoadFlowOptions& opts = {});

}  // namespace vppflex::net
