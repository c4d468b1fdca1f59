#include "vppflex/lpcore.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>

#include "vppflex/error.hpp"

namespace vppflex::lp {

const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "OPTIMAL";
    case Status::Infeasible: return "INFEASIBLE";
    case Status::Unbounded: return "UNBOUNDED";
    case Status::IllConditioned: return "ILL_CONDITIONED";
    case Status::IterationLimit: return "ITERATION_LIMIT";
  }
  return "UNKNOWN";
}

int LinearProgram::add_variable(double lower, double upper, double cost, std::string name) {
  lower_.push_back(lower);
  upper_.push_back(upper);
  cost_.push_back(cost);
  if (name.empty()) name = "x" + std::to_string(cost_.size() - 1);
  names_.push_back(std::move(name));
  return static_cast<int>(cost_.size()) - 1;
}

int LinearProgram::add_row(std::vector<Term> terms, Relation rel, double rhs, std::string name) {
  switch (rel) {
    case Relation::LessEqual: return add_range_row(std::move(terms), -kInf, rhs, std::move(name));
    case Relation::GreaterEqual: return add_range_row(std::move(terms), rhs, kInf, std::move(name));
    case Relation::Equal: return add_range_row(std::move(terms), rhs, rhs, std::move(name));
  }
  return -1;
}

int LinearProgram::add_range_row(std::vector<Term> terms, double lower, double upper,
                                 std::string name) {
  if (name.empty()) name = "r" + std::to_string(rows_.size());
  rows_.push_back(Row{std::move(terms), lower, upper, std::move(name)});
  return static_cast<int>(rows_.size()) - 1;
}

void LinearProgram::set_bounds(int col, double lower, double upper) {
  lower_.at(col) = lower;
  upper_.at(col) = upper;
}

void LinearProgram::set_row_bounds(int row, double lower, double upper) {
  rows_.at(row).lower = lower;
  rows_.at(row).upper = upper;
}

void LinearProgram::add_term(int row, int col, double coef) {
  rows_.at(row).terms.push_back(Term{col, coef});
}

void LinearProgram::validate() const {
  const int n = num_variables();
  for (int j = 0; j < n; ++j) {
    if (!std::isfinite(cost_[j])) throw DimensionError("non-finite cost on " + names_[j]);
    if (std::isnan(lower_[j]) || std::isnan(upper_[j]) || lower_[j] > upper_[j])
      throw DimensionError("crossed bounds on " + names_[j]);
  }
  for (const auto& row : rows_) {
    if (std::isnan(row.lower) || std::isnan(row.upper) || row.lower > row.upper)
      throw DimensionError("crossed row bounds on " + row.name);
    for (const auto& t : row.terms) {
      if (t.col < 0 || t.col >= n) throw DimensionError("row " + row.name + " references missing column");
      if (!std::isfinite(t.coef)) throw DimensionError("non-finite coefficient in row " + row.name);
    }
  }
}

double LinearProgram::row_activity(int row, std::span<const double> x) const {
  double s = 0.0;
  for (const auto& t : rows_.at(row).terms) s += t.coef * x[t.col];
  return s;
}

double LinearProgram::objective_value(std::span<const double> x) const {
  double s = 0.0;
  for (int j = 0; j < num_variables(); ++j) s += cost_[j] * x[j];
  return s;
}

namespace {

enum class VarState { Basic, AtLower, AtUpper, Free };

// Bounded primal revised simplex on  A x - s = 0,  lo <= (x, s) <= hi.
// Logical column for row i is -e_i; phase-1 artificials are +-e_i.
class Simplex {
 public:
  Simplex(const LinearProgram& lp, const SolverOptions& opts) : lp_(lp), opts_(opts) {}

  Solution run();

 private:
  struct Column {
    std::vector<std::pair<int, double>> entries;
  };

  void build();
  bool refactor();
  void compute_basic_values();
  void compute_duals(Eigen::VectorXd& y) const;
  double reduced_cost(int j, const Eigen::VectorXd& y) const;
  void column_times(int j, Eigen::VectorXd& out) const;
  // Returns false when the iteration limit is hit or the basis breaks down.
  Status iterate(bool phase_one);
  double infeasibility_sum() const;
  double max_basic_violation() const;

  const LinearProgram& lp_;
  const SolverOptions& opts_;

  int n_ = 0;        // structural columns
  int m_ = 0;        // rows
  int total_ = 0;    // structural + logical + artificial
  std::vector<double> row_scale_;
  std::vector<Column> cols_;
  std::vector<double> lo_, hi_, cost_, x_;
  std::vector<VarState> state_;
  std::vector<int> head_;  // basic column per row position
  Eigen::MatrixXd binv_;
  std::vector<double> phase_cost_;
  int iterations_ = 0;
  int max_iterations_ = 0;
};

void Simplex::build() {
  n_ = lp_.num_variables();
  m_ = lp_.num_rows();
  const auto& rows = lp_.rows();

  row_scale_.assign(m_, 1.0);
  for (int i = 0; i < m_; ++i) {
    double mx = 0.0;
    for (const auto& t : rows[i].terms) mx = std::max(mx, std::abs(t.coef));
    if (mx > 0.0) row_scale_[i] = 1.0 / mx;
  }

  cols_.assign(n_ + m_, Column{});
  for (int i = 0; i < m_; ++i) {
    for (const auto& t : rows[i].terms) {
      if (t.coef != 0.0) cols_[t.col].entries.emplace_back(i, t.coef * row_scale_[i]);
    }
    cols_[n_ + i].entries.emplace_back(i, -1.0);
  }
  // Merge duplicate (row, col) entries.
  for (int j = 0; j < n_; ++j) {
    auto& e = cols_[j].entries;
    std::sort(e.begin(), e.end(), [](auto& a, auto& b) { return a.first < b.first; });
    std::vector<std::pair<int, double>> merged;
    for (const auto& p : e) {
      if (!merged.empty() && merged.back().first == p.first)
        merged.back().second += p.second;
      else
        merged.push_back(p);
    }
    e = std::move(merged);
  }

  lo_.assign(n_ + m_, 0.0);
  hi_.assign(n_ + m_, 0.0);
  cost_.assign(n_ + m_, 0.0);
  const double sgn = lp_.sense() == Sense::Maximize ? -1.0 : 1.0;
  for (int j = 0; j < n_; ++j) {
    lo_[j] = lp_.lower()[j];
    hi_[j] = lp_.upper()[j];
    cost_[j] = sgn * lp_.cost()[j];
  }
  for (int i = 0; i < m_; ++i) {
    lo_[n_ + i] = rows[i].lower * row_scale_[i];
    hi_[n_ + i] = rows[i].upper * row_scale_[i];
  }

  x_.assign(n_ + m_, 0.0);
  state_.assign(n_ + m_, VarState::AtLower);
  for (int j = 0; j < n_; ++j) {
    if (std::isfinite(lo_[j])) {
      x_[j] = lo_[j];
      state_[j] = VarState::AtLower;
    } else if (std::isfinite(hi_[j])) {
      x_[j] = hi_[j];
      state_[j] = VarState::AtUpper;
    } else {
      x_[j] = 0.0;
      state_[j] = VarState::Free;
    }
  }

  std::vector<double> activity(m_, 0.0);
  for (int j = 0; j < n_; ++j) {
    if (x_[j] == 0.0) continue;
    for (const auto& [r, v] : cols_[j].entries) activity[r] += v * x_[j];
  }

  head_.assign(m_, -1);
  for (int i = 0; i < m_; ++i) {
    const int s = n_ + i;
    const double a = activity[i];
    if (a >= lo_[s] - opts_.feasibility_tol && a <= hi_[s] + opts_.feasibility_tol) {
      head_[i] = s;
      state_[s] = VarState::Basic;
      x_[s] = a;
      continue;
    }
    // Logical sits at its nearest bound; an artificial absorbs the gap.
    const bool below = a < lo_[s];
    const double clamp = below ? lo_[s] : hi_[s];
    x_[s] = clamp;
    state_[s] = below ? VarState::AtLower : VarState::AtUpper;
    // a - clamp + sigma * art = 0, art >= 0
    const double sigma = (clamp - a) > 0.0 ? 1.0 : -1.0;
    Column c;
    c.entries.emplace_back(i, sigma);
    cols_.push_back(std::move(c));
    lo_.push_back(0.0);
    hi_.push_back(kInf);
    cost_.push_back(0.0);
    x_.push_back(std::abs(clamp - a));
    state_.push_back(VarState::Basic);
    head_[i] = static_cast<int>(cols_.size()) - 1;
  }
  total_ = static_cast<int>(cols_.size());
  binv_ = Eigen::MatrixXd::Identity(m_, m_);
  for (int i = 0; i < m_; ++i) {
    // Initial basis is diagonal: -1 for logicals, sigma for artificials.
    binv_(i, i) = 1.0 / cols_[head_[i]].entries.front().second;
  }
  max_iterations_ = opts_.max_iterations > 0 ? opts_.max_iterations : 50 * (m_ + n_) + 2000;
}

bool Simplex::refactor() {
  if (m_ == 0) return true;
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(m_, m_);
  for (int r = 0; r < m_; ++r) {
    for (const auto& [i, v] : cols_[head_[r]].entries) basis(i, r) = v;
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(basis);
  const double rc = lu.rcond();
  if (!(rc > 1e-13)) return false;
  binv_ = lu.inverse();
  return true;
}

void Simplex::compute_basic_values() {
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m_);
  for (int j = 0; j < total_; ++j) {
    if (state_[j] == VarState::Basic || x_[j] == 0.0) continue;
    for (const auto& [i, v] : cols_[j].entries) rhs(i) -= v * x_[j];
  }
  const Eigen::VectorXd xb = binv_ * rhs;
  for (int r = 0; r < m_; ++r) x_[head_[r]] = xb(r);
}

void Simplex::compute_duals(Eigen::VectorXd& y) const {
  Eigen::VectorXd cb(m_);
  for (int r = 0; r < m_; ++r) cb(r) = phase_cost_[head_[r]];
  y.noalias() = binv_.transpose() * cb;
}

double Simplex::reduced_cost(int j, const Eigen::VectorXd& y) const {
  double d = phase_cost_[j];
  for (const auto& [i, v] : cols_[j].entries) d -= y(i) * v;
  return d;
}

void Simplex::column_times(int j, Eigen::VectorXd& out) const {
  out.setZero(m_);
  for (const auto& [i, v] : cols_[j].entries) out.noalias() += v * binv_.col(i);
}

double Simplex::infeasibility_sum() const {
  double s = 0.0;
  for (int j = n_ + m_; j < total_; ++j) s += std::abs(x_[j]);
  return s;
}

double Simplex::max_basic_violation() const {
  double v = 0.0;
  for (int r = 0; r < m_; ++r) {
    const int j = head_[r];
    v = std::max(v, lo_[j] - x_[j]);
    v = std::max(v, x_[j] - hi_[j]);
  }
  return v;
}

Status Simplex::iterate(bool phase_one) {
  const double ftol = opts_.feasibility_tol;
  const double otol = opts_.optimality_tol;
  constexpr double kPivotTol = 1e-9;

  Eigen::VectorXd y(m_), alpha(m_);
  int degenerate_run = 0;
  bool bland = false;
  int since_refactor = 0;

  while (true) {
    if (iterations_ >= max_iterations_) return Status::IterationLimit;
    if (since_refactor >= opts_.refactor_interval) {
      if (!refactor()) return Status::IllConditioned;
      compute_basic_values();
      since_refactor = 0;
    }
    compute_duals(y);

    // Pricing.
    int enter = -1;
    double best = 0.0;
    double enter_dir = 0.0;
    for (int j = 0; j < total_; ++j) {
      const VarState st = state_[j];
      if (st == VarState::Basic) continue;
      if (lo_[j] == hi_[j]) continue;
      const double d = reduced_cost(j, y);
      double dir = 0.0;
      if (st == VarState::AtLower && d < -otol) dir = 1.0;
      else if (st == VarState::AtUpper && d > otol) dir = -1.0;
      else if (st == VarState::Free && std::abs(d) > otol) dir = d < 0.0 ? 1.0 : -1.0;
      if (dir == 0.0) continue;
      if (bland) {
        enter = j;
        enter_dir = dir;
        break;
      }
      if (std::abs(d) > best) {
        best = std::abs(d);
        enter = j;
        enter_dir = dir;
      }
    }
    if (enter < 0) return Status::Optimal;

    column_times(enter, alpha);

    // Ratio test. Basic variable r changes by -dir * alpha_r * t.
    const double span = hi_[enter] - lo_[enter];
    double theta_max = kInf;
    for (int r = 0; r < m_; ++r) {
      const double a = enter_dir * alpha(r);
      const int j = head_[r];
      if (a > kPivotTol && std::isfinite(lo_[j])) {
        theta_max = std::min(theta_max, (x_[j] - lo_[j] + (bland ? 0.0 : ftol)) / a);
      } else if (a < -kPivotTol && std::isfinite(hi_[j])) {
        theta_max = std::min(theta_max, (hi_[j] - x_[j] + (bland ? 0.0 : ftol)) / -a);
      }
    }
    int leave = -1;
    double step = 0.0;
    if (std::isfinite(theta_max)) {
      double best_piv = 0.0;
      double best_ratio = kInf;
      for (int r = 0; r < m_; ++r) {
        const double a = enter_dir * alpha(r);
        const int j = head_[r];
        double ratio;
        if (a > kPivotTol && std::isfinite(lo_[j])) ratio = (x_[j] - lo_[j]) / a;
        else if (a < -kPivotTol && std::isfinite(hi_[j])) ratio = (hi_[j] - x_[j]) / -a;
        else continue;
        if (ratio > theta_max) continue;
        if (bland) {
          if (ratio < best_ratio - 1e-15 ||
              (std::abs(ratio - best_ratio) <= 1e-15 && leave >= 0 && j < head_[leave])) {
            best_ratio = ratio;
            leave = r;
          }
        } else if (std::abs(a) > best_piv) {
          best_piv = std::abs(a);
          leave = r;
          best_ratio = ratio;
        }
      }
      step = std::max(best_ratio, 0.0);
    }

    if (std::isfinite(span) && (leave < 0 || span <= step)) {
      // Bound flip: entering moves across its box, basis unchanged.
      const double t = span;
      x_[enter] += enter_dir * t;
      state_[enter] = enter_dir > 0.0 ? VarState::AtUpper : VarState::AtLower;
      x_[enter] = enter_dir > 0.0 ? hi_[enter] : lo_[enter];
      for (int r = 0; r < m_; ++r) x_[head_[r]] -= enter_dir * t * alpha(r);
      ++iterations_;
      degenerate_run = 0;
      bland = false;
      continue;
    }
    if (leave < 0) {
      return phase_one ? Status::IllConditioned : Status::Unbounded;
    }

    x_[enter] += enter_dir * step;
    for (int r = 0; r < m_; ++r) x_[head_[r]] -= enter_dir * step * alpha(r);
    const int out = head_[leave];
    const double a_out = enter_dir * alpha(leave);
    if (a_out > 0.0) {
      x_[out] = lo_[out];
      state_[out] = VarState::AtLower;
    } else {
      x_[out] = hi_[out];
      state_[out] = VarState::AtUpper;
    }
    if (lo_[out] == -kInf && hi_[out] == kInf) state_[out] = VarState::Free;
    head_[leave] = enter;
    state_[enter] = VarState::Basic;

    // Product-form update of the explicit inverse.
    const double piv = alpha(leave);
    Eigen::RowVectorXd prow = binv_.row(leave) / piv;
    alpha(leave) = 0.0;
    binv_.noalias() -= alpha * prow;
    binv_.row(leave) = prow;

    ++iterations_;
    ++since_refactor;
    if (step <= 1e-12) {
      if (++degenerate_run > opts_.degenerate_switch) bland = true;
    } else {
      degenerate_run = 0;
      bland = false;
    }
  }
}

Solution Simplex::run() {
  Solution sol;
  build();
  const int first_art = n_ + m_;

  if (total_ > first_art) {
    phase_cost_.assign(total_, 0.0);
    for (int j = first_art; j < total_; ++j) phase_cost_[j] = 1.0;
    const Status st = iterate(true);
    if (st != Status::Optimal) {
      sol.status = st == Status::IterationLimit ? Status::IterationLimit : Status::IllConditioned;
      sol.iterations = iterations_;
      return sol;
    }
    if (!refactor()) {
      sol.status = Status::IllConditioned;
      return sol;
    }
    compute_basic_values();
    double bound_scale = 1.0;
    for (int j = n_; j < first_art; ++j) {
      if (std::isfinite(lo_[j])) bound_scale = std::max(bound_scale, std::abs(lo_[j]));
      if (std::isfinite(hi_[j])) bound_scale = std::max(bound_scale, std::abs(hi_[j]));
    }
    if (infeasibility_sum() > 1e3 * opts_.feasibility_tol * bound_scale) {
      sol.status = Status::Infeasible;
      sol.objective = infeasibility_sum();
      sol.iterations = iterations_;
      return sol;
    }
    for (int j = first_art; j < total_; ++j) {
      hi_[j] = 0.0;
      if (state_[j] != VarState::Basic) {
        x_[j] = 0.0;
        state_[j] = VarState::AtLower;
      }
    }
  }

  phase_cost_ = cost_;
  phase_cost_.resize(total_, 0.0);
  Status st = iterate(false);
  if (st == Status::Optimal) {
    if (!refactor()) {
      st = Status::IllConditioned;
    } else {
      compute_basic_values();
      if (max_basic_violation() > 1e-7) {
        // One more pass from the refreshed inverse before giving up.
        st = iterate(false);
        if (st == Status::Optimal && refactor()) {
          compute_basic_values();
          if (max_basic_violation() > 1e-7) st = Status::IllConditioned;
        } else if (st == Status::Optimal) {
          st = Status::IllConditioned;
        }
      }
    }
  }
  sol.status = st;
  sol.iterations = iterations_;
  if (st != Status::Optimal) return sol;

  // Snap basic values sitting within tolerance of a bound.
  for (int r = 0; r < m_; ++r) {
    const int j = head_[r];
    if (x_[j] < lo_[j]) x_[j] = lo_[j];
    if (x_[j] > hi_[j]) x_[j] = hi_[j];
  }

  sol.x.assign(x_.begin(), x_.begin() + n_);
  const double sgn = lp_.sense() == Sense::Maximize ? -1.0 : 1.0;
  sol.objective = lp_.objective_value(sol.x);

  Eigen::VectorXd y(m_);
  compute_duals(y);
  sol.duals.resize(m_);
  for (int i = 0; i < m_; ++i) sol.duals[i] = sgn * y(i) * row_scale_[i];
  double dual_obj = 0.0;
  for (int j = 0; j < total_; ++j) {
    if (state_[j] == VarState::Basic || x_[j] == 0.0) continue;
    dual_obj += reduced_cost(j, y) * x_[j];
  }
  sol.dual_objective = sgn * dual_obj;

  double resid = 0.0;
  for (int i = 0; i < m_; ++i) {
    const double a = lp_.row_activity(i, sol.x);
    const auto& row = lp_.rows()[i];
    resid = std::max({resid, row.lower - a, a - row.upper});
  }
  for (int j = 0; j < n_; ++j) {
    resid = std::max({resid, lp_.lower()[j] - sol.x[j], sol.x[j] - lp_.upper()[j]});
  }
  sol.primal_residual = resid;
  if (resid > 1e-7) sol.status = Status::IllConditioned;
  return sol;
}

}  // namespace

Solution solve_lp(const LinearProgram& lp, const SolverOptions& opts) {
  lp.validate();
  Simplex simplex(lp, opts);
  return simplex.run();
}

FeasibilityResult solve_feasibility(const LinearProgram& lp, std::span<const int> target_rows,
                                    const SolverOptions& opts) {
  LinearProgram relaxed = lp;
  for (int j = 0; j < relaxed.num_variables(); ++j) relaxed.set_cost(j, 0.0);
  relaxed.set_sense(Sense::Minimize);
  std::vector<std::pair<int, int>> slack_cols;
  for (int row : target_rows) {
    if (row < 0 || row >= relaxed.num_rows()) throw DimensionError("feasibility target row out of range");
    const int sp = relaxed.add_variable(0.0, kInf, 1.0, "slack+" + std::to_string(row));
    const int sm = relaxed.add_variable(0.0, kInf, 1.0, "slack-" + std::to_string(row));
    relaxed.add_term(row, sp, 1.0);
    relaxed.add_term(row, sm, -1.0);
    slack_cols.emplace_back(sp, sm);
  }
  const Solution sol = solve_lp(relaxed, opts);
  FeasibilityResult out;
  out.status = sol.status;
  if (sol.status != Status::Optimal) return out;
  out.violation = sol.objective;
  out.x.assign(sol.x.begin(), sol.x.begin() + lp.num_variables());
  for (const auto& [sp, sm] : slack_cols) {
    out.slack_plus.push_back(sol.x[sp]);
    out.slack_minus.push_back(sol.x[sm]);
  }
  return out;
}

}  // namespace vppflex::lp
