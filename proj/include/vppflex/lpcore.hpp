#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

namespace vppflex::lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sense { Minimize, Maximize };
enum class Relation { LessEqual, Equal, GreaterEqual };
enum class Status { Optimal, Infeasible, Unbounded, IllConditioned, IterationLimit };

const char* to_string(Status s);

struct Term {
  int col;
  double coef;
};

// Row lower <= sum(terms) <= upper. One-sided rows use an infinite side.
struct Row {
  std::vector<Term> terms;
  double lower;
  double upper;
  std::string name;
};

class LinearProgram {
 public:
  int add_variable(double lower, double upper, double cost = 0.0, std::string name = {});
  int add_row(std::vector<Term> terms, Relation rel, double rhs, std::string name = {});
  int add_range_row(std::vector<Term> terms, double lower, double upper, std::string name = {});

  void set_sense(Sense s) { sense_ = s; }
  void set_cost(int col, double c) { cost_.at(col) = c; }
  void set_bounds(int col, double lower, double upper);
  void set_row_bounds(int row, double lower, double upper);
  // Appends a term to an existing row (used to attach slack columns).
  void add_term(int row, int col, double coef);

  Sense sense() const { return sense_; }
  int num_variables() const { return static_cast<int>(cost_.size()); }
  int num_rows() const { return static_cast<int>(rows_.size()); }
  const std::vector<double>& cost() const { return cost_; }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }
  const std::vector<Row>& rows() const { return rows_; }
  const std::string& variable_name(int col) const { return names_.at(col); }

  // Throws DimensionError for out-of-range columns, non-finite coefficients
  // or crossed bounds.
  void validate() const;

  double row_activity(int row, std::span<const double> x) const;
  double objective_value(std::span<const double> x) const;

 private:
  Sense sense_ = Sense::Minimize;
  std::vector<double> cost_;
  std::vector<double> lower_;
  std::vector<double> upper_;
  std::vector<std::string> names_;
  std::vector<Row> rows_;
};

struct SolverOptions {
  double feasibility_tol = 1e-9;
  double optimality_tol = 1e-9;
  int max_iterations = 0;  // 0: automatic, proportional to problem size
  int refactor_interval = 64;
  int degenerate_switch = 50;  // consecutive degenerate pivots before Bland's rule
};

struct Solution {
  Status status = Status::IllConditioned;
  double objective = 0.0;
  std::vector<double> x;
  // Sensitivity of the optimal objective to each row's active bound.
  std::vector<double> duals;
  double dual_objective = 0.0;
  double primal_residual = 0.0;
  int iterations = 0;
};

Solution solve_lp(const LinearProgram& lp, const SolverOptions& opts = {});

struct FeasibilityResult {
  Status status = Status::IllConditioned;
  // Minimal sum of slack magnitudes over the designated rows.
  double violation = 0.0;
  std::vector<double> x;
  std::vector<double> slack_plus;
  std::vector<double> slack_minus;
};

// Drops the objective, attaches nonnegative slacks s+ and s- to each
// designated row (row + s+ - s-) and minimises their sum.
FeasibilityResult solve_feasibility(const LinearProgram& lp, std::span<const int> target_rows,
                                    const SolverOptions& opts = {});

}  // namespace vppflex::lp
