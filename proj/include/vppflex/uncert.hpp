#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

namespace vppflex::uq {

// Multivariate Gaussian mixture over the stacked forecast-error vector
// [PV errors; WT errors; load errors].
struct Gmm {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;

  int size() const { return static_cast<int>(weights.size()); }
  int dim() const { return means.empty() ? 0 : static_cast<int>(means.front().size()); }
  Eigen::VectorXd mean() const;
  Eigen::MatrixXd covariance() const;
  // Throws PsdError / DimensionError when the invariants do not hold.
  void validate() const;

  static Gmm point_mass(const Eigen::VectorXd& at);
};

struct UnivariateGmm {
  std::vector<double> weights;
  std::vector<double> means;
  std::vector<double> sigmas;

  double mean() const;
  double stddev() const;
};

double std_normal_cdf(double x);
double std_normal_pdf(double x);
double std_normal_quantile(double p);

UnivariateGmm project(const Gmm& gmm, const Eigen::VectorXd& a);

double cdf(const UnivariateGmm& u, double x);
// Density of the continuous part; zero-variance components contribute no density.
double pdf(const UnivariateGmm& u, double x);

struct QuantileOptions {
  double tolerance = 1e-12;
  int max_iterations = 200;
};

// Newton iteration on the mixture CDF, safeguarded by a maintained bracket
// and bisection. Returns the infimum on flat CDF segments.
double quantile(const UnivariateGmm& u, double alpha, const QuantileOptions& opts = {});

struct EmOptions {
  int max_iterations = 500;
  double relative_tolerance = 1e-8;
  std::uint64_t seed = 1;
  // Optional independence structure: block id per coordinate. Cross-block
  // covariance entries are forced to zero in every M-step.
  std::vector<int> blocks;
};

struct EmResult {
  Gmm model;
  std::vector<double> log_likelihood;  // per iteration, mean over samples
  int iterations = 0;
  bool converged = false;
  double bic = 0.0;
};

// Rows of `samples` are observations.
EmResult fit_em(const Eigen::MatrixXd& samples, int n_components, const EmOptions& opts = {});
// Chooses the component count in [1, max_components] by minimum BIC.
EmResult fit_em_auto(const Eigen::MatrixXd& samples, int max_components = 5, const EmOptions& opts = {});

double log_likelihood(const Gmm& gmm, const Eigen::MatrixXd& samples);

// n draws; component by weight, then mean + L z with L a (regularised)
// Cholesky factor of the component covariance.
Eigen::MatrixXd sample(const Gmm& gmm, int n, std::mt19937_64& rng);
Eigen::MatrixXd sample(const Gmm& gmm, int n, std::uint64_t seed);

// Precomputed factors for repeated sampling.
class Sampler {
 public:
  explicit Sampler(const Gmm& gmm);
  void draw(std::mt19937_64& rng, Eigen::Ref<Eigen::VectorXd> out) const;
  int dim() const { return dim_; }

 private:
  int dim_ = 0;
  std::vector<double> cumulative_;
  std::vector<Eigen::VectorXd> means_;
  std::vector<Eigen::MatrixXd> factors_;
};

}  // namespace vppflex::uq
