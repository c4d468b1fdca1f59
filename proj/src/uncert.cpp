#include "vppflex/uncert.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vppflex/error.hpp"
#include "vppflex/log.hpp"

namespace vppflex::uq {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

Eigen::VectorXd Gmm::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(dim());
  for (int j = 0; j < size(); ++j) m += weights[j] * means[j];
  return m;
}

Eigen::MatrixXd Gmm::covariance() const {
  const Eigen::VectorXd mu = mean();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim(), dim());
  for (int j = 0; j < size(); ++j) {
    const Eigen::VectorXd dm = means[j] - mu;
    c += weights[j] * (covariances[j] + dm * dm.transpose());
  }
  return c;
}

void Gmm::validate() const {
  if (weights.empty()) throw DimensionError("GMM has no components");
  if (means.size() != weights.size() || covariances.size() != weights.size())
    throw DimensionError("GMM component arrays differ in length");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw DimensionError("GMM weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DimensionError("GMM weights must sum to one");
  const int d = dim();
  for (int j = 0; j < size(); ++j) {
    if (means[j].size() != d || covariances[j].rows() != d || covariances[j].cols() != d)
      throw DimensionError("GMM component dimensions differ");
    if ((covariances[j] - covariances[j].transpose()).cwiseAbs().maxCoeff() > 1e-10)
      throw PsdError("GMM covariance is not symmetric");
    if (d > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(covariances[j], Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -1e-10) throw PsdError("GMM covariance is not positive semidefinite");
    }
  }
}

Gmm Gmm::point_mass(const Eigen::VectorXd& at) {
  Gmm g;
  g.weights = {1.0};
  g.means = {at};
  g.covariances = {Eigen::MatrixXd::Zero(at.size(), at.size())};
  return g;
}

double UnivariateGmm::mean() const {
  double m = 0.0;
  for (size_t j = 0; j < weights.size(); ++j) m += weights[j] * means[j];
  return m;
}

double UnivariateGmm::stddev() const {
  const double mu = mean();
  double v = 0.0;
  for (size_t j = 0; j < weights.size(); ++j)
    v += weights[j] * (sigmas[j] * sigmas[j] + (means[j] - mu) * (means[j] - mu));
  return std::sqrt(std::max(v, 0.0));
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double std_normal_pdf(double x) { return std::exp(-0.5 * x * x - 0.5 * kLog2Pi); }

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw RangeError("normal quantile needs 0 < p < 1");
  // Acklam's rational approximation, refined by two Newton steps.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01,  -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  for (int k = 0; k < 2; ++k) {
    const double pd = std_normal_pdf(x);
    if (pd <= 0.0) break;
    x -= (std_normal_cdf(x) - p) / pd;
  }
  return x;
}

UnivariateGmm project(const Gmm& gmm, const Eigen::VectorXd& a) {
  if (a.size() != gmm.dim()) throw DimensionError("projection vector does not match the GMM dimension");
  UnivariateGmm u;
  u.weights = gmm.weights;
  for (int j = 0; j < gmm.size(); ++j) {
    u.means.push_back(a.dot(gmm.means[j]));
    double var = a.dot(gmm.covariances[j] * a);
    if (var < -1e-12) throw PsdError("projected variance is negative");
    u.sigmas.push_back(std::sqrt(std::max(var, 0.0)));
  }
  return u;
}

double cdf(const UnivariateGmm& u, double x) {
  if (x == -std::numeric_limits<double>::infinity()) return 0.0;
  if (x == std::numeric_limits<double>::infinity()) return 1.0;
  double s = 0.0;
  for (size_t j = 0; j < u.weights.size(); ++j) {
    if (u.sigmas[j] > 0.0)
      s += u.weights[j] * std_normal_cdf((x - u.means[j]) / u.sigmas[j]);
    else
      s += x >= u.means[j] ? u.weights[j] : 0.0;
  }
  return std::clamp(s, 0.0, 1.0);
}

double pdf(const UnivariateGmm& u, double x) {
  double s = 0.0;
  for (size_t j = 0; j < u.weights.size(); ++j) {
    if (u.sigmas[j] > 0.0) s += u.weights[j] * std_normal_pdf((x - u.means[j]) / u.sigmas[j]) / u.sigmas[j];
  }
  return s;
}

double quantile(const UnivariateGmm& u, double alpha, const QuantileOptions& opts) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw RangeError("quantile level must lie in (0, 1)");
  const size_t n = u.weights.size();
  if (n == 0) throw DimensionError("empty mixture");

  const bool all_point = std::all_of(u.sigmas.begin(), u.sigmas.end(), [](double s) { return s == 0.0; });
  if (all_point) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return u.means[a] < u.means[b]; });
    double acc = 0.0;
    for (size_t k : order) {
      acc += u.weights[k];
      if (acc >= alpha - 1e-15) return u.means[k];
    }
    return u.means[order.back()];
  }

  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (size_t j = 0; j < n; ++j) {
    lo = std::min(lo, u.means[j] - 10.0 * u.sigmas[j]);
    hi = std::max(hi, u.means[j] + 10.0 * u.sigmas[j]);
  }
  double width = std::max(hi - lo, 1e-12);
  while (cdf(u, lo) > alpha) {
    lo -= width;
    width *= 2.0;
  }
  while (cdf(u, hi) < alpha) {
    hi += width;
    width *= 2.0;
  }

  // Moment-matched Gaussian start.
  double q = u.mean() + std_normal_quantile(alpha) * u.stddev();
  if (!(q > lo && q < hi)) q = 0.5 * (lo + hi);
  for (int it = 0; it < opts.max_iterations; ++it) {
    const double f = cdf(u, q) - alpha;
    if (std::abs(f) < opts.tolerance) return q;
    if (f < 0.0) lo = q;
    else hi = q;
    const double p = pdf(u, q);
    double next = p > 1e-300 ? q - f / p : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(q))) break;
    q = next;
  }
  // Jump of a point-mass component: the infimum of {cdf >= alpha}.
  return cdf(u, q) >= alpha ? q : hi;
}

namespace {

struct Factor {
  Eigen::MatrixXd lower;  // L with L L' = covariance (possibly regularised)
  double log_det = 0.0;
  bool ok = true;
};

Factor factor_covariance(const Eigen::MatrixXd& cov, bool regularise) {
  Factor f;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) {
    f.lower = llt.matrixL();
    f.log_det = 2.0 * f.lower.diagonal().array().log().sum();
    if (std::isfinite(f.log_det)) return f;
  }
  if (!regularise) {
    f.ok = false;
    return f;
  }
  const int d = static_cast<int>(cov.rows());
  double eps = 1e-8 * cov.trace() / std::max(d, 1);
  if (!(eps > 0.0)) eps = 1e-12;
  Eigen::MatrixXd reg = cov;
  for (int attempt = 0; attempt < 30; ++attempt) {
    reg = cov + eps * Eigen::MatrixXd::Identity(d, d);
    Eigen::LLT<Eigen::MatrixXd> l2(reg);
    if (l2.info() == Eigen::Success) {
      f.lower = l2.matrixL();
      f.log_det = 2.0 * f.lower.diagonal().array().log().sum();
      return f;
    }
    eps *= 10.0;
  }
  f.ok = false;
  return f;
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

// Per-sample, per-component log(w_j N(x; mu_j, S_j)).
Eigen::MatrixXd component_log_density(const Gmm& g, const Eigen::MatrixXd& x, bool warn_on_reg) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  Eigen::MatrixXd out(n, g.size());
  for (int j = 0; j < g.size(); ++j) {
    Factor f = factor_covariance(g.covariances[j], false);
    if (!f.ok) {
      f = factor_covariance(g.covariances[j], true);
      if (!f.ok) throw PsdError("covariance could not be regularised");
      if (warn_on_reg) warn("singular GMM covariance regularised with eps*I");
    }
    const Eigen::MatrixXd centred = (x.rowwise() - g.means[j].transpose()).transpose();
    const Eigen::MatrixXd z = f.lower.triangularView<Eigen::Lower>().solve(centred);
    const Eigen::VectorXd maha = z.colwise().squaredNorm().transpose();
    out.col(j) = (-0.5 * (maha.array() + f.log_det + d * kLog2Pi) + std::log(g.weights[j])).matrix();
  }
  return out;
}

void apply_blocks(Eigen::MatrixXd& cov, const std::vector<int>& blocks) {
  if (blocks.empty()) return;
  for (Eigen::Index r = 0; r < cov.rows(); ++r)
    for (Eigen::Index c = 0; c < cov.cols(); ++c)
      if (blocks[r] != blocks[c]) cov(r, c) = 0.0;
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x, const Eigen::VectorXd& mu) {
  const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
  return (c.transpose() * c) / static_cast<double>(x.rows());
}

// k-means++ seeding followed by a few Lloyd rounds.
std::vector<int> kmeans_assign(const Eigen::MatrixXd& x, int k, std::mt19937_64& rng) {
  const int n = static_cast<int>(x.rows());
  std::vector<Eigen::VectorXd> centres;
  std::uniform_int_distribution<int> pick(0, n - 1);
  centres.push_back(x.row(pick(rng)).transpose());
  Eigen::VectorXd dist(n);
  while (static_cast<int>(centres.size()) < k) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centres) best = std::min(best, (x.row(i).transpose() - c).squaredNorm());
      dist(i) = best;
    }
    const double total = dist.sum();
    if (!(total > 0.0)) {
      centres.push_back(x.row(pick(rng)).transpose());
      continue;
    }
    std::uniform_real_distribution<double> ur(0.0, total);
    double r = ur(rng);
    int chosen = n - 1;
    for (int i = 0; i < n; ++i) {
      r -= dist(i);
      if (r <= 0.0) {
        chosen = i;
        break;
      }
    }
    centres.push_back(x.row(chosen).transpose());
  }
  std::vector<int> assign(n, 0);
  for (int round = 0; round < 20; ++round) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best_j = 0;
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double dd = (x.row(i).transpose() - centres[j]).squaredNorm();
        if (dd < best) {
          best = dd;
          best_j = j;
        }
      }
      if (assign[i] != best_j) changed = true;
      assign[i] = best_j;
    }
    std::vector<int> count(k, 0);
    for (auto& c : centres) c.setZero();
    for (int i = 0; i < n; ++i) {
      centres[assign[i]] += x.row(i).transpose();
      ++count[assign[i]];
    }
    for (int j = 0; j < k; ++j) {
      if (count[j] > 0) centres[j] /= count[j];
      else centres[j] = x.row(pick(rng)).transpose();
    }
    if (!changed && round > 0) break;
  }
  return assign;
}

int parameter_count(int n, int d) { return (n - 1) + n * d + n * d * (d + 1) / 2; }

}  // namespace

double log_likelihood(const Gmm& gmm, const Eigen::MatrixXd& samples) {
  const Eigen::MatrixXd ld = component_log_density(gmm, samples, false);
  double s = 0.0;
  for (Eigen::Index i = 0; i < ld.rows(); ++i) s += log_sum_exp(ld.row(i).transpose());
  return s;
}

EmResult fit_em(const Eigen::MatrixXd& x, int k, const EmOptions& opts) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  if (k < 1) throw RangeError("component count must be at least 1");
  if (d < 1) throw DimensionError("samples have no columns");
  if (n < 10 * d) throw DimensionError("EM needs at least 10 x dimension samples");
  if (!opts.blocks.empty() && static_cast<int>(opts.blocks.size()) != d)
    throw DimensionError("block structure does not match the sample dimension");

  EmResult res;
  Gmm& g = res.model;
  const Eigen::VectorXd overall_mean = x.colwise().mean().transpose();
  Eigen::MatrixXd overall_cov = sample_covariance(x, overall_mean);
  apply_blocks(overall_cov, opts.blocks);

  if (k == 1) {
    g.weights = {1.0};
    g.means = {overall_mean};
    g.covariances = {overall_cov};
    const double ll = log_likelihood(g, x) / n;
    res.log_likelihood = {ll};
    res.iterations = 1;
    res.converged = true;
    res.bic = -2.0 * ll * n + parameter_count(1, d) * std::log(static_cast<double>(n));
    return res;
  }

  std::mt19937_64 rng(opts.seed);
  const auto assign = kmeans_assign(x, k, rng);
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, k);
  for (int i = 0; i < n; ++i) resp(i, assign[i]) = 1.0;

  std::uniform_int_distribution<int> pick(0, n - 1);
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 1; it <= opts.max_iterations; ++it) {
    // M-step.
    g.weights.assign(k, 0.0);
    g.means.assign(k, Eigen::VectorXd::Zero(d));
    g.covariances.assign(k, Eigen::MatrixXd::Zero(d, d));
    for (int j = 0; j < k; ++j) {
      double nj = resp.col(j).sum();
      if (nj < 1e-8 * n || nj < 1e-300) {
        warn("empty GMM component reinitialised from a random sample");
        g.means[j] = x.row(pick(rng)).transpose();
        g.covariances[j] = overall_cov;
        g.weights[j] = 1.0 / n;
        continue;
      }
      g.weights[j] = nj / n;
      g.means[j] = (x.transpose() * resp.col(j)) / nj;
      const Eigen::MatrixXd c = x.rowwise() - g.means[j].transpose();
      g.covariances[j] = (c.transpose() * resp.col(j).asDiagonal() * c) / nj;
      g.covariances[j] = 0.5 * (g.covariances[j] + g.covariances[j].transpose());
      apply_blocks(g.covariances[j], opts.blocks);
      if (factor_covariance(g.covariances[j], false).ok == false) {
        const double eps = std::max(1e-8 * g.covariances[j].trace() / d, 1e-12);
        g.covariances[j] += eps * Eigen::MatrixXd::Identity(d, d);
        warn("singular GMM covariance regularised with eps*I");
      }
    }
    const double wsum = std::accumulate(g.weights.begin(), g.weights.end(), 0.0);
    for (auto& w : g.weights) w /= wsum;

    // E-step.
    const Eigen::MatrixXd ld = component_log_density(g, x, true);
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      const double lse = log_sum_exp(ld.row(i).transpose());
      ll += lse;
      resp.row(i) = (ld.row(i).array() - lse).exp();
    }
    ll /= n;
    res.log_likelihood.push_back(ll);
    res.iterations = it;
    if (std::isfinite(prev) && std::abs(ll - prev) <= opts.relative_tolerance * std::abs(prev)) {
      res.converged = true;
      break;
    }
    prev = ll;
  }
  res.bic = -2.0 * res.log_likelihood.back() * n + parameter_count(k, d) * std::log(static_cast<double>(n));
  return res;
}

EmResult fit_em_auto(const Eigen::MatrixXd& samples, int max_components, const EmOptions& opts) {
  EmResult best;
  bool have = false;
  for (int k = 1; k <= max_components; ++k) {
    EmResult r = fit_em(samples, k, opts);
    if (!have || r.bic < best.bic) {
      best = std::move(r);
      have = true;
    }
  }
  return best;
}

Sampler::Sampler(const Gmm& gmm) : dim_(gmm.dim()) {
  if (gmm.size() == 0) throw DimensionError("cannot sample an empty mixture");
  double acc = 0.0;
  for (int j = 0; j < gmm.size(); ++j) {
    acc += gmm.weights[j];
    cumulative_.push_back(acc);
    means_.push_back(gmm.means[j]);
    const Eigen::MatrixXd& cov = gmm.covariances[j];
    if (cov.cwiseAbs().maxCoeff() == 0.0) {
      factors_.push_back(Eigen::MatrixXd::Zero(dim_, dim_));
      continue;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() == Eigen::Success) {
      factors_.push_back(llt.matrixL());
      continue;
    }
    // PSD square root with clipped eigenvalues.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.eigenvalues().minCoeff() < -1e-10) warn("non-PSD covariance clipped for sampling");
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    factors_.push_back(es.eigenvectors() * root.asDiagonal());
  }
  cumulative_.back() = 1.0;
}

void Sampler::draw(std::mt19937_64& rng, Eigen::Ref<Eigen::VectorXd> out) const {
  std::uniform_real_distribution<double> ur(0.0, 1.0);
  const double r = ur(rng);
  size_t j = 0;
  while (j + 1 < cumulative_.size() && r >= cumulative_[j]) ++j;
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd z(dim_);
  for (int i = 0; i < dim_; ++i) z(i) = nd(rng);
  out = means_[j] + factors_[j] * z;
}

Eigen::MatrixXd sample(const Gmm& gmm, int n, std::mt19937_64& rng) {
  if (n < 1) throw RangeError("sample count must be at least 1");
  const Sampler s(gmm);
  Eigen::MatrixXd out(n, gmm.dim());
  Eigen::VectorXd row(gmm.dim());
  for (int i = 0; i < n; ++i) {
    s.draw(rng, row);
    out.row(i) = row.transpose();
  }
  return out;
}

Eigen::MatrixXd sample(const Gmm& gmm, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample(gmm, n, rng);
}

}  // namespace vppflex::uq
