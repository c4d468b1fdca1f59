#include "vppflex/cpwl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "vppflex/error.hpp"

namespace vppflex::pwl {

double PwlModel::raw(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const int j = active_piece(x);
  return a.row(j).dot(x) + b(j);
}

int PwlModel::active_piece(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  int best = 0;
  double val = a.row(0).dot(x) + b(0);
  for (int j = 1; j < pieces(); ++j) {
    const double v = a.row(j).dot(x) + b(j);
    if (mode == Mode::Min ? v < val : v > val) {
      val = v;
      best = j;
    }
  }
  return best;
}

double PwlModel::eval(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != dim()) throw DimensionError("input dimension does not match the model");
  const double v = raw(x);
  return (clamp && mode == Mode::Min) ? std::max(v, 0.0) : v;
}

FitStats fit_stats(const PwlModel& model, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  FitStats s;
  const double mean = y.mean();
  double sst = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double r = model.eval(X.row(i).transpose()) - y(i);
    s.sse += r * r;
    sst += (y(i) - mean) * (y(i) - mean);
  }
  s.rmse = std::sqrt(s.sse / static_cast<double>(X.rows()));
  s.r2 = sst > 0.0 ? 1.0 - s.sse / sst : (s.sse == 0.0 ? 1.0 : 0.0);
  return s;
}

namespace {

// Least-squares plane through the listed points; ridge when rank deficient.
// Writes the fitted plane into piece j of m.
void fit_plane(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<int>& idx, double ridge,
               PwlModel& m, int j) {
  const int d = static_cast<int>(X.cols());
  Eigen::MatrixXd A(idx.size(), d + 1);
  Eigen::VectorXd rhs(idx.size());
  for (size_t r = 0; r < idx.size(); ++r) {
    A.row(static_cast<Eigen::Index>(r)) << X.row(idx[r]), 1.0;
    rhs(static_cast<Eigen::Index>(r)) = y(idx[r]);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  Eigen::VectorXd theta;
  if (qr.rank() == d + 1) {
    theta = qr.solve(rhs);
  } else {
    const Eigen::MatrixXd n = A.transpose() * A + ridge * Eigen::MatrixXd::Identity(d + 1, d + 1);
    theta = n.ldlt().solve(A.transpose() * rhs);
  }
  m.a.row(j) = theta.head(d).transpose();
  m.b(j) = theta(d);
}

std::vector<int> kmeans(const Eigen::MatrixXd& X, int k, std::mt19937_64& rng) {
  const int n = static_cast<int>(X.rows());
  // Standardize so axes with different units weigh equally.
  Eigen::RowVectorXd mu = X.colwise().mean();
  Eigen::RowVectorXd sd = ((X.rowwise() - mu).array().square().colwise().sum() / n).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (!(sd(j) > 0.0)) sd(j) = 1.0;
  const Eigen::MatrixXd Z = (X.rowwise() - mu).array().rowwise() / sd.array();

  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<Eigen::RowVectorXd> c{Z.row(pick(rng))};
  Eigen::VectorXd dist(n);
  while (static_cast<int>(c.size()) < k) {
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& cc : c) best = std::min(best, (Z.row(i) - cc).squaredNorm());
      dist(i) = best;
    }
    const double tot = dist.sum();
    int chosen = pick(rng);
    if (tot > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, tot)(rng);
      for (int i = 0; i < n; ++i) {
        r -= dist(i);
        if (r <= 0.0) {
          chosen = i;
          break;
        }
      }
    }
    c.push_back(Z.row(chosen));
  }
  std::vector<int> as(n, -1);
  for (int round = 0; round < 50; ++round) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int bj = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double dd = (Z.row(i) - c[j]).squaredNorm();
        if (dd < bd) {
          bd = dd;
          bj = j;
        }
      }
      changed = changed || as[i] != bj;
      as[i] = bj;
    }
    if (!changed) break;
    std::vector<int> cnt(k, 0);
    for (auto& cc : c) cc.setZero();
    for (int i = 0; i < n; ++i) {
      c[as[i]] += Z.row(i);
      ++cnt[as[i]];
    }
    for (int j = 0; j < k; ++j) c[j] = cnt[j] > 0 ? Eigen::RowVectorXd(c[j] / cnt[j]) : Eigen::RowVectorXd(Z.row(pick(rng)));
  }
  return as;
}

struct Fitter {
  const Eigen::MatrixXd& X;
  const Eigen::VectorXd& y;
  Mode mode;
  bool clamp;
  double ridge;
  int min_points;

  double sse(const PwlModel& m) const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double r = m.eval(X.row(i).transpose()) - y(i);
      s += r * r;
    }
    return s;
  }

  // Points that pull on a piece: positive targets always, zero targets only
  // while the clamped model predicts above zero there.
  bool counts(const PwlModel& m, int i) const {
    if (!clamp || y(i) > 0.0) return true;
    return m.raw(X.row(i).transpose()) > 0.0;
  }

  void reseed(PwlModel& m, int j, std::vector<int>& used) const {
    // Neighbourhood of the worst-fit point.
    const int n = static_cast<int>(X.rows());
    int worst = 0;
    double wr = -1.0;
    for (int i = 0; i < n; ++i) {
      if (!counts(m, i)) continue;
      const double r = std::abs(m.eval(X.row(i).transpose()) - y(i));
      if (r > wr && std::find(used.begin(), used.end(), i) == used.end()) {
        wr = r;
        worst = i;
      }
    }
    used.push_back(worst);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    const Eigen::RowVectorXd c = X.row(worst);
    std::partial_sort(order.begin(), order.begin() + std::min(n, min_points), order.end(), [&](int p, int q) {
      return (X.row(p) - c).squaredNorm() < (X.row(q) - c).squaredNorm();
    });
    order.resize(std::min(n, min_points));
    fit_plane(X, y, order, ridge, m, j);
  }

  // Alternates assignment and per-piece least squares from m; returns the
  // best model seen.
  FitResult alternate(PwlModel m, int max_rounds) const {
    const int n = static_cast<int>(X.rows());
    const int d = static_cast<int>(X.cols());
    const int m_pieces = m.pieces();
    FitResult best{m, {}, 0};
    double best_sse = sse(m);
    std::vector<int> assign(n, -1), used;
    for (int round = 1; round <= max_rounds; ++round) {
      bool changed = false;
      std::vector<std::vector<int>> g(m_pieces);
      for (int i = 0; i < n; ++i) {
        const int j = counts(m, i) ? m.active_piece(X.row(i).transpose()) : -1;
        changed = changed || j != assign[i];
        assign[i] = j;
        if (j >= 0) g[j].push_back(i);
      }
      if (!changed) break;
      used.clear();
      for (int j = 0; j < m_pieces; ++j) {
        if (static_cast<int>(g[j].size()) < d + 1) {
          reseed(m, j, used);
          continue;
        }
        fit_plane(X, y, g[j], ridge, m, j);
      }
      const double s = sse(m);
      if (s < best_sse) {
        best_sse = s;
        best.model = m;
        best.rounds = round;
      }
    }
    best.stats.sse = best_sse;
    return best;
  }

  // Piece j switched off: never active.
  void disable(PwlModel& m, int j) const {
    m.a.row(j).setZero();
    m.b(j) = mode == Mode::Min ? std::numeric_limits<double>::max() : std::numeric_limits<double>::lowest();
  }

  // Local search: move the piece whose removal costs least to the worst-fit
  // region and re-alternate; keep the move while SSE drops.
  FitResult refine(FitResult cur, int max_rounds, int passes) const {
    const int m_pieces = cur.model.pieces();
    if (m_pieces < 2) return cur;
    for (int pass = 0; pass < passes; ++pass) {
      int cheapest = -1;
      double cheapest_sse = std::numeric_limits<double>::infinity();
      for (int j = 0; j < m_pieces; ++j) {
        PwlModel t = cur.model;
        disable(t, j);
        const double s = sse(t);
        if (s < cheapest_sse) {
          cheapest_sse = s;
          cheapest = j;
        }
      }
      PwlModel t = cur.model;
      disable(t, cheapest);
      std::vector<int> used;
      reseed(t, cheapest, used);
      FitResult next = alternate(t, max_rounds);
      if (!(next.stats.sse < cur.stats.sse * (1.0 - 1e-9))) break;
      cur = std::move(next);
    }
    return cur;
  }

  // Grows the model one piece at a time, each new piece seeded at the
  // worst-fit region.
  FitResult grow(int m_pieces, int max_rounds, int passes) const {
    const int n = static_cast<int>(X.rows());
    const int d = static_cast<int>(X.cols());
    PwlModel m;
    m.mode = mode;
    m.clamp = clamp;
    m.a = Eigen::MatrixXd::Zero(1, d);
    m.b = Eigen::VectorXd::Zero(1);
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    fit_plane(X, y, all, ridge, m, 0);
    FitResult cur = alternate(m, max_rounds);
    for (int k = 1; k < m_pieces; ++k) {
      PwlModel next = cur.model;
      next.a.conservativeResize(k + 1, d);
      next.b.conservativeResize(k + 1);
      disable(next, k);
      std::vector<int> used;
      reseed(next, k, used);
      cur = refine(alternate(next, max_rounds), max_rounds, passes);
    }
    return cur;
  }

  FitResult run(int m_pieces, std::mt19937_64& rng, int max_rounds) const {
    const int n = static_cast<int>(X.rows());
    const int d = static_cast<int>(X.cols());
    PwlModel m;
    m.mode = mode;
    m.clamp = clamp;
    m.a = Eigen::MatrixXd::Zero(m_pieces, d);
    m.b = Eigen::VectorXd::Zero(m_pieces);

    std::vector<int> fit_idx;
    for (int i = 0; i < n; ++i)
      if (!clamp || y(i) > 0.0) fit_idx.push_back(i);
    if (static_cast<int>(fit_idx.size()) < m_pieces * (d + 1)) {
      fit_idx.resize(n);
      std::iota(fit_idx.begin(), fit_idx.end(), 0);
    }
    Eigen::MatrixXd Xf(fit_idx.size(), d);
    for (size_t r = 0; r < fit_idx.size(); ++r) Xf.row(static_cast<Eigen::Index>(r)) = X.row(fit_idx[r]);
    std::vector<std::vector<int>> groups(m_pieces);
    const auto part = kmeans(Xf, m_pieces, rng);
    for (size_t r = 0; r < part.size(); ++r) groups[part[r]].push_back(fit_idx[r]);
    std::vector<int> used;
    for (int j = 0; j < m_pieces; ++j) {
      if (static_cast<int>(groups[j].size()) < d + 1) {
        reseed(m, j, used);
        continue;
      }
      fit_plane(X, y, groups[j], ridge, m, j);
    }
    return alternate(m, max_rounds);
  }
};

}  // namespace

FitResult fit_cpwl(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int m, Mode mode, bool clamp,
                   const FitOptions& opts) {
  if (m < 1) throw RangeError("piece count must be at least 1");
  if (X.rows() != y.size()) throw DimensionError("inputs and targets differ in length");
  const int d = static_cast<int>(X.cols());
  if (X.rows() < static_cast<Eigen::Index>(m) * (d + 1))
    throw DimensionError("piecewise-linear fit needs at least m * (dim + 1) points");
  if (mode == Mode::Max) clamp = false;
  Fitter f{X, y, mode, clamp, opts.ridge,
           std::max(2 * (d + 1), static_cast<int>(X.rows()) / std::max(1, 2 * m))};
  FitResult best;
  double best_sse = std::numeric_limits<double>::infinity();
  {
    FitResult res = f.grow(m, opts.max_rounds, opts.refine_passes);
    best_sse = res.stats.sse;
    best = std::move(res);
  }
  for (int r = 0; r < std::max(1, opts.restarts); ++r) {
    std::mt19937_64 rng(opts.seed + 7919ULL * static_cast<std::uint64_t>(r));
    FitResult res = f.refine(f.run(m, rng, opts.max_rounds), opts.max_rounds, opts.refine_passes);
    if (res.stats.sse < best_sse) {
      best_sse = res.stats.sse;
      best = std::move(res);
    }
  }
  best.stats = fit_stats(best.model, X, y);
  return best;
}

}  // namespace vppflex::pwl
