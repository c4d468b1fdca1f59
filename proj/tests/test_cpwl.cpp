#include <cmath>
#include <random>

#include "doctest.h"
#include "vppflex/cpwl.hpp"
#include "vppflex/error.hpp"

using namespace vppflex::pwl;

namespace {

PwlModel make(Mode mode, std::initializer_list<std::initializer_list<double>> rows, bool clamp = false) {
  PwlModel m;
  m.mode = mode;
  m.clamp = clamp;
  const int k = static_cast<int>(rows.size());
  const int d = static_cast<int>(rows.begin()->size()) - 1;
  m.a.resize(k, d);
  m.b.resize(k);
  int r = 0;
  for (const auto& row : rows) {
    int c = 0;
    for (double v : row) {
      if (c < d) m.a(r, c) = v;
      else m.b(r) = v;
      ++c;
    }
    ++r;
  }
  return m;
}

Eigen::MatrixXd uniform_points(int n, int d, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = u(rng);
  return X;
}

Eigen::VectorXd scan(const PwlModel& m, const Eigen::MatrixXd& X) {
  Eigen::VectorXd y(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double v = m.mode == Mode::Min ? INFINITY : -INFINITY;
    for (int j = 0; j < m.pieces(); ++j) {
      double s = m.b(j);
      for (int c = 0; c < m.dim(); ++c) s += m.a(j, c) * X(i, c);
      v = m.mode == Mode::Min ? std::min(v, s) : std::max(v, s);
    }
    if (m.clamp && m.mode == Mode::Min) v = std::max(v, 0.0);
    y(i) = v;
  }
  return y;
}

}  // namespace

TEST_CASE("recovers a three-piece concave function") {
  const auto truth = make(Mode::Min, {{1.0, 0.2, 1.0}, {-0.8, 0.5, 1.2}, {0.1, -1.0, 0.9}});
  const auto X = uniform_points(400, 2, -1.0, 1.0, 3);
  const auto y = scan(truth, X);
  FitOptions o;
  o.restarts = 10;
  const auto res = fit_cpwl(X, y, 3, Mode::Min, false, o);
  CHECK(res.stats.sse <= 1e-10);
  CHECK(res.stats.r2 == doctest::Approx(1.0));
}

TEST_CASE("recovers a five-piece convex function") {
  SUBCASE("one input") {
    const auto truth = make(Mode::Max, {{-2.0, 0.0}, {-1.0, 0.5}, {0.0, 0.7}, {1.0, 0.5}, {2.5, -0.4}});
    const auto X = uniform_points(200, 1, -1.0, 1.0, 5);
    const auto res = fit_cpwl(X, scan(truth, X), 5, Mode::Max);
    CHECK(res.stats.sse <= 1e-10);
  }
  SUBCASE("two inputs") {
    const auto truth = make(Mode::Max, {{1.0, 0.0, 0.0}, {-1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, -1.0, 0.0}, {0.7, 0.7, -0.2}});
    const auto X = uniform_points(600, 2, -1.0, 1.0, 6);
    FitOptions o;
    o.restarts = 20;
    const auto res = fit_cpwl(X, scan(truth, X), 5, Mode::Max, false, o);
    CHECK(res.stats.sse <= 1e-10);
  }
}

TEST_CASE("single piece is the least-squares plane") {
  const auto X = uniform_points(50, 2, -1.0, 1.0, 7);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 0.1);
  Eigen::VectorXd y(50);
  for (int i = 0; i < 50; ++i) y(i) = 0.3 * X(i, 0) - 0.7 * X(i, 1) + 0.2 + nd(rng);
  const auto res = fit_cpwl(X, y, 1, Mode::Max);
  Eigen::MatrixXd A(50, 3);
  A << X, Eigen::VectorXd::Ones(50);
  const Eigen::VectorXd theta = (A.transpose() * A).inverse() * (A.transpose() * y);
  CHECK(res.model.a(0, 0) == doctest::Approx(theta(0)).epsilon(1e-10));
  CHECK(res.model.a(0, 1) == doctest::Approx(theta(1)).epsilon(1e-10));
  CHECK(res.model.b(0) == doctest::Approx(theta(2)).epsilon(1e-10));
  // reported statistics are the residual statistics
  const Eigen::VectorXd r = A * theta - y;
  const double sst = (y.array() - y.mean()).square().sum();
  CHECK(res.stats.rmse == doctest::Approx(std::sqrt(r.squaredNorm() / 50)).epsilon(1e-9));
  CHECK(res.stats.r2 == doctest::Approx(1.0 - r.squaredNorm() / sst).epsilon(1e-9));
}

TEST_CASE("exactly linear data collapses every piece onto the line") {
  const auto X = uniform_points(60, 1, 0.0, 2.0, 8);
  Eigen::VectorXd y = 0.4 * X.col(0).array() + 1.5;
  const auto res = fit_cpwl(X, y, 5, Mode::Max);
  CHECK(res.stats.sse <= 1e-10);
}

TEST_CASE("evaluation semantics") {
  const auto same = make(Mode::Min, {{0.5, -1.0, 2.0}, {0.5, -1.0, 2.0}});
  CHECK(same.eval(Eigen::Vector2d(1.0, 1.0)) == doctest::Approx(1.5));
  const auto neg = make(Mode::Min, {{0.0, 0.0, -1.0}, {1.0, 0.0, -0.5}}, true);
  CHECK(neg.eval(Eigen::Vector2d(0.1, 0.2)) == 0.0);
  CHECK(neg.raw(Eigen::Vector2d(0.1, 0.2)) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(neg.eval(Eigen::Vector3d(0, 0, 0)), vppflex::DimensionError);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd;
  for (Mode mode : {Mode::Min, Mode::Max}) {
    PwlModel m;
    m.mode = mode;
    m.clamp = true;
    m.a = Eigen::MatrixXd(7, 3);
    m.b = Eigen::VectorXd(7);
    for (int j = 0; j < 7; ++j) {
      for (int c = 0; c < 3; ++c) m.a(j, c) = nd(rng);
      m.b(j) = nd(rng);
    }
    const auto X = uniform_points(500, 3, -2.0, 2.0, 9);
    const auto ref = scan(m, X);
    for (int i = 0; i < 500; ++i) CHECK(m.eval(X.row(i).transpose()) == doctest::Approx(ref(i)).epsilon(1e-14));

    // midpoint inequality: concave before clamping in Min mode, convex in Max mode
    m.clamp = false;
    for (int i = 0; i + 1 < 500; i += 2) {
      const Eigen::VectorXd u = X.row(i).transpose(), v = X.row(i + 1).transpose();
      const double mid = m.eval(0.5 * (u + v)), avg = 0.5 * (m.eval(u) + m.eval(v));
      if (mode == Mode::Min) CHECK(mid >= avg - 1e-12);
      else CHECK(mid <= avg + 1e-12);
    }
  }
}

TEST_CASE("clamped fit ignores zero targets the model already clears") {
  const auto truth = make(Mode::Min, {{-1.0, 0.0, 1.0}, {1.0, 0.0, 1.0}, {0.0, -1.0, 1.0}, {0.0, 1.0, 1.0}}, true);
  const auto X = uniform_points(800, 2, -1.6, 1.6, 10);
  const auto y = scan(truth, X);
  FitOptions o;
  o.restarts = 10;
  const auto res = fit_cpwl(X, y, 4, Mode::Min, true, o);
  CHECK(res.stats.sse <= 1e-10);
  for (int i = 0; i < X.rows(); ++i)
    if (y(i) == 0.0) CHECK(res.model.eval(X.row(i).transpose()) <= 1e-6);
}

TEST_CASE("fit determinism and input checks") {
  const auto X = uniform_points(100, 2, -1.0, 1.0, 11);
  Eigen::VectorXd y = X.rowwise().norm();
  const auto a = fit_cpwl(X, y, 4, Mode::Max);
  const auto b = fit_cpwl(X, y, 4, Mode::Max);
  CHECK(a.model.a == b.model.a);
  CHECK(a.model.b == b.model.b);
  CHECK_THROWS_AS(fit_cpwl(X.topRows(5), y.head(5), 4, Mode::Max), vppflex::DimensionError);
  CHECK_THROWS_AS(fit_cpwl(X, y, 0, Mode::Max), vppflex::RangeError);
}

TEST_CASE("refinement never raises the error of a restart") {
  // Truncated pyramid with steep walls: many points on the walls, few on the top.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXd X(600, 2);
  Eigen::VectorXd y(600);
  for (int i = 0; i < 600; ++i) {
    X.row(i) << u(rng), u(rng);
    const double v = std::min({1.0, 8.0 * (0.8 - X(i, 0)), 8.0 * (0.8 + X(i, 0)), 8.0 * (0.8 - X(i, 1)),
                               0.5 * (1.6 + X(i, 1))});
    y(i) = std::max(0.0, v);
  }
  for (std::uint64_t seed : {1, 2, 3}) {
    FitOptions plain;
    plain.restarts = 1;
    plain.seed = seed;
    plain.refine_passes = 0;
    FitOptions refined = plain;
    refined.refine_passes = 20;
    const auto a = fit_cpwl(X, y, 5, Mode::Min, true, plain);
    const auto b = fit_cpwl(X, y, 5, Mode::Min, true, refined);
    CHECK(b.stats.sse <= a.stats.sse * (1.0 + 1e-12));
  }
  FitOptions opts;
  const auto f = fit_cpwl(X, y, 5, Mode::Min, true, opts);
  CHECK(f.stats.sse <= 1e-10);
}
