#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "vpp_cases.hpp"
#include "vppflex/costagg.hpp"
#include "vppflex/error.hpp"
#include "vppflex/log.hpp"

using namespace vppflex;
using namespace fixtures;

namespace {

struct QuietWarnings {
  WarningHandler prev = set_warning_handler([](const std::string&) {});
  ~QuietWarnings() { set_warning_handler(prev); }
};

// One unit behind a near-ideal tie with a zero load.
cc::VppModel single(DerKind kind, const fleet::CostParams& c, const fleet::CapabilityPolygon& chart) {
  auto u = unit("g", kind, "b2", Connection::Wye, {0}, chart);
  u.cost = c;
  if (kind == DerKind::ESS) u.ess = {1.0, 0.0, 10.0, 5.0};
  std::vector<fleet::LoadSpec> loads{{"b2", 0, {0.0}, 0.0}};
  return cc::build_vpp_model(two_bus({0.0, 1e-4}), {u}, loads, {}, {uq::Gmm::point_mass(Eigen::VectorXd::Zero(1))},
                             1, 0.5);
}

cc::VppModel costed_desk() {
  auto m = four_bus_case();
  for (auto& u : m.fleet) {
    if (u.kind == DerKind::CHP) u.cost = {4.0, 0.6, 0.05, 0.0, 0.0};
    if (u.kind == DerKind::ESS) u.cost = {0.0, 0.0, 0.0, 0.08, 0.12};
  }
  return m;
}

}  // namespace

TEST_CASE("secant lines interpolate the parabola") {
  const fleet::CostParams c{0.5, 1.0, 0.2, 0.0, 0.0};
  const auto lines = cost::chp_secants(c, -0.2, 0.8, 10);
  REQUIRE(lines.size() == 10);
  auto f = [&](double p) { return c.a * p * p + c.b * p + c.c; };
  auto interp = [&](double p) {
    double v = -1e300;
    for (const auto& [s, b] : lines) v = std::max(v, s * p + b);
    return v;
  };
  for (int k = 0; k <= 10; ++k) CHECK(interp(-0.2 + 0.1 * k) == doctest::Approx(f(-0.2 + 0.1 * k)).epsilon(1e-12));
  for (int k = 0; k < 200; ++k) {
    const double p = -0.2 + k / 199.0;
    CHECK(interp(p) >= f(p) - 1e-12);
    CHECK(interp(p) - f(p) <= c.a * 0.01 / 4.0 + 1e-12);
  }
  CHECK_THROWS_AS(cost::chp_secants({-1.0, 0, 0, 0, 0}, 0.0, 1.0), RangeError);
}

TEST_CASE("zero marginal cost fleet gives a zero curve") {
  auto m = four_bus_case();
  for (auto& u : m.fleet)
    if (!fleet::is_renewable(u.kind)) u.cost = {};
  const auto s = cost::sample_cost_points(m, 0.9, 0, 21);
  CHECK(s.size() == 21);
  for (const auto& x : s) CHECK(std::abs(x.cost) <= 1e-9);
  const auto cv = cost::fit_cost_curve(s, 5);
  for (const auto& x : s) CHECK(std::abs(cost::eval_cost(cv, x.p)) <= 1e-9);
}

TEST_CASE("linear CHP cost is sampled exactly") {
  const auto m = single(DerKind::CHP, {0.0, 2.0, 0.3, 0.0, 0.0}, box(0.0, 1.0, -0.3, 0.3));
  const auto s = cost::sample_cost_points(m, 0.9, 0, 11);
  REQUIRE(s.size() == 11);
  CHECK(s.front().p == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(s.back().p == doctest::Approx(1.0).epsilon(1e-5));
  for (const auto& x : s) CHECK(x.cost == doctest::Approx(2.0 * x.p + 0.3).epsilon(1e-6));
  for (int m_pieces : {1, 3}) CHECK(cost::fit_cost_curve(s, m_pieces).stats.sse <= 1e-10);
}

TEST_CASE("quadratic CHP cost within the secant bound") {
  const double a = 0.5, b = 1.0, w = 1.0 / 10;
  const auto m = single(DerKind::CHP, {a, b, 0.0, 0.0, 0.0}, box(0.0, 1.0, -0.3, 0.3));
  const auto s = cost::sample_cost_points(m, 0.9, 0, 41);
  for (const auto& x : s) {
    CHECK(x.cost >= a * x.p * x.p + b * x.p - 1e-6);
    CHECK(x.cost <= a * x.p * x.p + b * x.p + a * w * w / 4.0 + 1e-6);
  }
  for (size_t i = 1; i < s.size(); ++i) CHECK(s[i].cost >= s[i - 1].cost - 1e-9);
}

TEST_CASE("storage cost is the larger of the two rates") {
  const double kc = 0.2, kd = 0.3, dt = 0.5;
  const auto m = single(DerKind::ESS, {0.0, 0.0, 0.0, kc, kd}, box(-0.5, 0.5, -0.2, 0.2));
  const auto s = cost::sample_cost_points(m, 0.9, 0, 21);
  for (const auto& x : s) {
    CHECK(x.cost >= -1e-12);
    CHECK(x.cost == doctest::Approx(std::max(kd * x.p * dt, -kc * x.p * dt)).epsilon(1e-6));
  }
}

TEST_CASE("desk case curve") {
  QuietWarnings quiet;
  const auto m = costed_desk();
  const auto curves = cost::build_cost_curves(m, 0.9, {41, 5, 1});
  REQUIRE(curves.size() == 1);
  const auto& cv = curves.front();
  CHECK(cv.model.pieces() == 5);
  CHECK(cv.stats.r2 >= 0.99);
  for (const auto& x : cv.samples) CHECK(std::abs(cost::eval_cost(cv, x.p) - x.cost) <= 4.0 * cv.stats.rmse + 1e-12);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ud(cv.p_min, cv.p_max);
  int bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const double x = ud(rng), y = ud(rng);
    bad += cost::eval_cost(cv, 0.5 * (x + y)) > 0.5 * (cost::eval_cost(cv, x) + cost::eval_cost(cv, y)) + 1e-12;
  }
  CHECK(bad == 0);
  CHECK_THROWS_AS(cost::eval_cost(cv, cv.p_max + 0.01), RangeError);
  CHECK_THROWS_AS(cost::eval_cost(cv, cv.p_min - 0.01), RangeError);
  CHECK_NOTHROW(cost::eval_cost(cv, cv.p_max));
}

TEST_CASE("fit preconditions") {
  std::vector<cost::CostSample> s{{0.0, 1.0}, {1.0, 2.0}};
  CHECK_THROWS_AS(cost::fit_cost_curve(s, 2), RangeError);
  CHECK_THROWS_AS(cost::sample_cost_points(costed_desk(), 0.9, 0, 1), RangeError);
}
