#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "vpp_cases.hpp"
#include "vppflex/error.hpp"
#include "vppflex/log.hpp"
#include "vppflex/tcf.hpp"

using namespace vppflex;
using namespace fixtures;

namespace {

struct QuietWarnings {
  WarningHandler prev = set_warning_handler([](const std::string&) {});
  ~QuietWarnings() { set_warning_handler(prev); }
};

tcf::TcfEnvelope envelope3() {
  tcf::TcfEnvelope e;
  e.periods = 3;
  e.dt = 0.5;
  e.gamma = 0.9;
  e.p_min = {-1.0, -0.5, -0.8};
  e.p_max = {1.0, 0.7, 0.9};
  e.r_down = {-0.9, -1.1};
  e.r_up = {0.6, 1.2};
  e.e_min = {-0.4, -0.6, -0.7};
  e.e_max = {0.45, 0.5, 0.6};
  return e;
}

// Every n-subset of rows solved as equalities, kept when feasible.
std::vector<Eigen::VectorXd> brute_vertices(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const int n = static_cast<int>(A.cols()), m = static_cast<int>(A.rows());
  std::vector<Eigen::VectorXd> out;
  std::vector<int> idx(n);
  std::vector<bool> pick(m, false);
  std::fill(pick.begin(), pick.begin() + n, true);
  do {
    int k = 0;
    for (int r = 0; r < m; ++r)
      if (pick[r]) idx[k++] = r;
    Eigen::MatrixXd S(n, n);
    Eigen::VectorXd rhs(n);
    for (int i = 0; i < n; ++i) {
      S.row(i) = A.row(idx[i]);
      rhs(i) = b(idx[i]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
    if (lu.rank() < n) continue;
    const Eigen::VectorXd x = lu.solve(rhs);
    if (((A * x - b).array() > 1e-9).any()) continue;
    if (std::none_of(out.begin(), out.end(), [&](const Eigen::VectorXd& y) { return (y - x).norm() < 1e-8; }))
      out.push_back(x);
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return out;
}

// ESS behind a near-ideal tie with a constant load 0.1, two periods, dt 1.
cc::VppModel ess_toy() {
  auto u = unit("ess", DerKind::ESS, "b2", Connection::Wye, {0}, box(-1.0, 1.0, -0.5, 0.5));
  u.ess = {1.0, 0.0, 1.0, 0.5};
  std::vector<fleet::LoadSpec> loads{{"b2", 0, {0.1, 0.1}, 0.0}};
  return cc::build_vpp_model(two_bus({0.0, 1e-7}), {u}, loads, {}, {uq::Gmm::point_mass(Eigen::VectorXd::Zero(1))},
                             2, 1.0);
}

cc::VppModel pv_horizon() {
  std::vector<fleet::DerUnit> fl{unit("pv", DerKind::PV, "b2", Connection::Wye, {0}, box(0.0, 1.0, -0.3, 0.3))};
  std::vector<fleet::LoadSpec> loads{{"b2", 0, {0.2, 0.25, 0.15}, 0.2}};
  fleet::ForecastSeries fc;
  fc.pmax["pv"] = {{0.8}, {0.5}, {0.6}};
  return cc::build_vpp_model(two_bus({0.0, 1e-7}), fl, loads, fc, {uq::Gmm::point_mass(Eigen::VectorXd::Zero(2))}, 3,
                             1.0);
}

}  // namespace

TEST_CASE("vertex enumeration matches brute force") {
  const auto env = envelope3();
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  env.halfspaces(A, b);
  CHECK(A.rows() == 16);
  auto dd = tcf::enumerate_vertices(A, b);
  auto bf = brute_vertices(A, b);
  REQUIRE(dd.size() == bf.size());
  for (const auto& x : bf) {
    const bool found =
        std::any_of(dd.begin(), dd.end(), [&](const Eigen::VectorXd& y) { return (y - x).norm() < 1e-8; });
    CHECK(found);
  }

  // Random cuts of the unit cube in four dimensions.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd A4 = Eigen::MatrixXd::Zero(14, 4);
    Eigen::VectorXd b4(14);
    for (int i = 0; i < 4; ++i) {
      A4(2 * i, i) = 1.0;
      b4(2 * i) = 1.0;
      A4(2 * i + 1, i) = -1.0;
      b4(2 * i + 1) = 1.0;
    }
    for (int r = 8; r < 14; ++r) {
      for (int c = 0; c < 4; ++c) A4(r, c) = nd(rng);
      b4(r) = 0.5 + std::abs(nd(rng));
    }
    CHECK(tcf::enumerate_vertices(A4, b4).size() == brute_vertices(A4, b4).size());
  }

  Eigen::MatrixXd Ae(3, 1);
  Ae << 1.0, -1.0, 1.0;
  CHECK(tcf::enumerate_vertices(Ae, Eigen::Vector3d(1.0, 1.0, -2.0)).empty());
}

TEST_CASE("envelope halfspaces and membership") {
  const auto env = envelope3();
  CHECK_NOTHROW(env.validate());
  CHECK(env.contains(Eigen::Vector3d(0.1, 0.2, 0.0)));
  CHECK_FALSE(env.contains(Eigen::Vector3d(0.95, 0.1, 0.0)));  // energy after one period
  CHECK_FALSE(env.contains(Eigen::Vector3d(-0.2, 0.5, 0.0)));  // ramp up
  auto bad = env;
  bad.r_up.pop_back();
  CHECK_THROWS_AS(bad.validate(), DimensionError);
}

TEST_CASE("shrink pulls each bound pair towards its midpoint") {
  tcf::TcfEnvelope e;
  e.periods = 1;
  e.p_min = {0.0};
  e.p_max = {1.0};
  e.e_min = {-2.0};
  e.e_max = {2.0};
  const auto s = tcf::shrink(e, 0.9);
  CHECK(s.p_min[0] == doctest::Approx(0.1));
  CHECK(s.p_max[0] == doctest::Approx(0.9));
  CHECK(s.e_min[0] == doctest::Approx(-1.6));
  const auto same = tcf::shrink(e, 1.0);
  CHECK(same.p_min == e.p_min);
  CHECK(same.e_max == e.e_max);
  CHECK_THROWS_AS(tcf::shrink(e, 0.5), RangeError);
  CHECK_THROWS_AS(tcf::shrink(e, 1.2), RangeError);
  const auto only_p = tcf::shrink(e, tcf::ShrinkFactors{0.8, 1.0, 1.0});
  CHECK(only_p.p_max[0] == doctest::Approx(0.8));
  CHECK(only_p.e_max[0] == 2.0);
}

TEST_CASE("inflated single-period envelope violates by the inflation") {
  const auto m = four_bus_case();
  const auto env = tcf::init_envelope(m, 0.9);
  REQUIRE(env.periods == 1);
  const tcf::InnerProblem inner(m, 0.9);
  CHECK(inner.slack(Eigen::VectorXd::Constant(1, env.p_max[0])) <= 1e-7);
  CHECK(inner.slack(Eigen::VectorXd::Constant(1, env.p_min[0])) <= 1e-7);
  for (double d : {0.01, 0.05}) {
    auto big = env;
    big.p_max[0] += d;
    big.e_max[0] += env.dt * d;
    const auto v = tcf::max_violation(big, inner);
    CHECK(v.exact);
    CHECK(v.f == doctest::Approx(d).epsilon(1e-6));
    CHECK(v.worst(0) == doctest::Approx(env.p_max[0] + d));
  }
}

TEST_CASE("decoupled fleet converges at once") {
  const auto m = pv_horizon();
  const auto r = tcf::robust_modify(m, 0.9);
  CHECK(r.converged);
  CHECK(r.iterations == 1);
  CHECK(r.f_history.front() < 1e-6);
  CHECK(r.envelope.p_max[0] == doctest::Approx(0.6).epsilon(1e-4));
}

TEST_CASE("storage energy window bounds the converged envelope") {
  const auto m = ess_toy();
  const auto init = tcf::init_envelope(m, 0.9);
  CHECK(init.p_max[0] == doctest::Approx(0.9).epsilon(1e-5));
  CHECK(init.p_min[0] == doctest::Approx(-1.1).epsilon(1e-5));
  const tcf::InnerProblem inner(m, 0.9);
  CHECK(tcf::max_violation(init, inner).f > 0.1);

  const auto r = tcf::robust_modify(m, 0.9);
  REQUIRE(r.converged);
  CHECK(r.iterations > 1);
  for (size_t i = 1; i < r.f_history.size(); ++i) CHECK(r.f_history[i] <= r.f_history[i - 1] + 1e-9);
  for (size_t i = 1; i < r.history.size(); ++i)
    for (int t = 0; t < 2; ++t) {
      CHECK(r.history[i].p_max[t] <= r.history[i - 1].p_max[t]);
      CHECK(r.history[i].p_min[t] >= r.history[i - 1].p_min[t]);
    }
  // Cumulative PCC energy stays inside the ESS window shifted by the load.
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  r.envelope.halfspaces(A, b);
  for (const auto& v : tcf::enumerate_vertices(A, b)) {
    double e = 0.0;
    for (int t = 0; t < 2; ++t) {
      e += v(t);
      CHECK(e >= -0.5 - 0.1 * (t + 1) - 1e-4);
      CHECK(e <= 0.5 - 0.1 * (t + 1) + 1e-4);
    }
  }
}

TEST_CASE("interior samples never exceed the vertex maximum") {
  QuietWarnings quiet;
  const auto m = four_bus_case(0.04, 0.005, 4);
  const auto env = tcf::init_envelope(m, 0.9);
  const tcf::InnerProblem inner(m, 0.9);
  const auto v = tcf::max_violation(env, inner);
  CHECK(v.candidates >= 16);
  for (const auto& x : tcf::random_trajectories(env, 40, 7)) {
    CHECK(env.contains(x, 1e-9));
    CHECK(inner.slack(x) <= v.f + 1e-7);
  }
  const auto r = tcf::robust_modify(m, 0.9);
  CHECK(r.converged);
  CHECK(r.f_history.back() < 1e-4);
}

TEST_CASE("sampled extremes above the enumeration limit") {
  const auto m = four_bus_case(0.04, 0.005, 4);
  const auto env = tcf::init_envelope(m, 0.9);
  const tcf::InnerProblem inner(m, 0.9);
  tcf::ViolationOptions o;
  o.max_enumeration_periods = 2;
  o.random_extremes = 60;
  const auto lo = tcf::max_violation(env, inner, o);
  const auto ex = tcf::max_violation(env, inner);
  CHECK_FALSE(lo.exact);
  CHECK(lo.f <= ex.f + 1e-9);
  o.jobs = 3;
  CHECK(tcf::max_violation(env, inner, o).f == lo.f);
}

TEST_CASE("robust options are validated") {
  const auto m = pv_horizon();
  tcf::RobustOptions o;
  o.theta = 0.4;
  CHECK_THROWS_AS(tcf::robust_modify(m, 0.9, o), RangeError);
  o.theta = 0.9;
  o.eps = 0.0;
  CHECK_THROWS_AS(tcf::robust_modify(m, 0.9, o), RangeError);
}
