#include <cmath>
#include <random>

#include "doctest.h"
#include "vpp_cases.hpp"
#include "vppflex/ccopf.hpp"
#include "vppflex/error.hpp"

using namespace vppflex;
using namespace vppflex::cc;
using fleet::ChartParams;
using fleet::ChartShape;
using fleet::DerKind;
using net::Connection;
using namespace fixtures;

namespace {

double max_export(const VppModel& m, const DeterministicConstraintSet& det) {
  const auto res = solve_ccopf(m, 0, det, {lp::Sense::Maximize, 1.0, 0.0});
  REQUIRE(res.status == lp::Status::Optimal);
  return res.p_pcc;
}

}  // namespace

TEST_CASE("affine coefficients reproduce the linear network model") {
  const auto m = two_bus_case(two_bus_gaussian());
  const auto co = build_affine_coeffs(m, 0);
  REQUIRE(co.voltage.size() == 1);
  const auto& r = co.voltage[0];
  // zero decision and zero error: c is the linear voltage at the bare profile
  const Eigen::VectorXd x0 = m.injection.x0.col(0);
  CHECK(r.c == doctest::Approx((m.linear.K * x0 + m.linear.b)(0)).epsilon(1e-12));

  // load error enters as -e on P and -e tan(phi) on Q
  const int ps = m.linear.ordering.p_wye(1, net::Phase::A), qs = m.linear.ordering.q_wye(1, net::Phase::A);
  const double expect = -m.linear.K(0, ps) - std::tan(0.2) * m.linear.K(0, qs);
  CHECK(r.a(m.errors.load(0)) == doctest::Approx(expect).epsilon(1e-12));
  // renewable error does not touch the network
  CHECK(r.a(m.errors.renewable(0, 0)) == 0.0);
  CHECK(r.b(m.decision.p(0, 0)) == doctest::Approx(m.linear.K(0, ps)).epsilon(1e-12));

  CHECK(co.has_renewables);
  CHECK(co.a_p(m.errors.renewable(0, 0)) == 1.0);
  CHECK(co.a_p(m.errors.load(0)) == -1.0);
  CHECK(co.b_p(m.decision.p(0, 0)) == 1.0);
  CHECK(co.b_p(m.decision.q(0, 0)) == 0.0);
  CHECK(co.c_p1 == doctest::Approx(0.8 - 0.2));
  CHECK(co.c_p2 == doctest::Approx(-0.2));
}

TEST_CASE("quantile offsets") {
  SUBCASE("degenerate error gives the shifted mean") {
    const Eigen::Vector2d mu(0.03, -0.01);
    const auto m = two_bus_case(uq::Gmm::point_mass(mu));
    const auto co = build_affine_coeffs(m, 0);
    const auto det = reformulate_chance(co, m.gmm(0), ChanceSpec::from_gamma(0.9));
    for (const auto& row : det.rows) {
      const Eigen::VectorXd& a = row.id.kind == RowKind::Capability ? co.a_p
                                 : (row.id.kind == RowKind::VoltageUpper || row.id.kind == RowKind::VoltageLower)
                                     ? co.voltage[row.id.index].a
                                     : co.current[row.id.index].a;
      CHECK(row.quantile == doctest::Approx(a.dot(mu)).epsilon(1e-12));
    }
  }
  SUBCASE("gaussian error gives the normal offset") {
    const auto m = two_bus_case(two_bus_gaussian());
    const auto co = build_affine_coeffs(m, 0);
    const auto det = reformulate_chance(co, m.gmm(0), ChanceSpec::from_gamma(0.95));
    const Eigen::MatrixXd S = m.gmm(0).covariances[0];
    const double z = 1.6448536269514722;
    for (const auto& row : det.rows) {
      if (row.id.kind == RowKind::VoltageUpper) {
        const auto& r = co.voltage[row.id.index];
        const double q = z * std::sqrt(r.a.dot(S * r.a));
        CHECK(row.quantile == doctest::Approx(q).epsilon(1e-9));
        CHECK(row.rhs == doctest::Approx(r.upper - r.c - q).epsilon(1e-9));
      } else if (row.id.kind == RowKind::VoltageLower) {
        const auto& r = co.voltage[row.id.index];
        CHECK(row.quantile == doctest::Approx(-z * std::sqrt(r.a.dot(S * r.a))).epsilon(1e-9));
      } else if (row.id.kind == RowKind::Capability) {
        CHECK(row.quantile == doctest::Approx(-z * std::sqrt(0.05 * 0.05 + 0.01 * 0.01)).epsilon(1e-9));
        CHECK(row.rhs == doctest::Approx(0.8 + row.quantile).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("right-hand sides tighten as the confidence grows") {
  const auto m = four_bus_case();
  const auto co = build_affine_coeffs(m, 0);
  std::vector<DeterministicConstraintSet> sets;
  for (double g : {0.55, 0.7, 0.85, 0.95, 0.99}) sets.push_back(reformulate_chance(co, m.gmm(0), ChanceSpec::from_gamma(g)));
  for (size_t s = 1; s < sets.size(); ++s) {
    REQUIRE(sets[s].rows.size() == sets[0].rows.size());
    for (size_t i = 0; i < sets[s].rows.size(); ++i) {
      const auto& lo = sets[s - 1].rows[i];
      const auto& hi = sets[s].rows[i];
      if (hi.upper) CHECK(hi.rhs <= lo.rhs + 1e-12);
      else CHECK(hi.rhs >= lo.rhs - 1e-12);
    }
  }
}

TEST_CASE("one-unit maximum export by hand") {
  const auto m = two_bus_case(two_bus_gaussian());
  const auto co = build_affine_coeffs(m, 0);
  RowFilter only_cap{false, false, true};
  const auto det = reformulate_chance(co, m.gmm(0), ChanceSpec::from_gamma(0.95), only_cap);
  REQUIRE(det.rows.size() == 1);
  const auto res = solve_ccopf(m, 0, det, {lp::Sense::Maximize, 1.0, 0.0});
  REQUIRE(res.status == lp::Status::Optimal);
  const double q = -1.6448536269514722 * std::sqrt(0.05 * 0.05 + 0.01 * 0.01);
  CHECK(res.u(m.decision.p(0, 0)) == doctest::Approx(0.8 + q).epsilon(1e-9));
  // reported PCC values follow the linear model
  const auto [p, qq] = pcc_value(m, 0, res.u);
  CHECK(res.p_pcc == doctest::Approx(p));
  CHECK(res.q_pcc == doctest::Approx(qq));
  CHECK(res.objective == doctest::Approx(p).epsilon(1e-9));
}

TEST_CASE("maximum export shrinks with the confidence level") {
  const auto m = four_bus_case();
  const auto co = build_affine_coeffs(m, 0);
  double prev = INFINITY;
  for (double g : {0.55, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99}) {
    const double p = max_export(m, reformulate_chance(co, m.gmm(0), ChanceSpec::from_gamma(g)));
    CHECK(p <= prev + 1e-9);
    prev = p;
  }
}

TEST_CASE("infeasible or invalid requests") {
  auto bad = ChanceSpec::from_gamma(0.9);
  bad.alpha_p = 0.0;
  CHECK_THROWS_AS(bad.validate(), RangeError);
  CHECK_THROWS_AS(ChanceSpec::from_gamma(0.3), RangeError);

  // Voltage floor above anything reachable.
  const auto m = two_bus_case(two_bus_gaussian());
  auto co = build_affine_coeffs(m, 0);
  co.voltage[0].lower = 1.5;
  const auto det = reformulate_chance(co, m.gmm(0), ChanceSpec::from_gamma(0.9));
  CHECK(solve_ccopf(m, 0, det, {lp::Sense::Maximize, 1.0, 0.0}).status == lp::Status::Infeasible);

  const uq::Gmm wrong = gaussian(Eigen::Vector3d::Zero(), Eigen::Matrix3d::Identity());
  CHECK_THROWS_AS(two_bus_case(wrong), DimensionError);
}

TEST_CASE("deterministic rows hold with the stated probability") {
  const auto m = four_bus_case();
  const auto co = build_affine_coeffs(m, 0);
  const int n = 100000;
  const Eigen::MatrixXd S = uq::sample(m.gmm(0), n, std::uint64_t{21});
  for (double gamma : {0.8, 0.95}) {
    const auto det = reformulate_chance(co, m.gmm(0), ChanceSpec::from_gamma(gamma));
    int checked = 0;
    for (const auto& row : det.rows) {
      const Eigen::VectorXd* a = nullptr;
      double c = 0.0, limit = 0.0;
      switch (row.id.kind) {
        case RowKind::VoltageUpper: a = &co.voltage[row.id.index].a; c = co.voltage[row.id.index].c; limit = co.voltage[row.id.index].upper; break;
        case RowKind::VoltageLower: a = &co.voltage[row.id.index].a; c = co.voltage[row.id.index].c; limit = co.voltage[row.id.index].lower; break;
        case RowKind::CurrentUpper: a = &co.current[row.id.index].a; c = co.current[row.id.index].c; limit = co.current[row.id.index].upper; break;
        case RowKind::CurrentLower: a = &co.current[row.id.index].a; c = co.current[row.id.index].c; limit = co.current[row.id.index].lower; break;
        case RowKind::Capability: a = &co.a_p; break;
      }
      if (a->norm() < 1e-9 || row.coef.norm() < 1e-12) continue;
      // Drive the deterministic row to equality.
      const Eigen::VectorXd u = (row.rhs / row.coef.squaredNorm()) * row.coef;
      const Eigen::VectorXd ae = S * *a;
      int viol = 0;
      for (int i = 0; i < n; ++i) {
        if (row.id.kind == RowKind::Capability) {
          viol += co.b_p.dot(u) - co.c_p1 + co.c_p2 > ae(i);
        } else {
          const double v = ae(i) + row.coef.dot(u) + c;
          viol += row.upper ? v > limit : v < limit;
        }
      }
      const double rate = static_cast<double>(viol) / n;
      const double alpha = 1.0 - gamma;
      CHECK_MESSAGE(std::abs(rate - alpha) <= 4.0 * std::sqrt(alpha * (1.0 - alpha) / n), row.label);
      ++checked;
    }
    CHECK(checked > 10);
  }
}
