#include <cmath>

#include "doctest.h"
#include "vpp_cases.hpp"
#include "vppflex/error.hpp"
#include "vppflex/log.hpp"
#include "vppflex/mcoracle.hpp"

using namespace vppflex;
using namespace fixtures;

namespace {

struct QuietWarnings {
  WarningHandler prev = set_warning_handler([](const std::string&) {});
  ~QuietWarnings() { set_warning_handler(prev); }
};

constexpr double kPmax = 0.6, kLoad = 0.1, kPhi = 0.25, kSigma = 0.08;

// PV behind a near-ideal tie with a deterministic load: the feasible
// probability has a closed form.
cc::VppModel pv_case() {
  std::vector<fleet::DerUnit> fl{unit("pv", DerKind::PV, "b2", Connection::Wye, {0}, box(0.0, 1.0, -0.3, 0.3))};
  std::vector<fleet::LoadSpec> loads{{"b2", 0, {kLoad}, kPhi}};
  fleet::ForecastSeries fc;
  fc.pmax["pv"] = {{kPmax}};
  const uq::Gmm g = gaussian(Eigen::Vector2d::Zero(), Eigen::Vector2d(kSigma * kSigma, 0.0).asDiagonal());
  return cc::build_vpp_model(two_bus({0.0, 1e-7}), fl, loads, fc, {g}, 1, 1.0);
}

double pv_truth(double p, double q) {
  const double pv = p + kLoad, qv = q + kLoad * std::tan(kPhi);
  if (pv < 0.0 || pv > 1.0 || std::abs(qv) > 0.3) return 0.0;
  return uq::std_normal_cdf((kPmax - pv) / kSigma);
}

}  // namespace

TEST_CASE("grid axes are cell centres") {
  mc::GridSpec g{0.0, 1.0, -1.0, 1.0, 4, 2};
  const auto p = g.p_axis(), q = g.q_axis();
  CHECK(p == std::vector<double>{0.125, 0.375, 0.625, 0.875});
  CHECK(q == std::vector<double>{-0.5, 0.5});
}

TEST_CASE("grid matches the closed-form probability") {
  const auto m = pv_case();
  mc::GridSpec g{-0.3, 0.9, -0.45, 0.25, 12, 8};
  const int n = 400;
  const auto grid = mc::mc_confidence_grid(m, 0, g, n, 11);
  int within = 0, total = 0;
  for (int i = 0; i < g.n_p; ++i)
    for (int j = 0; j < g.n_q; ++j) {
      const double ref = pv_truth(grid.p_axis[i], grid.q_axis[j]);
      const double sd = std::sqrt(ref * (1.0 - ref) / n);
      within += std::abs(grid.conf(i, j) - ref) <= 3.0 * sd + 1e-12;
      ++total;
    }
  CHECK(within >= 0.99 * total);
}

TEST_CASE("zero uncertainty gives an indicator") {
  auto m = four_bus_case();
  m.gmms = {uq::Gmm::point_mass(Eigen::VectorXd::Zero(m.errors.size()))};
  mc::GridSpec g{-0.6, 1.4, -1.0, 1.0, 10, 10};
  const auto grid = mc::mc_confidence_grid(m, 0, g, 20, 3);
  bool binary = true;
  for (Eigen::Index k = 0; k < grid.conf.size(); ++k) binary = binary && (grid.conf(k) == 0.0 || grid.conf(k) == 1.0);
  CHECK(binary);
  CHECK(grid.conf.maxCoeff() == 1.0);
  CHECK(grid.conf.minCoeff() == 0.0);
}

TEST_CASE("grid is reproducible by seed and independent of job count") {
  const auto m = four_bus_case();
  mc::GridSpec g{-0.4, 1.2, -0.8, 0.8, 5, 5};
  const auto a = mc::mc_confidence_grid(m, 0, g, 40, 9, {false, 1});
  const auto b = mc::mc_confidence_grid(m, 0, g, 40, 9, {false, 3});
  const auto c = mc::mc_confidence_grid(m, 0, g, 40, 10, {false, 1});
  CHECK(a.conf == b.conf);
  CHECK(a.conf != c.conf);
}

TEST_CASE("cell variance shrinks with the scenario count") {
  const auto m = pv_case();
  // Single cell where the probability is one half.
  mc::GridSpec g{kPmax - kLoad - 1e-6, kPmax - kLoad + 1e-6, -0.01, 0.01, 1, 1};
  std::vector<double> var;
  for (int n : {100, 400, 1600}) {
    double s = 0.0, s2 = 0.0;
    const int reps = 24;
    for (int r = 0; r < reps; ++r) {
      const double v = mc::mc_confidence_grid(m, 0, g, n, 100 + r, {false, 1}).conf(0, 0);
      s += v;
      s2 += v * v;
    }
    var.push_back((s2 - s * s / reps) / (reps - 1));
  }
  CHECK(var[0] > var[1]);
  CHECK(var[1] > var[2]);
  CHECK(var[0] / var[2] > 4.0);
  CHECK(var[0] / var[2] < 64.0);
}

TEST_CASE("per-constraint violation rates") {
  const auto m = four_bus_case();
  const auto co = cc::build_affine_coeffs(m, 0);
  const auto det = cc::reformulate_chance(co, m.gmm(0), cc::ChanceSpec::from_gamma(0.9));
  int checked = 0;
  for (const auto& row : det.rows) {
    if (row.id.kind != cc::RowKind::VoltageUpper && row.id.kind != cc::RowKind::Capability) continue;
    if (row.coef.norm() < 1e-12) continue;
    const Eigen::VectorXd at = (row.rhs / row.coef.squaredNorm()) * row.coef;
    const double rate = mc::per_constraint_violation_rate(m, 0, at, row.id, 100000, 5 + checked);
    CHECK_MESSAGE(std::abs(rate - 0.1) <= 3.0 * std::sqrt(0.1 * 0.9 / 1e5), row.label);
    const Eigen::VectorXd deep = ((row.rhs - 0.5) / row.coef.squaredNorm()) * row.coef;
    CHECK(mc::per_constraint_violation_rate(m, 0, deep, row.id, 2000, 1) == 0.0);
    if (++checked == 4) break;
  }
  CHECK(checked == 4);

  auto det_model = four_bus_case();
  det_model.gmms = {uq::Gmm::point_mass(Eigen::VectorXd::Zero(det_model.errors.size()))};
  const Eigen::VectorXd u = Eigen::VectorXd::Random(det_model.decision.size());
  for (int r = 0; r < 5; ++r) {
    const double rate = mc::per_constraint_violation_rate(det_model, 0, u, {cc::RowKind::VoltageUpper, r}, 500, 2);
    CHECK((rate == 0.0 || rate == 1.0));
  }
  CHECK_THROWS_AS(mc::per_constraint_violation_rate(m, 0, Eigen::VectorXd::Zero(3), det.rows[0].id, 10, 1),
                  DimensionError);
}

TEST_CASE("surface compared with its own raster") {
  QuietWarnings quiet;
  const auto m = four_bus_case();
  pfr::SurfaceOptions o;
  o.gammas = {0.6, 0.7, 0.8, 0.9};
  o.n_angles = 16;
  o.pieces = 6;
  const auto s = pfr::build_surface(m, 0, o);
  const auto g = mc::grid_around(s, 15);
  mc::McGrid self;
  self.p_axis = g.p_axis();
  self.q_axis = g.q_axis();
  self.conf.resize(15, 15);
  for (int i = 0; i < 15; ++i)
    for (int j = 0; j < 15; ++j) self.conf(i, j) = pfr::conf_at(s, self.p_axis[i], self.q_axis[j]);
  const auto c = mc::compare_surfaces(s, self);
  CHECK(c.rmse == 0.0);
  CHECK(c.r2 == 1.0);
  CHECK(c.cells == 225);
}

TEST_CASE("nonlinear check only removes scenarios") {
  const auto m = four_bus_case();
  mc::GridSpec g{-0.4, 1.2, -0.8, 0.8, 4, 4};
  const auto lin = mc::mc_confidence_grid(m, 0, g, 30, 4, {false, 1});
  const auto nl = mc::mc_confidence_grid(m, 0, g, 30, 4, {true, 1});
  CHECK(((nl.conf - lin.conf).array() <= 1e-12).all());
}
