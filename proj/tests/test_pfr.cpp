#include <cmath>

#include "doctest.h"
#include "vpp_cases.hpp"
#include "vppflex/error.hpp"
#include "vppflex/log.hpp"
#include "vppflex/pfr.hpp"

using namespace vppflex;
using namespace vppflex::pfr;
using namespace fixtures;

namespace {

struct QuietWarnings {
  WarningHandler prev = set_warning_handler([](const std::string&) {});
  ~QuietWarnings() { set_warning_handler(prev); }
};

fleet::CapabilityPolygon circle(double s, int sides) {
  ChartParams c;
  c.shape = ChartShape::Circle;
  c.s_max = s;
  return fleet::polygonize_chart(c, sides);
}

// Ray from o along (cos phi, sin phi) against the polygon boundary.
Eigen::Vector2d ray_exit(const std::vector<Eigen::Vector2d>& poly, const Eigen::Vector2d& o, double phi) {
  const Eigen::Vector2d d(std::cos(phi), std::sin(phi));
  double best = INFINITY;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Eigen::Vector2d a = poly[i], b = poly[(i + 1) % poly.size()];
    Eigen::Matrix2d M;
    M << d, a - b;
    if (std::abs(M.determinant()) < 1e-14) continue;
    const Eigen::Vector2d ts = M.inverse() * (a - o);
    if (ts(0) > 0 && ts(1) >= -1e-12 && ts(1) <= 1 + 1e-12) best = std::min(best, ts(0));
  }
  return o + best * d;
}

}  // namespace

TEST_CASE("ray geometry") {
  const auto m = four_bus_case();
  const auto sw = sweep_pfr(m, 0, 0.8, 16);
  REQUIRE(sw.achievable);
  REQUIRE(sw.points.size() == 16);
  CHECK(sw.points[0].q == doctest::Approx(sw.anchor.q).epsilon(1e-9));
  CHECK(sw.points[0].p > sw.anchor.p);
  for (const auto& pt : sw.points) {
    CHECK(pt.p - sw.anchor.p == doctest::Approx(pt.r * std::cos(pt.phi)).scale(1.0).epsilon(1e-8));
    CHECK(pt.q - sw.anchor.q == doctest::Approx(pt.r * std::sin(pt.phi)).scale(1.0).epsilon(1e-8));
  }
  CHECK_THROWS_AS(sweep_pfr(m, 0, 0.8, 4), RangeError);
  CHECK_THROWS_AS(sweep_pfr(m, 0, 0.4, 16), RangeError);
}

TEST_CASE("ideal inverter sweeps its chart shifted by the load") {
  const auto chart = circle(0.5, 16);
  const auto m = one_bus_case(chart);
  auto verts = chart.vertices();
  const Eigen::Vector2d load(0.1, 0.1 * std::tan(0.3));
  for (auto& v : verts) v -= load;
  const auto sw = sweep_pfr(m, 0, 0.9, 32);
  REQUIRE(sw.achievable);
  CHECK(sw.anchor.p == doctest::Approx(-load(0)).epsilon(1e-6));
  CHECK(sw.anchor.q == doctest::Approx(-load(1)).epsilon(1e-6));
  const Eigen::Vector2d o(sw.anchor.p, sw.anchor.q);
  int vertex_hits = 0;
  for (const auto& pt : sw.points) {
    const Eigen::Vector2d ref = ray_exit(verts, o, pt.phi);
    CHECK((Eigen::Vector2d(pt.p, pt.q) - ref).norm() <= 1e-6);
    for (const auto& v : verts) vertex_hits += (Eigen::Vector2d(pt.p, pt.q) - v).norm() <= 1e-6;
  }
  CHECK(vertex_hits == 16);
}

TEST_CASE("higher confidence boundaries nest inside lower ones") {
  const auto m = four_bus_case();
  const auto anchor = find_anchor(m, 0, 0.99);
  REQUIRE(anchor);
  std::vector<double> prev;
  for (double g : default_gamma_grid()) {
    const auto sw = sweep_pfr(m, 0, g, *anchor, 32, 2);
    REQUIRE(sw.achievable);
    for (size_t k = 0; k < prev.size(); ++k) CHECK(sw.points[k].r <= prev[k] + 1e-9);
    prev.clear();
    for (const auto& p : sw.points) prev.push_back(p.r);
  }
}

TEST_CASE("without uncertainty every level shares one boundary") {
  const auto m = one_bus_case(circle(0.5, 12));
  const auto anchor = find_anchor(m, 0, 0.99);
  REQUIRE(anchor);
  const auto a = sweep_pfr(m, 0, 0.55, *anchor, 24);
  const auto b = sweep_pfr(m, 0, 0.99, *anchor, 24);
  for (size_t k = 0; k < a.points.size(); ++k) CHECK(a.points[k].r == doctest::Approx(b.points[k].r).epsilon(1e-9));
}

TEST_CASE("surface, confidence and polygons") {
  QuietWarnings quiet;
  const auto m = four_bus_case();
  const auto s = build_surface(m, 0);
  CHECK(s.model.pieces() == 16);
  CHECK(s.gammas.size() == default_gamma_grid().size());
  CHECK(s.points.size() >= 32);
  CHECK(s.points.size() <= 32 * s.gammas.size());
  CHECK(s.outside.size() == 32);
  CHECK(s.r2 > 0.9);

  // boundary points map back to their level
  int close = 0;
  for (const auto& p : s.points) close += std::abs(conf_at(s, p.p, p.q) - p.gamma) <= 2.0 * s.rmse;
  CHECK(close >= 0.95 * s.points.size());

  CHECK(conf_at(s, s.anchor.p + 100.0, s.anchor.q) == 0.0);
  CHECK(conf_at(s, s.anchor.p, s.anchor.q) >= 0.95);
  CHECK(conf_at(s, s.anchor.p, s.anchor.q) <= 1.0);

  const auto p8 = polygon_at(s, 0.8);
  CHECK(p8.A.rows() == 16);
  CHECK(p8.A.cols() == 2);
  CHECK(p8.b.size() == 16);
  CHECK_FALSE(p8.empty);

  double prev_area = INFINITY;
  std::vector<Eigen::Vector2d> prev_verts;
  for (double g : default_gamma_grid()) {
    const auto poly = polygon_at(s, g);
    if (poly.empty) break;
    const auto v = fleet::polygon_vertices(poly.A, poly.b);
    const double area = fleet::polygon_area(v);
    CHECK(area <= prev_area + 1e-12);
    prev_area = area;
    const auto lower = polygon_at(s, g - 0.02);
    for (const auto& x : v) CHECK(((lower.A * x - lower.b).array() <= 1e-9).all());
  }

  const auto top = polygon_at(s, std::min(0.999999, max_confidence(s) + 1e-3));
  if (max_confidence(s) + 1e-3 < 1.0) {
    CHECK(top.empty);
    CHECK(top.max_gamma == doctest::Approx(max_confidence(s)));
  }
}

TEST_CASE("surface build is deterministic across job counts") {
  QuietWarnings quiet;
  const auto m = four_bus_case();
  SurfaceOptions o;
  o.gammas = {0.6, 0.7, 0.8, 0.9};
  o.n_angles = 16;
  o.pieces = 6;
  o.jobs = 1;
  const auto a = build_surface(m, 0, o);
  o.jobs = 4;
  const auto b = build_surface(m, 0, o);
  CHECK(a.model.a == b.model.a);
  CHECK(a.model.b == b.model.b);
}
