#pragma once

// Small networks built in code for unit tests. The bundled JSON cases under
// data/cases are exercised by the integration and acceptance suites.

#include <cmath>

#include "vppflex/netmodel.hpp"

namespace fixtures {

using vppflex::net::cplx;

inline std::array<cplx, 3> balanced_slack(double mag = 1.0) {
  const double a = 2.0 * M_PI / 3.0;
  return {std::polar(mag, 0.0), std::polar(mag, -a), std::polar(mag, a)};
}

// Single-phase two-bus line with series impedance z.
inline vppflex::net::MultiphaseNetwork two_bus(cplx z = {0.01, 0.1}) {
  using namespace vppflex::net;
  std::vector<Bus> buses{{"pcc", {Phase::A}, Connection::Wye, 0.9, 1.1},
                         {"b2", {Phase::A}, Connection::Wye, 0.9, 1.1}};
  Eigen::MatrixXcd y(1, 1);
  y(0, 0) = 1.0 / z;
  std::vector<Branch> branches{{"pcc", "b2", {Phase::A}, y, 2.0}};
  return MultiphaseNetwork(buses, branches, "pcc", balanced_slack(), 1.0, 12.47);
}

// Three-phase line impedance with mutual coupling.
inline Eigen::MatrixXcd line_admittance(double scale, int phases = 3) {
  Eigen::MatrixXcd z(3, 3);
  const cplx self{0.02, 0.06};
  const cplx mutual{0.006, 0.02};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) z(r, c) = (r == c ? self : mutual) * scale;
  Eigen::MatrixXcd zz = z.topLeftCorner(phases, phases);
  Eigen::MatrixXcd y = zz.inverse();
  return 0.5 * (y + y.transpose());
}

// Four buses: pcc(abc) - n1(abc, wye) - n2(abc, delta), n1 - n3(ab, wye).
inline vppflex::net::MultiphaseNetwork four_bus() {
  using namespace vppflex::net;
  std::vector<Bus> buses{{"pcc", {Phase::A, Phase::B, Phase::C}, Connection::Wye, 0.95, 1.05},
                         {"n1", {Phase::A, Phase::B, Phase::C}, Connection::Wye, 0.95, 1.05},
                         {"n2", {Phase::A, Phase::B, Phase::C}, Connection::Delta, 0.95, 1.05},
                         {"n3", {Phase::A, Phase::B}, Connection::Wye, 0.95, 1.05}};
  std::vector<Branch> branches{
      {"pcc", "n1", {Phase::A, Phase::B, Phase::C}, line_admittance(1.0), 1.5},
      {"n1", "n2", {Phase::A, Phase::B, Phase::C}, line_admittance(1.5), 1.0},
      {"n1", "n3", {Phase::A, Phase::B}, line_admittance(2.0, 2), 1.0}};
  return MultiphaseNetwork(buses, branches, "pcc", balanced_slack(), 1.0, 12.47);
}

}  // namespace fixtures
