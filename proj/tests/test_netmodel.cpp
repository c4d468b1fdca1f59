#include <cmath>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "vppflex/error.hpp"
#include "vppflex/netmodel.hpp"

using namespace vppflex::net;

namespace {

Injections four_bus_base(const InjectionOrdering& ord) {
  Injections inj = Injections::zero(ord);
  for (size_t k = 0; k < inj.wye.size(); ++k) inj.wye[k] = cplx{-0.12 - 0.01 * k, -0.04};
  for (size_t k = 0; k < inj.delta.size(); ++k) inj.delta[k] = cplx{-0.08, -0.03 + 0.01 * k};
  return inj;
}

}  // namespace

TEST_CASE("zero injections reproduce the no-load profile") {
  const auto net = fixtures::four_bus();
  const InjectionOrdering ord(net);
  const auto st = solve_load_flow(net, ord, Injections::zero(ord));
  CHECK(st.branch_current.cwiseAbs().maxCoeff() < 1e-12);
  // No shunts: every node sits at its phase's slack voltage.
  for (int n = 0; n < net.num_nodes(); ++n) {
    const cplx expect = net.slack_voltage()[static_cast<int>(net.node_phase(n))];
    CHECK(std::abs(st.voltage(n) - expect) < 1e-12);
  }
  CHECK(std::abs(st.s0) < 1e-12);
}

TEST_CASE("two-bus voltage matches the closed-form quadratic") {
  const cplx z{0.01, 0.1};
  const auto net = fixtures::two_bus(z);
  const InjectionOrdering ord(net);
  Injections inj = Injections::zero(ord);
  const double p = 0.1, q = 0.05;  // consumed
  inj.wye[0] = cplx{-p, -q};
  const auto st = solve_load_flow(net, ord, inj);
  // |V2|^4 + (2(RP + XQ) - |V1|^2)|V2|^2 + |z|^2 |S|^2 = 0, high-voltage root.
  const double beta = 2.0 * (z.real() * p + z.imag() * q) - 1.0;
  const double gamma = std::norm(z) * (p * p + q * q);
  const double v2sq = (-beta + std::sqrt(beta * beta - 4.0 * gamma)) / 2.0;
  CHECK(std::abs(std::abs(st.voltage(1)) - std::sqrt(v2sq)) < 1e-9);
  CHECK(st.residual <= 1e-9);
  // Power balance: PCC supplies the load plus series losses.
  const double loss = std::norm(st.branch_current(0)) * z.real();
  CHECK(st.s0.real() == doctest::Approx(p + loss).epsilon(1e-9));
}

TEST_CASE("linear model is exact at the base point and affine at zero") {
  const auto net = fixtures::four_bus();
  const InjectionOrdering ord(net);
  const auto base = four_bus_base(ord);
  const auto model = linearize(net, base);
  const auto ls = model.eval_state(model.base_x);
  const auto nl = nonlinear_state(net, model, model.base_x);
  CHECK((ls.voltage - nl.voltage).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((ls.current - nl.current).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(ls.p_pcc - nl.p_pcc) < 1e-12);
  CHECK(std::abs(ls.q_pcc - nl.q_pcc) < 1e-12);

  const auto z = model.eval_state(Eigen::VectorXd::Zero(ord.size()));
  CHECK((z.voltage - model.b).norm() == 0.0);
  CHECK((z.current - model.d).norm() == 0.0);
  CHECK(z.p_pcc == model.g_const);
  CHECK(z.q_pcc == model.l);
}

TEST_CASE("eval_state equals an independent matrix-vector product and is affine") {
  const auto net = fixtures::four_bus();
  const InjectionOrdering ord(net);
  const auto model = linearize(net, four_bus_base(ord));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd x1(ord.size()), x2(ord.size());
    for (int i = 0; i < ord.size(); ++i) {
      x1(i) = u(rng);
      x2(i) = u(rng);
    }
    const auto s = model.eval_state(x1);
    for (Eigen::Index r = 0; r < model.K.rows(); ++r) {
      double acc = model.b(r);
      for (Eigen::Index c = 0; c < model.K.cols(); ++c) acc += model.K(r, c) * x1(c);
      CHECK(std::abs(s.voltage(r) - acc) < 1e-13);
    }
    const double lam = 0.37;
    const auto mix = model.eval_state(lam * x1 + (1.0 - lam) * x2);
    const auto s2 = model.eval_state(x2);
    CHECK((mix.voltage - (lam * s.voltage + (1.0 - lam) * s2.voltage)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((mix.current - (lam * s.current + (1.0 - lam) * s2.current)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(mix.p_pcc - (lam * s.p_pcc + (1.0 - lam) * s2.p_pcc)) < 1e-12);
  }
}

TEST_CASE("two-bus voltage sensitivity matches central finite differences") {
  const auto net = fixtures::two_bus();
  const InjectionOrdering ord(net);
  Injections base = Injections::zero(ord);
  base.wye[0] = cplx{-0.1, -0.05};
  const auto model = linearize(net, base);
  auto vmag = [&](double dp, double dq) {
    Injections inj = base;
    inj.wye[0] += cplx{dp, dq};
    return std::abs(solve_load_flow(net, ord, inj).voltage(1));
  };
  const double hstep = 1e-5;
  const double fd_p = (vmag(hstep, 0) - vmag(-hstep, 0)) / (2 * hstep);
  const double fd_q = (vmag(0, hstep) - vmag(0, -hstep)) / (2 * hstep);
  CHECK(std::abs(model.K(0, ord.p_wye(1, Phase::A)) - fd_p) < 1e-4);
  CHECK(std::abs(model.K(0, ord.q_wye(1, Phase::A)) - fd_q) < 1e-4);
}

TEST_CASE("finite differences agree on the multiphase delta network") {
  const auto net = fixtures::four_bus();
  const InjectionOrdering ord(net);
  const auto base = four_bus_base(ord);
  const auto model = linearize(net, base);
  const double hstep = 1e-5;
  for (int col = 0; col < ord.size(); ++col) {
    Eigen::VectorXd xp = model.base_x, xm = model.base_x;
    xp(col) += hstep;
    xm(col) -= hstep;
    const auto sp = nonlinear_state(net, model, xp);
    const auto sm = nonlinear_state(net, model, xm);
    const Eigen::VectorXd fd = (sp.voltage - sm.voltage) / (2 * hstep);
    CHECK((model.K.col(col) - fd).cwiseAbs().maxCoeff() < 1e-6);
    const Eigen::VectorXd fdi = (sp.current - sm.current) / (2 * hstep);
    CHECK((model.J.col(col) - fdi).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(model.m(col) - (sp.p_pcc - sm.p_pcc) / (2 * hstep)) < 1e-6);
    CHECK(std::abs(model.h(col) - (sp.q_pcc - sm.q_pcc) / (2 * hstep)) < 1e-6);
  }
}

TEST_CASE("voltage error within 0.6% for +-20% perturbations") {
  const auto net = fixtures::four_bus();
  const InjectionOrdering ord(net);
  const auto model = linearize(net, four_bus_base(ord));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.8, 1.2);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd x = model.base_x;
    for (int i = 0; i < x.size(); ++i) x(i) *= u(rng);
    const auto lin = model.eval_state(x);
    const auto nl = nonlinear_state(net, model, x);
    worst = std::max(worst, ((lin.voltage - nl.voltage).array() / nl.voltage.array()).abs().maxCoeff());
  }
  CHECK(worst <= 0.006);
}

TEST_CASE("structural errors") {
  using vppflex::StructuralError;
  std::vector<Bus> buses{{"pcc", {Phase::A}, Connection::Wye, 0.9, 1.1},
                         {"b2", {Phase::A}, Connection::Wye, 0.9, 1.1},
                         {"b3", {Phase::A}, Connection::Wye, 0.9, 1.1}};
  Eigen::MatrixXcd y(1, 1);
  y(0, 0) = cplx{1.0, -10.0};
  // b3 disconnected
  CHECK_THROWS_AS(MultiphaseNetwork(buses, {{"pcc", "b2", {Phase::A}, y, 1.0}}, "pcc",
                                    fixtures::balanced_slack(), 1.0, 1.0),
                  StructuralError);
  // branch on a phase the bus lacks
  CHECK_THROWS_AS(MultiphaseNetwork({buses[0], buses[1]}, {{"pcc", "b2", {Phase::B}, y, 1.0}}, "pcc",
                                    fixtures::balanced_slack(), 1.0, 1.0),
                  StructuralError);
  // non-symmetric admittance
  Eigen::MatrixXcd y2 = fixtures::line_admittance(1.0);
  y2(0, 1) += 0.1;
  std::vector<Bus> b3{{"pcc", {Phase::A, Phase::B, Phase::C}, Connection::Wye, 0.9, 1.1},
                      {"n", {Phase::A, Phase::B, Phase::C}, Connection::Wye, 0.9, 1.1}};
  CHECK_THROWS_AS(MultiphaseNetwork(b3, {{"pcc", "n", {Phase::A, Phase::B, Phase::C}, y2, 1.0}}, "pcc",
                                    fixtures::balanced_slack(), 1.0, 1.0),
                  StructuralError);
  // bad limits
  std::vector<Bus> bad{{"pcc", {Phase::A}, Connection::Wye, 1.1, 0.9}};
  CHECK_THROWS_AS(MultiphaseNetwork(bad, {}, "pcc", fixtures::balanced_slack(), 1.0, 1.0), StructuralError);

  const auto net = fixtures::two_bus();
  const InjectionOrdering ord(net);
  Injections wrong;
  wrong.wye = {cplx{}, cplx{}};
  CHECK_THROWS_AS(solve_load_flow(net, ord, wrong), StructuralError);
}

TEST_CASE("heavy load diverges with the last residual attached") {
  const auto net = fixtures::two_bus({0.05, 0.5});
  const InjectionOrdering ord(net);
  Injections inj = Injections::zero(ord);
  inj.wye[0] = cplx{-3.0, -2.0};
  try {
    solve_load_flow(net, ord, inj);
    FAIL("expected divergence");
  } catch (const vppflex::DivergenceError& e) {
    CHECK(e.last_residual() > 1e-9);
  }
}

TEST_CASE("injection ordering stacks wye then delta slots") {
  const auto net = fixtures::four_bus();
  const InjectionOrdering ord(net);
  CHECK(ord.num_wye() == 5);    // n1 abc + n3 ab
  CHECK(ord.num_delta() == 3);  // n2 ab bc ca
  CHECK(ord.size() == 16);
  CHECK(ord.q_wye(1, Phase::A) == ord.p_wye(1, Phase::A) + 5);
  CHECK(ord.p_delta(2, PhasePair::AB) == 10);
  CHECK(ord.q_delta(2, PhasePair::CA) == 15);
  CHECK(ord.p_wye(3, Phase::C) == -1);
}
