#include <cmath>

#include "doctest.h"
#include "lpvrl/rl.hpp"
#include "lpvrl/rng.hpp"

using namespace lpvrl;

namespace {

Transition random_transition(Rng& rng, int n_theta) {
  Transition t;
  t.xhat = Eigen::Vector2d(rng.uniform(-1, 1), rng.uniform(-1, 1));
  t.xhat_next = Eigen::Vector2d(rng.uniform(-1, 1), rng.uniform(-1, 1));
  t.xi = Eigen::MatrixXd(n_theta, 1);
  for (int r = 0; r < n_theta; ++r) t.xi(r, 0) = rng.uniform(-1, 1);
  t.action = Eigen::VectorXd::Constant(1, rng.uniform(-1, 1));
  t.pi = Eigen::VectorXd::Constant(1, rng.uniform(-1, 1));
  t.y = Eigen::VectorXd::Constant(1, rng.uniform(-1, 1));
  t.beta = Eigen::VectorXd::Constant(4, 0.25);
  t.stage_cost = rng.uniform(0.0, 2.0);
  t.valid = true;
  return t;
}

}  // namespace

TEST_CASE("stage_cost: quadratic form with default weights") {
  Eigen::VectorXd zero1 = Eigen::VectorXd::Zero(1);
  CHECK(stage_cost(zero1, zero1) == 0.0);
  Eigen::VectorXd one(1);
  one << 1.0;
  CHECK(stage_cost(one, zero1) == doctest::Approx(1.0));
  Eigen::VectorXd y(1), a(1);
  y << 0.7;
  a << -0.3;
  CHECK(stage_cost(y, a) == doctest::Approx(stage_cost(-y, -a)));
  CHECK(stage_cost(y, a) == doctest::Approx(0.49 + 0.1 * 0.09));
}

TEST_CASE("features_upsilon: monomials of degree up to two") {
  const Eigen::VectorXd u0 = features_upsilon(Eigen::Vector2d::Zero());
  REQUIRE(u0.size() == 6);
  CHECK(u0(0) == 1.0);
  CHECK(u0.tail(5).norm() == 0.0);

  const Eigen::VectorXd u = features_upsilon(Eigen::Vector2d(1.0, 2.0));
  CHECK(u(0) == 1.0);
  CHECK(u(1) == 1.0);
  CHECK(u(2) == 2.0);
  CHECK(u(3) == 1.0);
  CHECK(u(4) == 2.0);
  CHECK(u(5) == 4.0);

  for (int n = 1; n <= 5; ++n) {
    CHECK(upsilon_dim(n) == (n + 1) * (n + 2) / 2);
    CHECK(features_upsilon(Eigen::VectorXd::Zero(n)).size() == upsilon_dim(n));
  }
}

TEST_CASE("features_psi: on-policy actions give zero features") {
  Rng rng(1);
  Transition t = random_transition(rng, 5);
  t.action = t.pi;
  CHECK(features_psi(t).norm() == 0.0);

  // scalar action: Psi = delta * xi
  Transition t2 = random_transition(rng, 5);
  const double delta = (t2.action - t2.pi)(0);
  CHECK((features_psi(t2) - delta * t2.xi.col(0)).lpNorm<Eigen::Infinity>() <= 1e-15);
}

TEST_CASE("compatible critic equals the value function on-policy") {
  Rng rng(2);
  Transition t = random_transition(rng, 5);
  t.action = t.pi;
  CriticParams critic;
  critic.nu = Eigen::VectorXd::Ones(6);
  critic.w = Eigen::VectorXd::Ones(5);
  const double q = features_psi(t).dot(critic.w) + features_upsilon(t.xhat).dot(critic.nu);
  const double v = features_upsilon(t.xhat).dot(critic.nu);
  CHECK(q == doctest::Approx(v));
}

TEST_CASE("lstd_accumulate: empty batch, hand-checked single sample, order independence") {
  const double gamma = 0.95;
  LstdAccumulators acc = LstdAccumulators::zero(6, 3);
  lstd_accumulate({}, acc, gamma, CriticParams{});
  CHECK(acc.count == 0);
  CHECK(acc.A_nu.norm() == 0.0);

  Rng rng(3);
  CriticParams critic;
  critic.nu = Eigen::VectorXd::Ones(6) * 0.3;
  critic.w = Eigen::VectorXd::Ones(3) * (-0.2);

  Transition t = random_transition(rng, 3);
  std::vector<Transition> batch{t};
  LstdAccumulators one = LstdAccumulators::zero(6, 3);
  lstd_accumulate(batch, one, gamma, critic);

  const Eigen::VectorXd up = features_upsilon(t.xhat);
  const Eigen::VectorXd up1 = features_upsilon(t.xhat_next);
  const Eigen::VectorXd psi = t.xi * (t.action - t.pi);
  CHECK((one.A_nu - up * (up - gamma * up1).transpose()).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK((one.b_nu - up * t.stage_cost).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK((one.A_w - psi * psi.transpose()).lpNorm<Eigen::Infinity>() <= 1e-15);
  const double td = t.stage_cost + gamma * up1.dot(critic.nu) - up.dot(critic.nu);
  CHECK((one.b_w - td * psi).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK((one.b_theta - t.xi * t.xi.transpose() * critic.w).lpNorm<Eigen::Infinity>() <= 1e-15);

  // order independence
  std::vector<Transition> fwd, rev;
  for (int i = 0; i < 50; ++i) fwd.push_back(random_transition(rng, 3));
  rev.assign(fwd.rbegin(), fwd.rend());
  LstdAccumulators a1 = LstdAccumulators::zero(6, 3);
  LstdAccumulators a2 = LstdAccumulators::zero(6, 3);
  lstd_accumulate(fwd, a1, gamma, critic);
  lstd_accumulate(rev, a2, gamma, critic);
  CHECK((a1.A_nu - a2.A_nu).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK((a1.A_w - a2.A_w).lpNorm<Eigen::Infinity>() <= 1e-12);
  CHECK((a1.b_theta - a2.b_theta).lpNorm<Eigen::Infinity>() <= 1e-12);

  // invalid transitions are skipped and counted
  fwd[3].valid = false;
  LstdAccumulators a3 = LstdAccumulators::zero(6, 3);
  lstd_accumulate(fwd, a3, gamma, critic);
  CHECK(a3.count == 49);
  CHECK(a3.skipped == 1);
}

TEST_CASE("advantage accumulator is symmetric positive semidefinite") {
  Rng rng(4);
  CriticParams critic;
  critic.nu = Eigen::VectorXd::Zero(6);
  critic.w = Eigen::VectorXd::Zero(4);
  std::vector<Transition> batch;
  for (int i = 0; i < 200; ++i) batch.push_back(random_transition(rng, 4));
  LstdAccumulators acc = LstdAccumulators::zero(6, 4);
  lstd_accumulate(batch, acc, 0.95, critic);
  CHECK((acc.A_w - acc.A_w.transpose()).lpNorm<Eigen::Infinity>() <= 1e-12);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(acc.A_w);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("critic_solve: identity system, floor, scale invariance") {
  const int n_ups = 6, n_theta = 3;
  const long floor = 10 * std::max(n_ups, n_theta);

  LstdAccumulators acc = LstdAccumulators::zero(n_ups, n_theta);
  acc.count = floor;
  acc.A_nu = static_cast<double>(floor) * Eigen::MatrixXd::Identity(n_ups, n_ups);
  acc.b_nu = static_cast<double>(floor) * Eigen::VectorXd::Unit(n_ups, 0);
  acc.A_w = static_cast<double>(floor) * Eigen::MatrixXd::Identity(n_theta, n_theta);
  acc.b_w = static_cast<double>(floor) * Eigen::VectorXd::Unit(n_theta, 1);

  const CriticParams c = critic_solve(acc);
  REQUIRE(c.ok);
  CHECK(c.nu(0) == doctest::Approx(1.0 / (1.0 + 1e-6)).epsilon(1e-12));
  CHECK(c.w(1) == doctest::Approx(1.0 / (1.0 + 1e-6)).epsilon(1e-12));

  // duplicating every sample changes nothing (normal equations scale out)
  LstdAccumulators doubled = acc;
  doubled.count *= 2;
  doubled.A_nu *= 2.0;
  doubled.b_nu *= 2.0;
  doubled.A_w *= 2.0;
  doubled.b_w *= 2.0;
  const CriticParams c2 = critic_solve(doubled);
  REQUIRE(c2.ok);
  CHECK((c.nu - c2.nu).lpNorm<Eigen::Infinity>() <= 1e-13);
  CHECK((c.w - c2.w).lpNorm<Eigen::Infinity>() <= 1e-13);

  LstdAccumulators thin = acc;
  thin.count = floor - 1;
  CHECK_FALSE(critic_solve(thin).ok);
}

TEST_CASE("critic recovers a synthetic quadratic value function") {
  Rng rng(5);
  const int n_ups = 6;
  Eigen::VectorXd nu_star(n_ups);
  for (int i = 0; i < n_ups; ++i) nu_star(i) = rng.uniform(-1, 1);
  const double gamma = 0.95;

  std::vector<Transition> batch;
  for (int i = 0; i < 400; ++i) {
    Transition t = random_transition(rng, 2);
    // stage cost consistent with the synthetic value function
    const Eigen::VectorXd up = features_upsilon(t.xhat);
    const Eigen::VectorXd up1 = features_upsilon(t.xhat_next);
    t.stage_cost = up.dot(nu_star) - gamma * up1.dot(nu_star);
    batch.push_back(t);
  }
  LstdAccumulators acc = LstdAccumulators::zero(n_ups, 2);
  lstd_accumulate(batch, acc, gamma, CriticParams{});
  const CriticParams c = critic_solve(acc);
  REQUIRE(c.ok);
  CHECK((c.nu - nu_star).lpNorm<Eigen::Infinity>() <= 1e-3);
}

TEST_CASE("policy_update: zero step, zero advantage, probe retries") {
  Eigen::VectorXd theta(3);
  theta << 1.0, -0.5, 0.2;
  Eigen::VectorXd b(3);
  b << 4.0, 2.0, -1.0;
  auto ident = [](const Eigen::VectorXd& v) { return v; };
  auto yes = [](const Eigen::VectorXd&) { return true; };

  const PolicyUpdateResult zero_alpha = policy_update(theta, b, 10, 0.0, ident, yes);
  CHECK(zero_alpha.accepted);
  CHECK((zero_alpha.theta - theta).norm() == 0.0);

  const PolicyUpdateResult zero_grad =
      policy_update(theta, Eigen::VectorXd::Zero(3), 10, 0.5, ident, yes);
  CHECK((zero_grad.theta - theta).norm() == 0.0);

  // probe accepts only sufficiently small steps
  int calls = 0;
  auto picky = [&](const Eigen::VectorXd& v) {
    calls += 1;
    return (v - theta).lpNorm<Eigen::Infinity>() < 0.02;
  };
  const PolicyUpdateResult halved = policy_update(theta, b, 10, 0.1, ident, picky);
  CHECK(halved.accepted);
  CHECK(halved.retries == 2);
  CHECK(halved.alpha_used == doctest::Approx(0.025));

  auto never = [](const Eigen::VectorXd&) { return false; };
  const PolicyUpdateResult rejected = policy_update(theta, b, 10, 0.1, ident, never);
  CHECK_FALSE(rejected.accepted);
  CHECK((rejected.theta - theta).norm() == 0.0);
}

TEST_CASE("b_theta equals an independent single-pass mean") {
  Rng rng(6);
  CriticParams critic;
  critic.nu = Eigen::VectorXd::Zero(6);
  critic.w = Eigen::VectorXd::Ones(3);
  std::vector<Transition> batch;
  for (int i = 0; i < 120; ++i) batch.push_back(random_transition(rng, 3));

  LstdAccumulators acc = LstdAccumulators::zero(6, 3);
  lstd_accumulate(batch, acc, 0.95, critic);

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
  for (const auto& t : batch) mean += t.xi * (t.xi.transpose() * critic.w);
  mean /= static_cast<double>(batch.size());
  CHECK((acc.b_theta / acc.count - mean).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("theta layout: slices, gather/scatter round trip, projection") {
  const ThetaLayout layout = ThetaLayout::build({"L_A", "L_R", "L_P", "f"}, 2, 1, 1, 4, 0);
  CHECK(layout.dim == 3 + 1 + 4 * 3 + 3);
  REQUIRE(layout.find("L_P2") != nullptr);
  CHECK(layout.find("L_P2")->is_mhe == false);
  CHECK(layout.find("L_A")->is_mhe == true);

  CHECK_THROWS_AS(ThetaLayout::build({"bogus"}, 2, 1, 1, 4, 0), std::invalid_argument);
  CHECK_THROWS_AS(ThetaLayout::build({"L_A", "L_A"}, 2, 1, 1, 4, 0), std::invalid_argument);
  CHECK_THROWS_AS(ThetaLayout::build({"eps"}, 2, 1, 1, 4, 0), std::invalid_argument);

  SchedulingBounds b;
  b.lower = Eigen::Vector2d(1.0, 0.0);
  b.upper = Eigen::Vector2d(2.0, 0.5);
  const PolytopicModel model = discretize(msd_vertices(b), 0.05);
  MpcConfig cfg;
  MheTheta mhe_theta = MheTheta::defaults(2, 1);
  MpcTheta mpc_theta = MpcTheta::defaults(model, cfg);

  const Eigen::VectorXd theta = gather_theta(layout, mhe_theta, mpc_theta);
  MheTheta mhe2 = MheTheta::defaults(2, 1);
  MpcTheta mpc2 = MpcTheta::defaults(model, cfg);
  scatter_theta(layout, theta, mhe2, mpc2, cfg);
  CHECK((gather_theta(layout, mhe2, mpc2) - theta).lpNorm<Eigen::Infinity>() == 0.0);

  // projection floors factor diagonals
  Eigen::VectorXd pushed = theta;
  pushed(layout.find("L_A")->offset) = -3.0;  // L_A(0,0)
  scatter_theta(layout, pushed, mhe2, mpc2, cfg);
  CHECK(mhe2.L_A(0, 0) == doctest::Approx(1e-4));
}

TEST_CASE("jacobian_xi: direct and indirect chains assemble by slice") {
  const ThetaLayout layout = ThetaLayout::build({"L_A", "L_R", "L_P", "f"}, 2, 1, 1, 4, 0);
  const int Nw = 10, l = 4, m = 1, n = 2;
  const int t_mpc = 4 * 3 + (2 + 1) + 3 + 1;  // full packed MpcTheta size

  MheSolution mhe;
  mhe.xhat = Eigen::MatrixXd::Zero(n, Nw + 1);
  mhe.beta = Eigen::MatrixXd::Constant(l, Nw, 0.25);
  mhe.dxhat_dtheta = Eigen::MatrixXd::Zero(4, n);
  mhe.dbeta_dtheta = Eigen::MatrixXd::Zero(4, l * Nw);

  MpcSolution mpc;
  mpc.u0 = Eigen::VectorXd::Zero(m);
  Rng rng(8);
  mpc.dpi_dtheta = Eigen::MatrixXd(t_mpc, m);
  for (int i = 0; i < t_mpc; ++i) mpc.dpi_dtheta(i, 0) = rng.uniform(-1, 1);
  mpc.dpi_dxhat = Eigen::MatrixXd::Zero(n, m);
  mpc.dpi_dbeta = Eigen::MatrixXd::Zero(l * (Nw + 1), m);

  // zero MHE sensitivities: Xi reduces to the direct term, bitwise
  const Eigen::MatrixXd xi = jacobian_xi(mpc, mhe, layout);
  for (const auto& s : layout.slices) {
    if (s.is_mhe) {
      CHECK(xi.middleRows(s.offset, s.size).norm() == 0.0);
    } else {
      CHECK((xi.middleRows(s.offset, s.size) -
             mpc.dpi_dtheta.middleRows(s.local_offset, s.size))
                .norm() == 0.0);
    }
  }

  // identity state-chain: the L_A block picks up dpi_dxhat exactly
  mhe.dxhat_dtheta.block(0, 0, 2, 2).setIdentity();  // first two L_A entries
  mpc.dpi_dxhat << 0.7, -0.3;
  mpc.dpi_dtheta.setZero();
  const Eigen::MatrixXd xi2 = jacobian_xi(mpc, mhe, layout);
  CHECK(xi2(layout.find("L_A")->offset + 0, 0) == doctest::Approx(0.7));
  CHECK(xi2(layout.find("L_A")->offset + 1, 0) == doctest::Approx(-0.3));

  // schedule folding: position 0 lands on the first window stage
  mhe.dxhat_dtheta.setZero();
  mhe.dbeta_dtheta(0, 0) = 1.0;  // d(beta stage 1, vertex 1)/d(L_A entry 0)
  mpc.dpi_dxhat.setZero();
  mpc.dpi_dbeta(0 * l + 0, 0) = 2.0;  // schedule position 0
  mpc.dpi_dbeta(1 * l + 0, 0) = 3.0;  // schedule position 1
  const Eigen::MatrixXd xi3 = jacobian_xi(mpc, mhe, layout);
  CHECK(xi3(layout.find("L_A")->offset, 0) == doctest::Approx(5.0));
}
