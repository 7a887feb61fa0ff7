#include <cmath>
#include <cstring>

#include "doctest.h"
#include "lpvrl/mpc.hpp"
#include "lpvrl/rng.hpp"
#include "lpvrl/verification.hpp"

using namespace lpvrl;

namespace {

SchedulingBounds nominal_bounds() {
  SchedulingBounds b;
  b.lower = Eigen::Vector2d(1.0, 0.0);
  b.upper = Eigen::Vector2d(2.0, 0.5);
  b.mass = 1.0;
  return b;
}

PolytopicModel nominal_model() { return discretize(msd_vertices(nominal_bounds()), 0.05); }

std::vector<Eigen::VectorXd> uniform_schedule(int N, int l) {
  return std::vector<Eigen::VectorXd>(N + 1, Eigen::VectorXd::Constant(l, 1.0 / l));
}

}  // namespace

TEST_CASE("solve_dare: scalar fixed point and degenerate cases") {
  // a=0.5, b=1, W=1, R=1: p solves p = 1 + 0.25 p - 0.25 p^2 / (1 + p)
  const Eigen::MatrixXd A = Eigen::MatrixXd::Constant(1, 1, 0.5);
  const Eigen::MatrixXd B = Eigen::MatrixXd::Constant(1, 1, 1.0);
  const Eigen::MatrixXd I1 = Eigen::MatrixXd::Identity(1, 1);
  const Eigen::MatrixXd P = solve_dare(A, B, I1, I1);
  const double expected = 0.125 + 0.5 * std::sqrt(4.0625);  // positive root of p^2 - p/4 - 1
  CHECK(P(0, 0) == doctest::Approx(expected).epsilon(1e-9));

  // no dynamics: P = W
  const Eigen::MatrixXd P0 =
      solve_dare(Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 1),
                 Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(1, 1));
  CHECK((P0 - Eigen::MatrixXd::Identity(2, 2)).lpNorm<Eigen::Infinity>() <= 1e-12);

  // unstabilizable pair diverges
  CHECK_THROWS_AS(solve_dare(Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::MatrixXd::Zero(1, 1),
                             I1, I1),
                  std::runtime_error);
}

TEST_CASE("init_terminal_weights: identical vertices give identical weights") {
  SchedulingBounds point = nominal_bounds();
  point.lower = point.upper = Eigen::Vector2d(1.5, 0.25);
  const PolytopicModel model = discretize(msd_vertices(point), 0.05);
  const auto P = init_terminal_weights(model, Eigen::MatrixXd::Identity(2, 2),
                                       Eigen::MatrixXd::Identity(1, 1));
  REQUIRE(P.size() == 4);
  for (int i = 1; i < 4; ++i) CHECK((P[i] - P[0]).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("beta_schedule: delayed window mapping") {
  MheSolution mhe;
  mhe.xhat = Eigen::MatrixXd::Zero(2, 11);
  mhe.beta = Eigen::MatrixXd::Zero(4, 10);
  for (int j = 0; j < 10; ++j) mhe.beta.col(j) = Eigen::VectorXd::Constant(4, 0.25);
  mhe.beta.col(9) << 0.7, 0.1, 0.1, 0.1;  // latest estimate
  MpcConfig cfg;
  cfg.horizon = 10;

  const auto sched = beta_schedule(mhe, cfg);
  REQUIRE(sched.size() == 11);
  CHECK((sched[10] - mhe.beta.col(9)).norm() == 0.0);  // terminal stage gets the latest
  CHECK((sched[0] - mhe.beta.col(0)).norm() == 0.0);
  CHECK((sched[1] - mhe.beta.col(0)).norm() == 0.0);

  MpcConfig wrong;
  wrong.horizon = 8;
  CHECK_THROWS_AS(beta_schedule(mhe, wrong), std::invalid_argument);

  // constant window -> constant schedule
  for (int j = 0; j < 10; ++j) mhe.beta.col(j) = Eigen::VectorXd::Constant(4, 0.25);
  const auto flat = beta_schedule(mhe, cfg);
  for (const auto& s : flat) CHECK((s - Eigen::VectorXd::Constant(4, 0.25)).norm() == 0.0);
}

TEST_CASE("origin start with zero cost modification is already optimal") {
  const PolytopicModel model = nominal_model();
  MpcConfig cfg;
  const MpcTheta theta = MpcTheta::defaults(model, cfg);
  const MpcSolution sol = policy_with_schedule(model, Eigen::Vector2d::Zero(),
                                               uniform_schedule(cfg.horizon, 4), theta, cfg);
  REQUIRE(sol.status == SolveStatus::Converged);
  CHECK(std::abs(sol.u0(0)) <= 1e-9);
  CHECK(std::abs(sol.cost) <= 1e-9);
}

TEST_CASE("one-step horizon matches the closed-form LQ solution") {
  const PolytopicModel model = nominal_model();
  MpcConfig cfg;
  cfg.horizon = 1;
  MpcTheta theta = MpcTheta::defaults(model, cfg);

  const Eigen::Vector2d xhat(0.08, -0.05);  // small enough to stay interior
  const auto sched = uniform_schedule(1, 4);
  const MpcSolution sol = policy_with_schedule(model, xhat, sched, theta, cfg);
  REQUIRE(sol.status == SolveStatus::Converged);

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2), B = Eigen::MatrixXd::Zero(2, 1);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(2, 2);
  for (int i = 0; i < 4; ++i) {
    A += 0.25 * model.vertices[i].A;
    B += 0.25 * model.vertices[i].B;
    P += 0.25 * (theta.L_P[i] * theta.L_P[i].transpose());
  }
  const Eigen::MatrixXd Ru = theta.L_Ru * theta.L_Ru.transpose();
  const double g = cfg.gamma;
  // stationarity: 2 Ru u + f_u + 2 g B'P(Ax + Bu) = 0
  const Eigen::MatrixXd H = 2.0 * Ru + 2.0 * g * B.transpose() * P * B;
  const Eigen::VectorXd rhs = -(theta.f.tail(1) + 2.0 * g * B.transpose() * P * A * xhat);
  const double u_expected = (H.inverse() * rhs)(0);
  CHECK(sol.u0(0) == doctest::Approx(u_expected).epsilon(1e-7));
}

TEST_CASE("frozen-schedule QP Hessian is positive semidefinite") {
  Rng rng(31);
  for (int trial = 0; trial < 3; ++trial) {
    const MpcInstance inst = random_mpc_instance(rng, trial == 2);
    const NlpProblem nlp = build_mpc(inst.model, inst.xhat, inst.schedule, inst.theta, inst.cfg);
    const DenseQp qp = qp_data_from_nlp(nlp, nlp.params);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (qp.Q + qp.Q.transpose()));
    CHECK(eig.eigenvalues().minCoeff() >= -1e-12);
  }
}

TEST_CASE("hard input bound holds on random instances") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const MpcInstance inst = random_mpc_instance(rng, false);
    const MpcSolution sol = policy_with_schedule(inst.model, inst.xhat, inst.schedule, inst.theta,
                                                 inst.cfg, SolverOptions{}, false);
    REQUIRE(sol.status == SolveStatus::Converged);
    for (int j = 0; j < sol.u_pred.cols(); ++j)
      CHECK(std::abs(sol.u_pred(0, j)) <= 1.0 + 1e-8);
  }
}

TEST_CASE("policy state-sensitivity matches finite differences at the origin") {
  const PolytopicModel model = nominal_model();
  MpcConfig cfg;
  const MpcTheta theta = MpcTheta::defaults(model, cfg);
  const auto sched = uniform_schedule(cfg.horizon, 4);

  const MpcSolution base =
      policy_with_schedule(model, Eigen::Vector2d::Zero(), sched, theta, cfg);
  REQUIRE(base.status == SolveStatus::Converged);
  REQUIRE(base.sensitivity_ok);

  const double delta = 1e-6;
  for (int i = 0; i < 2; ++i) {
    Eigen::Vector2d xp = Eigen::Vector2d::Zero(), xm = Eigen::Vector2d::Zero();
    xp(i) += delta;
    xm(i) -= delta;
    const MpcSolution up = policy_with_schedule(model, xp, sched, theta, cfg, {}, false);
    const MpcSolution um = policy_with_schedule(model, xm, sched, theta, cfg, {}, false);
    const double fd = (up.u0(0) - um.u0(0)) / (2.0 * delta);
    CHECK(base.dpi_dxhat(i, 0) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("doubling slack weights with inactive slacks leaves the policy unchanged") {
  const PolytopicModel model = nominal_model();
  MpcConfig cfg;
  cfg.has_state_box = true;
  cfg.x_min = Eigen::Vector2d(-5.0, -5.0);  // wide box: slacks stay inactive
  cfg.x_max = Eigen::Vector2d(5.0, 5.0);
  const MpcTheta theta = MpcTheta::defaults(model, cfg);
  const auto sched = uniform_schedule(cfg.horizon, 4);
  const Eigen::Vector2d xhat(0.6, -0.3);

  const MpcSolution a = policy_with_schedule(model, xhat, sched, theta, cfg, {}, false);
  MpcConfig doubled = cfg;
  doubled.slack_weight *= 2.0;
  doubled.slack_weight_terminal *= 2.0;
  const MpcSolution b = policy_with_schedule(model, xhat, sched, theta, doubled, {}, false);
  REQUIRE(a.status == SolveStatus::Converged);
  REQUIRE(b.status == SolveStatus::Converged);
  CHECK(a.slacks.lpNorm<Eigen::Infinity>() <= 1e-9);
  CHECK(std::abs(a.u0(0) - b.u0(0)) <= 1e-9);
}

TEST_CASE("terminal cost is linear in beta for a fixed terminal state") {
  const PolytopicModel model = nominal_model();
  MpcConfig cfg;
  const MpcTheta theta = MpcTheta::defaults(model, cfg);
  Rng rng(61);
  const Eigen::Vector2d xN(0.7, -0.4);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd beta(4);
    for (int i = 0; i < 4; ++i) beta(i) = rng.uniform();
    beta /= beta.sum();
    double direct = 0.0;
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(2, 2);
    for (int i = 0; i < 4; ++i) {
      const Eigen::MatrixXd Pi = theta.L_P[i] * theta.L_P[i].transpose();
      direct += beta(i) * (xN.transpose() * Pi * xN)(0);
      P += beta(i) * Pi;
    }
    CHECK((xN.transpose() * P * xN)(0) == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("positive objective scaling leaves the policy unchanged") {
  const PolytopicModel model = nominal_model();
  MpcConfig cfg;
  MpcTheta theta = MpcTheta::defaults(model, cfg);
  theta.f = Eigen::Vector3d(0.05, -0.02, 0.03);
  const auto sched = uniform_schedule(cfg.horizon, 4);
  const Eigen::Vector2d xhat(0.5, 0.2);

  const MpcSolution a = policy_with_schedule(model, xhat, sched, theta, cfg, {}, false);

  const double c = 3.7;
  MpcTheta scaled = theta;
  for (auto& L : scaled.L_P) L *= std::sqrt(c);
  scaled.L_W *= std::sqrt(c);
  scaled.L_Ru *= std::sqrt(c);
  scaled.f *= c;
  MpcConfig scaled_cfg = cfg;
  scaled_cfg.slack_weight *= c;
  scaled_cfg.slack_weight_terminal *= c;
  const MpcSolution b = policy_with_schedule(model, xhat, sched, scaled, scaled_cfg, {}, false);
  REQUIRE(a.status == SolveStatus::Converged);
  REQUIRE(b.status == SolveStatus::Converged);
  CHECK(std::abs(a.u0(0) - b.u0(0)) <= 1e-9);
}

TEST_CASE("warm-started re-solve returns the identical policy bitwise") {
  Rng rng(71);
  const MpcInstance inst = random_mpc_instance(rng, false);
  const MpcSolution a = policy_with_schedule(inst.model, inst.xhat, inst.schedule, inst.theta,
                                             inst.cfg, {}, false);
  Eigen::VectorXd warm(inst.cfg.horizon * 1 + (inst.cfg.horizon + 1) * 2);
  for (int j = 0; j < inst.cfg.horizon; ++j) warm(j) = a.u_pred(0, j);
  for (int j = 0; j <= inst.cfg.horizon; ++j)
    warm.segment(inst.cfg.horizon + 2 * j, 2) = a.x_pred.col(j);
  const MpcSolution b = policy_with_schedule(inst.model, inst.xhat, inst.schedule, inst.theta,
                                             inst.cfg, {}, false, &warm);
  CHECK(std::memcmp(a.u0.data(), b.u0.data(), sizeof(double)) == 0);
}

TEST_CASE("theta validation rejects floor and backoff violations") {
  const PolytopicModel model = nominal_model();
  MpcConfig cfg;
  MpcTheta theta = MpcTheta::defaults(model, cfg);
  theta.L_W(0, 0) = 1e-6;
  CHECK_THROWS_AS(theta.validate(cfg, 2), std::invalid_argument);

  MpcConfig box_cfg = cfg;
  box_cfg.has_state_box = true;
  box_cfg.x_min = Eigen::Vector2d(-1.0, -1.0);
  box_cfg.x_max = Eigen::Vector2d(1.0, 1.0);
  MpcTheta boxed = MpcTheta::defaults(model, box_cfg);
  boxed.eps.setConstant(2.0);  // beyond half the box width
  CHECK_THROWS_AS(boxed.validate(box_cfg, 2), std::invalid_argument);
}

TEST_CASE("MPC sensitivities match finite differences") {
  const CheckResult res = check_mpc_sensitivity_fd(3, 9090);
  INFO(res.detail);
  CHECK(res.pass);
}
