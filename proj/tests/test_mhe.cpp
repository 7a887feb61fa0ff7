#include <cmath>

#include "doctest.h"
#include "lpvrl/mhe.hpp"
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

PolytopicModel nominal_model(bool full_state = false) {
  return discretize(msd_vertices(nominal_bounds(), full_state), 0.05);
}

MheWindow window_from_rollout(const PolytopicModel& model, const Eigen::VectorXd& beta_data,
                              const Eigen::VectorXd& x0, int N, std::uint64_t seed,
                              const Eigen::VectorXd* beta_ref = nullptr) {
  const int l = model.num_vertices();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2), B = Eigen::MatrixXd::Zero(2, 1);
  for (int i = 0; i < l; ++i) {
    A += beta_data(i) * model.vertices[i].A;
    B += beta_data(i) * model.vertices[i].B;
  }
  MheWindow w;
  w.capacity = N;
  w.num_vertices = l;
  w.prior = x0;
  const Eigen::VectorXd ref =
      beta_ref != nullptr ? *beta_ref : Eigen::VectorXd::Constant(l, 1.0 / l);
  Rng rng(seed);
  Eigen::VectorXd x = x0;
  for (int j = 0; j < N; ++j) {
    Eigen::VectorXd u(1);
    u << rng.uniform(-1.0, 1.0);
    x = A * x + B * u;
    w.inputs.push_back(u);
    w.measurements.push_back(model.vertices[0].C * x);
    w.beta_ref.push_back(ref);
  }
  return w;
}

}  // namespace

TEST_CASE("build_mhe: decision dimension counts") {
  const PolytopicModel model = nominal_model();
  const MheTheta theta = MheTheta::defaults(2, 1);
  MheConfig cfg;
  cfg.horizon = 10;

  Eigen::VectorXd quarter = Eigen::VectorXd::Constant(4, 0.25);
  MheWindow w = window_from_rollout(model, quarter, Eigen::Vector2d(0.3, -0.1), 10, 1);
  const NlpProblem nlp = build_mhe(model, w, theta, cfg);
  CHECK(nlp.num_vars == 62);  // 11*2 + 10*4
  CHECK(nlp.num_eq == 10 * 3);
  CHECK(nlp.num_ineq == 2 * 10 * 4);
  CHECK(nlp.num_params == 4);
}

TEST_CASE("build_mhe rejects an empty window") {
  const PolytopicModel model = nominal_model();
  MheWindow w;
  w.capacity = 10;
  w.num_vertices = 4;
  w.prior = Eigen::Vector2d::Zero();
  CHECK_THROWS_AS(build_mhe(model, w, MheTheta::defaults(2, 1), MheConfig{}),
                  std::invalid_argument);
}

TEST_CASE("singleton hull pins beta to one and reduces to least squares") {
  PolytopicModel single;
  single.dims = ModelDims{2, 1, 1, 0};
  LtiVertex v;
  v.A = Eigen::MatrixXd(2, 2);
  v.A << 1.0, 0.05, -0.05, 0.99;
  v.B = Eigen::MatrixXd(2, 1);
  v.B << 0.0, 0.05;
  v.C = Eigen::MatrixXd(1, 2);
  v.C << 1.0, 0.0;
  v.time_domain = TimeDomain::Discrete;
  single.vertices.push_back(v);

  Eigen::VectorXd one(1);
  one << 1.0;
  MheWindow w = window_from_rollout(single, one, Eigen::Vector2d(0.4, 0.1), 1, 2);
  MheConfig cfg;
  cfg.horizon = 1;
  const MheSolution sol = estimate(single, w, MheTheta::defaults(2, 1), cfg);
  REQUIRE(sol.status == SolveStatus::Converged);
  CHECK(sol.beta(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("consistent data attains near-zero cost at the generating parameters") {
  const PolytopicModel model = nominal_model(true);
  Rng rng(5);
  Eigen::VectorXd beta_star(4);
  for (int i = 0; i < 4; ++i) beta_star(i) = rng.uniform();
  beta_star /= beta_star.sum();

  // reference equal to the generating beta and prior equal to the true start
  MheWindow w = window_from_rollout(model, beta_star, Eigen::Vector2d(0.5, -0.2), 10, 3,
                                    &beta_star);
  MheConfig cfg;
  const MheSolution sol = estimate(model, w, MheTheta::defaults(2, 2), cfg);
  REQUIRE(sol.status == SolveStatus::Converged);
  CHECK(sol.objective <= 1e-10);
}

TEST_CASE("zero data window keeps the reference beta and zero states") {
  const PolytopicModel model = nominal_model();
  const int N = 6;
  MheWindow w;
  w.capacity = N;
  w.num_vertices = 4;
  w.prior = Eigen::Vector2d::Zero();
  Eigen::VectorXd ref(4);
  ref << 0.4, 0.3, 0.2, 0.1;
  for (int j = 0; j < N; ++j) {
    w.inputs.push_back(Eigen::VectorXd::Zero(1));
    w.measurements.push_back(Eigen::VectorXd::Zero(1));
    w.beta_ref.push_back(ref);
  }
  MheConfig cfg;
  cfg.horizon = N;
  const MheSolution sol = estimate(model, w, MheTheta::defaults(2, 1), cfg);
  REQUIRE(sol.status == SolveStatus::Converged);
  CHECK(sol.xhat.lpNorm<Eigen::Infinity>() <= 1e-7);
  for (int j = 0; j < N; ++j)
    CHECK((sol.beta.col(j) - ref).lpNorm<Eigen::Infinity>() <= 1e-6);
  CHECK(sol.objective <= 1e-10);
}

TEST_CASE("cold_start initialization") {
  Eigen::VectorXd y0(1);
  y0 << 0.7;
  const MheWindow w = cold_start(y0, 10, 2, 4);
  CHECK(w.prior(0) == doctest::Approx(0.7));
  CHECK(w.prior(1) == 0.0);
  CHECK(w.length() == 0);

  // full-state test mode passes the measurement through
  Eigen::VectorXd y_full(2);
  y_full << 0.3, -0.4;
  const MheWindow wf = cold_start(y_full, 10, 2, 4);
  CHECK((wf.prior - y_full).norm() == 0.0);

  // uniform reference satisfies the simplex exactly
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(4, 0.25);
  CHECK(is_simplex(uniform));
}

TEST_CASE("estimate on an empty window returns the prior") {
  const PolytopicModel model = nominal_model();
  Eigen::VectorXd y0(1);
  y0 << 0.4;
  MheWindow w = cold_start(y0, 10, 2, 4);
  const MheSolution sol = estimate(model, w, MheTheta::defaults(2, 1), MheConfig{});
  CHECK(sol.status == SolveStatus::Converged);
  CHECK(sol.latest_state()(0) == doctest::Approx(0.4));
  CHECK(sol.window_length() == 0);
}

TEST_CASE("advance_prior converges on stationary data") {
  const PolytopicModel model = nominal_model();
  MheConfig cfg;
  Eigen::VectorXd y0(1);
  y0 << 0.5;
  MheWindow w = cold_start(y0, cfg.horizon, 2, 4);
  MheSolution sol = estimate(model, w, MheTheta::defaults(2, 1), cfg);

  Eigen::VectorXd prev_prior = w.prior;
  double last_change = 1e9;
  const Eigen::VectorXd u0 = Eigen::VectorXd::Zero(1);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(1);
  for (int k = 0; k < 60; ++k) {
    w.push(u0, y, sol);
    sol = estimate(model, w, MheTheta::defaults(2, 1), cfg);
    REQUIRE(sol.status == SolveStatus::Converged);
    last_change = (w.prior - prev_prior).lpNorm<Eigen::Infinity>();
    prev_prior = w.prior;
  }
  CHECK(last_change <= 1e-8);
}

TEST_CASE("every returned beta stage satisfies the simplex invariant") {
  const PolytopicModel model = nominal_model();
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    MheInstance inst = random_mhe_instance(rng);
    const MheSolution sol = estimate(inst.model, inst.window, inst.theta, inst.cfg);
    REQUIRE(sol.status == SolveStatus::Converged);
    for (int j = 0; j < sol.beta.cols(); ++j) {
      CHECK(std::abs(sol.beta.col(j).sum() - 1.0) <= 1e-8);
      CHECK(sol.beta.col(j).minCoeff() >= -1e-9);
    }
  }
}

TEST_CASE("warm-started re-solve of unchanged data converges within two iterations") {
  const PolytopicModel model = nominal_model();
  Eigen::VectorXd quarter = Eigen::VectorXd::Constant(4, 0.25);
  MheWindow w = window_from_rollout(model, quarter, Eigen::Vector2d(0.3, 0.2), 10, 13);
  MheConfig cfg;
  const MheTheta theta = MheTheta::defaults(2, 1);

  const MheSolution first = estimate(model, w, theta, cfg);
  REQUIRE(first.status == SolveStatus::Converged);
  const MheSolution second = estimate(model, w, theta, cfg);
  REQUIRE(second.status == SolveStatus::Converged);
  CHECK(second.sqp_iterations <= 2);
  CHECK((second.latest_state() - first.latest_state()).lpNorm<Eigen::Infinity>() <= 1e-9);
}

TEST_CASE("MHE sensitivities match finite differences") {
  const CheckResult res = check_mhe_sensitivity_fd(2, 4242);
  INFO(res.detail);
  CHECK(res.pass);
}

TEST_CASE("exact recovery oracles") {
  const CheckResult vertex = check_mhe_vertex_recovery();
  INFO(vertex.detail);
  CHECK(vertex.pass);
  const CheckResult mixture = check_mhe_mixture_recovery();
  INFO(mixture.detail);
  CHECK(mixture.pass);
}
