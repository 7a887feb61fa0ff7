#include "lpvrl/verification.hpp"

#include <cmath>
#include <sstream>

#include "lpvrl/linalg.hpp"
#include "lpvrl/sensitivity.hpp"

namespace lpvrl {

namespace {

SchedulingBounds design_bounds_nominal() {
  SchedulingBounds b;
  b.lower = Eigen::Vector2d(1.0, 0.0);
  b.upper = Eigen::Vector2d(2.0, 0.5);
  b.mass = 1.0;
  return b;
}

Eigen::VectorXd random_simplex(Rng& rng, int l) {
  Eigen::VectorXd v(l);
  for (int i = 0; i < l; ++i) v(i) = -std::log(std::max(rng.uniform(), 1e-12));
  return v / v.sum();
}

void perturb_factor(Eigen::MatrixXd& L, Rng& rng, double scale) {
  for (int r = 0; r < L.rows(); ++r)
    for (int c = 0; c <= r; ++c) L(r, c) += rng.uniform(-scale, scale);
  floor_factor_diagonal(L, 0.1);
}

double column_rel_error(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  return (got - want).lpNorm<Eigen::Infinity>() /
         std::max(1.0, want.lpNorm<Eigen::Infinity>());
}

}  // namespace

DenseQp random_qp(Rng& rng, int max_dim, int max_ineq) {
  const int nx = 1 + static_cast<int>(rng.uniform() * max_dim) % max_dim;
  const int ne = nx > 1 ? static_cast<int>(rng.uniform() * std::min(2, nx - 1) + 0.5) : 0;
  const int ni = 1 + static_cast<int>(rng.uniform() * max_ineq) % max_ineq;

  Eigen::MatrixXd M(nx, nx);
  for (int r = 0; r < nx; ++r)
    for (int c = 0; c < nx; ++c) M(r, c) = rng.uniform(-1.0, 1.0);

  DenseQp qp;
  qp.Q = M.transpose() * M + (0.1 + rng.uniform()) * Eigen::MatrixXd::Identity(nx, nx);
  qp.q = Eigen::VectorXd::Zero(nx);
  for (int i = 0; i < nx; ++i) qp.q(i) = rng.uniform(-1.0, 1.0);

  Eigen::VectorXd x_feas(nx);
  for (int i = 0; i < nx; ++i) x_feas(i) = rng.uniform(-1.0, 1.0);

  qp.A = Eigen::MatrixXd(ne, nx);
  for (int r = 0; r < ne; ++r)
    for (int c = 0; c < nx; ++c) qp.A(r, c) = rng.uniform(-1.0, 1.0);
  qp.b = ne > 0 ? (qp.A * x_feas).eval() : Eigen::VectorXd();

  qp.C = Eigen::MatrixXd(ni, nx);
  for (int r = 0; r < ni; ++r)
    for (int c = 0; c < nx; ++c) qp.C(r, c) = rng.uniform(-1.0, 1.0);
  qp.d = qp.C * x_feas;
  for (int r = 0; r < ni; ++r) qp.d(r) += rng.uniform(0.05, 1.05);
  return qp;
}

MpcInstance random_mpc_instance(Rng& rng, bool with_state_box) {
  MpcInstance inst;
  const SchedulingBounds bounds = design_bounds_nominal();
  inst.model = discretize(msd_vertices(bounds), 0.05);
  inst.cfg.horizon = 10;
  inst.cfg.gamma = 0.95;
  inst.cfg.u_min = -1.0;
  inst.cfg.u_max = 1.0;
  if (with_state_box) {
    inst.cfg.has_state_box = true;
    inst.cfg.x_min = Eigen::Vector2d(-2.0, -2.0);
    inst.cfg.x_max = Eigen::Vector2d(2.0, 2.0);
  }
  inst.theta = MpcTheta::defaults(inst.model, inst.cfg);
  for (auto& L : inst.theta.L_P) perturb_factor(L, rng, 0.05);
  perturb_factor(inst.theta.L_W, rng, 0.05);
  perturb_factor(inst.theta.L_Ru, rng, 0.05);
  for (int i = 0; i < inst.theta.f.size(); ++i) inst.theta.f(i) = rng.uniform(-0.2, 0.2);
  if (with_state_box) inst.theta.eps.setConstant(0.05);

  inst.xhat = Eigen::Vector2d(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
  for (int j = 0; j <= inst.cfg.horizon; ++j)
    inst.schedule.push_back(random_simplex(rng, inst.model.num_vertices()));
  return inst;
}

MheInstance random_mhe_instance(Rng& rng) {
  MheInstance inst;
  const SchedulingBounds bounds = design_bounds_nominal();
  inst.model = discretize(msd_vertices(bounds), 0.05);
  inst.cfg.horizon = 10;
  inst.cfg.gamma = 0.95;
  inst.theta = MheTheta::defaults(inst.model.dims.n, inst.model.dims.e);
  perturb_factor(inst.theta.L_A, rng, 0.05);
  perturb_factor(inst.theta.L_R, rng, 0.1);

  const int N = inst.cfg.horizon;
  const int l = inst.model.num_vertices();
  const Eigen::VectorXd beta_star = random_simplex(rng, l);
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(l, 1.0 / l);

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2), B = Eigen::MatrixXd::Zero(2, 1);
  for (int i = 0; i < l; ++i) {
    A += beta_star(i) * inst.model.vertices[i].A;
    B += beta_star(i) * inst.model.vertices[i].B;
  }

  Eigen::VectorXd x(2);
  x << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
  inst.window.capacity = N;
  inst.window.num_vertices = l;
  inst.window.prior = x + 0.02 * Eigen::Vector2d(rng.uniform(-1, 1), rng.uniform(-1, 1));
  for (int j = 0; j < N; ++j) {
    Eigen::VectorXd u(1);
    u << rng.uniform(-1.0, 1.0);
    x = A * x + B * u;
    Eigen::VectorXd y = inst.model.vertices[0].C * x;
    inst.window.inputs.push_back(u);
    inst.window.measurements.push_back(y);
    inst.window.beta_ref.push_back(uniform);
  }
  return inst;
}

Eigen::MatrixXd fd_sensitivity(const NlpProblem& nlp, const PrimalDualSolution& base,
                               double delta) {
  SolverOptions tight;
  tight.kkt_tol = 1e-10;

  const int nz = nlp.num_vars + nlp.num_eq + nlp.num_ineq;
  Eigen::MatrixXd out(nz, nlp.num_params);

  auto solve_at = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
    PrimalDualSolution sol;
    if (nlp.problem_class == ProblemClass::ConvexQp) {
      sol = solve_qp(qp_data_from_nlp(nlp, p), tight, &base.primal);
    } else {
      NlpProblem shifted = nlp;
      shifted.params = p;
      sol = solve_sqp(shifted, base.primal, tight, &base);
    }
    if (sol.status != SolveStatus::Converged)
      throw std::runtime_error("fd_sensitivity: re-solve did not converge");
    Eigen::VectorXd z(nz);
    z << sol.primal, sol.eq_dual, sol.ineq_dual;
    return z;
  };

  for (int c = 0; c < nlp.num_params; ++c) {
    Eigen::VectorXd pp = nlp.params, pm = nlp.params;
    pp(c) += delta;
    pm(c) -= delta;
    out.col(c) = (solve_at(pp) - solve_at(pm)) / (2.0 * delta);
  }
  return out;
}

CheckResult check_qp_vs_brute_force(int count, std::uint64_t seed) {
  Rng rng(seed);
  CheckResult res;
  res.name = "qp_vs_brute_force";
  res.tolerance = 1e-7;
  double max_obj_err = 0.0, max_kkt = 0.0, max_primal_err = 0.0;
  int solved = 0;

  for (int i = 0; i < count; ++i) {
    const DenseQp qp = random_qp(rng);
    const PrimalDualSolution ip = solve_qp(qp);
    const PrimalDualSolution bf = brute_force_qp(qp);
    if (ip.status != SolveStatus::Converged || bf.status != SolveStatus::Converged) {
      res.detail = "solver failure on instance " + std::to_string(i);
      res.max_error = std::numeric_limits<double>::infinity();
      return res;
    }
    max_obj_err = std::max(max_obj_err, std::abs(ip.objective - bf.objective));
    max_kkt = std::max(max_kkt, ip.kkt_residual);
    max_primal_err =
        std::max(max_primal_err, (ip.primal - bf.primal).lpNorm<Eigen::Infinity>());
    solved += 1;
  }
  res.max_error = max_obj_err;
  res.pass = solved == count && max_obj_err <= 1e-7 && max_kkt <= 1e-8 && max_primal_err <= 1e-6;
  std::ostringstream d;
  d << solved << "/" << count << " solved, max |obj diff| " << max_obj_err << ", max KKT "
    << max_kkt << ", max primal diff " << max_primal_err;
  res.detail = d.str();
  return res;
}

CheckResult check_mpc_sensitivity_fd(int count, std::uint64_t seed) {
  Rng rng(seed);
  CheckResult res;
  res.name = "mpc_sensitivity_vs_fd";
  res.tolerance = 1e-4;
  double max_rel = 0.0;
  int tested = 0;

  for (int i = 0; i < count; ++i) {
    const MpcInstance inst = random_mpc_instance(rng, i % 2 == 1);
    const NlpProblem nlp = build_mpc(inst.model, inst.xhat, inst.schedule, inst.theta, inst.cfg);
    SolverOptions opts;
    const PrimalDualSolution sol = solve_qp(qp_data_from_nlp(nlp, nlp.params), opts);
    if (sol.status != SolveStatus::Converged) continue;
    SensitivityResult sens;
    try {
      sens = sensitivity(nlp, sol, nlp.params, opts);
    } catch (const SensitivityError&) {
      continue;  // weakly active instance; the criterion covers strict directions
    }
    const Eigen::MatrixXd fd = fd_sensitivity(nlp, sol);
    for (int c = 0; c < nlp.num_params; ++c)
      max_rel = std::max(max_rel, column_rel_error(sens.dz_dp.col(c), fd.col(c)));
    tested += 1;
  }
  res.max_error = max_rel;
  res.pass = tested >= std::max(1, count - 2) && max_rel <= res.tolerance;
  std::ostringstream d;
  d << tested << "/" << count << " strictly complementary, max rel err " << max_rel;
  res.detail = d.str();
  return res;
}

CheckResult check_mhe_sensitivity_fd(int count, std::uint64_t seed) {
  Rng rng(seed);
  CheckResult res;
  res.name = "mhe_sensitivity_vs_fd";
  res.tolerance = 1e-4;
  double max_rel = 0.0;
  int tested = 0;

  for (int i = 0; i < count; ++i) {
    MheInstance inst = random_mhe_instance(rng);
    const NlpProblem nlp = build_mhe(inst.model, inst.window, inst.theta, inst.cfg);
    SolverOptions tight;
    tight.kkt_tol = 1e-10;
    Eigen::VectorXd x0 = Eigen::VectorXd::Zero(nlp.num_vars);
    {
      // consistent initial guess: propagate the prior under the reference beta
      MheWindow w = inst.window;
      const int N = w.length();
      const int n = inst.model.dims.n, l = inst.model.num_vertices();
      x0.segment(0, n) = w.prior;
      for (int j = 1; j <= N; ++j) {
        x0.segment((N + 1) * n + (j - 1) * l, l) = w.beta_ref[j - 1];
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n), B = Eigen::MatrixXd::Zero(n, 1);
        for (int v = 0; v < l; ++v) {
          A += w.beta_ref[j - 1](v) * inst.model.vertices[v].A;
          B += w.beta_ref[j - 1](v) * inst.model.vertices[v].B;
        }
        x0.segment(j * n, n) = A * x0.segment((j - 1) * n, n) + B * w.inputs[j - 1];
      }
    }
    const PrimalDualSolution sol = solve_sqp(nlp, x0, tight);
    if (sol.status != SolveStatus::Converged) continue;
    SensitivityResult sens;
    try {
      sens = sensitivity(nlp, sol, nlp.params, tight);
    } catch (const SensitivityError&) {
      continue;
    }
    const Eigen::MatrixXd fd = fd_sensitivity(nlp, sol);
    for (int c = 0; c < nlp.num_params; ++c)
      max_rel = std::max(max_rel, column_rel_error(sens.dz_dp.col(c), fd.col(c)));
    tested += 1;
  }
  res.max_error = max_rel;
  res.pass = tested >= std::max(1, count - 1) && max_rel <= res.tolerance;
  std::ostringstream d;
  d << tested << "/" << count << " strictly complementary, max rel err " << max_rel;
  res.detail = d.str();
  return res;
}

CheckResult check_xi_composed_fd(int count, std::uint64_t seed) {
  Rng rng(seed);
  CheckResult res;
  res.name = "xi_composed_vs_fd";
  res.tolerance = 1e-3;
  double max_rel = 0.0;
  int tested = 0;

  const ThetaLayout layout =
      ThetaLayout::build({"L_A", "L_R", "L_P", "f", "L_W", "L_Ru"}, 2, 1, 1, 4, 0);
  SolverOptions tight;
  tight.kkt_tol = 1e-10;

  for (int i = 0; i < count; ++i) {
    MheInstance mhe_inst = random_mhe_instance(rng);
    MpcInstance mpc_inst = random_mpc_instance(rng, false);

    auto pipeline = [&](const MheTheta& mt, const MpcTheta& pt,
                        bool want_sens) -> std::pair<MheSolution, MpcSolution> {
      MheWindow w = mhe_inst.window;  // fresh copy: cold solve every time
      MheSolution ms = estimate(mhe_inst.model, w, mt, mhe_inst.cfg, tight, want_sens);
      MpcSolution ps = policy_with_schedule(mpc_inst.model, ms.latest_state(),
                                            beta_schedule(ms, mpc_inst.cfg), pt, mpc_inst.cfg,
                                            tight, want_sens);
      return {std::move(ms), std::move(ps)};
    };

    const auto [mhe_sol, mpc_sol] = pipeline(mhe_inst.theta, mpc_inst.theta, true);
    if (mhe_sol.status != SolveStatus::Converged || !mhe_sol.sensitivity_ok) continue;
    if (mpc_sol.status != SolveStatus::Converged || !mpc_sol.sensitivity_ok) continue;
    const Eigen::MatrixXd xi = jacobian_xi(mpc_sol, mhe_sol, layout);

    const Eigen::VectorXd theta0 = gather_theta(layout, mhe_inst.theta, mpc_inst.theta);
    Eigen::MatrixXd fd(layout.dim, 1);
    const double delta = 1e-5;
    bool ok = true;
    for (int c = 0; c < layout.dim && ok; ++c) {
      Eigen::VectorXd tp = theta0, tm = theta0;
      tp(c) += delta;
      tm(c) -= delta;
      MheTheta mt_p = mhe_inst.theta, mt_m = mhe_inst.theta;
      MpcTheta pt_p = mpc_inst.theta, pt_m = mpc_inst.theta;
      scatter_theta(layout, tp, mt_p, pt_p, mpc_inst.cfg);
      scatter_theta(layout, tm, mt_m, pt_m, mpc_inst.cfg);
      const auto [ms_p, ps_p] = pipeline(mt_p, pt_p, false);
      const auto [ms_m, ps_m] = pipeline(mt_m, pt_m, false);
      if (ps_p.status != SolveStatus::Converged || ps_m.status != SolveStatus::Converged) {
        ok = false;
        break;
      }
      fd(c, 0) = (ps_p.u0(0) - ps_m.u0(0)) / (2.0 * delta);
    }
    if (!ok) continue;
    max_rel = std::max(max_rel, column_rel_error(xi.col(0), fd.col(0)));
    tested += 1;
  }
  res.max_error = max_rel;
  res.pass = tested >= std::max(1, count - 2) && max_rel <= res.tolerance;
  std::ostringstream d;
  d << tested << "/" << count << " instances, max rel err " << max_rel;
  res.detail = d.str();
  return res;
}

namespace {

/// Run the estimator over a rollout generated by the given discrete design
/// dynamics (full-state measurement) and return the final-window solution
/// plus the matching truth states.
std::pair<MheSolution, Eigen::MatrixXd> run_recovery(const PolytopicModel& model_full,
                                                     const Eigen::VectorXd& beta_data,
                                                     int steps, std::uint64_t seed) {
  const int N = 10;
  const int n = model_full.dims.n;
  const int l = model_full.num_vertices();
  MheConfig cfg;
  cfg.horizon = N;
  cfg.gamma = 0.95;
  cfg.meas_dim = n;
  const MheTheta theta = MheTheta::defaults(n, n);

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n), B = Eigen::MatrixXd::Zero(n, 1);
  for (int i = 0; i < l; ++i) {
    A += beta_data(i) * model_full.vertices[i].A;
    B += beta_data(i) * model_full.vertices[i].B;
  }

  Rng rng(seed);
  Eigen::VectorXd x(2);
  x << 0.5, 0.0;
  std::vector<Eigen::VectorXd> truth;
  truth.push_back(x);

  MheWindow window = cold_start(x, N, n, l);
  MheSolution sol = estimate(model_full, window, theta, cfg, SolverOptions{}, false);
  for (int k = 0; k < steps; ++k) {
    Eigen::VectorXd u(1);
    u << rng.uniform(-1.0, 1.0);
    x = A * x + B * u;
    truth.push_back(x);
    window.push(u, x, sol);
    sol = estimate(model_full, window, theta, cfg, SolverOptions{}, false);
  }

  Eigen::MatrixXd truth_window(n, window.length() + 1);
  for (int j = 0; j <= window.length(); ++j)
    truth_window.col(j) = truth[truth.size() - 1 - window.length() + j];
  return {sol, truth_window};
}

}  // namespace

CheckResult check_mhe_vertex_recovery() {
  CheckResult res;
  res.name = "mhe_vertex_recovery";
  res.tolerance = 1e-6;

  const SchedulingBounds bounds = design_bounds_nominal();
  const PolytopicModel model_full = discretize(msd_vertices(bounds, true), 0.05);
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(4);
  e1(0) = 1.0;

  const auto [sol, truth] = run_recovery(model_full, e1, 260, 321);
  if (sol.status != SolveStatus::Converged) {
    res.detail = "estimator failed";
    res.max_error = std::numeric_limits<double>::infinity();
    return res;
  }
  double beta_err = 0.0;
  for (int j = 0; j < sol.beta.cols(); ++j)
    beta_err = std::max(beta_err, (sol.beta.col(j) - e1).lpNorm<Eigen::Infinity>());
  const double state_err = (sol.xhat - truth).lpNorm<Eigen::Infinity>();
  res.max_error = std::max(beta_err, state_err);
  res.pass = res.max_error <= res.tolerance;
  std::ostringstream d;
  d << "max |beta - e1| " << beta_err << ", max state err " << state_err;
  res.detail = d.str();
  return res;
}

CheckResult check_mhe_mixture_recovery() {
  CheckResult res;
  res.name = "mhe_mixture_recovery";
  res.tolerance = 1e-4;

  const SchedulingBounds bounds = design_bounds_nominal();
  const PolytopicModel model_full = discretize(msd_vertices(bounds, true), 0.05);
  const Eigen::VectorXd beta_star = Eigen::VectorXd::Constant(4, 0.25);

  const auto [sol, truth] = run_recovery(model_full, beta_star, 200, 654);
  if (sol.status != SolveStatus::Converged) {
    res.detail = "estimator failed";
    res.max_error = std::numeric_limits<double>::infinity();
    return res;
  }
  const double beta_err =
      (sol.beta.col(sol.beta.cols() - 1) - beta_star).lpNorm<Eigen::Infinity>();
  res.max_error = beta_err;
  res.pass = beta_err <= res.tolerance;
  std::ostringstream d;
  d << "|beta - beta*| " << beta_err << " (state err " << (sol.xhat - truth).lpNorm<Eigen::Infinity>()
    << ")";
  res.detail = d.str();
  return res;
}

CheckResult check_lstd_per_sample(int count, std::uint64_t seed) {
  Rng rng(seed);
  CheckResult res;
  res.name = "lstd_per_sample_oracle";
  res.tolerance = 1e-12;

  const int n = 2, n_theta = 7, m = 1;
  const double gamma = 0.95;
  const int n_ups = upsilon_dim(n);

  CriticParams critic;
  critic.nu = Eigen::VectorXd::Zero(n_ups);
  critic.w = Eigen::VectorXd::Zero(n_theta);
  for (int i = 0; i < n_ups; ++i) critic.nu(i) = rng.uniform(-1.0, 1.0);
  for (int i = 0; i < n_theta; ++i) critic.w(i) = rng.uniform(-1.0, 1.0);

  std::vector<Transition> batch;
  for (int i = 0; i < count; ++i) {
    Transition t;
    t.xhat = Eigen::Vector2d(rng.uniform(-1, 1), rng.uniform(-1, 1));
    t.xhat_next = Eigen::Vector2d(rng.uniform(-1, 1), rng.uniform(-1, 1));
    t.xi = Eigen::MatrixXd(n_theta, m);
    for (int r = 0; r < n_theta; ++r) t.xi(r, 0) = rng.uniform(-1, 1);
    t.action = Eigen::VectorXd::Constant(m, rng.uniform(-1, 1));
    t.pi = Eigen::VectorXd::Constant(m, rng.uniform(-1, 1));
    t.y = Eigen::VectorXd::Constant(1, rng.uniform(-1, 1));
    t.stage_cost = rng.uniform(0.0, 2.0);
    t.beta = Eigen::VectorXd::Constant(4, 0.25);
    t.valid = true;
    batch.push_back(t);
  }

  LstdAccumulators acc = LstdAccumulators::zero(n_ups, n_theta);
  lstd_accumulate(batch, acc, gamma, critic);

  // Independent per-sample reference with its own feature evaluation.
  auto upsilon_ref = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd u(6);
    u << 1.0, x(0), x(1), x(0) * x(0), x(0) * x(1), x(1) * x(1);
    return u;
  };
  Eigen::MatrixXd A_nu = Eigen::MatrixXd::Zero(n_ups, n_ups);
  Eigen::MatrixXd A_w = Eigen::MatrixXd::Zero(n_theta, n_theta);
  Eigen::VectorXd b_nu = Eigen::VectorXd::Zero(n_ups);
  Eigen::VectorXd b_w = Eigen::VectorXd::Zero(n_theta);
  Eigen::VectorXd b_theta = Eigen::VectorXd::Zero(n_theta);
  for (const auto& t : batch) {
    const Eigen::VectorXd up = upsilon_ref(t.xhat);
    const Eigen::VectorXd up1 = upsilon_ref(t.xhat_next);
    const Eigen::VectorXd psi = t.xi * (t.action - t.pi);
    for (int r = 0; r < n_ups; ++r)
      for (int c = 0; c < n_ups; ++c) A_nu(r, c) += up(r) * (up(c) - gamma * up1(c));
    for (int r = 0; r < n_theta; ++r)
      for (int c = 0; c < n_theta; ++c) A_w(r, c) += psi(r) * psi(c);
    b_nu += up * t.stage_cost;
    const double td = t.stage_cost + gamma * up1.dot(critic.nu) - up.dot(critic.nu);
    b_w += td * psi;
    b_theta += t.xi * t.xi.transpose() * critic.w;
  }

  double err = 0.0;
  err = std::max(err, (acc.A_nu - A_nu).lpNorm<Eigen::Infinity>());
  err = std::max(err, (acc.A_w - A_w).lpNorm<Eigen::Infinity>());
  err = std::max(err, (acc.b_nu - b_nu).lpNorm<Eigen::Infinity>());
  err = std::max(err, (acc.b_w - b_w).lpNorm<Eigen::Infinity>());
  err = std::max(err, (acc.b_theta - b_theta).lpNorm<Eigen::Infinity>());
  res.max_error = err;
  res.pass = err <= res.tolerance && acc.count == count;
  std::ostringstream d;
  d << count << " transitions, max accumulator diff " << err;
  res.detail = d.str();
  return res;
}

CheckResult check_closed_loop_invariants(std::uint64_t seed) {
  CheckResult res;
  res.name = "closed_loop_invariants";
  res.tolerance = 1e-8;

  ExperimentConfig cfg;
  cfg.true_bounds.lower = Eigen::Vector2d(0.5, 0.0);
  cfg.true_bounds.upper = Eigen::Vector2d(2.0, 0.2);
  cfg.design_bounds.lower = Eigen::Vector2d(1.0, 0.0);
  cfg.design_bounds.upper = Eigen::Vector2d(2.0, 0.5);
  cfg.episode_steps = 80;
  cfg.seed = seed;

  MheTheta mhe_theta;
  MpcTheta mpc_theta;
  initial_thetas(cfg, mhe_theta, mpc_theta);
  const ThetaLayout layout = ThetaLayout::build(cfg.learned_slices, 2, 1, 1, 4, 0);

  InvariantStats stats;
  for (int e = 0; e < 2; ++e) {
    EpisodeOptions eo;
    eo.explore = true;
    eo.collect_gradients = true;
    eo.seed = mix_seed(seed, e);
    eo.episode_index = e;
    const EpisodeResult r = run_episode(cfg, mhe_theta, mpc_theta, layout, eo);
    stats.merge(r.stats);
  }
  const double u_excess = std::max(0.0, stats.max_abs_u - 1.0);
  const double beta_neg = std::max(0.0, -stats.min_beta_entry - 1e-9);
  res.max_error = std::max({u_excess, stats.max_simplex_violation, beta_neg});
  res.pass = u_excess <= 1e-8 && stats.max_simplex_violation <= 1e-8 && beta_neg <= 0.0;
  std::ostringstream d;
  d << "max |u| " << stats.max_abs_u << ", max simplex violation " << stats.max_simplex_violation
    << ", min beta " << stats.min_beta_entry;
  res.detail = d.str();
  return res;
}

std::vector<CheckResult> run_verification(std::uint64_t seed) {
  std::vector<CheckResult> checks;
  checks.push_back(check_qp_vs_brute_force(50, mix_seed(seed, 1)));
  checks.push_back(check_mpc_sensitivity_fd(5, mix_seed(seed, 2)));
  checks.push_back(check_mhe_sensitivity_fd(2, mix_seed(seed, 3)));
  checks.push_back(check_xi_composed_fd(3, mix_seed(seed, 4)));
  checks.push_back(check_mhe_vertex_recovery());
  checks.push_back(check_mhe_mixture_recovery());
  checks.push_back(check_lstd_per_sample(100, mix_seed(seed, 5)));
  checks.push_back(check_closed_loop_invariants(mix_seed(seed, 6)));
  return checks;
}

}  // namespace lpvrl
