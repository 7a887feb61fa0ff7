#include "lpvrl/mpc.hpp"

#include <cmath>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "lpvrl/linalg.hpp"
#include "lpvrl/sensitivity.hpp"

namespace lpvrl {

MpcTheta MpcTheta::defaults(const PolytopicModel& discrete_model, const MpcConfig& cfg) {
  const int n = discrete_model.dims.n;
  const int m = discrete_model.dims.m;
  Eigen::MatrixXd W = Eigen::MatrixXd::Identity(n, n);
  W(0, 0) = 10.0;
  Eigen::MatrixXd Ru = 0.5 * Eigen::MatrixXd::Identity(m, m);

  MpcTheta t;
  t.L_W = Eigen::LLT<Eigen::MatrixXd>(W).matrixL();
  t.L_Ru = Eigen::LLT<Eigen::MatrixXd>(Ru).matrixL();
  for (const Eigen::MatrixXd& P : init_terminal_weights(discrete_model, W, Ru))
    t.L_P.push_back(Eigen::LLT<Eigen::MatrixXd>(P).matrixL());
  t.f = Eigen::VectorXd::Zero(n + m);
  t.eps = Eigen::VectorXd::Zero(cfg.num_slack_rows(n));
  return t;
}

Eigen::VectorXd MpcTheta::pack() const {
  Eigen::VectorXd out(dim());
  int off = 0;
  for (const auto& L : L_P) {
    out.segment(off, tri_size(static_cast<int>(L.rows()))) = pack_lower(L);
    off += tri_size(static_cast<int>(L.rows()));
  }
  out.segment(off, f.size()) = f;
  off += static_cast<int>(f.size());
  out.segment(off, tri_size(static_cast<int>(L_W.rows()))) = pack_lower(L_W);
  off += tri_size(static_cast<int>(L_W.rows()));
  out.segment(off, tri_size(static_cast<int>(L_Ru.rows()))) = pack_lower(L_Ru);
  off += tri_size(static_cast<int>(L_Ru.rows()));
  out.segment(off, eps.size()) = eps;
  return out;
}

void MpcTheta::unpack(const Eigen::VectorXd& packed) {
  if (packed.size() != dim()) throw std::invalid_argument("MpcTheta::unpack: size mismatch");
  const int n = static_cast<int>(L_W.rows());
  const int m = static_cast<int>(L_Ru.rows());
  int off = 0;
  for (auto& L : L_P) {
    L = unpack_lower(packed.segment(off, tri_size(n)), n);
    off += tri_size(n);
  }
  f = packed.segment(off, n + m);
  off += n + m;
  L_W = unpack_lower(packed.segment(off, tri_size(n)), n);
  off += tri_size(n);
  L_Ru = unpack_lower(packed.segment(off, tri_size(m)), m);
  off += tri_size(m);
  eps = packed.segment(off, eps.size());
}

int MpcTheta::dim() const {
  const int n = static_cast<int>(L_W.rows());
  const int m = static_cast<int>(L_Ru.rows());
  return static_cast<int>(L_P.size()) * tri_size(n) + (n + m) + tri_size(n) + tri_size(m) +
         static_cast<int>(eps.size());
}

void MpcTheta::validate(const MpcConfig& cfg, int n) const {
  const double floor = 1e-4 * (1.0 - 1e-9);
  auto check_diag = [&](const Eigen::MatrixXd& L, const char* name) {
    for (int i = 0; i < L.rows(); ++i)
      if (L(i, i) < floor) {
        std::ostringstream msg;
        msg << "MpcTheta: factor " << name << " diagonal below floor at " << i;
        throw std::invalid_argument(msg.str());
      }
  };
  for (const auto& L : L_P) check_diag(L, "L_P");
  check_diag(L_W, "L_W");
  check_diag(L_Ru, "L_Ru");
  if (cfg.has_state_box) {
    if (eps.size() != 2 * n) throw std::invalid_argument("MpcTheta: eps size mismatch");
    for (int i = 0; i < n; ++i) {
      const double half = 0.5 * (cfg.x_max(i) - cfg.x_min(i));
      if (std::abs(eps(i)) > half || std::abs(eps(n + i)) > half)
        throw std::invalid_argument("MpcTheta: eps exceeds half the state-box width");
    }
  }
}

std::vector<Eigen::VectorXd> beta_schedule(const MheSolution& mhe, const MpcConfig& cfg) {
  const int N = cfg.horizon;
  if (mhe.window_length() != N)
    throw std::invalid_argument("beta_schedule: MHE window length does not match the horizon");
  std::vector<Eigen::VectorXd> sched(N + 1);
  sched[0] = mhe.beta.col(0);
  for (int j = 1; j <= N; ++j) sched[j] = mhe.beta.col(j - 1);
  return sched;
}

namespace {

struct MpcContext {
  std::vector<Eigen::MatrixXd> Av, Bv;
  int n = 0, m = 0, l = 0, N = 0, n_h = 0;
  double gamma = 0.95;
  double u_min = -1.0, u_max = 1.0;
  double w_slack = 1e3, w_slack_f = 1e3;
  bool box = false;
  Eigen::VectorXd x_min, x_max;
  int theta_dim = 0;

  int iu(int j) const { return j * m; }
  int ix(int j) const { return N * m + j * n; }
  int is(int j) const { return N * m + (N + 1) * n + j * n_h; }
  int nvars() const { return N * m + (N + 1) * n + (N + 1) * n_h; }
  int neq() const { return n + N * n; }
  int nineq() const { return 2 * N * m + 2 * (N + 1) * n_h; }
  int nparams() const { return theta_dim + n + (N + 1) * l; }

  int input_upper_row(int j) const { return j * m; }
  int input_lower_row(int j) const { return N * m + j * m; }
  int box_row(int j) const { return 2 * N * m + j * n_h; }  // n upper rows then n lower rows
  int sig_row(int j) const { return 2 * N * m + (N + 1) * n_h + j * n_h; }

  // parameter offsets
  int p_theta() const { return 0; }
  int p_xhat() const { return theta_dim; }
  int p_sched(int j) const { return theta_dim + n + j * l; }

  MpcTheta unpack_theta(const Eigen::VectorXd& p) const {
    MpcTheta t;
    t.L_P.assign(l, Eigen::MatrixXd::Zero(n, n));
    t.L_W = Eigen::MatrixXd::Zero(n, n);
    t.L_Ru = Eigen::MatrixXd::Zero(m, m);
    t.f = Eigen::VectorXd::Zero(n + m);
    t.eps = Eigen::VectorXd::Zero(box ? 2 * n : 0);
    t.unpack(p.segment(p_theta(), theta_dim));
    return t;
  }

  DenseQp assemble(const Eigen::VectorXd& p) const {
    const MpcTheta t = unpack_theta(p);
    const Eigen::VectorXd xhat = p.segment(p_xhat(), n);
    const Eigen::MatrixXd W = t.L_W * t.L_W.transpose();
    const Eigen::MatrixXd Ru = t.L_Ru * t.L_Ru.transpose();

    std::vector<Eigen::MatrixXd> Pv;
    Pv.reserve(l);
    for (int i = 0; i < l; ++i) Pv.push_back(t.L_P[i] * t.L_P[i].transpose());
    Eigen::MatrixXd P_terminal = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < l; ++i) P_terminal += p(p_sched(N) + i) * Pv[i];

    DenseQp qp;
    qp.Q = Eigen::MatrixXd::Zero(nvars(), nvars());
    qp.q = Eigen::VectorXd::Zero(nvars());
    qp.A = Eigen::MatrixXd::Zero(neq(), nvars());
    qp.b = Eigen::VectorXd::Zero(neq());
    qp.C = Eigen::MatrixXd::Zero(nineq(), nvars());
    qp.d = Eigen::VectorXd::Zero(nineq());

    double gj = 1.0;
    for (int j = 0; j < N; ++j) {
      qp.Q.block(iu(j), iu(j), m, m) = 2.0 * gj * Ru;
      qp.Q.block(ix(j), ix(j), n, n) = 2.0 * gj * W;
      qp.q.segment(ix(j), n) = gj * t.f.head(n);
      qp.q.segment(iu(j), m) = gj * t.f.tail(m);
      if (n_h > 0) qp.q.segment(is(j), n_h).setConstant(gj * w_slack);
      gj *= gamma;
    }
    const double gN = gj;  // gamma^N
    qp.Q.block(ix(N), ix(N), n, n) = 2.0 * gN * P_terminal;
    if (n_h > 0) qp.q.segment(is(N), n_h).setConstant(gN * w_slack_f);

    // x_0 = xhat
    qp.A.block(0, ix(0), n, n).setIdentity();
    qp.b.head(n) = xhat;
    // dynamics with the frozen schedule
    for (int j = 0; j < N; ++j) {
      const int row = n + j * n;
      Eigen::MatrixXd Aj = Eigen::MatrixXd::Zero(n, n);
      Eigen::MatrixXd Bj = Eigen::MatrixXd::Zero(n, m);
      for (int i = 0; i < l; ++i) {
        const double bi = p(p_sched(j) + i);
        Aj += bi * Av[i];
        Bj += bi * Bv[i];
      }
      qp.A.block(row, ix(j + 1), n, n).setIdentity();
      qp.A.block(row, ix(j), n, n) = -Aj;
      qp.A.block(row, iu(j), n, m) = -Bj;
    }

    // hard input bounds
    for (int j = 0; j < N; ++j) {
      qp.C.block(input_upper_row(j), iu(j), m, m).setIdentity();
      qp.d.segment(input_upper_row(j), m).setConstant(u_max);
      qp.C.block(input_lower_row(j), iu(j), m, m) = -Eigen::MatrixXd::Identity(m, m);
      qp.d.segment(input_lower_row(j), m).setConstant(-u_min);
    }
    // softened state box with backoff, plus slack nonnegativity
    if (n_h > 0) {
      for (int j = 0; j <= N; ++j) {
        for (int i = 0; i < n; ++i) {
          const int ru = box_row(j) + i;
          qp.C(ru, ix(j) + i) = 1.0;
          qp.C(ru, is(j) + i) = -1.0;
          qp.d(ru) = x_max(i) - t.eps(i);
          const int rl = box_row(j) + n + i;
          qp.C(rl, ix(j) + i) = -1.0;
          qp.C(rl, is(j) + n + i) = -1.0;
          qp.d(rl) = -x_min(i) - t.eps(n + i);
        }
        qp.C.block(sig_row(j), is(j), n_h, n_h) = -Eigen::MatrixXd::Identity(n_h, n_h);
      }
    }
    return qp;
  }
};

using CtxPtr = std::shared_ptr<const MpcContext>;

CtxPtr make_context(const PolytopicModel& model, const MpcTheta& theta, const MpcConfig& cfg) {
  if (model.vertices.empty() || model.vertices[0].time_domain != TimeDomain::Discrete)
    throw std::invalid_argument("build_mpc: model must be discrete-time");
  if (cfg.horizon < 1) throw std::invalid_argument("build_mpc: horizon must be >= 1");
  if (cfg.u_min >= cfg.u_max) throw std::invalid_argument("build_mpc: u_min must be < u_max");

  auto ctx = std::make_shared<MpcContext>();
  for (const auto& v : model.vertices) {
    ctx->Av.push_back(v.A);
    ctx->Bv.push_back(v.B);
  }
  ctx->n = model.dims.n;
  ctx->m = model.dims.m;
  ctx->l = model.num_vertices();
  ctx->N = cfg.horizon;
  ctx->n_h = cfg.num_slack_rows(ctx->n);
  ctx->gamma = cfg.gamma;
  ctx->u_min = cfg.u_min;
  ctx->u_max = cfg.u_max;
  ctx->w_slack = cfg.slack_weight;
  ctx->w_slack_f = cfg.slack_weight_terminal;
  ctx->box = cfg.has_state_box;
  if (cfg.has_state_box) {
    ctx->x_min = cfg.x_min;
    ctx->x_max = cfg.x_max;
  }
  ctx->theta_dim = theta.dim();
  return ctx;
}

Eigen::VectorXd stack_params(const MpcContext& c, const MpcTheta& theta,
                             const Eigen::VectorXd& xhat,
                             const std::vector<Eigen::VectorXd>& schedule) {
  if (static_cast<int>(schedule.size()) != c.N + 1)
    throw std::invalid_argument("build_mpc: schedule must have N+1 stages");
  Eigen::VectorXd p(c.nparams());
  p.segment(c.p_theta(), c.theta_dim) = theta.pack();
  p.segment(c.p_xhat(), c.n) = xhat;
  for (int j = 0; j <= c.N; ++j) {
    require_simplex(schedule[j]);
    p.segment(c.p_sched(j), c.l) = schedule[j];
  }
  return p;
}

}  // namespace

NlpProblem build_mpc(const PolytopicModel& model, const Eigen::VectorXd& xhat,
                     const std::vector<Eigen::VectorXd>& schedule, const MpcTheta& theta,
                     const MpcConfig& cfg) {
  theta.validate(cfg, model.dims.n);
  const CtxPtr c = make_context(model, theta, cfg);

  NlpProblem nlp;
  nlp.num_vars = c->nvars();
  nlp.num_eq = c->neq();
  nlp.num_ineq = c->nineq();
  nlp.num_params = c->nparams();
  nlp.params = stack_params(*c, theta, xhat, schedule);
  nlp.problem_class = ProblemClass::ConvexQp;

  nlp.cost = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
    return qp_objective(c->assemble(p), x);
  };
  nlp.cost_grad = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
    const DenseQp qp = c->assemble(p);
    return (qp.Q * x + qp.q).eval();
  };
  nlp.eq = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
    const DenseQp qp = c->assemble(p);
    return (qp.A * x - qp.b).eval();
  };
  nlp.eq_jac = [c](const Eigen::VectorXd&, const Eigen::VectorXd& p) {
    return c->assemble(p).A;
  };
  nlp.ineq = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
    const DenseQp qp = c->assemble(p);
    return (qp.C * x - qp.d).eval();
  };
  nlp.ineq_jac = [c](const Eigen::VectorXd&, const Eigen::VectorXd& p) {
    return c->assemble(p).C;
  };
  nlp.lagrangian_hess = [c](const Eigen::VectorXd&, const Eigen::VectorXd&,
                            const Eigen::VectorXd&, const Eigen::VectorXd& p) {
    return c->assemble(p).Q;
  };

  nlp.grad_lag_dp = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& lam,
                        const Eigen::VectorXd&, const Eigen::VectorXd& p) {
    const MpcTheta t = c->unpack_theta(p);
    const int n = c->n, m = c->m, l = c->l, N = c->N;
    const int tri_n = tri_size(n), tri_m = tri_size(m);
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(c->nvars(), c->nparams());
    const double gN = std::pow(c->gamma, N);
    const Eigen::VectorXd xN = x.segment(c->ix(N), n);

    // terminal factors
    for (int i = 0; i < l; ++i) {
      const double bi = p(c->p_sched(N) + i);
      for (int tt = 0; tt < tri_n; ++tt) {
        const auto [a, b] = tri_entry_position(n, tt);
        D.block(c->ix(N), i * tri_n + tt, n, 1) =
            2.0 * gN * bi * (dLLt_dentry(t.L_P[i], a, b) * xN);
      }
    }
    const int f_off = l * tri_n;
    const int w_off = f_off + n + m;
    const int ru_off = w_off + tri_n;
    double gj = 1.0;
    for (int j = 0; j < N; ++j) {
      for (int ci = 0; ci < n; ++ci) D(c->ix(j) + ci, f_off + ci) += gj;
      for (int ci = 0; ci < m; ++ci) D(c->iu(j) + ci, f_off + n + ci) += gj;
      const Eigen::VectorXd xj = x.segment(c->ix(j), n);
      const Eigen::VectorXd uj = x.segment(c->iu(j), m);
      for (int tt = 0; tt < tri_n; ++tt) {
        const auto [a, b] = tri_entry_position(n, tt);
        D.block(c->ix(j), w_off + tt, n, 1) += 2.0 * gj * (dLLt_dentry(t.L_W, a, b) * xj);
      }
      for (int tt = 0; tt < tri_m; ++tt) {
        const auto [a, b] = tri_entry_position(m, tt);
        D.block(c->iu(j), ru_off + tt, m, 1) += 2.0 * gj * (dLLt_dentry(t.L_Ru, a, b) * uj);
      }
      gj *= c->gamma;
    }

    // schedule columns: dynamics Jacobian depends on beta_j, terminal cost on beta_N
    for (int j = 0; j < N; ++j) {
      const Eigen::VectorXd lam_j = lam.segment(n + j * n, n);
      for (int i = 0; i < l; ++i) {
        const int col = c->p_sched(j) + i;
        D.block(c->ix(j), col, n, 1) += -(c->Av[i].transpose() * lam_j);
        D.block(c->iu(j), col, m, 1) += -(c->Bv[i].transpose() * lam_j);
      }
    }
    for (int i = 0; i < l; ++i) {
      const Eigen::MatrixXd Pi = t.L_P[i] * t.L_P[i].transpose();
      D.block(c->ix(N), c->p_sched(N) + i, n, 1) += 2.0 * gN * (Pi * xN);
    }
    return D;
  };

  nlp.eq_dp = [c](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    const int n = c->n, m = c->m, l = c->l, N = c->N;
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(c->neq(), c->nparams());
    D.block(0, c->p_xhat(), n, n) = -Eigen::MatrixXd::Identity(n, n);
    for (int j = 0; j < N; ++j) {
      const Eigen::VectorXd xj = x.segment(c->ix(j), n);
      const Eigen::VectorXd uj = x.segment(c->iu(j), m);
      for (int i = 0; i < l; ++i)
        D.block(n + j * n, c->p_sched(j) + i, n, 1) = -(c->Av[i] * xj + c->Bv[i] * uj);
    }
    return D;
  };

  nlp.ineq_dp = [c](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(c->nineq(), c->nparams());
    if (c->n_h > 0) {
      const int eps_off = c->l * tri_size(c->n) + (c->n + c->m) + tri_size(c->n) +
                          tri_size(c->m);
      for (int j = 0; j <= c->N; ++j)
        for (int r = 0; r < c->n_h; ++r) D(c->box_row(j) + r, eps_off + r) = 1.0;
    }
    return D;
  };

  return nlp;
}

MpcSolution policy_with_schedule(const PolytopicModel& model, const Eigen::VectorXd& xhat,
                                 const std::vector<Eigen::VectorXd>& schedule,
                                 const MpcTheta& theta, const MpcConfig& cfg,
                                 const SolverOptions& opts, bool want_sensitivities,
                                 const Eigen::VectorXd* warm_primal) {
  theta.validate(cfg, model.dims.n);
  const CtxPtr c = make_context(model, theta, cfg);
  const Eigen::VectorXd p = stack_params(*c, theta, xhat, schedule);
  const DenseQp qp = c->assemble(p);

  PrimalDualSolution sol = solve_qp(qp, opts, warm_primal);
  if (sol.status == SolveStatus::Infeasible)
    throw std::runtime_error(
        "MPC QP infeasible: input bounds contradict (fatal configuration error)");

  const int n = c->n, m = c->m, l = c->l, N = c->N;
  MpcSolution out;
  out.status = sol.status;
  out.u0 = sol.primal.segment(0, m);
  out.u_pred.resize(m, N);
  out.x_pred.resize(n, N + 1);
  for (int j = 0; j < N; ++j) out.u_pred.col(j) = sol.primal.segment(c->iu(j), m);
  for (int j = 0; j <= N; ++j) out.x_pred.col(j) = sol.primal.segment(c->ix(j), n);
  out.slacks = c->n_h > 0 ? sol.primal.tail((N + 1) * c->n_h).eval() : Eigen::VectorXd();
  out.cost = sol.objective;

  const int t_dim = theta.dim();
  out.dpi_dtheta = Eigen::MatrixXd::Zero(t_dim, m);
  out.dpi_dxhat = Eigen::MatrixXd::Zero(n, m);
  out.dpi_dbeta = Eigen::MatrixXd::Zero(l * (N + 1), m);

  if (want_sensitivities && sol.status == SolveStatus::Converged) {
    NlpProblem nlp = build_mpc(model, xhat, schedule, theta, cfg);
    try {
      const SensitivityResult sens = sensitivity(nlp, sol, p, opts);
      out.kkt_cond = sens.kkt_cond;
      const Eigen::MatrixXd du0_dp = sens.dz_dp.topRows(m);  // m x nparams
      out.dpi_dtheta = du0_dp.middleCols(c->p_theta(), t_dim).transpose();
      out.dpi_dxhat = du0_dp.middleCols(c->p_xhat(), n).transpose();
      out.dpi_dbeta = du0_dp.rightCols(l * (N + 1)).transpose();
      out.sensitivity_ok = true;
    } catch (const SensitivityError&) {
      out.sensitivity_ok = false;
    }
  }
  return out;
}

MpcSolution policy(const PolytopicModel& model, const MheSolution& mhe, const MpcTheta& theta,
                   const MpcConfig& cfg, const SolverOptions& opts, bool want_sensitivities,
                   const Eigen::VectorXd* warm_primal) {
  return policy_with_schedule(model, mhe.latest_state(), beta_schedule(mhe, cfg), theta, cfg,
                              opts, want_sensitivities, warm_primal);
}

Eigen::MatrixXd solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& W, const Eigen::MatrixXd& R, double tol,
                           int max_iter) {
  Eigen::MatrixXd P = W;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::MatrixXd BtP = B.transpose() * P;
    const Eigen::MatrixXd G = R + BtP * B;
    const Eigen::MatrixXd K = G.ldlt().solve(BtP * A);
    Eigen::MatrixXd P1 = W + A.transpose() * P * A - A.transpose() * P * B * K;
    P1 = 0.5 * (P1 + P1.transpose());
    if (!P1.allFinite() || P1.norm() > 1e12)
      throw std::runtime_error("solve_dare: iteration diverged (unstabilizable pair?)");
    if ((P1 - P).lpNorm<Eigen::Infinity>() <= tol * std::max(1.0, P1.lpNorm<Eigen::Infinity>()))
      return P1;
    P = P1;
  }
  throw std::runtime_error("solve_dare: no convergence within iteration limit");
}

std::vector<Eigen::MatrixXd> init_terminal_weights(const PolytopicModel& discrete_model,
                                                   const Eigen::MatrixXd& W,
                                                   const Eigen::MatrixXd& R) {
  if (discrete_model.vertices.empty() ||
      discrete_model.vertices[0].time_domain != TimeDomain::Discrete)
    throw std::invalid_argument("init_terminal_weights: model must be discrete-time");
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t i = 0; i < discrete_model.vertices.size(); ++i) {
    const auto& v = discrete_model.vertices[i];
    try {
      out.push_back(solve_dare(v.A, v.B, W, R));
    } catch (const std::runtime_error& err) {
      std::cerr << "init_terminal_weights: vertex " << i << ": " << err.what()
                << "; falling back to identity\n";
      out.push_back(Eigen::MatrixXd::Identity(v.A.rows(), v.A.cols()));
    }
  }
  return out;
}

}  // namespace lpvrl
