#include "lpvrl/mhe.hpp"

#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "lpvrl/linalg.hpp"

namespace lpvrl {

MheTheta MheTheta::defaults(int n, int e) {
  MheTheta t;
  t.L_A = Eigen::MatrixXd::Identity(n, n);
  t.L_R = std::sqrt(10.0) * Eigen::MatrixXd::Identity(e, e);
  return t;
}

Eigen::VectorXd MheTheta::pack() const {
  Eigen::VectorXd out(dim());
  out << pack_lower(L_A), pack_lower(L_R);
  return out;
}

void MheTheta::unpack(const Eigen::VectorXd& packed) {
  const int n = static_cast<int>(L_A.rows());
  const int e = static_cast<int>(L_R.rows());
  if (packed.size() != tri_size(n) + tri_size(e))
    throw std::invalid_argument("MheTheta::unpack: size mismatch");
  L_A = unpack_lower(packed.head(tri_size(n)), n);
  L_R = unpack_lower(packed.tail(tri_size(e)), e);
}

int MheTheta::dim() const {
  return tri_size(static_cast<int>(L_A.rows())) + tri_size(static_cast<int>(L_R.rows()));
}

int MheTheta::dim(int n, int e) { return tri_size(n) + tri_size(e); }

Eigen::VectorXd MheSolution::latest_beta() const {
  if (beta.cols() == 0) throw std::logic_error("MheSolution: no beta stages");
  return beta.col(beta.cols() - 1);
}

void MheWindow::push(const Eigen::VectorXd& u, const Eigen::VectorXd& y, const MheSolution& last) {
  const bool slide = full();
  if (slide) {
    prior = advance_prior(last);
    inputs.pop_front();
    measurements.pop_front();
    shift_since_solve += 1;
  }
  inputs.push_back(u);
  measurements.push_back(y);

  // Re-anchor the delta-beta references to the latest window's estimates.
  // New stage j aligns with stage j + slide of the previous solution; stages
  // beyond the previous window extend by persistence.
  const int Nw = length();
  const int Nw_prev = last.window_length();
  beta_ref.clear();
  const Eigen::VectorXd uniform =
      Eigen::VectorXd::Constant(num_vertices, 1.0 / std::max(num_vertices, 1));
  for (int j = 1; j <= Nw; ++j) {
    const int jp = j + (slide ? 1 : 0);
    if (jp >= 1 && jp <= Nw_prev)
      beta_ref.push_back(last.beta.col(jp - 1));
    else if (Nw_prev >= 1)
      beta_ref.push_back(last.beta.col(Nw_prev - 1));
    else
      beta_ref.push_back(uniform);
  }
}

MheWindow cold_start(const Eigen::VectorXd& y0, int capacity, int state_dim, int num_vertices) {
  if (y0.size() < 1) throw std::invalid_argument("cold_start: need at least one measurement");
  if (capacity < 1) throw std::invalid_argument("cold_start: capacity must be >= 1");
  MheWindow w;
  w.capacity = capacity;
  w.num_vertices = num_vertices;
  if (y0.size() == state_dim) {
    w.prior = y0;
  } else {
    w.prior = Eigen::VectorXd::Zero(state_dim);
    w.prior(0) = y0(0);
  }
  return w;
}

Eigen::VectorXd advance_prior(const MheSolution& solution) {
  if (solution.xhat.cols() < 2)
    throw std::invalid_argument("advance_prior: window has no second state");
  return solution.xhat.col(1);
}

namespace {

struct MheContext {
  std::vector<Eigen::MatrixXd> Av, Bv, Cv;
  std::vector<Eigen::VectorXd> y, u, ref;
  Eigen::VectorXd prior;
  double gamma = 0.95;
  int n = 0, m = 0, e = 0, l = 0, Nw = 0;
  int tri_n = 0, tri_e = 0;

  int ix(int j) const { return j * n; }
  int ib(int j) const { return (Nw + 1) * n + (j - 1) * l; }
  int nvars() const { return (Nw + 1) * n + Nw * l; }
  double w(int j) const { return std::pow(gamma, Nw - j); }
  double w_arrival() const { return std::pow(gamma, Nw); }

  Eigen::MatrixXd A_of(const Eigen::VectorXd& beta) const {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < l; ++i) M += beta(i) * Av[i];
    return M;
  }
  Eigen::MatrixXd B_of(const Eigen::VectorXd& beta) const {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, m);
    for (int i = 0; i < l; ++i) M += beta(i) * Bv[i];
    return M;
  }
  Eigen::MatrixXd C_of(const Eigen::VectorXd& beta) const {
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(e, n);
    for (int i = 0; i < l; ++i) M += beta(i) * Cv[i];
    return M;
  }
  void theta_matrices(const Eigen::VectorXd& p, Eigen::MatrixXd& Amat,
                      Eigen::MatrixXd& Rmat) const {
    const Eigen::MatrixXd LA = unpack_lower(p.head(tri_n), n);
    const Eigen::MatrixXd LR = unpack_lower(p.tail(tri_e), e);
    Amat = LA * LA.transpose();
    Rmat = LR * LR.transpose();
  }
};

using CtxPtr = std::shared_ptr<const MheContext>;

}  // namespace

NlpProblem build_mhe(const PolytopicModel& model, const MheWindow& window, const MheTheta& theta,
                     const MheConfig& cfg) {
  const int Nw = window.length();
  if (Nw < 1) throw std::invalid_argument("build_mhe: underfull window, cold-start first");
  if (model.vertices.empty() || model.vertices[0].time_domain != TimeDomain::Discrete)
    throw std::invalid_argument("build_mhe: model must be discrete-time");
  if (cfg.gamma <= 0.0 || cfg.gamma >= 1.0)
    throw std::invalid_argument("build_mhe: gamma must lie in (0,1)");

  auto ctx = std::make_shared<MheContext>();
  for (const auto& v : model.vertices) {
    ctx->Av.push_back(v.A);
    ctx->Bv.push_back(v.B);
    ctx->Cv.push_back(v.C);
  }
  ctx->y.assign(window.measurements.begin(), window.measurements.end());
  ctx->u.assign(window.inputs.begin(), window.inputs.end());
  ctx->ref.assign(window.beta_ref.begin(), window.beta_ref.end());
  ctx->prior = window.prior;
  ctx->gamma = cfg.gamma;
  ctx->n = model.dims.n;
  ctx->m = model.dims.m;
  ctx->e = static_cast<int>(model.vertices[0].C.rows());
  ctx->l = model.num_vertices();
  ctx->Nw = Nw;
  ctx->tri_n = tri_size(ctx->n);
  ctx->tri_e = tri_size(ctx->e);

  if (static_cast<int>(ctx->ref.size()) != Nw)
    throw std::invalid_argument("build_mhe: beta reference count mismatch");

  const CtxPtr c = ctx;
  NlpProblem nlp;
  nlp.num_vars = c->nvars();
  nlp.num_eq = Nw * (c->n + 1);
  nlp.num_ineq = 2 * Nw * c->l;
  nlp.num_params = c->tri_n + c->tri_e;
  nlp.params = theta.pack();
  nlp.problem_class = ProblemClass::BilinearNlp;

  nlp.cost = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
    Eigen::MatrixXd Amat, Rmat;
    c->theta_matrices(p, Amat, Rmat);
    const Eigen::VectorXd dev = x.segment(c->ix(0), c->n) - c->prior;
    double cost = c->w_arrival() * dev.dot(Amat * dev);
    for (int j = 1; j <= c->Nw; ++j) {
      const Eigen::VectorXd bj = x.segment(c->ib(j), c->l);
      const Eigen::VectorXd xj = x.segment(c->ix(j), c->n);
      const Eigen::VectorXd r = c->y[j - 1] - c->C_of(bj) * xj;
      const Eigen::VectorXd db = bj - c->ref[j - 1];
      cost += c->w(j) * (r.dot(Rmat * r) + db.squaredNorm());
    }
    return cost;
  };

  nlp.cost_grad = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
    Eigen::MatrixXd Amat, Rmat;
    c->theta_matrices(p, Amat, Rmat);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(c->nvars());
    const Eigen::VectorXd dev = x.segment(c->ix(0), c->n) - c->prior;
    g.segment(c->ix(0), c->n) += 2.0 * c->w_arrival() * (Amat * dev);
    for (int j = 1; j <= c->Nw; ++j) {
      const Eigen::VectorXd bj = x.segment(c->ib(j), c->l);
      const Eigen::VectorXd xj = x.segment(c->ix(j), c->n);
      const Eigen::MatrixXd Cb = c->C_of(bj);
      const Eigen::VectorXd r = c->y[j - 1] - Cb * xj;
      const double wj = c->w(j);
      g.segment(c->ix(j), c->n) += -2.0 * wj * (Cb.transpose() * (Rmat * r));
      for (int i = 0; i < c->l; ++i)
        g(c->ib(j) + i) += -2.0 * wj * (c->Cv[i] * xj).dot(Rmat * r);
      g.segment(c->ib(j), c->l) += 2.0 * wj * (bj - c->ref[j - 1]);
    }
    return g;
  };

  nlp.eq = [c](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    Eigen::VectorXd v(c->Nw * (c->n + 1));
    for (int j = 1; j <= c->Nw; ++j) {
      const Eigen::VectorXd bj = x.segment(c->ib(j), c->l);
      const Eigen::VectorXd xp = x.segment(c->ix(j - 1), c->n);
      v.segment((j - 1) * c->n, c->n) =
          x.segment(c->ix(j), c->n) - c->A_of(bj) * xp - c->B_of(bj) * c->u[j - 1];
      v(c->Nw * c->n + (j - 1)) = bj.sum() - 1.0;
    }
    return v;
  };

  nlp.eq_jac = [c](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(c->Nw * (c->n + 1), c->nvars());
    for (int j = 1; j <= c->Nw; ++j) {
      const int row = (j - 1) * c->n;
      const Eigen::VectorXd bj = x.segment(c->ib(j), c->l);
      const Eigen::VectorXd xp = x.segment(c->ix(j - 1), c->n);
      J.block(row, c->ix(j), c->n, c->n).setIdentity();
      J.block(row, c->ix(j - 1), c->n, c->n) = -c->A_of(bj);
      for (int i = 0; i < c->l; ++i)
        J.block(row, c->ib(j) + i, c->n, 1) = -(c->Av[i] * xp + c->Bv[i] * c->u[j - 1]);
      J.block(c->Nw * c->n + (j - 1), c->ib(j), 1, c->l).setOnes();
    }
    return J;
  };

  nlp.ineq = [c](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    Eigen::VectorXd v(2 * c->Nw * c->l);
    for (int j = 1; j <= c->Nw; ++j) {
      const Eigen::VectorXd bj = x.segment(c->ib(j), c->l);
      v.segment((j - 1) * c->l, c->l) = -bj;
      v.segment(c->Nw * c->l + (j - 1) * c->l, c->l) = bj.array() - 1.0;
    }
    return v;
  };

  nlp.ineq_jac = [c](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * c->Nw * c->l, c->nvars());
    for (int j = 1; j <= c->Nw; ++j) {
      J.block((j - 1) * c->l, c->ib(j), c->l, c->l) = -Eigen::MatrixXd::Identity(c->l, c->l);
      J.block(c->Nw * c->l + (j - 1) * c->l, c->ib(j), c->l, c->l) =
          Eigen::MatrixXd::Identity(c->l, c->l);
    }
    return J;
  };

  nlp.lagrangian_hess = [c](const Eigen::VectorXd& x, const Eigen::VectorXd& lam,
                            const Eigen::VectorXd&, const Eigen::VectorXd& p) {
    Eigen::MatrixXd Amat, Rmat;
    c->theta_matrices(p, Amat, Rmat);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(c->nvars(), c->nvars());
    H.block(c->ix(0), c->ix(0), c->n, c->n) = 2.0 * c->w_arrival() * Amat;
    for (int j = 1; j <= c->Nw; ++j) {
      const double wj = c->w(j);
      const Eigen::VectorXd bj = x.segment(c->ib(j), c->l);
      const Eigen::VectorXd xj = x.segment(c->ix(j), c->n);
      const Eigen::MatrixXd Cb = c->C_of(bj);
      const Eigen::VectorXd r = c->y[j - 1] - Cb * xj;

      H.block(c->ix(j), c->ix(j), c->n, c->n) += 2.0 * wj * (Cb.transpose() * Rmat * Cb);
      for (int i = 0; i < c->l; ++i) {
        const Eigen::VectorXd Ci_x = c->Cv[i] * xj;
        const Eigen::VectorXd cross =
            wj * (2.0 * (Cb.transpose() * (Rmat * Ci_x)) - 2.0 * (c->Cv[i].transpose() * (Rmat * r)));
        H.block(c->ix(j), c->ib(j) + i, c->n, 1) += cross;
        H.block(c->ib(j) + i, c->ix(j), 1, c->n) += cross.transpose();
        for (int i2 = 0; i2 < c->l; ++i2)
          H(c->ib(j) + i, c->ib(j) + i2) += 2.0 * wj * Ci_x.dot(Rmat * (c->Cv[i2] * xj));
      }
      H.block(c->ib(j), c->ib(j), c->l, c->l) +=
          2.0 * wj * Eigen::MatrixXd::Identity(c->l, c->l);

      // Bilinear dynamics curvature: cross terms between x_{j-1} and beta_j.
      const Eigen::VectorXd lam_j = lam.segment((j - 1) * c->n, c->n);
      for (int i = 0; i < c->l; ++i) {
        const Eigen::VectorXd cross = -(c->Av[i].transpose() * lam_j);
        H.block(c->ix(j - 1), c->ib(j) + i, c->n, 1) += cross;
        H.block(c->ib(j) + i, c->ix(j - 1), 1, c->n) += cross.transpose();
      }
    }
    return H;
  };

  nlp.grad_lag_dp = [c](const Eigen::VectorXd& x, const Eigen::VectorXd&, const Eigen::VectorXd&,
                        const Eigen::VectorXd& p) {
    const Eigen::MatrixXd LA = unpack_lower(p.head(c->tri_n), c->n);
    const Eigen::MatrixXd LR = unpack_lower(p.tail(c->tri_e), c->e);
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(c->nvars(), c->tri_n + c->tri_e);

    const Eigen::VectorXd dev = x.segment(c->ix(0), c->n) - c->prior;
    for (int t = 0; t < c->tri_n; ++t) {
      const auto [a, b] = tri_entry_position(c->n, t);
      D.block(c->ix(0), t, c->n, 1) = 2.0 * c->w_arrival() * (dLLt_dentry(LA, a, b) * dev);
    }
    for (int t = 0; t < c->tri_e; ++t) {
      const auto [a, b] = tri_entry_position(c->e, t);
      const Eigen::MatrixXd dR = dLLt_dentry(LR, a, b);
      for (int j = 1; j <= c->Nw; ++j) {
        const Eigen::VectorXd bj = x.segment(c->ib(j), c->l);
        const Eigen::VectorXd xj = x.segment(c->ix(j), c->n);
        const Eigen::MatrixXd Cb = c->C_of(bj);
        const Eigen::VectorXd r = c->y[j - 1] - Cb * xj;
        const double wj = c->w(j);
        D.block(c->ix(j), c->tri_n + t, c->n, 1) += -2.0 * wj * (Cb.transpose() * (dR * r));
        for (int i = 0; i < c->l; ++i)
          D(c->ib(j) + i, c->tri_n + t) += -2.0 * wj * (c->Cv[i] * xj).dot(dR * r);
      }
    }
    return D;
  };

  nlp.eq_dp = [c](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd::Zero(c->Nw * (c->n + 1), c->tri_n + c->tri_e).eval();
  };
  nlp.ineq_dp = [c](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd::Zero(2 * c->Nw * c->l, c->tri_n + c->tri_e).eval();
  };

  return nlp;
}

namespace {

/// Assemble a warm-start primal (and optionally shifted duals) for the
/// current window from the previous solution, which covered stages shifted
/// by `delta`.
void warm_from_previous(const MheWindow& window, const PolytopicModel& model, int delta,
                        Eigen::VectorXd& x0, PrimalDualSolution& duals, bool& have_duals) {
  const int Nw = window.length();
  const int n = model.dims.n;
  const int l = model.num_vertices();
  const auto& prev = *window.last_solution;
  const int Nw_prev = window.last_length;
  const int nv = (Nw + 1) * n + Nw * l;

  auto prev_x = [&](int j) { return prev.primal.segment(j * n, n); };
  auto prev_b = [&](int j) { return prev.primal.segment((Nw_prev + 1) * n + (j - 1) * l, l); };

  x0 = Eigen::VectorXd::Zero(nv);
  // beta stages first so the state propagation below can use them
  for (int j = 1; j <= Nw; ++j) {
    const int jp = j + delta;
    Eigen::VectorXd bj;
    if (jp >= 1 && jp <= Nw_prev)
      bj = prev_b(jp);
    else if (Nw_prev >= 1)
      bj = prev_b(Nw_prev);
    else
      bj = window.beta_ref[j - 1];
    x0.segment((Nw + 1) * n + (j - 1) * l, l) = bj;
  }
  for (int j = 0; j <= Nw; ++j) {
    const int jp = j + delta;
    if (jp >= 0 && jp <= Nw_prev) {
      x0.segment(j * n, n) = prev_x(jp);
    } else {
      const Eigen::VectorXd bj = x0.segment((Nw + 1) * n + (j - 1) * l, l);
      Eigen::MatrixXd Aj = Eigen::MatrixXd::Zero(n, n);
      Eigen::MatrixXd Bj = Eigen::MatrixXd::Zero(n, model.dims.m);
      for (int i = 0; i < l; ++i) {
        Aj += bj(i) * model.vertices[i].A;
        Bj += bj(i) * model.vertices[i].B;
      }
      x0.segment(j * n, n) = Aj * x0.segment((j - 1) * n, n) + Bj * window.inputs[j - 1];
    }
  }

  // Shift the multipliers stage-wise; new stages start at zero.
  duals.eq_dual = Eigen::VectorXd::Zero(Nw * (n + 1));
  duals.ineq_dual = Eigen::VectorXd::Zero(2 * Nw * l);
  for (int j = 1; j <= Nw; ++j) {
    const int jp = j + delta;
    if (jp < 1 || jp > Nw_prev) continue;
    duals.eq_dual.segment((j - 1) * n, n) = prev.eq_dual.segment((jp - 1) * n, n);
    duals.eq_dual(Nw * n + (j - 1)) = prev.eq_dual(Nw_prev * n + (jp - 1));
    duals.ineq_dual.segment((j - 1) * l, l) = prev.ineq_dual.segment((jp - 1) * l, l);
    duals.ineq_dual.segment(Nw * l + (j - 1) * l, l) =
        prev.ineq_dual.segment(Nw_prev * l + (jp - 1) * l, l);
  }
  have_duals = true;
}

void cold_primal(const MheWindow& window, const PolytopicModel& model, Eigen::VectorXd& x0) {
  const int Nw = window.length();
  const int n = model.dims.n;
  const int l = model.num_vertices();
  x0 = Eigen::VectorXd::Zero((Nw + 1) * n + Nw * l);
  x0.segment(0, n) = window.prior;
  for (int j = 1; j <= Nw; ++j) {
    const Eigen::VectorXd& bj = window.beta_ref[j - 1];
    x0.segment((Nw + 1) * n + (j - 1) * l, l) = bj;
    Eigen::MatrixXd Aj = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd Bj = Eigen::MatrixXd::Zero(n, model.dims.m);
    for (int i = 0; i < l; ++i) {
      Aj += bj(i) * model.vertices[i].A;
      Bj += bj(i) * model.vertices[i].B;
    }
    x0.segment(j * n, n) = Aj * x0.segment((j - 1) * n, n) + Bj * window.inputs[j - 1];
  }
}

MheSolution solution_from_primal(const Eigen::VectorXd& x, const PolytopicModel& model, int Nw,
                                 const MheWindow& window) {
  const int n = model.dims.n;
  const int l = model.num_vertices();
  const int e = static_cast<int>(model.vertices[0].C.rows());
  MheSolution s;
  s.xhat.resize(n, Nw + 1);
  s.beta.resize(l, Nw);
  s.innovations.resize(e, Nw);
  for (int j = 0; j <= Nw; ++j) s.xhat.col(j) = x.segment(j * n, n);
  for (int j = 1; j <= Nw; ++j) {
    s.beta.col(j - 1) = x.segment((Nw + 1) * n + (j - 1) * l, l);
    Eigen::MatrixXd Cb = Eigen::MatrixXd::Zero(e, n);
    for (int i = 0; i < l; ++i) Cb += s.beta(i, j - 1) * model.vertices[i].C;
    s.innovations.col(j - 1) = window.measurements[j - 1] - Cb * s.xhat.col(j);
  }
  return s;
}

}  // namespace

MheSolution estimate(const PolytopicModel& model, MheWindow& window, const MheTheta& theta,
                     const MheConfig& cfg, const SolverOptions& opts, bool want_sensitivities) {
  const int Nw = window.length();
  const int n = model.dims.n;
  const int l = model.num_vertices();
  const int theta_dim = theta.dim();

  if (Nw == 0) {
    // Nothing to estimate yet: the prior is the estimate.
    MheSolution s;
    s.xhat = window.prior;
    s.beta.resize(l, 0);
    s.innovations.resize(static_cast<int>(model.vertices[0].C.rows()), 0);
    s.dxhat_dtheta = Eigen::MatrixXd::Zero(theta_dim, n);
    s.dbeta_dtheta = Eigen::MatrixXd::Zero(theta_dim, 0);
    s.status = SolveStatus::Converged;
    s.sensitivity_ok = false;
    return s;
  }

  NlpProblem nlp = build_mhe(model, window, theta, cfg);

  Eigen::VectorXd x0;
  PrimalDualSolution warm;
  bool have_duals = false;
  if (window.last_solution.has_value() && window.last_length >= 1)
    warm_from_previous(window, model, window.shift_since_solve, x0, warm, have_duals);
  else
    cold_primal(window, model, x0);

  PrimalDualSolution sol = solve_sqp(nlp, x0, opts, have_duals ? &warm : nullptr);

  if (sol.status != SolveStatus::Converged) {
    // Fall back to the shifted previous estimate; the step is flagged.
    MheSolution s = solution_from_primal(x0, model, Nw, window);
    s.status = sol.status;
    s.sensitivity_ok = false;
    s.sqp_iterations = sol.iterations;
    s.dxhat_dtheta = Eigen::MatrixXd::Zero(theta_dim, n);
    s.dbeta_dtheta = Eigen::MatrixXd::Zero(theta_dim, l * Nw);
    return s;
  }

  MheSolution s = solution_from_primal(sol.primal, model, Nw, window);
  s.status = sol.status;
  s.sqp_iterations = sol.iterations;
  s.objective = sol.objective;

  // Clip + renormalize tiny simplex violations; larger ones are failures.
  for (int jcol = 0; jcol < Nw; ++jcol) {
    Eigen::VectorXd b = s.beta.col(jcol);
    const double viol = std::max(std::abs(b.sum() - 1.0), std::max(0.0, -b.minCoeff()));
    if (viol > 1e-7) {
      s.status = SolveStatus::MaxIterations;
      s.sensitivity_ok = false;
      return s;
    }
    b = b.cwiseMax(0.0).cwiseMin(1.0);
    s.beta.col(jcol) = b / b.sum();
  }

  if (want_sensitivities) {
    try {
      const SensitivityResult sens = sensitivity(nlp, sol, nlp.params, opts);
      s.kkt_cond = sens.kkt_cond;
      s.dxhat_dtheta = sens.dz_dp.middleRows(Nw * n, n).transpose();
      s.dbeta_dtheta = sens.dz_dp.middleRows((Nw + 1) * n, Nw * l).transpose();
      s.sensitivity_ok = true;
    } catch (const SensitivityError&) {
      s.sensitivity_ok = false;
      s.dxhat_dtheta = Eigen::MatrixXd::Zero(theta_dim, n);
      s.dbeta_dtheta = Eigen::MatrixXd::Zero(theta_dim, l * Nw);
    }
  } else {
    s.dxhat_dtheta = Eigen::MatrixXd::Zero(theta_dim, n);
    s.dbeta_dtheta = Eigen::MatrixXd::Zero(theta_dim, l * Nw);
  }

  window.last_solution = sol;
  window.last_length = Nw;
  window.shift_since_solve = 0;
  return s;
}

}  // namespace lpvrl
