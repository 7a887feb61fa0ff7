#include "lpvrl/qp.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lpvrl/linalg.hpp"

namespace lpvrl {

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterations: return "max-iterations";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::LineSearchFailure: return "line-search-failure";
  }
  return "unknown";
}

void DenseQp::validate() const {
  const int nx = num_vars();
  if (Q.cols() != nx) throw std::invalid_argument("DenseQp: Q must be square");
  if (q.size() != nx) throw std::invalid_argument("DenseQp: q size mismatch");
  if (num_eq() > 0 && A.cols() != nx) throw std::invalid_argument("DenseQp: A column mismatch");
  if (b.size() != num_eq()) throw std::invalid_argument("DenseQp: b size mismatch");
  if (num_ineq() > 0 && C.cols() != nx) throw std::invalid_argument("DenseQp: C column mismatch");
  if (d.size() != num_ineq()) throw std::invalid_argument("DenseQp: d size mismatch");
}

double qp_objective(const DenseQp& qp, const Eigen::VectorXd& x) {
  return 0.5 * x.dot(qp.Q.selfadjointView<Eigen::Lower>() * x) + qp.q.dot(x);
}

double qp_kkt_residual(const DenseQp& qp, const Eigen::VectorXd& x, const Eigen::VectorXd& lam,
                       const Eigen::VectorXd& mu) {
  Eigen::VectorXd stat = 0.5 * (qp.Q + qp.Q.transpose()) * x + qp.q;
  if (qp.num_eq() > 0) stat += qp.A.transpose() * lam;
  if (qp.num_ineq() > 0) stat += qp.C.transpose() * mu;
  double r = stat.lpNorm<Eigen::Infinity>();
  if (qp.num_eq() > 0) r = std::max(r, (qp.A * x - qp.b).lpNorm<Eigen::Infinity>());
  if (qp.num_ineq() > 0) {
    const Eigen::VectorXd h = qp.C * x - qp.d;
    r = std::max(r, (mu.array() * h.array()).abs().maxCoeff());
  }
  return r;
}

namespace {

double max_feasibility_violation(const DenseQp& qp, const Eigen::VectorXd& x) {
  double v = 0.0;
  if (qp.num_eq() > 0) v = (qp.A * x - qp.b).lpNorm<Eigen::Infinity>();
  if (qp.num_ineq() > 0) v = std::max(v, (qp.C * x - qp.d).maxCoeff());
  return v;
}

/// Largest alpha in (0, 1] with v + alpha dv >= 0.
double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double alpha = 1.0;
  for (int i = 0; i < v.size(); ++i)
    if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
  return alpha;
}

struct PolishResult {
  bool ok = false;
  Eigen::VectorXd x, lam, mu;
  std::vector<int> active;
};

/// Solve the equality-constrained KKT system with the given active set and
/// repair the set (one swap per pass) until primal feasibility and dual
/// nonnegativity hold.
PolishResult polish_active_set(const DenseQp& qp, std::vector<int> active) {
  const int nx = qp.num_vars();
  const int ne = qp.num_eq();
  PolishResult res;

  for (int pass = 0; pass < 40; ++pass) {
    const int na = static_cast<int>(active.size());
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nx + ne + na, nx + ne + na);
    Eigen::VectorXd rhs(nx + ne + na);
    K.topLeftCorner(nx, nx) = 0.5 * (qp.Q + qp.Q.transpose());
    rhs.head(nx) = -qp.q;
    if (ne > 0) {
      K.block(nx, 0, ne, nx) = qp.A;
      K.block(0, nx, nx, ne) = qp.A.transpose();
      rhs.segment(nx, ne) = qp.b;
    }
    for (int r = 0; r < na; ++r) {
      K.block(nx + ne + r, 0, 1, nx) = qp.C.row(active[r]);
      K.block(0, nx + ne + r, nx, 1) = qp.C.row(active[r]).transpose();
      rhs(nx + ne + r) = qp.d(active[r]);
    }

    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) return res;  // degenerate active set; keep IP iterate
    Eigen::VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) return res;

    Eigen::VectorXd x = sol.head(nx);
    Eigen::VectorXd lam = sol.segment(nx, ne);
    Eigen::VectorXd muA = sol.tail(na);

    // Check multipliers of active rows and feasibility of inactive rows.
    int worst_neg = -1;
    double neg_val = -1e-11;
    for (int r = 0; r < na; ++r)
      if (muA(r) < neg_val) { neg_val = muA(r); worst_neg = r; }

    std::vector<char> in_active(qp.num_ineq(), 0);
    for (int idx : active) in_active[idx] = 1;
    int worst_viol = -1;
    double viol_val = 1e-11;
    if (qp.num_ineq() > 0) {
      const Eigen::VectorXd h = qp.C * x - qp.d;
      for (int i = 0; i < qp.num_ineq(); ++i)
        if (!in_active[i] && h(i) > viol_val) { viol_val = h(i); worst_viol = i; }
    }

    if (worst_neg < 0 && worst_viol < 0) {
      res.ok = true;
      res.x = std::move(x);
      res.lam = std::move(lam);
      res.mu = Eigen::VectorXd::Zero(qp.num_ineq());
      for (int r = 0; r < na; ++r) res.mu(active[r]) = std::max(muA(r), 0.0);
      res.active = active;
      return res;
    }
    if (worst_neg >= 0) {
      active.erase(active.begin() + worst_neg);
    } else {
      active.push_back(worst_viol);
      std::sort(active.begin(), active.end());
    }
  }
  return res;
}

}  // namespace

PrimalDualSolution solve_qp(const DenseQp& qp, const SolverOptions& opts,
                            const Eigen::VectorXd* warm_primal) {
  qp.validate();
  const int nx = qp.num_vars();
  const int ne = qp.num_eq();
  const int ni = qp.num_ineq();

  const Eigen::MatrixXd Qs = 0.5 * (qp.Q + qp.Q.transpose());
  const Eigen::MatrixXd Qr = floor_eigenvalues(Qs, opts.hessian_floor);

  PrimalDualSolution out;
  out.eq_dual = Eigen::VectorXd::Zero(ne);
  out.ineq_dual = Eigen::VectorXd::Zero(ni);

  std::ofstream trace;
  if (opts.trace && !opts.trace_path.empty()) {
    trace.open(opts.trace_path, std::ios::app);
    trace << "iteration,merit,kkt_residual,step_length\n";
  }

  // Equality-constrained (or unconstrained) case: one linear solve.
  if (ni == 0) {
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nx + ne, nx + ne);
    Eigen::VectorXd rhs(nx + ne);
    K.topLeftCorner(nx, nx) = Qr;
    rhs.head(nx) = -qp.q;
    if (ne > 0) {
      K.block(nx, 0, ne, nx) = qp.A;
      K.block(0, nx, nx, ne) = qp.A.transpose();
      rhs.tail(ne) = qp.b;
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
    Eigen::VectorXd sol = lu.solve(rhs);
    out.primal = sol.head(nx);
    out.eq_dual = sol.tail(ne);
    out.iterations = 1;
    out.kkt_residual = qp_kkt_residual(qp, out.primal, out.eq_dual, out.ineq_dual);
    out.objective = qp_objective(qp, out.primal);
    if (!sol.allFinite() || max_feasibility_violation(qp, out.primal) > 1e-6)
      out.status = SolveStatus::Infeasible;
    else
      out.status = out.kkt_residual <= opts.kkt_tol ? SolveStatus::Converged
                                                    : SolveStatus::MaxIterations;
    return out;
  }

  // Interior-point iterations (Mehrotra predictor-corrector).
  Eigen::VectorXd x;
  if (warm_primal != nullptr && warm_primal->size() == nx) {
    x = *warm_primal;
  } else {
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nx + ne, nx + ne);
    Eigen::VectorXd rhs(nx + ne);
    K.topLeftCorner(nx, nx) = Qr;
    rhs.head(nx) = -qp.q;
    if (ne > 0) {
      K.block(nx, 0, ne, nx) = qp.A;
      K.block(0, nx, nx, ne) = qp.A.transpose();
      rhs.tail(ne) = qp.b;
    }
    Eigen::VectorXd sol = Eigen::PartialPivLU<Eigen::MatrixXd>(K).solve(rhs);
    x = sol.allFinite() ? sol.head(nx).eval() : Eigen::VectorXd::Zero(nx);
  }
  Eigen::VectorXd y = Eigen::VectorXd::Zero(ne);
  Eigen::VectorXd s = (qp.d - qp.C * x).cwiseMax(1.0);
  Eigen::VectorXd z = Eigen::VectorXd::Ones(ni);

  const double ip_tol = 1e-11;
  bool ip_converged = false;
  int iter = 0;
  for (; iter < opts.max_qp_iterations; ++iter) {
    Eigen::VectorXd r_d = Qr * x + qp.q + qp.C.transpose() * z;
    if (ne > 0) r_d += qp.A.transpose() * y;
    Eigen::VectorXd r_p = ne > 0 ? (qp.A * x - qp.b).eval() : Eigen::VectorXd();
    Eigen::VectorXd r_i = qp.C * x + s - qp.d;
    const double mu = s.dot(z) / ni;

    const double res = std::max({r_d.lpNorm<Eigen::Infinity>(),
                                 ne > 0 ? r_p.lpNorm<Eigen::Infinity>() : 0.0,
                                 r_i.lpNorm<Eigen::Infinity>(), mu});
    if (trace.is_open())
      trace << iter << ',' << qp_objective(qp, x) << ',' << res << ',' << 1.0 << '\n';
    if (res <= ip_tol) { ip_converged = true; break; }

    const Eigen::VectorXd w = z.cwiseQuotient(s);
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(nx + ne, nx + ne);
    M.topLeftCorner(nx, nx) = Qr + qp.C.transpose() * w.asDiagonal() * qp.C;
    if (ne > 0) {
      M.block(nx, 0, ne, nx) = qp.A;
      M.block(0, nx, nx, ne) = qp.A.transpose();
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);

    // r1 for a given complementarity target c (s.*z residual replaced by c):
    // dz = c ./ s + w .* r_i + w .* (C dx), ds = -r_i - C dx.
    auto solve_step = [&](const Eigen::VectorXd& c, Eigen::VectorXd& dx, Eigen::VectorXd& dy,
                          Eigen::VectorXd& dz, Eigen::VectorXd& ds) {
      Eigen::VectorXd rhs(nx + ne);
      rhs.head(nx) = -r_d - qp.C.transpose() * (c.cwiseQuotient(s)) -
                     qp.C.transpose() * (w.asDiagonal() * r_i);
      if (ne > 0) rhs.tail(ne) = -r_p;
      Eigen::VectorXd sol = lu.solve(rhs);
      dx = sol.head(nx);
      dy = sol.tail(ne);
      dz = c.cwiseQuotient(s) + w.asDiagonal() * (r_i + qp.C * dx);
      ds = -r_i - qp.C * dx;
    };

    Eigen::VectorXd dx_a, dy_a, dz_a, ds_a;
    solve_step((-s.array() * z.array()).matrix(), dx_a, dy_a, dz_a, ds_a);
    const double a_p_aff = max_step(s, ds_a);
    const double a_d_aff = max_step(z, dz_a);
    const double mu_aff = (s + a_p_aff * ds_a).dot(z + a_d_aff * dz_a) / ni;
    double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
    sigma = std::min(1.0, std::max(0.0, sigma));

    Eigen::VectorXd c = (sigma * mu - (s.array() * z.array()) -
                         (ds_a.array() * dz_a.array())).matrix();
    Eigen::VectorXd dx, dy, dz, ds;
    solve_step(c, dx, dy, dz, ds);
    if (!dx.allFinite() || !dz.allFinite()) break;

    const double a_p = std::min(1.0, 0.995 * max_step(s, ds));
    const double a_d = std::min(1.0, 0.995 * max_step(z, dz));
    x += a_p * dx;
    s += a_p * ds;
    y += a_d * dy;
    z += a_d * dz;
  }

  out.primal = x;
  out.eq_dual = y;
  out.ineq_dual = z;
  out.iterations = iter;

  if (!ip_converged && max_feasibility_violation(qp, x) > 1e-6) {
    out.status = SolveStatus::Infeasible;
    out.kkt_residual = qp_kkt_residual(qp, x, y, z);
    out.objective = qp_objective(qp, x);
    return out;
  }

  // Active-set polish with the exact Hessian.
  std::vector<int> guess;
  for (int i = 0; i < ni; ++i)
    if (z(i) > s(i)) guess.push_back(i);
  PolishResult pol = polish_active_set(qp, guess);
  if (pol.ok) {
    out.primal = pol.x;
    out.eq_dual = pol.lam;
    out.ineq_dual = pol.mu;
  }

  out.kkt_residual = qp_kkt_residual(qp, out.primal, out.eq_dual, out.ineq_dual);
  out.objective = qp_objective(qp, out.primal);
  const double feas = max_feasibility_violation(qp, out.primal);
  if (out.kkt_residual <= opts.kkt_tol && feas <= opts.kkt_tol &&
      out.ineq_dual.minCoeff() >= -1e-12) {
    out.status = SolveStatus::Converged;
  } else if (!ip_converged) {
    out.status = SolveStatus::MaxIterations;
  } else {
    out.status = SolveStatus::MaxIterations;
  }
  const Eigen::VectorXd slack = qp.d - qp.C * out.primal;
  for (int i = 0; i < ni; ++i)
    if (out.ineq_dual(i) > opts.mu_tol && slack(i) < opts.act_tol) out.active_set.push_back(i);
  return out;
}

PrimalDualSolution brute_force_qp(const DenseQp& qp, const SolverOptions& opts) {
  qp.validate();
  const int nx = qp.num_vars();
  const int ne = qp.num_eq();
  const int ni = qp.num_ineq();
  if (ni > 12) throw std::invalid_argument("brute_force_qp: more than 12 inequalities");

  const Eigen::MatrixXd Qs = 0.5 * (qp.Q + qp.Q.transpose());
  PrimalDualSolution best;
  best.status = SolveStatus::Infeasible;
  double best_cost = std::numeric_limits<double>::infinity();

  for (unsigned mask = 0; mask < (1u << ni); ++mask) {
    std::vector<int> active;
    for (int i = 0; i < ni; ++i)
      if (mask & (1u << i)) active.push_back(i);
    const int na = static_cast<int>(active.size());

    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nx + ne + na, nx + ne + na);
    Eigen::VectorXd rhs(nx + ne + na);
    K.topLeftCorner(nx, nx) = Qs;
    rhs.head(nx) = -qp.q;
    if (ne > 0) {
      K.block(nx, 0, ne, nx) = qp.A;
      K.block(0, nx, nx, ne) = qp.A.transpose();
      rhs.segment(nx, ne) = qp.b;
    }
    for (int r = 0; r < na; ++r) {
      K.block(nx + ne + r, 0, 1, nx) = qp.C.row(active[r]);
      K.block(0, nx + ne + r, nx, 1) = qp.C.row(active[r]).transpose();
      rhs(nx + ne + r) = qp.d(active[r]);
    }

    Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
    if (!lu.isInvertible()) continue;
    Eigen::VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) continue;

    const Eigen::VectorXd x = sol.head(nx);
    const Eigen::VectorXd muA = sol.tail(na);
    if (na > 0 && muA.minCoeff() < -1e-9) continue;
    if (ni > 0 && (qp.C * x - qp.d).maxCoeff() > 1e-9) continue;
    if (ne > 0 && (qp.A * x - qp.b).lpNorm<Eigen::Infinity>() > 1e-9) continue;

    const double cost = qp_objective(qp, x);
    if (cost < best_cost - 1e-12) {
      best_cost = cost;
      best.primal = x;
      best.eq_dual = sol.segment(nx, ne);
      best.ineq_dual = Eigen::VectorXd::Zero(ni);
      for (int r = 0; r < na; ++r) best.ineq_dual(active[r]) = std::max(muA(r), 0.0);
      best.active_set = active;
      best.status = SolveStatus::Converged;
      best.objective = cost;
    }
  }
  if (best.status == SolveStatus::Converged)
    best.kkt_residual = qp_kkt_residual(qp, best.primal, best.eq_dual, best.ineq_dual);
  (void)opts;
  return best;
}

}  // namespace lpvrl
