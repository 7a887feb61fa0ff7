#include "lpvrl/nlp.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "lpvrl/linalg.hpp"

namespace lpvrl {

NlpProblem nlp_from_qp(const DenseQp& qp) {
  qp.validate();
  NlpProblem nlp;
  nlp.num_vars = qp.num_vars();
  nlp.num_eq = qp.num_eq();
  nlp.num_ineq = qp.num_ineq();
  nlp.num_params = 0;
  nlp.params = Eigen::VectorXd();
  nlp.problem_class = ProblemClass::ConvexQp;

  const DenseQp data = qp;
  nlp.cost = [data](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return qp_objective(data, x);
  };
  nlp.cost_grad = [data](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return (0.5 * (data.Q + data.Q.transpose()) * x + data.q).eval();
  };
  nlp.eq = [data](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return (data.A * x - data.b).eval();
  };
  nlp.eq_jac = [data](const Eigen::VectorXd&, const Eigen::VectorXd&) { return data.A; };
  nlp.ineq = [data](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return (data.C * x - data.d).eval();
  };
  nlp.ineq_jac = [data](const Eigen::VectorXd&, const Eigen::VectorXd&) { return data.C; };
  nlp.lagrangian_hess = [data](const Eigen::VectorXd&, const Eigen::VectorXd&,
                               const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return (0.5 * (data.Q + data.Q.transpose())).eval();
  };
  nlp.grad_lag_dp = [](const Eigen::VectorXd& x, const Eigen::VectorXd&, const Eigen::VectorXd&,
                       const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(x.size(), 0).eval(); };
  nlp.eq_dp = [data](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd::Zero(data.num_eq(), 0).eval();
  };
  nlp.ineq_dp = [data](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd::Zero(data.num_ineq(), 0).eval();
  };
  return nlp;
}

DenseQp qp_data_from_nlp(const NlpProblem& nlp, const Eigen::VectorXd& p) {
  if (nlp.problem_class != ProblemClass::ConvexQp)
    throw std::invalid_argument("qp_data_from_nlp: problem is not tagged convex-qp");
  const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(nlp.num_vars);
  const Eigen::VectorXd lam0 = Eigen::VectorXd::Zero(nlp.num_eq);
  const Eigen::VectorXd mu0 = Eigen::VectorXd::Zero(nlp.num_ineq);
  DenseQp qp;
  qp.Q = nlp.lagrangian_hess(x0, lam0, mu0, p);
  qp.q = nlp.cost_grad(x0, p);
  qp.A = nlp.num_eq > 0 ? nlp.eq_jac(x0, p) : Eigen::MatrixXd::Zero(0, nlp.num_vars);
  qp.b = nlp.num_eq > 0 ? (-nlp.eq(x0, p)).eval() : Eigen::VectorXd();
  qp.C = nlp.num_ineq > 0 ? nlp.ineq_jac(x0, p) : Eigen::MatrixXd::Zero(0, nlp.num_vars);
  qp.d = nlp.num_ineq > 0 ? (-nlp.ineq(x0, p)).eval() : Eigen::VectorXd();
  return qp;
}

double kkt_residual(const NlpProblem& nlp, const Eigen::VectorXd& x, const Eigen::VectorXd& lam,
                    const Eigen::VectorXd& mu, const Eigen::VectorXd& p) {
  Eigen::VectorXd stat = nlp.cost_grad(x, p);
  if (nlp.num_eq > 0) stat += nlp.eq_jac(x, p).transpose() * lam;
  if (nlp.num_ineq > 0) stat += nlp.ineq_jac(x, p).transpose() * mu;
  double r = stat.lpNorm<Eigen::Infinity>();
  if (nlp.num_eq > 0) r = std::max(r, nlp.eq(x, p).lpNorm<Eigen::Infinity>());
  if (nlp.num_ineq > 0) {
    const Eigen::VectorXd h = nlp.ineq(x, p);
    r = std::max(r, (mu.array() * h.array()).abs().maxCoeff());
  }
  return r;
}

PrimalDualSolution solve_qp(const NlpProblem& nlp, const SolverOptions& opts,
                            const Eigen::VectorXd* warm_primal) {
  return solve_qp(qp_data_from_nlp(nlp, nlp.params), opts, warm_primal);
}

namespace {

double merit_infeasibility(const NlpProblem& nlp, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& p) {
  double v = 0.0;
  if (nlp.num_eq > 0) v += nlp.eq(x, p).lpNorm<1>();
  if (nlp.num_ineq > 0) v += nlp.ineq(x, p).cwiseMax(0.0).lpNorm<1>();
  return v;
}

bool converged_kkt(const NlpProblem& nlp, const Eigen::VectorXd& x, const Eigen::VectorXd& lam,
                   const Eigen::VectorXd& mu, const Eigen::VectorXd& p, double tol) {
  if (kkt_residual(nlp, x, lam, mu, p) > tol) return false;
  if (nlp.num_ineq > 0) {
    if (nlp.ineq(x, p).maxCoeff() > tol) return false;
    if (mu.minCoeff() < -tol) return false;
  }
  return true;
}

}  // namespace

PrimalDualSolution solve_sqp(const NlpProblem& nlp, const Eigen::VectorXd& x0,
                             const SolverOptions& opts, const PrimalDualSolution* warm_duals) {
  if (x0.size() != nlp.num_vars) throw std::invalid_argument("solve_sqp: x0 size mismatch");
  const Eigen::VectorXd& p = nlp.params;

  Eigen::VectorXd x = x0;
  Eigen::VectorXd lam = Eigen::VectorXd::Zero(nlp.num_eq);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(nlp.num_ineq);
  if (warm_duals != nullptr && warm_duals->eq_dual.size() == nlp.num_eq &&
      warm_duals->ineq_dual.size() == nlp.num_ineq) {
    lam = warm_duals->eq_dual;
    mu = warm_duals->ineq_dual.cwiseMax(0.0);
  }

  std::ofstream trace;
  if (opts.trace && !opts.trace_path.empty()) {
    trace.open(opts.trace_path, std::ios::app);
    trace << "iteration,merit,kkt_residual,step_length\n";
  }

  PrimalDualSolution out;
  out.primal = x;
  out.eq_dual = lam;
  out.ineq_dual = mu;

  double rho = 1.0;
  double prev_infeas = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < opts.max_sqp_iterations; ++iter) {
    if (converged_kkt(nlp, x, lam, mu, p, opts.kkt_tol)) {
      out.primal = x;
      out.eq_dual = lam;
      out.ineq_dual = mu;
      out.status = SolveStatus::Converged;
      out.iterations = iter;
      out.kkt_residual = kkt_residual(nlp, x, lam, mu, p);
      out.objective = nlp.cost(x, p);
      const Eigen::VectorXd h = nlp.num_ineq > 0 ? nlp.ineq(x, p) : Eigen::VectorXd();
      for (int i = 0; i < nlp.num_ineq; ++i)
        if (mu(i) > opts.mu_tol && -h(i) < opts.act_tol) out.active_set.push_back(i);
      return out;
    }

    const Eigen::VectorXd g = nlp.cost_grad(x, p);
    const Eigen::VectorXd cE = nlp.num_eq > 0 ? nlp.eq(x, p) : Eigen::VectorXd();
    const Eigen::VectorXd cI = nlp.num_ineq > 0 ? nlp.ineq(x, p) : Eigen::VectorXd();
    const Eigen::MatrixXd W = nlp.lagrangian_hess(x, lam, mu, p);

    // QP subproblem in the step d, with escalating regularization if the
    // subproblem or the line search misbehaves.
    bool stepped = false;
    for (double tau : {0.0, 1e-6, 1e-4, 1e-2, 1.0}) {
      DenseQp sub;
      sub.Q = floor_eigenvalues(W, opts.hessian_floor + tau);
      sub.q = g;
      sub.A = nlp.num_eq > 0 ? nlp.eq_jac(x, p) : Eigen::MatrixXd::Zero(0, nlp.num_vars);
      sub.b = nlp.num_eq > 0 ? (-cE).eval() : Eigen::VectorXd();
      sub.C = nlp.num_ineq > 0 ? nlp.ineq_jac(x, p) : Eigen::MatrixXd::Zero(0, nlp.num_vars);
      sub.d = nlp.num_ineq > 0 ? (-cI).eval() : Eigen::VectorXd();

      SolverOptions qp_opts = opts;
      qp_opts.trace = false;
      PrimalDualSolution sol = solve_qp(sub, qp_opts);
      if (sol.status != SolveStatus::Converged) continue;

      const Eigen::VectorXd d = sol.primal;
      const double infeas = merit_infeasibility(nlp, x, p);
      const double rho_req =
          1.5 * std::max(sol.eq_dual.size() ? sol.eq_dual.lpNorm<Eigen::Infinity>() : 0.0,
                         sol.ineq_dual.size() ? sol.ineq_dual.lpNorm<Eigen::Infinity>() : 0.0) +
          0.1;
      if (rho < rho_req) rho = rho_req;
      if (infeas > 0.9 * prev_infeas && infeas > opts.kkt_tol) rho *= opts.merit_growth;
      prev_infeas = infeas;

      auto merit = [&](const Eigen::VectorXd& xv) {
        return nlp.cost(xv, p) + rho * merit_infeasibility(nlp, xv, p);
      };
      const double phi0 = merit(x);
      const double dirderiv = g.dot(d) - rho * infeas;

      double alpha = 1.0;
      bool ls_ok = false;
      while (alpha >= opts.min_step) {
        if (merit(x + alpha * d) <= phi0 + 1e-4 * alpha * dirderiv) { ls_ok = true; break; }
        alpha *= 0.5;
      }
      if (!ls_ok) continue;  // escalate regularization

      x += alpha * d;
      lam += alpha * (sol.eq_dual - lam);
      mu += alpha * (sol.ineq_dual - mu);
      mu = mu.cwiseMax(0.0);
      if (trace.is_open())
        trace << iter << ',' << phi0 << ',' << kkt_residual(nlp, x, lam, mu, p) << ',' << alpha
              << '\n';
      stepped = true;
      break;
    }

    if (!stepped) {
      out.primal = x;
      out.eq_dual = lam;
      out.ineq_dual = mu;
      out.status = SolveStatus::LineSearchFailure;
      out.iterations = iter + 1;
      out.kkt_residual = kkt_residual(nlp, x, lam, mu, p);
      out.objective = nlp.cost(x, p);
      return out;
    }
  }

  out.primal = x;
  out.eq_dual = lam;
  out.ineq_dual = mu;
  out.status = converged_kkt(nlp, x, lam, mu, p, opts.kkt_tol) ? SolveStatus::Converged
                                                               : SolveStatus::MaxIterations;
  out.iterations = opts.max_sqp_iterations;
  out.kkt_residual = kkt_residual(nlp, x, lam, mu, p);
  out.objective = nlp.cost(x, p);
  if (out.status == SolveStatus::Converged) {
    const Eigen::VectorXd h = nlp.num_ineq > 0 ? nlp.ineq(x, p) : Eigen::VectorXd();
    for (int i = 0; i < nlp.num_ineq; ++i)
      if (mu(i) > opts.mu_tol && -h(i) < opts.act_tol) out.active_set.push_back(i);
  }
  return out;
}

}  // namespace lpvrl
