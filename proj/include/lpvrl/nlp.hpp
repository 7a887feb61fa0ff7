#pragma once

#include <functional>

#include "lpvrl/qp.hpp"

namespace lpvrl {

enum class ProblemClass { ConvexQp, BilinearNlp };

/// Parametric NLP in oracle form:
///   min_x  cost(x, p)
///   s.t.   eq(x, p) = 0,  ineq(x, p) <= 0
/// All derivative oracles are hand-coded by the problem builders; the
/// cross-derivatives with respect to the parameter vector p feed the
/// KKT-based sensitivity computation.
struct NlpProblem {
  int num_vars = 0;
  int num_eq = 0;
  int num_ineq = 0;
  int num_params = 0;
  ProblemClass problem_class = ProblemClass::ConvexQp;
  Eigen::VectorXd params;  // nominal parameter values

  using Vec = Eigen::VectorXd;
  using Mat = Eigen::MatrixXd;

  std::function<double(const Vec& x, const Vec& p)> cost;
  std::function<Vec(const Vec& x, const Vec& p)> cost_grad;
  std::function<Vec(const Vec& x, const Vec& p)> eq;
  std::function<Mat(const Vec& x, const Vec& p)> eq_jac;
  std::function<Vec(const Vec& x, const Vec& p)> ineq;
  std::function<Mat(const Vec& x, const Vec& p)> ineq_jac;
  /// Exact Hessian of the Lagrangian w.r.t. x.
  std::function<Mat(const Vec& x, const Vec& lam, const Vec& mu, const Vec& p)> lagrangian_hess;
  /// d(grad_x Lagrangian)/dp, num_vars x num_params.
  std::function<Mat(const Vec& x, const Vec& lam, const Vec& mu, const Vec& p)> grad_lag_dp;
  /// d(eq)/dp and d(ineq)/dp.
  std::function<Mat(const Vec& x, const Vec& p)> eq_dp;
  std::function<Mat(const Vec& x, const Vec& p)> ineq_dp;
};

/// Wrap fixed QP data as a parameterless NlpProblem (test utility).
NlpProblem nlp_from_qp(const DenseQp& qp);

/// Materialize QP data from a convex-qp tagged problem by evaluating the
/// oracles at the origin.
DenseQp qp_data_from_nlp(const NlpProblem& nlp, const Eigen::VectorXd& p);

/// Infinity norm of the stacked KKT vector
///   [grad_x L; eq; mu .* ineq]
/// (the complementarity block is omitted for equality-only problems).
double kkt_residual(const NlpProblem& nlp, const Eigen::VectorXd& x, const Eigen::VectorXd& lam,
                    const Eigen::VectorXd& mu, const Eigen::VectorXd& p);

/// Solve a convex-qp tagged problem with the interior-point QP solver.
PrimalDualSolution solve_qp(const NlpProblem& nlp, const SolverOptions& opts = {},
                            const Eigen::VectorXd* warm_primal = nullptr);

/// SQP with exact Lagrangian Hessians, Levenberg-style regularization and an
/// l1-merit backtracking line search. Intended for the bilinear estimation
/// NLP; a convex QP passed through converges in one iteration.
PrimalDualSolution solve_sqp(const NlpProblem& nlp, const Eigen::VectorXd& x0,
                             const SolverOptions& opts = {},
                             const PrimalDualSolution* warm_duals = nullptr);

}  // namespace lpvrl
