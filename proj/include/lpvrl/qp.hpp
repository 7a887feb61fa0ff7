#pragma once

#include <Eigen/Dense>

#include <limits>
#include <string>
#include <vector>

namespace lpvrl {

enum class SolveStatus { Converged, MaxIterations, Infeasible, LineSearchFailure };

const char* to_string(SolveStatus s);

/// Shared tolerances and limits for the QP and SQP solvers.
struct SolverOptions {
  double kkt_tol = 1e-8;
  int max_qp_iterations = 100;
  int max_sqp_iterations = 50;
  double hessian_floor = 1e-9;
  double min_step = 1e-12;
  double mu_tol = 1e-8;       // multiplier threshold when recording the active set
  double act_tol = 1e-8;      // slack threshold when recording the active set
  double strict_tol = 1e-6;   // weak-activity threshold for sensitivities
  double merit_growth = 10.0;
  bool trace = false;
  std::string trace_path;
};

/// Primal-dual solution of min 1/2 x'Qx + q'x s.t. Ax = b, Cx <= d
/// (or of an NLP sharing the same multiplier layout).
struct PrimalDualSolution {
  Eigen::VectorXd primal;
  Eigen::VectorXd eq_dual;
  Eigen::VectorXd ineq_dual;
  SolveStatus status = SolveStatus::MaxIterations;
  double kkt_residual = std::numeric_limits<double>::infinity();
  double objective = 0.0;
  std::vector<int> active_set;
  int iterations = 0;
};

struct DenseQp {
  Eigen::MatrixXd Q;  // nx x nx
  Eigen::VectorXd q;  // nx
  Eigen::MatrixXd A;  // ne x nx   (Ax = b)
  Eigen::VectorXd b;  // ne
  Eigen::MatrixXd C;  // ni x nx   (Cx <= d)
  Eigen::VectorXd d;  // ni

  int num_vars() const { return static_cast<int>(Q.rows()); }
  int num_eq() const { return static_cast<int>(A.rows()); }
  int num_ineq() const { return static_cast<int>(C.rows()); }
  void validate() const;
};

double qp_objective(const DenseQp& qp, const Eigen::VectorXd& x);

/// Infinity norm of the stacked KKT vector [stationarity; Ax-b; mu.*(Cx-d)].
double qp_kkt_residual(const DenseQp& qp, const Eigen::VectorXd& x, const Eigen::VectorXd& lam,
                       const Eigen::VectorXd& mu);

/// Primal-dual interior-point solver with a final active-set polish. The
/// polish re-solves the equality-constrained KKT system of the detected
/// active set, which recovers exact complementarity for sensitivity use.
PrimalDualSolution solve_qp(const DenseQp& qp, const SolverOptions& opts = {},
                            const Eigen::VectorXd* warm_primal = nullptr);

/// Test oracle: enumerate all active subsets of the inequality constraints
/// (at most 12), solve each equality-constrained KKT system, and return the
/// feasible candidate with nonnegative multipliers and lowest cost.
PrimalDualSolution brute_force_qp(const DenseQp& qp, const SolverOptions& opts = {});

}  // namespace lpvrl
