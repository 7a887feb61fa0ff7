#pragma once

#include <vector>

#include "lpvrl/lpv_plant.hpp"
#include "lpvrl/mhe.hpp"
#include "lpvrl/nlp.hpp"

namespace lpvrl {

struct MpcConfig {
  int horizon = 10;    // N, shared with the MHE window length
  double gamma = 0.95;
  double u_min = -1.0;
  double u_max = 1.0;
  double slack_weight = 1e3;           // w, fixed large
  double slack_weight_terminal = 1e3;  // w_f
  bool has_state_box = false;
  Eigen::VectorXd x_min, x_max;  // used only when has_state_box

  int num_slack_rows(int n) const { return has_state_box ? 2 * n : 0; }
};

/// Adjustable MPC parameters: per-vertex terminal factors P_i = L_Pi L_Pi',
/// a cost-modification gradient f on [x; u], stage-cost factors, and the
/// constraint backoff applied to the softened state box.
struct MpcTheta {
  std::vector<Eigen::MatrixXd> L_P;  // one n x n lower-triangular factor per vertex
  Eigen::VectorXd f;                 // n + m
  Eigen::MatrixXd L_W;               // n x n
  Eigen::MatrixXd L_Ru;              // m x m
  Eigen::VectorXd eps;               // backoff per state-box row (empty without a box)

  /// Defaults: W = diag(10, 1, ...), R_u = 0.5 I, f = 0, P_i from the
  /// per-vertex discrete Riccati equation, eps = 0.
  static MpcTheta defaults(const PolytopicModel& discrete_model, const MpcConfig& cfg);
  Eigen::VectorXd pack() const;
  void unpack(const Eigen::VectorXd& packed);
  int dim() const;
  void validate(const MpcConfig& cfg, int n) const;
};

struct MpcSolution {
  Eigen::VectorXd u0;      // the policy pi
  Eigen::MatrixXd x_pred;  // n x (N+1)
  Eigen::MatrixXd u_pred;  // m x N
  Eigen::VectorXd slacks;
  double cost = 0.0;
  /// Policy sensitivities, each (parameter dim) x m.
  Eigen::MatrixXd dpi_dtheta;  // packed MpcTheta entries
  Eigen::MatrixXd dpi_dxhat;   // n x m
  Eigen::MatrixXd dpi_dbeta;   // l*(N+1) x m, one block per schedule stage
  SolveStatus status = SolveStatus::MaxIterations;
  bool sensitivity_ok = false;
  double kkt_cond = 0.0;
};

/// N-step-delay schedule: MPC stage j uses the estimate at window position j;
/// the most recent estimate lands on the terminal stage. Position 0, which
/// predates the window's first beta stage, reuses the earliest stage.
std::vector<Eigen::VectorXd> beta_schedule(const MheSolution& mhe, const MpcConfig& cfg);

/// Assemble the MPC QP as a parametric problem with
/// p = [packed MpcTheta; xhat; schedule stages].
NlpProblem build_mpc(const PolytopicModel& model, const Eigen::VectorXd& xhat,
                     const std::vector<Eigen::VectorXd>& schedule, const MpcTheta& theta,
                     const MpcConfig& cfg);

/// Solve the MPC QP and extract the policy and its sensitivities with respect
/// to theta, the state estimate and the beta schedule.
MpcSolution policy_with_schedule(const PolytopicModel& model, const Eigen::VectorXd& xhat,
                                 const std::vector<Eigen::VectorXd>& schedule,
                                 const MpcTheta& theta, const MpcConfig& cfg,
                                 const SolverOptions& opts = {}, bool want_sensitivities = true,
                                 const Eigen::VectorXd* warm_primal = nullptr);

/// Convenience wrapper deriving the schedule from a full MHE window.
MpcSolution policy(const PolytopicModel& model, const MheSolution& mhe, const MpcTheta& theta,
                   const MpcConfig& cfg, const SolverOptions& opts = {},
                   bool want_sensitivities = true, const Eigen::VectorXd* warm_primal = nullptr);

/// Fixed-point iteration for the discrete algebraic Riccati equation.
/// Throws on divergence (unstabilizable pair).
Eigen::MatrixXd solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& W, const Eigen::MatrixXd& R,
                           double tol = 1e-10, int max_iter = 200000);

/// Per-vertex Riccati terminal weights; unstabilizable vertices fall back to
/// identity with a warning on stderr.
std::vector<Eigen::MatrixXd> init_terminal_weights(const PolytopicModel& discrete_model,
                                                   const Eigen::MatrixXd& W,
                                                   const Eigen::MatrixXd& R);

}  // namespace lpvrl
