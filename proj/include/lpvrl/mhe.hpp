#pragma once

#include <deque>
#include <optional>

#include "lpvrl/lpv_plant.hpp"
#include "lpvrl/nlp.hpp"
#include "lpvrl/sensitivity.hpp"

namespace lpvrl {

struct MheConfig {
  int horizon = 10;      // window length N (shared with the MPC horizon)
  double gamma = 0.95;   // discount, in (0, 1)
  int meas_dim = 1;
  // The delta-beta penalty weight is fixed at identity.
};

/// Adjustable MHE weights, stored as lower-triangular factors so the
/// effective matrices A = L_A L_A' and R = L_R L_R' stay positive definite
/// under gradient updates (diagonals are floored at 1e-4 by the learner).
struct MheTheta {
  Eigen::MatrixXd L_A;  // n x n lower-triangular arrival-cost factor
  Eigen::MatrixXd L_R;  // e x e lower-triangular output-penalty factor

  static MheTheta defaults(int n, int e);
  Eigen::VectorXd pack() const;
  void unpack(const Eigen::VectorXd& packed);
  int dim() const;
  static int dim(int n, int e);
};

struct MheSolution {
  Eigen::MatrixXd xhat;         // n x (Nw+1), window states
  Eigen::MatrixXd beta;         // l x Nw, one simplex column per stage
  Eigen::MatrixXd innovations;  // e x Nw
  /// Sensitivities w.r.t. the packed MheTheta entries.
  Eigen::MatrixXd dxhat_dtheta;  // dim_theta x n, for the latest state
  Eigen::MatrixXd dbeta_dtheta;  // dim_theta x (l*Nw)
  SolveStatus status = SolveStatus::MaxIterations;
  bool sensitivity_ok = false;
  double kkt_cond = 0.0;
  int sqp_iterations = 0;
  double objective = 0.0;

  int window_length() const { return static_cast<int>(beta.cols()); }
  Eigen::VectorXd latest_state() const { return xhat.col(xhat.cols() - 1); }
  Eigen::VectorXd latest_beta() const;
};

/// Sliding data window. Stage j (1..length) couples state j-1 to state j via
/// input u[j-1] and is scored against measurement y[j-1]; the prior anchors
/// state 0.
struct MheWindow {
  int capacity = 10;
  int num_vertices = 1;
  Eigen::VectorXd prior;                    // x-tilde at the window start
  std::deque<Eigen::VectorXd> inputs;       // u at stage transitions
  std::deque<Eigen::VectorXd> measurements; // y per stage
  std::deque<Eigen::VectorXd> beta_ref;     // previous-window beta per stage

  // Warm-start bookkeeping for the SQP solve.
  std::optional<PrimalDualSolution> last_solution;
  int last_length = 0;
  int shift_since_solve = 0;  // stages the data slid since last_solution

  int length() const { return static_cast<int>(measurements.size()); }
  bool full() const { return length() >= capacity; }

  /// Append one transition; slides (and advances the prior from the last
  /// solution) once the window is full.
  void push(const Eigen::VectorXd& u, const Eigen::VectorXd& y, const MheSolution& last);
};

/// Initialize a window from the first measurement: the prior is the measured
/// position with zero velocity (or the measurement itself in full-state test
/// mode) and the beta reference starts uniform.
MheWindow cold_start(const Eigen::VectorXd& y0, int capacity, int state_dim, int num_vertices);

/// Filtering-style prior update: the next window's anchor is this window's
/// estimate of its second state.
Eigen::VectorXd advance_prior(const MheSolution& solution);

/// Assemble the estimation NLP over the current window: decision variables
/// are the window states and one simplex-constrained beta per stage; the
/// innovation is eliminated by substitution. Parameters are the packed
/// MheTheta entries.
NlpProblem build_mhe(const PolytopicModel& model, const MheWindow& window, const MheTheta& theta,
                     const MheConfig& cfg);

/// Solve the window (SQP, warm-started from the shifted previous solution)
/// and extract estimates plus their theta-sensitivities. On solver failure
/// the shifted previous estimate is returned with the failure flagged.
MheSolution estimate(const PolytopicModel& model, MheWindow& window, const MheTheta& theta,
                     const MheConfig& cfg, const SolverOptions& opts = {},
                     bool want_sensitivities = true);

}  // namespace lpvrl
