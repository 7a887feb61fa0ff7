#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lpvrl/mhe.hpp"
#include "lpvrl/mpc.hpp"

namespace lpvrl {

/// One named slice of the flat learnable parameter vector. Slices map into
/// either the packed MheTheta or the packed MpcTheta at local_offset.
struct ThetaSlice {
  std::string name;
  int offset = 0;        // position in the flat theta vector
  int size = 0;
  bool is_mhe = false;
  int local_offset = 0;  // position in the module's packed vector
};

struct ThetaLayout {
  std::vector<ThetaSlice> slices;
  int dim = 0;
  int n = 0, m = 0, e = 0, l = 0, n_eps = 0;

  /// Build a layout from slice names. Valid names: L_A, L_R, L_P (all
  /// vertices), L_P1..L_P<l>, f, L_W, L_Ru, eps.
  static ThetaLayout build(const std::vector<std::string>& names, int n, int m, int e, int l,
                           int n_eps);
  const ThetaSlice* find(const std::string& name) const;
};

/// Flat learnable parameters <-> module structs. scatter applies the
/// projection (factor-diagonal floors, eps clipping) and so may return a
/// value different from the requested one.
Eigen::VectorXd gather_theta(const ThetaLayout& layout, const MheTheta& mhe, const MpcTheta& mpc);
void scatter_theta(const ThetaLayout& layout, const Eigen::VectorXd& theta, MheTheta& mhe,
                   MpcTheta& mpc, const MpcConfig& cfg);

/// One closed-loop step record feeding the LSTD critic.
struct Transition {
  Eigen::VectorXd xhat;       // state estimate at k
  Eigen::VectorXd beta;       // latest beta estimate at k
  Eigen::VectorXd y;          // measurement at k
  Eigen::VectorXd action;     // applied (exploratory) input a_k
  Eigen::VectorXd pi;         // MPC policy output
  Eigen::MatrixXd xi;         // policy sensitivity, n_theta x m
  double stage_cost = 0.0;
  Eigen::VectorXd xhat_next;  // state estimate at k+1
  bool valid = false;
};

/// RL stage cost L(y, a) = y'Qy y + a'Ra a.
double stage_cost(const Eigen::VectorXd& y, const Eigen::VectorXd& a, double qy = 1.0,
                  double ra = 0.1);

/// Total policy Jacobian through both optimizers:
///   Xi = dpi/dtheta + (dxhat/dtheta) (dpi/dxhat) + (dbeta/dtheta) (dpi/dbeta).
/// MPC-only slices contribute the direct term, MHE-only slices the two
/// indirect terms. The schedule's duplicated position 0 is folded onto the
/// first beta stage.
Eigen::MatrixXd jacobian_xi(const MpcSolution& mpc, const MheSolution& mhe,
                            const ThetaLayout& layout);

/// All monomials of the state estimate with degree <= 2.
Eigen::VectorXd features_upsilon(const Eigen::VectorXd& xhat);
int upsilon_dim(int n);

/// Advantage features Psi = Xi (a - pi).
Eigen::VectorXd features_psi(const Transition& t);

struct CriticParams {
  Eigen::VectorXd nu;  // value weights
  Eigen::VectorXd w;   // advantage weights
  double cond_nu = 0.0;
  double cond_w = 0.0;
  bool ok = false;
  std::string reject_reason;
};

struct LstdAccumulators {
  Eigen::MatrixXd A_nu, A_w;
  Eigen::VectorXd b_nu, b_w, b_theta;
  long count = 0;
  long skipped = 0;

  static LstdAccumulators zero(int n_upsilon, int n_theta);
};

/// Add the per-sample LSTD terms of a batch. The supplied critic provides
/// nu for the TD residual in b_w and w for b_theta (two-pass scheme:
/// accumulate, solve nu, re-accumulate, solve w, re-accumulate for b_theta).
void lstd_accumulate(const std::vector<Transition>& batch, LstdAccumulators& acc, double gamma,
                     const CriticParams& critic);

/// Solve the regularized LSTD normal equations (mean over valid samples).
/// Rejects the critic when the sample floor 10*max(n_upsilon, n_theta) is
/// not met or a conditioning estimate exceeds 1e12.
CriticParams critic_solve(const LstdAccumulators& acc);

struct PolicyUpdateResult {
  Eigen::VectorXd theta;
  bool accepted = false;
  double alpha_used = 0.0;
  int retries = 0;
};

/// Projected gradient step theta' = project(theta - alpha * b_theta / count),
/// probed for solver health; the step is halved up to 3 times on probe
/// failure and rejected afterwards.
PolicyUpdateResult policy_update(const Eigen::VectorXd& theta, const Eigen::VectorXd& b_theta,
                                 long count, double alpha,
                                 const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& project,
                                 const std::function<bool(const Eigen::VectorXd&)>& probe);

}  // namespace lpvrl
