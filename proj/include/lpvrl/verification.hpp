#pragma once

#include <string>
#include <vector>

#include "lpvrl/experiment.hpp"
#include "lpvrl/mhe.hpp"
#include "lpvrl/mpc.hpp"
#include "lpvrl/nlp.hpp"
#include "lpvrl/rng.hpp"

namespace lpvrl {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string detail;
};

/// Random strictly convex QP with a guaranteed strictly feasible point.
DenseQp random_qp(Rng& rng, int max_dim = 4, int max_ineq = 6);

struct MpcInstance {
  PolytopicModel model;
  Eigen::VectorXd xhat;
  std::vector<Eigen::VectorXd> schedule;
  MpcTheta theta;
  MpcConfig cfg;
};

struct MheInstance {
  PolytopicModel model;
  MheWindow window;
  MheTheta theta;
  MheConfig cfg;
};

/// Random MPC QP instances around the nominal mass-spring-damper setup.
MpcInstance random_mpc_instance(Rng& rng, bool with_state_box);

/// Random MHE windows built from design-consistent rollouts.
MheInstance random_mhe_instance(Rng& rng);

/// Central finite differences of the re-solved problem in every parameter
/// direction (the independent oracle the IFT sensitivities are checked
/// against). Convex-qp problems re-solve with the interior-point solver;
/// bilinear problems re-solve with SQP warm-started from the base solution.
Eigen::MatrixXd fd_sensitivity(const NlpProblem& nlp, const PrimalDualSolution& base,
                               double delta = 1e-5);

// Individual verification checks (also reused by the acceptance suite).
CheckResult check_qp_vs_brute_force(int count, std::uint64_t seed);
CheckResult check_mpc_sensitivity_fd(int count, std::uint64_t seed);
CheckResult check_mhe_sensitivity_fd(int count, std::uint64_t seed);
CheckResult check_xi_composed_fd(int count, std::uint64_t seed);
CheckResult check_mhe_vertex_recovery();
CheckResult check_mhe_mixture_recovery();
CheckResult check_lstd_per_sample(int count, std::uint64_t seed);
CheckResult check_closed_loop_invariants(std::uint64_t seed);

/// The full oracle suite run by the CLI `verify` subcommand.
std::vector<CheckResult> run_verification(std::uint64_t seed = 20240801ULL);

}  // namespace lpvrl
