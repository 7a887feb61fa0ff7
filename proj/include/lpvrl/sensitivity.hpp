#pragma once

#include <stdexcept>
#include <vector>

#include "lpvrl/nlp.hpp"

namespace lpvrl {

/// Parametric sensitivity of a converged primal-dual solution.
/// Rows follow the solution layout [primal; eq duals; ineq duals]; rows of
/// inactive inequality multipliers are zero.
struct SensitivityResult {
  Eigen::MatrixXd dz_dp;
  double kkt_cond = 0.0;
  std::vector<int> active_set;
};

class SensitivityError : public std::runtime_error {
 public:
  enum class Kind { WeakActivity, SingularKkt };
  SensitivityError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

/// Implicit-function-theorem sensitivity dz*/dp = -(dkappa/dz)^-1 dkappa/dp
/// on the active-set-reduced KKT system (inactive inequalities dropped,
/// active ones kept as equalities). Requires strict complementarity: every
/// inequality must show either a multiplier or a slack of at least
/// opts.strict_tol, otherwise a WeakActivity error is raised.
SensitivityResult sensitivity(const NlpProblem& nlp, const PrimalDualSolution& sol,
                              const Eigen::VectorXd& p, const SolverOptions& opts = {});

}  // namespace lpvrl
