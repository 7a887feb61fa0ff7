#include "lpvrl/sensitivity.hpp"

#include <sstream>

#include "lpvrl/linalg.hpp"

namespace lpvrl {

SensitivityResult sensitivity(const NlpProblem& nlp, const PrimalDualSolution& sol,
                              const Eigen::VectorXd& p, const SolverOptions& opts) {
  if (sol.status != SolveStatus::Converged)
    throw std::invalid_argument("sensitivity: solution has not converged");
  if (p.size() != nlp.num_params)
    throw std::invalid_argument("sensitivity: parameter size mismatch");

  const int nx = nlp.num_vars;
  const int ne = nlp.num_eq;
  const int ni = nlp.num_ineq;
  const Eigen::VectorXd& x = sol.primal;
  const Eigen::VectorXd& lam = sol.eq_dual;
  const Eigen::VectorXd& mu = sol.ineq_dual;

  // Classify inequalities and enforce strict complementarity.
  std::vector<int> active;
  if (ni > 0) {
    const Eigen::VectorXd h = nlp.ineq(x, p);
    for (int i = 0; i < ni; ++i) {
      const double slack = -h(i);
      const bool act = mu(i) > slack;
      if (act && mu(i) < opts.strict_tol) {
        std::ostringstream msg;
        msg << "weak activity at inequality " << i << " (mu=" << mu(i) << ", slack=" << slack
            << ")";
        throw SensitivityError(SensitivityError::Kind::WeakActivity, msg.str());
      }
      if (!act && slack < opts.strict_tol) {
        std::ostringstream msg;
        msg << "weak activity at inequality " << i << " (mu=" << mu(i) << ", slack=" << slack
            << ")";
        throw SensitivityError(SensitivityError::Kind::WeakActivity, msg.str());
      }
      if (act) active.push_back(i);
    }
  }
  const int na = static_cast<int>(active.size());

  const Eigen::MatrixXd W = nlp.lagrangian_hess(x, lam, mu, p);
  const Eigen::MatrixXd JE = ne > 0 ? nlp.eq_jac(x, p) : Eigen::MatrixXd::Zero(0, nx);
  Eigen::MatrixXd JA(na, nx);
  const Eigen::MatrixXd JI = ni > 0 ? nlp.ineq_jac(x, p) : Eigen::MatrixXd::Zero(0, nx);
  for (int r = 0; r < na; ++r) JA.row(r) = JI.row(active[r]);

  const int dim = nx + ne + na;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dim, dim);
  M.topLeftCorner(nx, nx) = W;
  if (ne > 0) {
    M.block(nx, 0, ne, nx) = JE;
    M.block(0, nx, nx, ne) = JE.transpose();
  }
  if (na > 0) {
    M.block(nx + ne, 0, na, nx) = JA;
    M.block(0, nx + ne, nx, na) = JA.transpose();
  }

  Eigen::MatrixXd N(dim, nlp.num_params);
  N.topRows(nx) = nlp.grad_lag_dp(x, lam, mu, p);
  if (ne > 0) N.middleRows(nx, ne) = nlp.eq_dp(x, p);
  if (na > 0) {
    const Eigen::MatrixXd HI_dp = nlp.ineq_dp(x, p);
    for (int r = 0; r < na; ++r) N.row(nx + ne + r) = HI_dp.row(active[r]);
  }

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
  const double cond = condition_estimate(lu);
  Eigen::MatrixXd reduced = -lu.solve(N);
  if (!reduced.allFinite() || cond > 1e14) {
    std::ostringstream msg;
    msg << "singular KKT matrix in sensitivity (cond estimate " << cond << ")";
    throw SensitivityError(SensitivityError::Kind::SingularKkt, msg.str());
  }

  SensitivityResult res;
  res.kkt_cond = cond;
  res.active_set = active;
  res.dz_dp = Eigen::MatrixXd::Zero(nx + ne + ni, nlp.num_params);
  res.dz_dp.topRows(nx + ne) = reduced.topRows(nx + ne);
  for (int r = 0; r < na; ++r) res.dz_dp.row(nx + ne + active[r]) = reduced.row(nx + ne + r);
  return res;
}

}  // namespace lpvrl
