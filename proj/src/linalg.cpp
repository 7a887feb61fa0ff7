#include "lpvrl/linalg.hpp"

#include <stdexcept>

namespace lpvrl {

Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& M, double floor) {
  Eigen::MatrixXd S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  if (eig.eigenvalues().minCoeff() >= floor) return S;
  Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(floor);
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

double condition_estimate(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu) {
  const double rc = lu.rcond();
  if (rc <= 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / rc;
}

bool all_finite(const Eigen::MatrixXd& M) { return M.allFinite(); }
bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

int tri_size(int n) { return n * (n + 1) / 2; }

Eigen::VectorXd pack_lower(const Eigen::MatrixXd& L) {
  const int n = static_cast<int>(L.rows());
  Eigen::VectorXd out(tri_size(n));
  int k = 0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) out(k++) = L(r, c);
  return out;
}

Eigen::MatrixXd unpack_lower(const Eigen::VectorXd& packed, int n) {
  if (packed.size() != tri_size(n)) throw std::invalid_argument("unpack_lower: size mismatch");
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  int k = 0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c) L(r, c) = packed(k++);
  return L;
}

Eigen::MatrixXd dLLt_dentry(const Eigen::MatrixXd& L, int a, int b) {
  const int n = static_cast<int>(L.rows());
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
  D.row(a) += L.col(b).transpose();
  D.col(a) += L.col(b);
  return D;
}

std::pair<int, int> tri_entry_position(int n, int flat_index) {
  int k = 0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c)
      if (k++ == flat_index) return {r, c};
  throw std::invalid_argument("tri_entry_position: index out of range");
}

void floor_factor_diagonal(Eigen::MatrixXd& L, double floor) {
  for (int i = 0; i < L.rows(); ++i)
    if (L(i, i) < floor) L(i, i) = floor;
}

}  // namespace lpvrl
