#pragma once

#include <Eigen/Dense>

namespace lpvrl {

/// Symmetrize and clamp the eigenvalues of a symmetric matrix from below.
Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& M, double floor);

/// 1-norm condition estimate from an existing LU factorization.
double condition_estimate(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu);

bool all_finite(const Eigen::MatrixXd& M);
bool all_finite(const Eigen::VectorXd& v);

// Packed storage for lower-triangular Cholesky-style factors. Entries are
// stored row by row: (0,0), (1,0), (1,1), (2,0), ...
int tri_size(int n);
Eigen::VectorXd pack_lower(const Eigen::MatrixXd& L);
Eigen::MatrixXd unpack_lower(const Eigen::VectorXd& packed, int n);

/// d(L L^T)/dL_ab for a lower-triangular factor: e_a l_b^T + l_b e_a^T with
/// l_b the b-th column of L.
Eigen::MatrixXd dLLt_dentry(const Eigen::MatrixXd& L, int a, int b);

/// Map a packed-entry index back to its (row, col) position.
std::pair<int, int> tri_entry_position(int n, int flat_index);

/// Clamp the diagonal of a lower-triangular factor from below (in place).
void floor_factor_diagonal(Eigen::MatrixXd& L, double floor);

}  // namespace lpvrl
