#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace lpvrl {

enum class TimeDomain { Continuous, Discrete };

/// One corner of the polytope: an LTI model (A, B, C).
struct LtiVertex {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd C;
  TimeDomain time_domain = TimeDomain::Continuous;
};

struct ModelDims {
  int n = 0;  // states
  int m = 0;  // inputs
  int e = 0;  // outputs
  int p = 0;  // scheduling parameters
};

/// Convex hull of LTI vertices. The scheduling-dependent dynamics are
/// recovered as the beta-weighted combination of the vertices.
struct PolytopicModel {
  std::vector<LtiVertex> vertices;
  ModelDims dims;
  int num_vertices() const { return static_cast<int>(vertices.size()); }
};

/// Simplex-constrained weight vector over the vertices.
using BetaWeights = Eigen::VectorXd;

bool is_simplex(const BetaWeights& beta, double sum_tol = 1e-8, double neg_tol = 1e-9);
void require_simplex(const BetaWeights& beta, double sum_tol = 1e-8, double neg_tol = 1e-9);

/// Box bounds on the scheduling parameters (spring constant k [N/m] and
/// damping d [N s/m] for the mass-spring-damper) plus the mass, which is
/// not scheduled.
struct SchedulingBounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double mass = 1.0;
  int num_params() const { return static_cast<int>(lower.size()); }
};

struct CombinedLti {
  Eigen::MatrixXd A, B, C;
};

enum class ScheduleMode { ConstantPerEpisode, PiecewiseConstant, SinusoidalDrift };

struct ScheduleTrajectory {
  ScheduleMode mode = ScheduleMode::ConstantPerEpisode;
  std::vector<Eigen::VectorXd> samples;
  std::uint64_t seed = 0;
};

/// Four continuous-time vertices of the mass-spring-damper polytope, one per
/// corner of the (k, d) box in the order (k_lo,d_lo), (k_lo,d_hi),
/// (k_hi,d_lo), (k_hi,d_hi). C = [1 0] (position measured) unless
/// full_state_output is set, which is a test mode with C = I.
PolytopicModel msd_vertices(const SchedulingBounds& bounds, bool full_state_output = false);

/// Convex combination sum_i beta_i (A_i, B_i, C_i).
CombinedLti combine(const PolytopicModel& model, const BetaWeights& beta);

/// Forward-Euler discretization per vertex: A_d = I + h A, B_d = h B, C_d = C.
/// Euler is affine in (A, B), so discretization commutes with combine().
PolytopicModel discretize(const PolytopicModel& model, double h);

/// One RK4 step of the true continuous plant xdot = A(rho) x + B u with
/// rho = (k, d). h = 0 returns x unchanged.
Eigen::VectorXd plant_step(const Eigen::VectorXd& x, double u, const Eigen::Vector2d& rho,
                           double mass, double h);

ScheduleTrajectory sample_schedule(const SchedulingBounds& bounds, ScheduleMode mode, int horizon,
                                   std::uint64_t seed, int hold_steps = 50);

/// Bilinear box coordinates of rho in the bounds box; the diagnostic inverse
/// of combine() for the mass-spring-damper vertex ordering. Zero-width box
/// dimensions collapse to the corresponding one-hot factor.
BetaWeights true_beta(const Eigen::Vector2d& rho, const SchedulingBounds& bounds);

}  // namespace lpvrl
