#include "lpvrl/lpv_plant.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lpvrl/rng.hpp"

namespace lpvrl {

bool is_simplex(const BetaWeights& beta, double sum_tol, double neg_tol) {
  if (beta.size() == 0) return false;
  if (std::abs(beta.sum() - 1.0) > sum_tol) return false;
  return beta.minCoeff() >= -neg_tol;
}

void require_simplex(const BetaWeights& beta, double sum_tol, double neg_tol) {
  if (!is_simplex(beta, sum_tol, neg_tol)) {
    std::ostringstream msg;
    msg << "beta violates the simplex constraint: sum=" << beta.sum()
        << " min=" << (beta.size() ? beta.minCoeff() : 0.0);
    throw std::invalid_argument(msg.str());
  }
}

namespace {

Eigen::Matrix2d msd_A(double k, double d, double mass) {
  Eigen::Matrix2d A;
  A << 0.0, 1.0, -k / mass, -d / mass;
  return A;
}

void check_bounds(const SchedulingBounds& b) {
  if (b.mass <= 0.0) throw std::invalid_argument("mass must be positive");
  if (b.lower.size() != b.upper.size()) throw std::invalid_argument("bounds size mismatch");
  for (int i = 0; i < b.lower.size(); ++i)
    if (b.lower(i) > b.upper(i)) throw std::invalid_argument("inverted scheduling bounds");
}

}  // namespace

PolytopicModel msd_vertices(const SchedulingBounds& bounds, bool full_state_output) {
  check_bounds(bounds);
  if (bounds.num_params() != 2) throw std::invalid_argument("msd_vertices expects (k, d) bounds");

  const double k_lo = bounds.lower(0), k_hi = bounds.upper(0);
  const double d_lo = bounds.lower(1), d_hi = bounds.upper(1);

  Eigen::MatrixXd B(2, 1);
  B << 0.0, 1.0 / bounds.mass;
  Eigen::MatrixXd C;
  if (full_state_output) {
    C = Eigen::MatrixXd::Identity(2, 2);
  } else {
    C = Eigen::MatrixXd::Zero(1, 2);
    C(0, 0) = 1.0;
  }

  PolytopicModel model;
  model.dims = ModelDims{2, 1, static_cast<int>(C.rows()), 2};
  for (double k : {k_lo, k_hi})
    for (double d : {d_lo, d_hi})
      model.vertices.push_back({msd_A(k, d, bounds.mass), B, C, TimeDomain::Continuous});
  return model;
}

CombinedLti combine(const PolytopicModel& model, const BetaWeights& beta) {
  if (beta.size() != model.num_vertices())
    throw std::invalid_argument("combine: beta length does not match vertex count");
  require_simplex(beta);

  CombinedLti out;
  out.A = Eigen::MatrixXd::Zero(model.vertices[0].A.rows(), model.vertices[0].A.cols());
  out.B = Eigen::MatrixXd::Zero(model.vertices[0].B.rows(), model.vertices[0].B.cols());
  out.C = Eigen::MatrixXd::Zero(model.vertices[0].C.rows(), model.vertices[0].C.cols());
  for (int i = 0; i < model.num_vertices(); ++i) {
    out.A += beta(i) * model.vertices[i].A;
    out.B += beta(i) * model.vertices[i].B;
    out.C += beta(i) * model.vertices[i].C;
  }
  return out;
}

PolytopicModel discretize(const PolytopicModel& model, double h) {
  if (h <= 0.0) throw std::invalid_argument("discretize: h must be positive");
  PolytopicModel out = model;
  for (auto& v : out.vertices) {
    if (v.time_domain != TimeDomain::Continuous)
      throw std::invalid_argument("discretize: model is already discrete");
    v.A = Eigen::MatrixXd::Identity(v.A.rows(), v.A.cols()) + h * v.A;
    v.B = h * v.B;
    v.time_domain = TimeDomain::Discrete;
  }
  return out;
}

Eigen::VectorXd plant_step(const Eigen::VectorXd& x, double u, const Eigen::Vector2d& rho,
                           double mass, double h) {
  if (!x.allFinite() || !std::isfinite(u) || !rho.allFinite() || !std::isfinite(h))
    throw std::invalid_argument("plant_step: non-finite input");
  if (h < 0.0) throw std::invalid_argument("plant_step: negative step size");
  if (mass <= 0.0) throw std::invalid_argument("plant_step: mass must be positive");
  if (h == 0.0) return x;

  const Eigen::Matrix2d A = msd_A(rho(0), rho(1), mass);
  Eigen::Vector2d Bu(0.0, u / mass);

  auto f = [&](const Eigen::Vector2d& s) -> Eigen::Vector2d { return A * s + Bu; };
  const Eigen::Vector2d x0 = x;
  const Eigen::Vector2d k1 = f(x0);
  const Eigen::Vector2d k2 = f(x0 + 0.5 * h * k1);
  const Eigen::Vector2d k3 = f(x0 + 0.5 * h * k2);
  const Eigen::Vector2d k4 = f(x0 + h * k3);
  return x0 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

ScheduleTrajectory sample_schedule(const SchedulingBounds& bounds, ScheduleMode mode, int horizon,
                                   std::uint64_t seed, int hold_steps) {
  check_bounds(bounds);
  if (horizon < 1) throw std::invalid_argument("sample_schedule: horizon must be >= 1");
  if (hold_steps < 1) throw std::invalid_argument("sample_schedule: hold_steps must be >= 1");

  const int p = bounds.num_params();
  Rng rng(seed);
  ScheduleTrajectory traj;
  traj.mode = mode;
  traj.seed = seed;
  traj.samples.reserve(horizon);

  auto draw = [&]() {
    Eigen::VectorXd rho(p);
    for (int i = 0; i < p; ++i) rho(i) = rng.uniform(bounds.lower(i), bounds.upper(i));
    return rho;
  };

  switch (mode) {
    case ScheduleMode::ConstantPerEpisode: {
      const Eigen::VectorXd rho = draw();
      for (int k = 0; k < horizon; ++k) traj.samples.push_back(rho);
      break;
    }
    case ScheduleMode::PiecewiseConstant: {
      Eigen::VectorXd rho = draw();
      for (int k = 0; k < horizon; ++k) {
        if (k > 0 && k % hold_steps == 0) rho = draw();
        traj.samples.push_back(rho);
      }
      break;
    }
    case ScheduleMode::SinusoidalDrift: {
      Eigen::VectorXd phase(p);
      for (int i = 0; i < p; ++i) phase(i) = rng.uniform(0.0, 2.0 * M_PI);
      const double period = std::max(horizon, 2);
      for (int k = 0; k < horizon; ++k) {
        Eigen::VectorXd rho(p);
        for (int i = 0; i < p; ++i) {
          const double mid = 0.5 * (bounds.lower(i) + bounds.upper(i));
          const double amp = 0.5 * (bounds.upper(i) - bounds.lower(i));
          rho(i) = mid + amp * std::sin(2.0 * M_PI * k / period + phase(i));
        }
        traj.samples.push_back(rho);
      }
      break;
    }
    default:
      throw std::invalid_argument("sample_schedule: unknown mode");
  }
  return traj;
}

BetaWeights true_beta(const Eigen::Vector2d& rho, const SchedulingBounds& bounds) {
  check_bounds(bounds);
  if (bounds.num_params() != 2) throw std::invalid_argument("true_beta expects (k, d) bounds");
  const double tol = 1e-12;
  for (int i = 0; i < 2; ++i)
    if (rho(i) < bounds.lower(i) - tol || rho(i) > bounds.upper(i) + tol)
      throw std::invalid_argument("true_beta: rho outside scheduling bounds");

  auto coord = [&](int i) {
    const double w = bounds.upper(i) - bounds.lower(i);
    if (w == 0.0) return 0.0;  // degenerate dimension: one-hot factor (1, 0)
    double s = (rho(i) - bounds.lower(i)) / w;
    return std::min(1.0, std::max(0.0, s));
  };
  const double s = coord(0);
  const double t = coord(1);

  BetaWeights beta(4);
  beta << (1.0 - s) * (1.0 - t), (1.0 - s) * t, s * (1.0 - t), s * t;
  return beta;
}

}  // namespace lpvrl
