#include <cmath>

#include "doctest.h"
#include "lpvrl/lpv_plant.hpp"
#include "lpvrl/rng.hpp"

using namespace lpvrl;

namespace {

SchedulingBounds bounds_of(double k_lo, double k_hi, double d_lo, double d_hi, double mass = 1.0) {
  SchedulingBounds b;
  b.lower = Eigen::Vector2d(k_lo, d_lo);
  b.upper = Eigen::Vector2d(k_hi, d_hi);
  b.mass = mass;
  return b;
}

}  // namespace

TEST_CASE("msd_vertices reproduces the four corner models") {
  const PolytopicModel m = msd_vertices(bounds_of(1.0, 2.0, 0.0, 0.5));
  REQUIRE(m.num_vertices() == 4);
  Eigen::Matrix2d A1, A2, A3, A4;
  A1 << 0, 1, -1, 0;
  A2 << 0, 1, -1, -0.5;
  A3 << 0, 1, -2, 0;
  A4 << 0, 1, -2, -0.5;
  CHECK((m.vertices[0].A - A1).norm() == doctest::Approx(0.0));
  CHECK((m.vertices[1].A - A2).norm() == doctest::Approx(0.0));
  CHECK((m.vertices[2].A - A3).norm() == doctest::Approx(0.0));
  CHECK((m.vertices[3].A - A4).norm() == doctest::Approx(0.0));
  for (const auto& v : m.vertices) {
    CHECK(v.B(0, 0) == 0.0);
    CHECK(v.B(1, 0) == 1.0);
    CHECK(v.C(0, 0) == 1.0);
    CHECK(v.C(0, 1) == 0.0);
  }
}

TEST_CASE("msd_vertices corner entries for shifted bounds") {
  // corners of -k/m and -d/m by hand
  const PolytopicModel m = msd_vertices(bounds_of(0.5, 2.0, 0.0, 0.2));
  CHECK(m.vertices[0].A(1, 0) == doctest::Approx(-0.5));
  CHECK(m.vertices[0].A(1, 1) == doctest::Approx(0.0));
  CHECK(m.vertices[1].A(1, 0) == doctest::Approx(-0.5));
  CHECK(m.vertices[1].A(1, 1) == doctest::Approx(-0.2));
  CHECK(m.vertices[2].A(1, 0) == doctest::Approx(-2.0));
  CHECK(m.vertices[3].A(1, 1) == doctest::Approx(-0.2));
}

TEST_CASE("msd_vertices degenerate box collapses all vertices") {
  const PolytopicModel m = msd_vertices(bounds_of(1.5, 1.5, 0.3, 0.3));
  for (int i = 1; i < 4; ++i) CHECK((m.vertices[i].A - m.vertices[0].A).norm() == 0.0);
}

TEST_CASE("msd_vertices rejects bad inputs") {
  CHECK_THROWS_AS(msd_vertices(bounds_of(1, 2, 0, 0.5, -1.0)), std::invalid_argument);
  CHECK_THROWS_AS(msd_vertices(bounds_of(2, 1, 0, 0.5)), std::invalid_argument);
}

TEST_CASE("combine: one-hot selects a vertex, uniform averages") {
  const PolytopicModel m = msd_vertices(bounds_of(1.0, 2.0, 0.0, 0.5));
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(4);
  e1(0) = 1.0;
  CHECK((combine(m, e1).A - m.vertices[0].A).norm() == 0.0);

  const Eigen::VectorXd quarter = Eigen::VectorXd::Constant(4, 0.25);
  const CombinedLti mix = combine(m, quarter);
  CHECK(mix.A(1, 0) == doctest::Approx(-1.5));
  CHECK(mix.A(1, 1) == doctest::Approx(-0.25));
  CHECK(mix.A(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("combine: singleton hull and error paths") {
  PolytopicModel single;
  single.dims = ModelDims{1, 1, 1, 0};
  LtiVertex v;
  v.A = Eigen::MatrixXd::Constant(1, 1, 0.7);
  v.B = Eigen::MatrixXd::Constant(1, 1, 2.0);
  v.C = Eigen::MatrixXd::Constant(1, 1, 1.0);
  single.vertices.push_back(v);
  Eigen::VectorXd one(1);
  one << 1.0;
  CHECK(combine(single, one).A(0, 0) == doctest::Approx(0.7));

  const PolytopicModel m = msd_vertices(bounds_of(1, 2, 0, 0.5));
  Eigen::VectorXd bad3(3);
  bad3 << 0.5, 0.25, 0.25;
  CHECK_THROWS_AS(combine(m, bad3), std::invalid_argument);
  Eigen::VectorXd not_simplex(4);
  not_simplex << 0.5, 0.5, 0.5, -0.5;
  CHECK_THROWS_AS(combine(m, not_simplex), std::invalid_argument);
}

TEST_CASE("combine is linear in beta") {
  const PolytopicModel m = msd_vertices(bounds_of(1, 2, 0, 0.5));
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd b1(4), b2(4);
    for (int i = 0; i < 4; ++i) {
      b1(i) = rng.uniform();
      b2(i) = rng.uniform();
    }
    b1 /= b1.sum();
    b2 /= b2.sum();
    const double a = rng.uniform();
    const CombinedLti lhs = combine(m, a * b1 + (1 - a) * b2);
    const CombinedLti r1 = combine(m, b1);
    const CombinedLti r2 = combine(m, b2);
    CHECK((lhs.A - (a * r1.A + (1 - a) * r2.A)).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK((lhs.B - (a * r1.B + (1 - a) * r2.B)).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("discretize: Euler formula on a vertex") {
  const PolytopicModel m = msd_vertices(bounds_of(1, 2, 0, 0.5));
  const PolytopicModel md = discretize(m, 0.05);
  Eigen::Matrix2d A1d;
  A1d << 1.0, 0.05, -0.05, 1.0;
  CHECK((md.vertices[0].A - A1d).lpNorm<Eigen::Infinity>() <= 1e-15);
  CHECK(md.vertices[0].B(1, 0) == doctest::Approx(0.05));
  CHECK(md.vertices[0].time_domain == TimeDomain::Discrete);

  CHECK_THROWS_AS(discretize(m, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(discretize(md, 0.05), std::invalid_argument);
}

TEST_CASE("discretize: zero dynamics maps to identity") {
  PolytopicModel zero;
  zero.dims = ModelDims{2, 1, 1, 0};
  LtiVertex v;
  v.A = Eigen::MatrixXd::Zero(2, 2);
  v.B = Eigen::MatrixXd::Zero(2, 1);
  v.C = Eigen::MatrixXd::Zero(1, 2);
  zero.vertices.push_back(v);
  const PolytopicModel zd = discretize(zero, 0.3);
  CHECK((zd.vertices[0].A - Eigen::MatrixXd::Identity(2, 2)).norm() == 0.0);
  CHECK(zd.vertices[0].B.norm() == 0.0);
}

TEST_CASE("discretization commutes with convex combination") {
  const PolytopicModel m = msd_vertices(bounds_of(1, 2, 0, 0.5));
  const PolytopicModel md = discretize(m, 0.05);
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd b(4);
    for (int i = 0; i < 4; ++i) b(i) = rng.uniform();
    b /= b.sum();
    const CombinedLti cont = combine(m, b);
    const CombinedLti disc = combine(md, b);
    const Eigen::MatrixXd euler = Eigen::MatrixXd::Identity(2, 2) + 0.05 * cont.A;
    CHECK((disc.A - euler).lpNorm<Eigen::Infinity>() <= 1e-12);
    CHECK((disc.B - 0.05 * cont.B).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("plant_step: equilibrium, harmonic oscillator, zero step") {
  const Eigen::Vector2d rho(1.0, 0.0);
  CHECK(plant_step(Eigen::Vector2d(0, 0), 0.0, rho, 1.0, 0.05).norm() == 0.0);

  // closed-form harmonic oscillator; RK4 matches to O(h^5)
  const Eigen::VectorXd x1 = plant_step(Eigen::Vector2d(1, 0), 0.0, rho, 1.0, 0.05);
  CHECK(std::abs(x1(0) - std::cos(0.05)) <= 1e-6);
  CHECK(std::abs(x1(1) + std::sin(0.05)) <= 1e-6);

  const Eigen::Vector2d x(0.3, -0.7);
  CHECK((plant_step(x, 0.5, rho, 1.0, 0.0) - x).norm() == 0.0);

  CHECK_THROWS_AS(
      plant_step(Eigen::Vector2d(std::numeric_limits<double>::quiet_NaN(), 0), 0.0, rho, 1.0, 0.05),
      std::invalid_argument);
}

TEST_CASE("plant energy is conserved for undamped dynamics") {
  const Eigen::Vector2d rho(1.3, 0.0);
  const double mass = 1.0;
  Eigen::VectorXd x(2);
  x << 0.8, 0.0;
  const double E0 = 0.5 * mass * x(1) * x(1) + 0.5 * rho(0) * x(0) * x(0);
  for (int k = 0; k < 200; ++k) x = plant_step(x, 0.0, rho, mass, 0.05);
  const double E1 = 0.5 * mass * x(1) * x(1) + 0.5 * rho(0) * x(0) * x(0);
  CHECK(std::abs(E1 - E0) / E0 <= 1e-6);
}

TEST_CASE("sample_schedule: determinism, bounds, degenerate box") {
  const SchedulingBounds b = bounds_of(0.5, 2.0, 0.0, 0.2);
  const ScheduleTrajectory t1 = sample_schedule(b, ScheduleMode::ConstantPerEpisode, 50, 99);
  const ScheduleTrajectory t2 = sample_schedule(b, ScheduleMode::ConstantPerEpisode, 50, 99);
  REQUIRE(t1.samples.size() == 50);
  for (std::size_t i = 0; i < t1.samples.size(); ++i)
    CHECK((t1.samples[i] - t2.samples[i]).norm() == 0.0);

  // constant within an episode
  for (const auto& s : t1.samples) CHECK((s - t1.samples[0]).norm() == 0.0);

  const SchedulingBounds point = bounds_of(1.0, 1.0, 0.1, 0.1);
  const ScheduleTrajectory tp = sample_schedule(point, ScheduleMode::SinusoidalDrift, 20, 5);
  for (const auto& s : tp.samples) {
    CHECK(s(0) == doctest::Approx(1.0));
    CHECK(s(1) == doctest::Approx(0.1));
  }

  // statistical range check over many constant draws
  double kmin = 1e9, kmax = -1e9, dmin = 1e9, dmax = -1e9;
  for (int seed = 0; seed < 2000; ++seed) {
    const auto t = sample_schedule(b, ScheduleMode::ConstantPerEpisode, 1, seed);
    kmin = std::min(kmin, t.samples[0](0));
    kmax = std::max(kmax, t.samples[0](0));
    dmin = std::min(dmin, t.samples[0](1));
    dmax = std::max(dmax, t.samples[0](1));
  }
  CHECK(kmin >= 0.5);
  CHECK(kmax <= 2.0);
  CHECK(kmin <= 0.6);
  CHECK(kmax >= 1.9);
  CHECK(dmin >= 0.0);
  CHECK(dmax <= 0.2);

  for (auto mode : {ScheduleMode::PiecewiseConstant, ScheduleMode::SinusoidalDrift}) {
    const auto t = sample_schedule(b, mode, 200, 1234);
    for (const auto& s : t.samples) {
      CHECK(s(0) >= b.lower(0) - 1e-12);
      CHECK(s(0) <= b.upper(0) + 1e-12);
      CHECK(s(1) >= b.lower(1) - 1e-12);
      CHECK(s(1) <= b.upper(1) + 1e-12);
    }
  }
}

TEST_CASE("true_beta: corners, center, reconstruction identity") {
  const SchedulingBounds b = bounds_of(1.0, 2.0, 0.0, 0.5);
  const PolytopicModel m = msd_vertices(b);

  const BetaWeights corner = true_beta(Eigen::Vector2d(1.0, 0.0), b);
  CHECK(corner(0) == doctest::Approx(1.0));
  CHECK(corner.tail(3).norm() == doctest::Approx(0.0));

  const BetaWeights center = true_beta(Eigen::Vector2d(1.5, 0.25), b);
  for (int i = 0; i < 4; ++i) CHECK(center(i) == doctest::Approx(0.25));

  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Vector2d rho(rng.uniform(1.0, 2.0), rng.uniform(0.0, 0.5));
    const BetaWeights beta = true_beta(rho, b);
    CHECK(is_simplex(beta));
    const CombinedLti mix = combine(m, beta);
    Eigen::Matrix2d A_rho;
    A_rho << 0, 1, -rho(0), -rho(1);
    CHECK((mix.A - A_rho).lpNorm<Eigen::Infinity>() <= 1e-12);
  }

  CHECK_THROWS_AS(true_beta(Eigen::Vector2d(0.5, 0.0), b), std::invalid_argument);

  const SchedulingBounds flat = bounds_of(1.0, 2.0, 0.2, 0.2);
  const BetaWeights degenerate = true_beta(Eigen::Vector2d(1.5, 0.2), flat);
  CHECK(degenerate(0) == doctest::Approx(0.5));  // one-hot factor on the flat dimension
  CHECK(degenerate(1) == doctest::Approx(0.0));
  CHECK(degenerate(2) == doctest::Approx(0.5));
  CHECK(degenerate(3) == doctest::Approx(0.0));
}
