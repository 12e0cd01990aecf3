#include <doctest.h>

#include <random>

#include "hotmpm/transfer.hpp"
#include "oracles.hpp"

using namespace hotmpm;
using Vec2 = Vec<double, 2>;
using Mat2 = Mat<double, 2>;

namespace {

template <int d>
std::vector<Particle<double, d>> random_particles(std::mt19937_64& rng, int count, double dx) {
  std::uniform_real_distribution<double> pos(0.0, 10 * dx);
  std::uniform_real_distribution<double> vel(-1.0, 1.0);
  std::vector<Particle<double, d>> out(count);
  for (auto& p : out) {
    for (int a = 0; a < d; ++a) {
      p.x[a] = pos(rng);
      p.v[a] = vel(rng);
    }
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) p.C(i, j) = vel(rng);
    p.mass = 0.3 + std::abs(vel(rng));
    p.volume = 1e-4;
  }
  return out;
}

template <int d>
SparseGrid<double, d> grid_of(std::span<const Particle<double, d>> ps, double dx) {
  std::vector<Vec<double, d>> xs(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) xs[i] = ps[i].x;
  return activate_grid<double, d>(xs, dx, KernelKind::QuadraticBSpline);
}

}  // namespace

TEST_CASE("p2g conserves mass and linear momentum, including affine state") {
  std::mt19937_64 rng(11);
  const double dx = 0.05;
  auto ps = random_particles<2>(rng, 80, dx);
  auto grid = grid_of<2>(ps, dx);
  p2g<double, 2>(ps, grid);

  double total_mass = 0;
  Vec2 total_momentum = Vec2::Zero();
  for (const auto& p : ps) {
    total_mass += p.mass;
    total_momentum += p.mass * p.v;
  }
  CHECK(grid.mass.sum() == doctest::Approx(total_mass).epsilon(1e-12));
  Vec2 grid_momentum = Vec2::Zero();
  for (int i = 0; i < grid.node_count(); ++i) grid_momentum += grid.momentum.segment<2>(2 * i);
  CHECK((grid_momentum - total_momentum).norm() <= 1e-12 * total_momentum.norm());
}

TEST_CASE("single particle with uniform velocity spreads that velocity") {
  Particle<double, 2> p;
  p.x = Vec2(0.121, 0.243);
  p.v = Vec2(0.4, -0.7);
  p.mass = 2.0;
  p.volume = 1e-4;
  std::vector<Particle<double, 2>> ps = {p};
  auto grid = grid_of<2>(ps, 0.05);
  p2g<double, 2>(ps, grid);
  double wsum = 0;
  for (int i = 0; i < grid.node_count(); ++i) {
    CHECK((grid.velocity.segment<2>(2 * i) - p.v).norm() < 1e-13);
    wsum += grid.mass[i] / p.mass;
  }
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("g2p reproduces constant and linear grid fields") {
  std::mt19937_64 rng(12);
  const double dx = 0.05;
  auto ps = random_particles<2>(rng, 20, dx);
  auto grid = grid_of<2>(ps, dx);

  SUBCASE("uniform field") {
    const Vec2 v(0.3, 0.9);
    for (int i = 0; i < grid.node_count(); ++i) grid.velocity.segment<2>(2 * i) = v;
    g2p<double, 2>(grid, ps);
    for (const auto& p : ps) {
      CHECK((p.v - v).norm() < 1e-13);
      CHECK(p.C.norm() < 1e-10);
    }
  }

  SUBCASE("affine field v = A x") {
    Mat2 A;
    A << 0.3, -1.1, 0.7, 0.2;
    for (int i = 0; i < grid.node_count(); ++i)
      grid.velocity.segment<2>(2 * i) = A * grid.node_position(i);
    g2p<double, 2>(grid, ps);
    for (const auto& p : ps) {
      CHECK((p.v - A * p.x).norm() < 1e-12);
      CHECK((p.C - A).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("p2g then g2p leaves a rigid translation unchanged") {
  std::mt19937_64 rng(13);
  const double dx = 0.04;
  auto ps = random_particles<2>(rng, 50, dx);
  const Vec2 v(1.25, -0.5);
  for (auto& p : ps) {
    p.v = v;
    p.C.setZero();
  }
  auto grid = grid_of<2>(ps, dx);
  p2g<double, 2>(ps, grid);
  g2p<double, 2>(grid, ps);
  for (const auto& p : ps) {
    CHECK((p.v - v).norm() < 1e-12);
    CHECK(p.C.norm() < 1e-9);
  }
}

TEST_CASE("update_strain") {
  const auto mat = Material<double>::elastic(1000, 1e5, 0.3);
  std::vector<Material<double>> mats = {mat};
  const double dx = 0.05;

  SUBCASE("zero grid velocity leaves F unchanged") {
    std::mt19937_64 rng(14);
    auto ps = random_particles<2>(rng, 30, dx);
    for (auto& p : ps) p.F = oracles::random_f<double, 2>(rng);
    auto saved = ps;
    auto grid = grid_of<2>(ps, dx);
    const long warn = update_strain<double, 2>(ps, grid, 0.01, mats);
    CHECK(warn == 0);
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK((ps[i].F - saved[i].F).norm() == 0.0);
  }

  SUBCASE("uniform translation field leaves F unchanged") {
    std::mt19937_64 rng(15);
    auto ps = random_particles<2>(rng, 30, dx);
    auto saved = ps;
    auto grid = grid_of<2>(ps, dx);
    for (int i = 0; i < grid.node_count(); ++i) grid.velocity.segment<2>(2 * i) = Vec2(0.7, 0.1);
    update_strain<double, 2>(ps, grid, 0.01, mats);
    for (std::size_t i = 0; i < ps.size(); ++i)
      CHECK((ps[i].F - saved[i].F).cwiseAbs().maxCoeff() < 1e-13);
  }

  SUBCASE("uniaxial stretch field matches the analytic velocity gradient") {
    Particle<double, 2> p;
    p.x = Vec2(0.212, 0.157);
    p.mass = 1.0;
    p.volume = 1e-4;
    p.F << 1.1, 0.2, -0.1, 0.9;
    std::vector<Particle<double, 2>> ps = {p};
    auto grid = grid_of<2>(ps, dx);
    const double alpha = 0.8;
    for (int i = 0; i < grid.node_count(); ++i)
      grid.velocity.segment<2>(2 * i) = Vec2(alpha * grid.node_position(i)[0], 0.0);
    const double dt = 1e-3;
    update_strain<double, 2>(ps, grid, dt, mats);
    Mat2 expected = Mat2::Identity();
    expected(0, 0) += alpha * dt;
    expected = expected * p.F;
    CHECK((ps[0].F - expected).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("inversion is counted and passed through") {
    Particle<double, 2> p;
    p.x = Vec2(0.2, 0.2);
    p.mass = 1.0;
    p.volume = 1e-4;
    p.F << -0.5, 0, 0, 1.0;  // already inverted; zero grid velocity keeps it so
    std::vector<Particle<double, 2>> ps = {p};
    auto grid = grid_of<2>(ps, dx);
    const long warn = update_strain<double, 2>(ps, grid, 0.01, mats);
    CHECK(warn == 1);
    CHECK(ps[0].F(0, 0) == doctest::Approx(-0.5));
  }
}

TEST_CASE("advect") {
  Particle<double, 2> p;
  p.x = Vec2(0.5, 0.5);
  std::vector<Particle<double, 2>> ps = {p};

  advect<double, 2>(ps, 0.01);
  CHECK((ps[0].x - Vec2(0.5, 0.5)).norm() == 0.0);

  ps[0].v = Vec2(1.0, 0.0);
  advect<double, 2>(ps, 0.01);
  CHECK((ps[0].x - Vec2(0.51, 0.5)).norm() < 1e-15);

  SUBCASE("CFL time step keeps displacement under one cell") {
    const double dx = 0.01;
    for (double vmax : {0.1, 1.0, 10.0, 1000.0}) {
      const double dt = cfl_dt(vmax, dx, 24.0);
      CHECK(vmax * dt <= dx);
    }
  }
}

TEST_CASE("3D transfers: conservation and affine reproduction") {
  std::mt19937_64 rng(16);
  const double dx = 0.08;
  auto ps = random_particles<3>(rng, 40, dx);
  auto grid = grid_of<3>(ps, dx);
  p2g<double, 3>(ps, grid);

  double total_mass = 0;
  Vec<double, 3> mom = Vec<double, 3>::Zero();
  for (const auto& p : ps) {
    total_mass += p.mass;
    mom += p.mass * p.v;
  }
  CHECK(grid.mass.sum() == doctest::Approx(total_mass).epsilon(1e-12));
  Vec<double, 3> gm = Vec<double, 3>::Zero();
  for (int i = 0; i < grid.node_count(); ++i) gm += grid.momentum.segment<3>(3 * i);
  CHECK((gm - mom).norm() <= 1e-12 * std::max(1.0, mom.norm()));

  Mat<double, 3> A;
  A << 0.1, 0.4, -0.2, 0.0, -0.3, 0.5, 0.2, 0.1, 0.3;
  for (int i = 0; i < grid.node_count(); ++i)
    grid.velocity.segment<3>(3 * i) = A * grid.node_position(i);
  g2p<double, 3>(grid, ps);
  for (const auto& p : ps) CHECK((p.C - A).cwiseAbs().maxCoeff() < 1e-10);
}
