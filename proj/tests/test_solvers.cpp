#include <doctest.h>

#include <random>

#include "hotmpm/solvers.hpp"
#include "oracles.hpp"

using namespace hotmpm;
using Vec2 = Vec<double, 2>;
using Mat2 = Mat<double, 2>;

namespace {

struct Scene2 {
  std::vector<Particle<double, 2>> particles;
  SparseGrid<double, 2> grid;
  std::vector<Material<double>> materials;
  ObjectiveState<double, 2> state;
};

/// Deformed block (stretched-box style): per-particle random diagonal F.
Scene2 deformed_block(std::mt19937_64& rng, int cells, double youngs, double f_lo, double f_hi,
                      double dt, Vec2 gravity = Vec2::Zero()) {
  Scene2 sc;
  sc.materials = {Material<double>::elastic(1000, youngs, 0.3)};
  const double dx = 0.01;
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  std::uniform_real_distribution<double> fdist(f_lo, f_hi);
  const int ppc = 4;
  for (int cell = 0; cell < cells * cells; ++cell) {
    const LatticeCoord<2> cc = stencil_offset<2>(cell, cells);
    for (int k = 0; k < ppc; ++k) {
      Particle<double, 2> p;
      for (int a = 0; a < 2; ++a) p.x[a] = (cc[a] + unit(rng)) * dx;
      p.F(0, 0) = fdist(rng);
      p.F(1, 1) = fdist(rng);
      p.volume = dx * dx / ppc;
      p.mass = sc.materials[0].density * p.volume;
      sc.particles.push_back(p);
    }
  }
  std::vector<Vec2> xs(sc.particles.size());
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = sc.particles[i].x;
  sc.grid = activate_grid<double, 2>(xs, dx, KernelKind::QuadraticBSpline);
  p2g<double, 2>(sc.particles, sc.grid);
  sc.state = make_objective_state<double, 2>(sc.particles, sc.grid, sc.materials, dt, gravity);
  return sc;
}

}  // namespace

TEST_CASE("pcg") {
  SUBCASE("identity system converges in one iteration") {
    VecX<double> b = VecX<double>::LinSpaced(10, 1.0, 2.0);
    auto id = [](const VecX<double>& x) { return x; };
    auto r = pcg<double>(id, id, b, 1e-10, 100);
    CHECK(r.iterations == 1);
    CHECK((r.x - b).norm() < 1e-12);
  }

  SUBCASE("zero rhs returns zero in zero iterations") {
    VecX<double> b = VecX<double>::Zero(8);
    auto id = [](const VecX<double>& x) { return x; };
    auto r = pcg<double>(id, id, b, 1e-10, 100);
    CHECK(r.iterations == 0);
    CHECK(r.x.norm() == 0.0);
  }

  SUBCASE("random SPD system matches a dense direct solve") {
    std::mt19937_64 rng(51);
    std::normal_distribution<double> n(0, 1);
    const int dim = 50;
    Eigen::MatrixXd B(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) B(i, j) = n(rng);
    const Eigen::MatrixXd A = B * B.transpose() + 0.5 * Eigen::MatrixXd::Identity(dim, dim);
    VecX<double> b(dim);
    for (int i = 0; i < dim; ++i) b[i] = n(rng);
    auto r = pcg<double>([&](const VecX<double>& x) { return VecX<double>(A * x); },
                         [](const VecX<double>& x) { return x; }, b, 1e-12, 1000);
    const VecX<double> exact = A.ldlt().solve(b);
    CHECK((r.x - exact).norm() <= 1e-9 * exact.norm());
    CHECK(r.converged);
  }

  SUBCASE("indefinite system is detected") {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(4, 4);
    A(3, 3) = -1.0;
    VecX<double> b = VecX<double>::Ones(4);
    CHECK_THROWS_AS(pcg<double>([&](const VecX<double>& x) { return VecX<double>(A * x); },
                                [](const VecX<double>& x) { return x; }, b, 1e-10, 100),
                    SolverFailure);
  }
}

TEST_CASE("line_search") {
  SolverConfig<double> cfg;

  SUBCASE("quadratic objective accepts the Newton step at alpha = 1") {
    // E(a) = (1 - a)^2, from x=0 toward the minimizer: E0 = 1, g.p = -2
    auto ls = line_search<double>([](double a) { return (1 - a) * (1 - a); }, 1.0, -2.0, cfg);
    CHECK(ls.alpha == 1.0);
    CHECK(ls.energy == 0.0);
  }

  SUBCASE("non-descent direction is an error") {
    CHECK_THROWS_AS(line_search<double>([](double) { return 1.0; }, 1.0, 0.5, cfg),
                    SolverFailure);
  }

  SUBCASE("exhausted backtracking is an error") {
    // claims descent, but the energy never drops
    CHECK_THROWS_AS(line_search<double>([](double) { return 2.0; }, 1.0, -1.0, cfg),
                    SolverFailure);
  }

  SUBCASE("returned alpha satisfies the Armijo condition by re-evaluation") {
    std::mt19937_64 rng(52);
    std::uniform_real_distribution<double> dist(0.5, 4.0);
    for (int t = 0; t < 20; ++t) {
      const double curv = dist(rng);
      auto E = [&](double a) { return 1.0 - a + curv * a * a; };  // E'(0) = -1
      auto ls = line_search<double>(E, 1.0, -1.0, cfg);
      CHECK(ls.energy <= 1.0 + cfg.ls_armijo * ls.alpha * (-1.0));
      CHECK(ls.alpha > 0.0);
      CHECK(ls.alpha <= 1.0);
    }
  }
}

TEST_CASE("adaptive CG tolerance clamp") {
  // huge preconditioned gradient norm -> clamped at 1/2
  CHECK(adaptive_cg_tolerance(1e12, 1e-4) == 0.5);
  // vanishing gradient -> floor at sqrt(tau)
  CHECK(adaptive_cg_tolerance(0.0, 1e-4) == doctest::Approx(0.01));
  CHECK(adaptive_cg_tolerance(1e-30, 1e-4) == doctest::Approx(0.01));
}

TEST_CASE("lbfgs_direction") {
  SUBCASE("empty history with identity initializer gives -g") {
    LBFGSHistory<double> hist(8);
    VecX<double> g = VecX<double>::LinSpaced(6, -1.0, 1.0);
    const VecX<double> p = lbfgs_direction(g, hist, [](const VecX<double>& q) { return q; });
    CHECK((p + g).norm() == 0.0);
  }

  SUBCASE("exact inverse-Hessian initializer reproduces the Newton step") {
    std::mt19937_64 rng(53);
    std::normal_distribution<double> n(0, 1);
    Eigen::MatrixXd B(6, 6);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) B(i, j) = n(rng);
    const Eigen::MatrixXd A = B * B.transpose() + Eigen::MatrixXd::Identity(6, 6);
    VecX<double> g(6);
    for (int i = 0; i < 6; ++i) g[i] = n(rng);
    LBFGSHistory<double> hist(8);
    const VecX<double> p = lbfgs_direction(
        g, hist, [&](const VecX<double>& q) { return VecX<double>(A.ldlt().solve(q)); });
    CHECK((A * p + g).norm() < 1e-12 * g.norm());
  }

  SUBCASE("descent property on random SPD quadratics over 100 trials") {
    std::mt19937_64 rng(54);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
      const int dim = 10;
      Eigen::MatrixXd B(dim, dim);
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) B(i, j) = n(rng);
      const Eigen::MatrixXd A = B * B.transpose() + 0.1 * Eigen::MatrixXd::Identity(dim, dim);
      // crude SPD initializer: scaled identity
      auto init = [&](const VecX<double>& q) { return VecX<double>(q / A.trace()); };
      VecX<double> x = VecX<double>::Zero(dim), target(dim);
      for (int i = 0; i < dim; ++i) target[i] = n(rng);
      LBFGSHistory<double> hist(8);
      VecX<double> g = A * (x - target);
      for (int it = 0; it < 12; ++it) {
        const VecX<double> p = lbfgs_direction(g, hist, init);
        CHECK(g.dot(p) < 0.0);
        const VecX<double> x_new = x + p;  // quadratic model: plain step
        const VecX<double> g_new = A * (x_new - target);
        hist.push(x_new - x, g_new - g);
        x = x_new;
        g = g_new;
      }
    }
  }

  SUBCASE("curvature-violating pairs are skipped") {
    LBFGSHistory<double> hist(4);
    VecX<double> s = VecX<double>::Ones(3);
    VecX<double> y = -VecX<double>::Ones(3);
    CHECK_FALSE(hist.push(s, y));
    CHECK(hist.size() == 0);
    CHECK(hist.push(s, VecX<double>(2 * s)));
    CHECK(hist.size() == 1);
  }
}

TEST_CASE("solve_hot on an already-converged rest state does no work") {
  std::mt19937_64 rng(55);
  auto sc = deformed_block(rng, 4, 5e4, 1.0, 1.0, 1.0 / 24);
  for (auto& p : sc.particles) p.v.setZero();
  p2g<double, 2>(sc.particles, sc.grid);
  sc.state = make_objective_state<double, 2>(sc.particles, sc.grid, sc.materials, 1.0 / 24,
                                             Vec2::Zero());
  SolverConfig<double> cfg;
  auto res = solve_hot(sc.state, cfg);
  CHECK(res.converged);
  CHECK(res.outer_iterations == 0);
  CHECK(res.dv.norm() == 0.0);
}

TEST_CASE("all solvers reach the shared termination criterion on a stretched box") {
  std::mt19937_64 rng(56);
  auto sc = deformed_block(rng, 8, 5e4, 0.7, 1.3, 1.0 / 24);
  SolverConfig<double> cfg;
  const auto cn = compute_node_cn(sc.state);
  const double target = cfg.epsilon * std::sqrt(static_cast<double>(sc.state.node_count()));

  std::vector<DiagnosticsRecord> diag;
  for (auto kind : {SolverKind::Hot, SolverKind::PnPcg, SolverKind::PnPcgMatrixFree,
                    SolverKind::PnMgpcg, SolverKind::LbfgsH}) {
    cfg.kind = kind;
    diag.clear();
    auto res = step_grid(sc.state, cfg, &diag);
    CHECK(res.solve.converged);
    const VecX<double> g = gradient(sc.state, res.solve.dv);
    CHECK((scaled_norm<double, 2>(g, cn)) <= target);
    // energy decreases strictly across accepted iterations
    for (std::size_t i = 1; i < diag.size(); ++i) CHECK(diag[i].energy < diag[i - 1].energy);
    CHECK(static_cast<int>(diag.size()) == res.solve.outer_iterations);
  }
}

TEST_CASE("lbfgs-h is bitwise identical to hot with a single level") {
  std::mt19937_64 rng(57);
  auto sc = deformed_block(rng, 6, 5e4, 0.8, 1.2, 1.0 / 24);
  SolverConfig<double> cfg;
  auto a = solve_lbfgs_h(sc.state, cfg);
  SolverConfig<double> cfg1 = cfg;
  cfg1.levels = 1;
  auto b = solve_hot(sc.state, cfg1);
  CHECK(a.outer_iterations == b.outer_iterations);
  CHECK((a.dv - b.dv).norm() == 0.0);
}

TEST_CASE("matrix-free and assembled PN-PCG produce matching iterates") {
  std::mt19937_64 rng(58);
  auto sc = deformed_block(rng, 4, 5e4, 0.9, 1.1, 1.0 / 48);
  SolverConfig<double> cfg;
  auto a = solve_pn_pcg(sc.state, cfg, false);
  auto b = solve_pn_pcg(sc.state, cfg, true);
  CHECK(a.outer_iterations == b.outer_iterations);
  CHECK((a.dv - b.dv).norm() <= 1e-10 * std::max(1.0, a.dv.norm()));
}

TEST_CASE("multigrid and Jacobi preconditioning solve the same linear system") {
  std::mt19937_64 rng(59);
  auto sc = deformed_block(rng, 6, 1e6, 0.85, 1.15, 1.0 / 24);
  const VecX<double> dv0 = VecX<double>::Zero(sc.state.dof_count());
  const auto H = assemble_hessian(sc.state, dv0, true);
  const VecX<double> g = gradient(sc.state, dv0);
  auto diag = H.diagonal_blocks();
  std::vector<Mat2, Eigen::aligned_allocator<Mat2>> dinv(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) dinv[i] = diag[i].inverse();
  const auto hier = build_hierarchy(H, sc.grid, 3, KernelKind::Linear);

  auto apply_a = [&](const VecX<double>& x) { return H * x; };
  auto jacobi = [&](const VecX<double>& r) {
    VecX<double> z(r.size());
    for (int i = 0; i < H.rows(); ++i) z.segment<2>(2 * i) = dinv[i] * r.segment<2>(2 * i);
    return z;
  };
  auto mg = [&](const VecX<double>& r) {
    return vcycle<double, 2>(hier, r, CoarseSolveMode{true, 512}).u;
  };
  const VecX<double> rhs = -g;
  auto ja = pcg<double>(apply_a, jacobi, rhs, 1e-10, 20000);
  auto ma = pcg<double>(apply_a, mg, rhs, 1e-10, 20000);
  CHECK((ja.x - ma.x).norm() <= 1e-7 * ja.x.norm());
  // the multigrid preconditioner needs no more iterations than Jacobi
  CHECK(ma.iterations <= ja.iterations);
}

TEST_CASE("pn-mgpcg rebuilds the hierarchy once per outer iteration") {
  std::mt19937_64 rng(60);
  auto sc = deformed_block(rng, 5, 1e5, 0.85, 1.15, 1.0 / 24);
  SolverConfig<double> cfg;
  cfg.kind = SolverKind::PnMgpcg;
  auto res = solve_pn_mgpcg(sc.state, cfg);
  CHECK(res.converged);
  CHECK(res.hierarchy_rebuilds == res.outer_iterations);
}

TEST_CASE("step_grid: gravity-only single particle gets dv = g dt") {
  Particle<double, 2> p;
  p.x = Vec2(0.305, 0.304);
  p.volume = 1e-4;
  p.mass = 0.1;
  std::vector<Particle<double, 2>> ps = {p};
  std::vector<Vec2> xs = {p.x};
  auto grid = activate_grid<double, 2>(xs, 0.01, KernelKind::QuadraticBSpline);
  p2g<double, 2>(ps, grid);
  std::vector<Material<double>> mats = {Material<double>::elastic(1000, 1e5, 0.3)};
  const double dt = 1.0 / 24;
  const Vec2 gravity(0.0, -9.8);
  auto st = make_objective_state<double, 2>(ps, grid, mats, dt, gravity);

  SolverConfig<double> cfg;
  cfg.epsilon = 1e-10;
  for (auto kind : {SolverKind::Hot, SolverKind::PnPcg}) {
    cfg.kind = kind;
    auto res = step_grid(st, cfg);
    double max_err = 0;
    for (int i = 0; i < grid.node_count(); ++i)
      max_err = std::max(max_err,
                         (res.velocity.segment<2>(2 * i) - dt * gravity).cwiseAbs().maxCoeff());
    CHECK(max_err < 1e-8);  // ballistic oracle
  }
}

TEST_CASE("step_grid keeps scripted velocities exact on Dirichlet nodes") {
  std::mt19937_64 rng(61);
  auto sc = deformed_block(rng, 5, 5e4, 0.9, 1.1, 1.0 / 24, Vec2(0.0, -9.8));
  const Vec2 script(0.123, -0.456);
  for (int i = 0; i < sc.grid.node_count(); ++i)
    if (sc.grid.coords[i][0] <= 1) {
      sc.grid.dirichlet[i] = 1;
      sc.grid.velocity.segment<2>(2 * i) = script;
      sc.grid.bc_velocity.segment<2>(2 * i) = script;
    }
  sc.state = make_objective_state<double, 2>(sc.particles, sc.grid, sc.materials, 1.0 / 24,
                                             Vec2(0.0, -9.8));
  SolverConfig<double> cfg;
  auto res = step_grid(sc.state, cfg);
  CHECK(res.solve.converged);
  for (int i = 0; i < sc.grid.node_count(); ++i)
    if (sc.grid.dirichlet[i]) CHECK((res.velocity.segment<2>(2 * i) - script).norm() == 0.0);
}

TEST_CASE("hot needs fewer outer iterations than lbfgs-h on the stretched box") {
  std::mt19937_64 rng(62);
  auto sc = deformed_block(rng, 10, 5e4, 0.7, 1.3, 1.0 / 24);
  SolverConfig<double> cfg;
  auto hot = solve_hot(sc.state, cfg);
  auto lbh = solve_lbfgs_h(sc.state, cfg);
  CHECK(hot.converged);
  CHECK(lbh.converged);
  CHECK(hot.outer_iterations < lbh.outer_iterations);
}
