#pragma once

#include <random>

#include "hotmpm/scene.hpp"
#include "hotmpm/solvers.hpp"
#include "hotmpm/transfer.hpp"

namespace hotmpm {

namespace detail {

template <typename T, int d>
Vec<T, d> take(const std::array<double, 3>& v) {
  Vec<T, d> r;
  for (int a = 0; a < d; ++a) r[a] = static_cast<T>(v[a]);
  return r;
}

template <typename T, int d>
bool inside_shape(const ShapeSpec& s, const Vec<T, d>& x, T time) {
  switch (s.kind) {
    case ShapeSpec::Kind::Box: {
      for (int a = 0; a < d; ++a)
        if (x[a] < s.min[a] || x[a] > s.max[a]) return false;
      return true;
    }
    case ShapeSpec::Kind::Sphere:
      return (x - take<T, d>(s.center)).norm() <= s.radius;
    case ShapeSpec::Kind::HalfSpace: {
      (void)time;
      return (x - take<T, d>(s.point)).dot(take<T, d>(s.normal)) <= T(0);
    }
    case ShapeSpec::Kind::Cylinder: {
      if constexpr (d == 2) {
        return (x - take<T, d>(s.center)).norm() <= s.radius;
      } else {
        const Vec<T, d> axis = take<T, d>(s.axis).normalized();
        const Vec<T, d> rel = x - take<T, d>(s.center);
        return (rel - rel.dot(axis) * axis).norm() <= s.radius;
      }
    }
  }
  return false;
}

template <typename T, int d>
Vec<T, d> collider_velocity(const ColliderSpec& c, const Vec<T, d>& x) {
  switch (c.motion.kind) {
    case MotionSpec::Kind::Static:
      return Vec<T, d>::Zero();
    case MotionSpec::Kind::Linear:
      return take<T, d>(c.motion.velocity);
    case MotionSpec::Kind::Rotation: {
      const Vec<T, d> rel = x - take<T, d>(c.motion.center);
      if constexpr (d == 2) {
        return static_cast<T>(c.motion.omega) * Vec<T, d>(-rel[1], rel[0]);
      } else {
        const Vec<T, d> w = static_cast<T>(c.motion.omega) * take<T, d>(c.motion.axis).normalized();
        return w.cross(rel);
      }
    }
  }
  return Vec<T, d>::Zero();
}

template <typename T, int d>
T shape_volume(const ShapeSpec& s) {
  if (s.kind == ShapeSpec::Kind::Box) {
    T v = T(1);
    for (int a = 0; a < d; ++a) v *= static_cast<T>(s.max[a] - s.min[a]);
    return v;
  }
  const T r = static_cast<T>(s.radius);
  if constexpr (d == 2)
    return static_cast<T>(EIGEN_PI) * r * r;
  else
    return T(4.0 / 3.0) * static_cast<T>(EIGEN_PI) * r * r * r;
}

template <typename T, int d>
void shape_bounds(const ShapeSpec& s, Vec<T, d>& lo, Vec<T, d>& hi) {
  if (s.kind == ShapeSpec::Kind::Box) {
    lo = take<T, d>(s.min);
    hi = take<T, d>(s.max);
  } else {
    lo = take<T, d>(s.center) - Vec<T, d>::Constant(static_cast<T>(s.radius));
    hi = take<T, d>(s.center) + Vec<T, d>::Constant(static_cast<T>(s.radius));
  }
}

/// Jittered-grid sampling: ppc samples per occupied cell, each jittered
/// inside its own subcell. Deterministic under the seed.
template <typename T, int d>
std::vector<Vec<T, d>> sample_jittered(const ShapeSpec& shape, T dx, int ppc, std::mt19937_64& rng,
                                       T time) {
  Vec<T, d> lo, hi;
  shape_bounds(shape, lo, hi);
  LatticeCoord<d> cell_lo, cell_hi;
  for (int a = 0; a < d; ++a) {
    cell_lo[a] = static_cast<int>(std::floor(lo[a] / dx));
    cell_hi[a] = static_cast<int>(std::ceil(hi[a] / dx));
  }
  // split each cell into sub-cells, one sample per sub-cell
  int splits = 1;
  while (ipow(splits, d) < ppc) ++splits;
  std::uniform_real_distribution<T> unit(T(0), T(1));
  std::vector<Vec<T, d>> out;
  LatticeCoord<d> c = cell_lo;
  while (true) {
    const int nsub = ipow(splits, d);
    for (int k = 0; k < nsub && k < ppc; ++k) {
      const LatticeCoord<d> sub = stencil_offset<d>(k, splits);
      Vec<T, d> x;
      for (int a = 0; a < d; ++a)
        x[a] = (c[a] + (sub[a] + unit(rng)) / splits) * dx;
      if (inside_shape(shape, x, time)) out.push_back(x);
    }
    int a = d - 1;
    while (a >= 0) {
      if (++c[a] < cell_hi[a]) break;
      c[a] = cell_lo[a];
      --a;
    }
    if (a < 0) break;
  }
  return out;
}

/// Dart-throwing Poisson-disk sampling targeting the same density as the
/// jittered default.
template <typename T, int d>
std::vector<Vec<T, d>> sample_poisson(const ShapeSpec& shape, T dx, int ppc, std::mt19937_64& rng,
                                      T time) {
  Vec<T, d> lo, hi;
  shape_bounds(shape, lo, hi);
  const T volume = shape_volume<T, d>(shape);
  const T cell_vol = std::pow(dx, T(d));
  const long target = std::max<long>(1, static_cast<long>(volume / cell_vol * ppc));
  const T radius = T(0.75) * dx / std::pow(static_cast<T>(ppc), T(1) / d);
  std::uniform_real_distribution<T> unit(T(0), T(1));
  std::vector<Vec<T, d>> out;
  long attempts = 0;
  const long max_attempts = target * 60;
  while (static_cast<long>(out.size()) < target && attempts < max_attempts) {
    ++attempts;
    Vec<T, d> x;
    for (int a = 0; a < d; ++a) x[a] = lo[a] + unit(rng) * (hi[a] - lo[a]);
    if (!inside_shape(shape, x, time)) continue;
    bool ok = true;
    for (const auto& y : out)
      if ((x - y).norm() < radius) {
        ok = false;
        break;
      }
    if (ok) out.push_back(x);
  }
  return out;
}

}  // namespace detail

template <typename T, int d>
struct SimulationState {
  std::vector<Particle<T, d>> particles;
  T time = T(0);
  int frame = 0;
  long step_index = 0;
  long inversion_warnings = 0;
  std::vector<DiagnosticsRecord> diagnostics;
};

template <typename T>
SolverKind parse_solver_kind(const std::string& name) {
  if (name == "hot") return SolverKind::Hot;
  if (name == "pn-pcg") return SolverKind::PnPcg;
  if (name == "pn-pcg-mf") return SolverKind::PnPcgMatrixFree;
  if (name == "pn-mgpcg") return SolverKind::PnMgpcg;
  if (name == "lbfgs-h") return SolverKind::LbfgsH;
  throw std::invalid_argument("unknown solver '" + name +
                              "' (expected hot|pn-pcg|pn-pcg-mf|pn-mgpcg|lbfgs-h)");
}

template <typename T>
SolverConfig<T> solver_config_from_scene(const SceneConfig& scene) {
  SolverConfig<T> cfg;
  cfg.epsilon = static_cast<T>(scene.epsilon);
  cfg.tau = static_cast<T>(scene.tau);
  cfg.levels = scene.levels;
  cfg.window = scene.window;
  cfg.kind = parse_solver_kind<T>(scene.solver);
  cfg.embedding =
      scene.embedding == "quadratic" ? KernelKind::QuadraticBSpline : KernelKind::Linear;
  cfg.cn_length_factor = static_cast<T>(scene.cn_length_factor);
  return cfg;
}

template <typename T, int d>
std::vector<Material<T>> materials_from_scene(const SceneConfig& scene) {
  std::vector<Material<T>> mats;
  for (const auto& m : scene.materials) {
    switch (m.plasticity.kind) {
      case PlasticitySpec::Kind::None:
        mats.push_back(Material<T>::elastic(m.density, m.youngs, m.poisson));
        break;
      case PlasticitySpec::Kind::VonMises:
        mats.push_back(
            Material<T>::von_mises(m.density, m.youngs, m.poisson, m.plasticity.yield_stress));
        break;
      case PlasticitySpec::Kind::SnowClamp:
        mats.push_back(Material<T>::snow(m.density, m.youngs, m.poisson, m.plasticity.clamp_lo,
                                         m.plasticity.clamp_hi));
        break;
    }
  }
  return mats;
}

/// Samples all scene objects. Jittered-grid particles carry the exact cell
/// fraction volume dx^d / ppc; Poisson samples share the shape volume evenly.
template <typename T, int d>
std::vector<Particle<T, d>> sample_scene_particles(const SceneConfig& scene) {
  const T dx = static_cast<T>(scene.dx);
  const int ppc = scene.ppc > 0 ? scene.ppc : ipow(2, d);
  std::vector<Particle<T, d>> particles;
  for (std::size_t oi = 0; oi < scene.objects.size(); ++oi) {
    const auto& obj = scene.objects[oi];
    std::mt19937_64 rng(scene.seed * 0x9e3779b9u + oi + 1);
    std::vector<Vec<T, d>> xs;
    if (scene.sampling == "poisson")
      xs = detail::sample_poisson<T, d>(obj.shape, dx, ppc, rng, T(0));
    else
      xs = detail::sample_jittered<T, d>(obj.shape, dx, ppc, rng, T(0));

    const T volume = scene.sampling == "poisson"
                         ? detail::shape_volume<T, d>(obj.shape) / std::max<std::size_t>(1, xs.size())
                         : std::pow(dx, T(d)) / ppc;
    const T density = static_cast<T>(scene.materials[obj.material].density);
    std::uniform_real_distribution<T> fdist(static_cast<T>(obj.initial_deformation.lo),
                                            static_cast<T>(obj.initial_deformation.hi));
    for (const auto& x : xs) {
      Particle<T, d> p;
      p.x = x;
      p.v = detail::take<T, d>(obj.velocity);
      p.volume = volume;
      p.mass = density * volume;
      p.material = obj.material;
      if (obj.initial_deformation.kind == InitialDeformationSpec::Kind::RandomDiagonal)
        for (int a = 0; a < d; ++a) p.F(a, a) = fdist(rng);
      particles.push_back(p);
    }
  }
  return particles;
}

/// Marks grid nodes inside colliders as Dirichlet and overwrites their nodal
/// velocity with the scripted rigid velocity, so the solve carries dv = 0
/// there and v^{n+1} matches the script exactly.
template <typename T, int d>
void apply_boundary_scripts(SparseGrid<T, d>& grid, const SceneConfig& scene, T time) {
  for (int i = 0; i < grid.node_count(); ++i) {
    const Vec<T, d> x = grid.node_position(i);
    for (const auto& col : scene.colliders) {
      if (!detail::inside_shape<T, d>(col.shape, x, time)) continue;
      const Vec<T, d> v = detail::collider_velocity<T, d>(col, x);
      grid.dirichlet[i] = 1;
      grid.velocity.template segment<d>(d * i) = v;
      grid.bc_velocity.template segment<d>(d * i) = v;
      break;
    }
  }
}

template <typename T>
struct StepStats {
  T dt{};
  int outer_iterations = 0;
  long inner_total = 0;
  int node_count = 0;
  bool converged = false;
};

/// One full time step: CFL dt, grid activation, P2G, boundary scripts, the
/// grid solve, G2P, strain update with the plastic return map, advection.
/// Particles are only mutated after a successful solve.
template <typename T, int d>
StepStats<T> advance_step(SimulationState<T, d>& sim, const SceneConfig& scene,
                          const SolverConfig<T>& cfg, T frame_end) {
  const T dx = static_cast<T>(scene.dx);
  T v_max = T(0);
  for (const auto& p : sim.particles) v_max = std::max(v_max, p.v.norm());
  T dt = cfl_dt(v_max, dx, static_cast<T>(scene.fps));
  if (frame_end > T(0)) dt = std::min(dt, frame_end - sim.time);
  if (!(dt > T(0))) throw SolverFailure("advance_step: non-positive time step");

  std::vector<Vec<T, d>> positions(sim.particles.size());
  for (std::size_t i = 0; i < sim.particles.size(); ++i) positions[i] = sim.particles[i].x;
  SparseGrid<T, d> grid = activate_grid<T, d>(positions, dx, KernelKind::QuadraticBSpline);
  p2g<T, d>(sim.particles, grid);
  apply_boundary_scripts(grid, scene, sim.time);

  const auto materials = materials_from_scene<T, d>(scene);
  const Vec<T, d> gravity = detail::take<T, d>(scene.gravity);
  const ObjectiveState<T, d> st = make_objective_state<T, d>(
      sim.particles, grid, materials, dt, gravity, static_cast<T>(scene.cn_length_factor));

  GridStepResult<T, d> step;
  try {
    step = step_grid(st, cfg, &sim.diagnostics, sim.frame, sim.step_index);
  } catch (const SolverFailure& e) {
    throw SolverFailure("step " + std::to_string(sim.step_index) + ": " + e.what());
  }

  grid.velocity = step.velocity;
  g2p<T, d>(grid, sim.particles);
  sim.inversion_warnings += update_strain<T, d>(sim.particles, grid, dt, materials);
  advect<T, d>(sim.particles, dt);

  sim.time += dt;
  ++sim.step_index;
  return {dt, step.solve.outer_iterations, step.solve.inner_total, grid.node_count(),
          step.solve.converged};
}

}  // namespace hotmpm
