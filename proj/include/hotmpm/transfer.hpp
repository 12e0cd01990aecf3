#pragma once

#include <atomic>
#include <span>
#include <vector>

#include "hotmpm/constitutive.hpp"
#include "hotmpm/grid.hpp"

namespace hotmpm {

template <typename T, int d>
struct Particle {
  Vec<T, d> x = Vec<T, d>::Zero();   // position (m)
  Vec<T, d> v = Vec<T, d>::Zero();   // velocity (m/s)
  T mass{};                          // kg
  T volume{};                        // m^d
  Mat<T, d> F = Mat<T, d>::Identity();  // deformation gradient
  Mat<T, d> C = Mat<T, d>::Zero();   // APIC affine velocity (1/s)
  int material = 0;
};

namespace detail {

/// Visits the stencil of particle position x: fn(node_coord, weight, gradient).
/// Zero-weight slots are skipped (their gradients also vanish for the C1
/// quadratic kernel used in transfers).
template <typename T, int d, typename F>
void for_each_stencil_node(const Vec<T, d>& x, T dx, KernelKind kind, F&& fn) {
  const int width = kernel_stencil_width(kind);
  const int count = ipow(width, d);
  const LatticeCoord<d> base = stencil_base(x, dx, kind);
  for (int k = 0; k < count; ++k) {
    const LatticeCoord<d> node = base + stencil_offset<d>(k, width);
    const Vec<T, d> off = x / dx - node.template cast<T>();
    const T w = kernel_weight<T, d>(kind, off);
    if (w <= T(0)) continue;
    fn(node, w, kernel_gradient<T, d>(kind, off, dx));
  }
}

}  // namespace detail

/// APIC particle-to-grid scatter. Accumulation runs serially in particle
/// order, so the result is deterministic for any thread count.
template <typename T, int d>
void p2g(std::span<const Particle<T, d>> particles, SparseGrid<T, d>& grid) {
  grid.mass.setZero();
  grid.momentum.setZero();
  grid.velocity.setZero();
  for (const auto& p : particles) {
    detail::for_each_stencil_node<T, d>(p.x, grid.dx, grid.kind,
        [&](const LatticeCoord<d>& node, T w, const Vec<T, d>&) {
          const int i = grid.find(node);
          if (i < 0) return;
          const Vec<T, d> xi = node.template cast<T>() * grid.dx;
          grid.mass[i] += w * p.mass;
          grid.momentum.template segment<d>(d * i) += w * p.mass * (p.v + p.C * (xi - p.x));
        });
  }
  for (int i = 0; i < grid.node_count(); ++i)
    if (grid.mass[i] > T(0))
      grid.velocity.template segment<d>(d * i) = grid.momentum.template segment<d>(d * i) / grid.mass[i];
}

/// APIC grid-to-particle gather from grid.velocity. D_p = dx^2/4 * I holds
/// for the quadratic B-spline transfer kernel.
template <typename T, int d>
void g2p(const SparseGrid<T, d>& grid, std::span<Particle<T, d>> particles) {
  const T dinv = T(4) / (grid.dx * grid.dx);
  parallel_for(static_cast<std::int64_t>(particles.size()), [&](std::int64_t pi) {
    auto& p = particles[pi];
    Vec<T, d> v = Vec<T, d>::Zero();
    Mat<T, d> B = Mat<T, d>::Zero();
    detail::for_each_stencil_node<T, d>(p.x, grid.dx, grid.kind,
        [&](const LatticeCoord<d>& node, T w, const Vec<T, d>&) {
          const int i = grid.find(node);
          if (i < 0) return;
          const Vec<T, d> vi = grid.velocity.template segment<d>(d * i);
          const Vec<T, d> xi = node.template cast<T>() * grid.dx;
          v += w * vi;
          B += w * vi * (xi - p.x).transpose();
        });
    p.v = v;
    p.C = B * dinv;
  });
}

/// Updated-Lagrangian strain update from converged grid velocities, followed
/// by the per-particle plastic return map. Returns the number of particles
/// whose elastic update inverted (det F <= 0); those skip the von Mises map.
template <typename T, int d>
long update_strain(std::span<Particle<T, d>> particles, const SparseGrid<T, d>& grid, T dt,
                   std::span<const Material<T>> materials) {
  std::atomic<long> inverted{0};
  parallel_for(static_cast<std::int64_t>(particles.size()), [&](std::int64_t pi) {
    auto& p = particles[pi];
    Mat<T, d> G = Mat<T, d>::Zero();
    detail::for_each_stencil_node<T, d>(p.x, grid.dx, grid.kind,
        [&](const LatticeCoord<d>& node, T, const Vec<T, d>& grad) {
          const int i = grid.find(node);
          if (i < 0) return;
          G += grid.velocity.template segment<d>(d * i) * grad.transpose();
        });
    p.F = (Mat<T, d>::Identity() + dt * G) * p.F;
    const auto& m = materials[p.material];
    if (p.F.determinant() <= T(0)) {
      inverted.fetch_add(1, std::memory_order_relaxed);
      if (m.plasticity == PlasticityKind::VonMises) return;  // pass through, warn only
    }
    p.F = return_map(p.F, m);
  });
  return inverted.load();
}

template <typename T, int d>
void advect(std::span<Particle<T, d>> particles, T dt) {
  parallel_for(static_cast<std::int64_t>(particles.size()),
               [&](std::int64_t pi) { particles[pi].x += dt * particles[pi].v; });
}

}  // namespace hotmpm
