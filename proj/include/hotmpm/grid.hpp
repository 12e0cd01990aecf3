#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "hotmpm/common.hpp"

namespace hotmpm {

enum class KernelKind { QuadraticBSpline, Linear };

constexpr int kernel_stencil_width(KernelKind kind) {
  return kind == KernelKind::Linear ? 2 : 3;
}

/// 1D kernel value at a node offset measured in cell units.
/// Quadratic B-spline: 3/4 - x^2 on |x| < 1/2, (3/2 - |x|)^2 / 2 on |x| < 3/2.
template <typename T>
T kernel_weight_1d(KernelKind kind, T x) {
  const T a = std::abs(x);
  if (kind == KernelKind::Linear) {
    return a < T(1) ? T(1) - a : T(0);
  }
  if (a < T(0.5)) return T(0.75) - x * x;
  if (a < T(1.5)) {
    const T t = T(1.5) - a;
    return T(0.5) * t * t;
  }
  return T(0);
}

template <typename T>
T kernel_derivative_1d(KernelKind kind, T x) {
  const T a = std::abs(x);
  if (kind == KernelKind::Linear) {
    if (a >= T(1) || x == T(0)) return T(0);
    return x > T(0) ? T(-1) : T(1);
  }
  if (a < T(0.5)) return T(-2) * x;
  if (a < T(1.5)) return x > T(0) ? a - T(1.5) : T(1.5) - a;
  return T(0);
}

/// Tensor-product weight for a per-axis offset in cell units.
template <typename T, int d>
T kernel_weight(KernelKind kind, const Vec<T, d>& offset) {
  T w = T(1);
  for (int a = 0; a < d; ++a) w *= kernel_weight_1d(kind, offset[a]);
  return w;
}

/// Gradient of the tensor-product weight with respect to the evaluation
/// point, in 1/m. `offset` is (x - x_node)/dx.
template <typename T, int d>
Vec<T, d> kernel_gradient(KernelKind kind, const Vec<T, d>& offset, T dx) {
  Vec<T, d> w1, g1;
  for (int a = 0; a < d; ++a) {
    w1[a] = kernel_weight_1d(kind, offset[a]);
    g1[a] = kernel_derivative_1d(kind, offset[a]);
  }
  Vec<T, d> grad;
  for (int a = 0; a < d; ++a) {
    T v = g1[a] / dx;
    for (int b = 0; b < d; ++b)
      if (b != a) v *= w1[b];
    grad[a] = v;
  }
  return grad;
}

/// Lattice coordinate of the lowest node of the kernel stencil around x.
/// Nodes sit at integer multiples of dx; the quadratic stencil is centered
/// on the nearest node, the linear one on the cell containing x.
template <typename T, int d>
LatticeCoord<d> stencil_base(const Vec<T, d>& x, T dx, KernelKind kind) {
  LatticeCoord<d> base;
  for (int a = 0; a < d; ++a) {
    const T c = x[a] / dx;
    if (kind == KernelKind::QuadraticBSpline)
      base[a] = static_cast<int>(std::floor(c + T(0.5))) - 1;
    else
      base[a] = static_cast<int>(std::floor(c));
  }
  return base;
}

/// Enumerates the width^d stencil offsets in lexicographic order.
template <int d>
LatticeCoord<d> stencil_offset(int flat, int width) {
  LatticeCoord<d> off;
  for (int a = d - 1; a >= 0; --a) {
    off[a] = flat % width;
    flat /= width;
  }
  return off;
}

/// Background grid restricted to the nodes reached by at least one particle.
/// Node indices follow the lexicographic order of lattice coordinates.
template <typename T, int d>
struct SparseGrid {
  T dx = T(1);
  KernelKind kind = KernelKind::QuadraticBSpline;
  std::vector<LatticeCoord<d>> coords;
  std::unordered_map<LatticeCoord<d>, int, LatticeHash<d>> index;
  VecX<T> mass;          // n
  VecX<T> velocity;      // n*d, flat
  VecX<T> momentum;      // n*d, flat
  std::vector<std::uint8_t> dirichlet;  // n
  VecX<T> bc_velocity;   // n*d

  int node_count() const { return static_cast<int>(coords.size()); }

  int find(const LatticeCoord<d>& c) const {
    auto it = index.find(c);
    return it == index.end() ? -1 : it->second;
  }

  Vec<T, d> node_position(int i) const { return coords[i].template cast<T>() * dx; }

  void allocate_fields() {
    const int n = node_count();
    mass = VecX<T>::Zero(n);
    velocity = VecX<T>::Zero(n * d);
    momentum = VecX<T>::Zero(n * d);
    dirichlet.assign(n, 0);
    bc_velocity = VecX<T>::Zero(n * d);
  }
};

/// Activates exactly the lattice nodes receiving nonzero weight from some
/// particle. Empty input yields an empty grid.
template <typename T, int d>
SparseGrid<T, d> activate_grid(std::span<const Vec<T, d>> positions, T dx, KernelKind kind) {
  if (!(dx > T(0))) throw std::invalid_argument("activate_grid: dx must be positive");
  const int width = kernel_stencil_width(kind);
  const int count = ipow(width, d);

  std::vector<LatticeCoord<d>> found;
  found.reserve(positions.size() * count);
  for (const auto& x : positions) {
    if (!x.allFinite()) throw std::invalid_argument("activate_grid: non-finite particle position");
    const LatticeCoord<d> base = stencil_base(x, dx, kind);
    for (int k = 0; k < count; ++k) {
      const LatticeCoord<d> node = base + stencil_offset<d>(k, width);
      const Vec<T, d> off = x / dx - node.template cast<T>();
      if (kernel_weight<T, d>(kind, off) > T(0)) found.push_back(node);
    }
  }
  std::sort(found.begin(), found.end());
  found.erase(std::unique(found.begin(), found.end()), found.end());

  SparseGrid<T, d> grid;
  grid.dx = dx;
  grid.kind = kind;
  grid.coords = std::move(found);
  grid.index.reserve(grid.coords.size());
  for (int i = 0; i < grid.node_count(); ++i) grid.index.emplace(grid.coords[i], i);
  grid.allocate_fields();
  return grid;
}

/// Time step obeying the frame budget and the 0.6-cell CFL bound.
template <typename T>
T cfl_dt(T v_max, T dx, T fps) {
  const T frame = T(1) / fps;
  if (v_max <= T(0)) return frame;
  return std::min(frame, T(0.6) * dx / v_max);
}

}  // namespace hotmpm
