#pragma once

// Test-only reference implementations, kept independent of the paths they
// check: dense operators, finite differences, and a straight-line energy
// evaluator that recomputes weights from scratch.

#include <functional>
#include <random>

#include "hotmpm/objective.hpp"
#include "hotmpm/transfer.hpp"

namespace oracles {

using namespace hotmpm;

template <typename Apply>
Eigen::MatrixXd dense_from_operator(Apply&& apply, int n) {
  Eigen::MatrixXd A(n, n);
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[j] = 1.0;
    A.col(j) = apply(e);
  }
  return A;
}

template <typename T, int d>
Eigen::MatrixXd dense_from_bsm(const BlockSparseMatrix<T, d>& H) {
  const int n = H.rows() * d;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (int r = 0; r < H.rows(); ++r)
    for (int s = 0; s < H.slots(); ++s) {
      const int c = H.col(r, s);
      if (c < 0) continue;
      A.block(d * r, d * c, d, d) += H.block(r, s).template cast<double>();
    }
  return A;
}

/// Central finite difference of a scalar function of a flat vector.
template <typename T>
VecX<T> fd_gradient(const std::function<T(const VecX<T>&)>& f, const VecX<T>& x, T h) {
  VecX<T> g(x.size());
  VecX<T> xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const T orig = xp[i];
    xp[i] = orig + h;
    const T ep = f(xp);
    xp[i] = orig - h;
    const T em = f(xp);
    xp[i] = orig;
    g[i] = (ep - em) / (2 * h);
  }
  return g;
}

/// Central finite difference of fcr_energy_density with respect to F.
template <typename T, int d>
Mat<T, d> fd_stress(const Mat<T, d>& F, const Material<T>& m, T h) {
  Mat<T, d> P;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      Mat<T, d> Fp = F, Fm = F;
      Fp(i, j) += h;
      Fm(i, j) -= h;
      P(i, j) = (fcr_energy_density(Fp, m) - fcr_energy_density(Fm, m)) / (2 * h);
    }
  return P;
}

/// Central finite difference of fcr_stress, flattened row-major.
template <typename T, int d>
StressDerivative<T, d> fd_stress_derivative(const Mat<T, d>& F, const Material<T>& m, T h) {
  StressDerivative<T, d> Tn;
  for (int k = 0; k < d; ++k)
    for (int l = 0; l < d; ++l) {
      Mat<T, d> Fp = F, Fm = F;
      Fp(k, l) += h;
      Fm(k, l) -= h;
      const Mat<T, d> dP = (fcr_stress(Fp, m) - fcr_stress(Fm, m)) / (2 * h);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) Tn(i * d + j, k * d + l) = dP(i, j);
    }
  return Tn;
}

/// Random F with det in roughly [0.3, 3]: random entries resampled until the
/// determinant lands in range.
template <typename T, int d>
Mat<T, d> random_f(std::mt19937_64& rng, T lo = T(0.3), T hi = T(3)) {
  std::uniform_real_distribution<T> dist(T(-0.6), T(0.6));
  for (;;) {
    Mat<T, d> F = Mat<T, d>::Identity();
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) F(i, j) += dist(rng);
    const T J = F.determinant();
    if (J > lo && J < hi) return F;
  }
}

template <typename T, int d>
Mat<T, d> random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<T> n(T(0), T(1));
  Mat<T, d> A;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) A(i, j) = n(rng);
  Eigen::HouseholderQR<Mat<T, d>> qr(A);
  Mat<T, d> Q = qr.householderQ();
  if (Q.determinant() < 0) Q.col(0) *= T(-1);
  return Q;
}

/// A small randomized scene: particles jittered in a box, optional random
/// diagonal F and velocities, one material. Returns particles ready for
/// activate_grid / make_objective_state.
template <typename T, int d>
std::vector<Particle<T, d>> random_block(std::mt19937_64& rng, T dx, int cells_per_axis,
                                         const Material<T>& mat, T f_spread = T(0.2),
                                         T v_spread = T(0.5), T f_center = T(1)) {
  std::uniform_real_distribution<T> unit(T(0.05), T(0.95));
  std::uniform_real_distribution<T> fdist(f_center - f_spread, f_center + f_spread);
  std::uniform_real_distribution<T> vdist(-v_spread, v_spread);
  std::vector<Particle<T, d>> out;
  const int ppc = ipow(2, d);
  LatticeCoord<d> c{};
  const int total = ipow(cells_per_axis, d);
  for (int cell = 0; cell < total; ++cell) {
    const LatticeCoord<d> cc = stencil_offset<d>(cell, cells_per_axis);
    for (int k = 0; k < ppc; ++k) {
      Particle<T, d> p;
      for (int a = 0; a < d; ++a) p.x[a] = (cc[a] + unit(rng)) * dx;
      for (int a = 0; a < d; ++a) {
        p.v[a] = vdist(rng);
        p.F(a, a) = fdist(rng);
      }
      p.volume = std::pow(dx, T(d)) / ppc;
      p.mass = mat.density * p.volume;
      p.material = 0;
      out.push_back(p);
    }
  }
  (void)c;
  return out;
}

/// Straight-line reference evaluation of the incremental potential: no cached
/// stencils, everything recomputed from particle positions.
template <typename T, int d>
T reference_energy(std::span<const Particle<T, d>> particles, const SparseGrid<T, d>& grid,
                   const Material<T>& mat, T dt, const Vec<T, d>& gravity, const VecX<T>& dv) {
  T e = T(0);
  for (const auto& p : particles) {
    Mat<T, d> G = Mat<T, d>::Zero();
    const LatticeCoord<d> base = stencil_base(p.x, grid.dx, grid.kind);
    const int width = kernel_stencil_width(grid.kind);
    for (int k = 0; k < ipow(width, d); ++k) {
      const LatticeCoord<d> node = base + stencil_offset<d>(k, width);
      const int i = grid.find(node);
      if (i < 0) continue;
      const Vec<T, d> off = p.x / grid.dx - node.template cast<T>();
      if (kernel_weight<T, d>(grid.kind, off) <= T(0)) continue;
      const Vec<T, d> gw = kernel_gradient<T, d>(grid.kind, off, grid.dx);
      const Vec<T, d> u =
          grid.velocity.template segment<d>(d * i) + dv.template segment<d>(d * i);
      G += u * gw.transpose();
    }
    const Mat<T, d> Fv = (Mat<T, d>::Identity() + dt * G) * p.F;
    e += p.volume * fcr_energy_density(Fv, mat);
  }
  for (int i = 0; i < grid.node_count(); ++i) {
    const Vec<T, d> dvi = dv.template segment<d>(d * i);
    e += T(0.5) * grid.mass[i] * dvi.squaredNorm();
    e -= dt * grid.mass[i] *
         gravity.dot(grid.velocity.template segment<d>(d * i) + dvi);
  }
  return e;
}

}  // namespace oracles
