#pragma once

#include <cmath>
#include <stdexcept>

#include "hotmpm/common.hpp"

namespace hotmpm {

enum class PlasticityKind { None, VonMises, SnowClamp };

template <typename T>
struct Material {
  T density{};
  T youngs{};
  T poisson{};
  T mu{};
  T lambda{};
  PlasticityKind plasticity = PlasticityKind::None;
  T yield_stress{};          // VonMises
  T clamp_lo{1}, clamp_hi{1};  // SnowClamp

  static Material elastic(T density, T youngs, T poisson) {
    if (!(youngs > T(0))) throw std::invalid_argument("material: Young's modulus must be positive");
    if (!(poisson >= T(0) && poisson < T(0.5)))
      throw std::invalid_argument("material: Poisson ratio must lie in [0, 0.5)");
    Material m;
    m.density = density;
    m.youngs = youngs;
    m.poisson = poisson;
    m.mu = youngs / (T(2) * (T(1) + poisson));
    m.lambda = youngs * poisson / ((T(1) + poisson) * (T(1) - T(2) * poisson));
    return m;
  }

  static Material von_mises(T density, T youngs, T poisson, T yield_stress) {
    Material m = elastic(density, youngs, poisson);
    if (!(yield_stress > T(0))) throw std::invalid_argument("material: yield stress must be positive");
    m.plasticity = PlasticityKind::VonMises;
    m.yield_stress = yield_stress;
    return m;
  }

  static Material snow(T density, T youngs, T poisson, T lo, T hi) {
    Material m = elastic(density, youngs, poisson);
    if (!(lo <= T(1) && T(1) <= hi)) throw std::invalid_argument("material: snow clamp must bracket 1");
    m.plasticity = PlasticityKind::SnowClamp;
    m.clamp_lo = lo;
    m.clamp_hi = hi;
    return m;
  }
};

/// d^2 x d^2 stress derivative, flattened row-major over (row, col) pairs of F.
template <typename T, int d>
using StressDerivative = Eigen::Matrix<T, d * d, d * d>;

template <typename T, int d>
struct SvdRV {
  Mat<T, d> U, V;
  Vec<T, d> sigma;  // sigma[d-1] carries the sign of det(F)
};

/// SVD with determinant sign correction: U and V are proper rotations and
/// any inversion is pushed into the sign of the last singular value.
template <typename T, int d>
SvdRV<T, d> svd_rv(const Mat<T, d>& F) {
  Eigen::JacobiSVD<Mat<T, d>> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  SvdRV<T, d> r;
  r.U = svd.matrixU();
  r.V = svd.matrixV();
  r.sigma = svd.singularValues();
  if (r.U.determinant() < T(0)) {
    r.U.col(d - 1) *= T(-1);
    r.sigma[d - 1] *= T(-1);
  }
  if (r.V.determinant() < T(0)) {
    r.V.col(d - 1) *= T(-1);
    r.sigma[d - 1] *= T(-1);
  }
  return r;
}

/// Cofactor matrix, i.e. dJ/dF.
template <typename T, int d>
Mat<T, d> cofactor(const Mat<T, d>& F) {
  Mat<T, d> A;
  if constexpr (d == 2) {
    A(0, 0) = F(1, 1);
    A(0, 1) = -F(1, 0);
    A(1, 0) = -F(0, 1);
    A(1, 1) = F(0, 0);
  } else {
    A(0, 0) = F(1, 1) * F(2, 2) - F(1, 2) * F(2, 1);
    A(0, 1) = F(1, 2) * F(2, 0) - F(1, 0) * F(2, 2);
    A(0, 2) = F(1, 0) * F(2, 1) - F(1, 1) * F(2, 0);
    A(1, 0) = F(0, 2) * F(2, 1) - F(0, 1) * F(2, 2);
    A(1, 1) = F(0, 0) * F(2, 2) - F(0, 2) * F(2, 0);
    A(1, 2) = F(0, 1) * F(2, 0) - F(0, 0) * F(2, 1);
    A(2, 0) = F(0, 1) * F(1, 2) - F(0, 2) * F(1, 1);
    A(2, 1) = F(0, 2) * F(1, 0) - F(0, 0) * F(1, 2);
    A(2, 2) = F(0, 0) * F(1, 1) - F(0, 1) * F(1, 0);
  }
  return A;
}

namespace detail {
template <typename T, int d>
void check_finite_f(const Mat<T, d>& F, const char* who) {
  if (!F.allFinite()) throw std::invalid_argument(std::string(who) + ": non-finite deformation gradient");
}
}  // namespace detail

/// Fixed corotated energy density: mu * sum (sigma_k - 1)^2 + lambda/2 (J-1)^2.
template <typename T, int d>
T fcr_energy_density(const Mat<T, d>& F, const Material<T>& m) {
  detail::check_finite_f(F, "fcr_energy_density");
  const auto s = svd_rv(F).sigma;
  const T J = s.prod();
  T e = T(0);
  for (int k = 0; k < d; ++k) e += (s[k] - T(1)) * (s[k] - T(1));
  return m.mu * e + T(0.5) * m.lambda * (J - T(1)) * (J - T(1));
}

/// First Piola-Kirchhoff stress: P = 2 mu (F - R) + lambda (J - 1) dJ/dF.
template <typename T, int d>
Mat<T, d> fcr_stress(const Mat<T, d>& F, const Material<T>& m) {
  detail::check_finite_f(F, "fcr_stress");
  const auto svd = svd_rv(F);
  const Mat<T, d> R = svd.U * svd.V.transpose();
  const T J = F.determinant();
  return T(2) * m.mu * (F - R) + m.lambda * (J - T(1)) * cofactor(F);
}

/// dP/dF assembled from its diagonal-space form. The 2x2 rotation blocks use
/// the closed-form difference quotient, so only sigma_i + sigma_j ~ 0 needs a
/// denominator clamp.
template <typename T, int d>
StressDerivative<T, d> fcr_stress_derivative(const Mat<T, d>& F, const Material<T>& m) {
  detail::check_finite_f(F, "fcr_stress_derivative");
  const auto svd = svd_rv(F);
  const Vec<T, d>& s = svd.sigma;
  const T J = s.prod();
  const T mu = m.mu, la = m.lambda;

  Vec<T, d> Jp;  // dJ/dsigma_i as a product, no division
  if constexpr (d == 2) {
    Jp[0] = s[1];
    Jp[1] = s[0];
  } else {
    Jp[0] = s[1] * s[2];
    Jp[1] = s[0] * s[2];
    Jp[2] = s[0] * s[1];
  }
  Vec<T, d> psi;  // d psi / d sigma_i
  for (int i = 0; i < d; ++i) psi[i] = T(2) * mu * (s[i] - T(1)) + la * (J - T(1)) * Jp[i];

  auto Jpp = [&](int i, int j) -> T {  // d^2 J / d sigma_i d sigma_j, i != j
    if constexpr (d == 2) {
      (void)i;
      (void)j;
      return T(1);
    } else {
      return s[3 - i - j];
    }
  };

  StressDerivative<T, d> Mhat = StressDerivative<T, d>::Zero();
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      T a = la * Jp[i] * Jp[j];
      if (i == j)
        a += T(2) * mu;
      else
        a += la * (J - T(1)) * Jpp(i, j);
      Mhat(i * d + i, j * d + j) = a;
    }
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const T bd = T(2) * mu - la * (J - T(1)) * Jpp(i, j);  // (psi_i - psi_j)/(s_i - s_j)
      T sum = s[i] + s[j];
      const T mag = std::max(std::abs(sum), T(1e-6));
      sum = sum >= T(0) ? mag : -mag;
      const T bs = (psi[i] + psi[j]) / sum;
      const int a = i * d + j, b = j * d + i;
      Mhat(a, a) = Mhat(b, b) = T(0.5) * (bd + bs);
      Mhat(a, b) = Mhat(b, a) = T(0.5) * (bd - bs);
    }

  // Conjugate back to world space: Q[(ij),(kl)] = U(i,k) V(j,l).
  StressDerivative<T, d> Q;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k)
        for (int l = 0; l < d; ++l) Q(i * d + j, k * d + l) = svd.U(i, k) * svd.V(j, l);
  StressDerivative<T, d> out = Q * Mhat * Q.transpose();
  out = T(0.5) * (out + out.transpose()).eval();
  return out;
}

/// Clamps the eigenvalues of a symmetric matrix at zero. Fixed point on PSD
/// input; throws on asymmetric input.
template <typename T, int n>
Eigen::Matrix<T, n, n> project_spd(const Eigen::Matrix<T, n, n>& A) {
  const T scale = std::max(T(1), A.cwiseAbs().maxCoeff());
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > T(1e-12) * scale)
    throw std::invalid_argument("project_spd: input is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<T, n, n>> es(A);
  Vec<T, n> ev = es.eigenvalues();
  bool changed = false;
  for (int i = 0; i < n; ++i)
    if (ev[i] < T(0)) {
      ev[i] = T(0);
      changed = true;
    }
  if (!changed) return A;
  Eigen::Matrix<T, n, n> B = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return T(0.5) * (B + B.transpose());
}

/// Plastic correction of a trial deformation gradient. Von Mises operates on
/// the deviatoric principal Kirchhoff stress of the Hencky strain; the snow
/// model clamps singular values, keeping rotations.
template <typename T, int d>
Mat<T, d> return_map(const Mat<T, d>& F_trial, const Material<T>& m) {
  detail::check_finite_f(F_trial, "return_map");
  switch (m.plasticity) {
    case PlasticityKind::None:
      return F_trial;
    case PlasticityKind::SnowClamp: {
      auto svd = svd_rv(F_trial);
      for (int i = 0; i < d; ++i) svd.sigma[i] = std::clamp(svd.sigma[i], m.clamp_lo, m.clamp_hi);
      return svd.U * svd.sigma.asDiagonal() * svd.V.transpose();
    }
    case PlasticityKind::VonMises: {
      const auto svd = svd_rv(F_trial);
      if (!(svd.sigma.minCoeff() > T(0)))
        throw std::domain_error("return_map: von Mises requires det(F) > 0");
      Vec<T, d> eps = svd.sigma.array().log();
      const T trace = eps.sum();
      Vec<T, d> dev = eps - Vec<T, d>::Constant(trace / T(d));
      const T dev_stress = T(2) * m.mu * dev.norm();
      if (dev_stress <= m.yield_stress) return F_trial;
      dev *= m.yield_stress / dev_stress;
      const Vec<T, d> eps_new = Vec<T, d>::Constant(trace / T(d)) + dev;
      const Vec<T, d> sig_new = eps_new.array().exp();
      return svd.U * sig_new.asDiagonal() * svd.V.transpose();
    }
  }
  return F_trial;
}

/// Frobenius norm of dP/dF at the undeformed configuration; the per-particle
/// stiffness scale entering the characteristic norm.
template <typename T, int d>
T stiffness_scale(const Material<T>& m) {
  return fcr_stress_derivative<T, d>(Mat<T, d>::Identity(), m).norm();
}

}  // namespace hotmpm
