#pragma once

#include "hotmpm/common.hpp"

namespace hotmpm {

template <typename T>
struct PcgResult {
  VecX<T> x;
  int iterations = 0;
  bool converged = true;
};

/// Preconditioned conjugate gradient from a zero initial guess. Terminates
/// when sqrt(r^T P r) <= rel_tol * sqrt(r0^T P r0), i.e. on the relative
/// preconditioned energy norm of the residual. Throws on indefiniteness.
template <typename T, typename ApplyA, typename ApplyP>
PcgResult<T> pcg(ApplyA&& apply_a, ApplyP&& apply_p, const VecX<T>& b, T rel_tol, int cap) {
  PcgResult<T> res;
  res.x = VecX<T>::Zero(b.size());
  VecX<T> r = b;
  VecX<T> z = apply_p(r);
  T rho = r.dot(z);
  if (!(rho > T(0))) {
    if (rho < T(0)) throw SolverFailure("pcg: preconditioner is not positive definite");
    return res;  // b == 0
  }
  const T threshold = rel_tol * rel_tol * rho;
  VecX<T> p = z;
  for (int it = 0; it < cap; ++it) {
    const VecX<T> Ap = apply_a(p);
    const T pAp = p.dot(Ap);
    if (!(pAp > T(0))) throw SolverFailure("pcg: system matrix is not positive definite");
    const T alpha = rho / pAp;
    res.x += alpha * p;
    r -= alpha * Ap;
    z = apply_p(r);
    const T rho_new = r.dot(z);
    res.iterations = it + 1;
    if (rho_new <= threshold) return res;
    p = z + (rho_new / rho) * p;
    rho = rho_new;
  }
  res.converged = false;
  return res;
}

}  // namespace hotmpm
