#pragma once

#include <chrono>
#include <deque>

#include "hotmpm/multigrid.hpp"
#include "hotmpm/objective.hpp"
#include "hotmpm/pcg.hpp"

namespace hotmpm {

enum class SolverKind { Hot, PnPcg, PnPcgMatrixFree, PnMgpcg, LbfgsH };

template <typename T>
struct SolverConfig {
  T epsilon = T(1e-7);        // outer tolerance (unitless, per sqrt(n_node))
  T tau = T(1e-4);            // stiff-material inexactness floor
  int levels = 3;             // multigrid levels
  int window = 8;             // L-BFGS window
  T ls_shrink = T(0.5);
  T ls_armijo = T(1e-4);
  int ls_max_steps = 30;
  int cg_cap = 10000;
  int outer_cap = 1000;
  SolverKind kind = SolverKind::Hot;
  KernelKind embedding = KernelKind::Linear;
  int pinned_coarse_iterations = 256;  // coarse cap when the V-cycle must act linearly
  T cn_length_factor = T(24);
};

struct DiagnosticsRecord {
  int frame = 0;
  long step = 0;
  int outer_iteration = 0;
  double scaled_residual = 0;
  double energy = 0;
  double step_length = 0;
  long inner_iterations = 0;  // CG iterations this outer (coarsest-level CG for hot/lbfgs-h)
  long work_units = 0;        // cumulative CG iterations within this step's solve
  double wall_ms = 0;
};

template <typename T>
struct SolveResult {
  VecX<T> dv;
  int outer_iterations = 0;
  long inner_total = 0;
  int hierarchy_rebuilds = 0;
  bool converged = false;
};

template <typename T>
struct LineSearchResult {
  T alpha;
  T energy;
  int evaluations;
};

/// Relative CG tolerance for inexact Newton:
/// k = min(1/2, sqrt(max(sqrt(g^T P g), tau))) with P the preconditioner.
template <typename T>
T adaptive_cg_tolerance(T preconditioned_energy_sq, T tau) {
  return std::min(T(0.5), std::sqrt(std::max(std::sqrt(preconditioned_energy_sq), tau)));
}

/// Backtracking line search from alpha = 1 under the Armijo condition
/// E(alpha) <= E0 + c * alpha * g.p. Requires a descent direction.
template <typename T, typename EnergyFn>
LineSearchResult<T> line_search(EnergyFn&& energy_at, T e0, T gdotp, const SolverConfig<T>& cfg) {
  if (!(gdotp < T(0))) throw SolverFailure("line_search: not a descent direction");
  T alpha = T(1);
  for (int k = 0; k < cfg.ls_max_steps; ++k) {
    const T e = energy_at(alpha);
    if (e <= e0 + cfg.ls_armijo * alpha * gdotp) return {alpha, e, k + 1};
    alpha *= cfg.ls_shrink;
  }
  throw SolverFailure("line_search: no acceptable step (gradient/Hessian inconsistency)");
}

/// Ring buffer of (s, y, rho) secant pairs. Pairs with non-positive curvature
/// are skipped so the implicit inverse-Hessian approximation stays SPD.
template <typename T>
class LBFGSHistory {
 public:
  explicit LBFGSHistory(int window) : window_(window < 1 ? 1 : window) {}

  bool push(VecX<T> s, VecX<T> y) {
    const T ys = y.dot(s);
    if (!(ys > T(1e-12) * y.norm() * s.norm())) return false;
    if (static_cast<int>(entries_.size()) == window_) entries_.pop_front();
    entries_.push_back({std::move(s), std::move(y), T(1) / ys});
    return true;
  }

  int size() const { return static_cast<int>(entries_.size()); }
  void clear() { entries_.clear(); }

  // k = 0 is the newest pair
  const VecX<T>& s(int k) const { return entries_[entries_.size() - 1 - k].s; }
  const VecX<T>& y(int k) const { return entries_[entries_.size() - 1 - k].y; }
  T rho(int k) const { return entries_[entries_.size() - 1 - k].rho; }

 private:
  struct Entry {
    VecX<T> s, y;
    T rho;
  };
  int window_;
  std::deque<Entry> entries_;
};

/// Two-loop recursion with the initializer applied in the middle. Empty
/// history yields p = initializer(-g).
template <typename T, typename Init>
VecX<T> lbfgs_direction(const VecX<T>& g, const LBFGSHistory<T>& h, Init&& initializer) {
  VecX<T> q = -g;
  const int m = h.size();
  std::vector<T> alpha(m);
  for (int k = 0; k < m; ++k) {  // newest to oldest
    alpha[k] = h.rho(k) * h.s(k).dot(q);
    q -= alpha[k] * h.y(k);
  }
  VecX<T> r = initializer(q);
  for (int k = m - 1; k >= 0; --k) {  // oldest to newest
    const T beta = h.rho(k) * h.y(k).dot(r);
    r += (alpha[k] - beta) * h.s(k);
  }
  return r;
}

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T, int d>
struct OuterLoop {
  const ObjectiveState<T, d>& st;
  const SolverConfig<T>& cfg;
  std::vector<DiagnosticsRecord>* diagnostics;
  int frame;
  long step;

  NodeCN<T> cn;
  T target;
  VecX<T> dv;
  VecX<T> g;
  T e_curr;
  T residual;
  long work = 0;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  explicit OuterLoop(const ObjectiveState<T, d>& state, const SolverConfig<T>& config,
                     std::vector<DiagnosticsRecord>* diag, int frame_, long step_)
      : st(state), cfg(config), diagnostics(diag), frame(frame_), step(step_) {
    cn = compute_node_cn(st);
    target = cfg.epsilon * std::sqrt(static_cast<T>(st.node_count()));
    dv = VecX<T>::Zero(st.dof_count());
    g = gradient(st, dv);
    e_curr = energy(st, dv);
    residual = scaled_norm<T, d>(g, cn);
  }

  bool done() const { return residual <= target; }

  /// Line-searches along p, advances the iterate, and logs one record.
  /// Returns (s, y) for quasi-Newton callers.
  std::pair<VecX<T>, VecX<T>> accept(const VecX<T>& p, int outer, long inner_this) {
    const T gdotp = g.dot(p);
    auto ls = line_search<T>(
        [&](T a) { return energy(st, VecX<T>(dv + a * p)); }, e_curr, gdotp, cfg);
    VecX<T> s = ls.alpha * p;
    dv += s;
    VecX<T> g_new = gradient(st, dv);
    VecX<T> y = g_new - g;
    g = std::move(g_new);
    e_curr = ls.energy;
    residual = scaled_norm<T, d>(g, cn);
    work += inner_this;
    if (diagnostics)
      diagnostics->push_back({frame, step, outer, static_cast<double>(residual),
                              static_cast<double>(e_curr), static_cast<double>(ls.alpha),
                              inner_this, work, ms_since(t0)});
    return {std::move(s), std::move(y)};
  }
};

/// Shared L-BFGS driver; HOT uses the configured level count, LBFGS-H forces
/// a single level (the initializer degenerates to a full-matrix Jacobi-PCG).
template <typename T, int d>
SolveResult<T> solve_quasi_newton(const ObjectiveState<T, d>& st, const SolverConfig<T>& cfg,
                                  int levels, std::vector<DiagnosticsRecord>* diag, int frame,
                                  long step) {
  OuterLoop<T, d> loop(st, cfg, diag, frame, step);
  SolveResult<T> out;
  if (loop.done()) {
    out.dv = std::move(loop.dv);
    out.converged = true;
    return out;
  }

  // Lagged model: Hessian and hierarchy built once at dv = 0.
  const BlockSparseMatrix<T, d> H = assemble_hessian(st, loop.dv, true);
  const MultigridHierarchy<T, d> hier = build_hierarchy(H, *st.grid, levels, cfg.embedding);
  out.hierarchy_rebuilds = 1;

  LBFGSHistory<T> history(cfg.window);
  for (int outer = 1; outer <= cfg.outer_cap; ++outer) {
    long inner_this = 0;
    auto initializer = [&](const VecX<T>& q) {
      auto v = vcycle<T, d>(hier, q, CoarseSolveMode{false, 0});
      inner_this += v.coarse_iterations;
      return v.u;
    };
    const VecX<T> p = lbfgs_direction(loop.g, history, initializer);
    auto [s, y] = loop.accept(p, outer, inner_this);
    history.push(std::move(s), std::move(y));
    out.outer_iterations = outer;
    out.inner_total += inner_this;
    if (loop.done()) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged)
    throw SolverFailure("quasi-newton solve: outer iteration cap reached (residual " +
                        std::to_string(static_cast<double>(loop.residual)) + ")");
  out.dv = std::move(loop.dv);
  return out;
}

enum class PnVariant { Assembled, MatrixFree, Multigrid };

template <typename T, int d>
SolveResult<T> solve_projected_newton(const ObjectiveState<T, d>& st, const SolverConfig<T>& cfg,
                                      PnVariant variant, std::vector<DiagnosticsRecord>* diag,
                                      int frame, long step) {
  OuterLoop<T, d> loop(st, cfg, diag, frame, step);
  SolveResult<T> out;
  if (loop.done()) {
    out.dv = std::move(loop.dv);
    out.converged = true;
    return out;
  }

  for (int outer = 1; outer <= cfg.outer_cap; ++outer) {
    BlockSparseMatrix<T, d> H;
    std::vector<Mat<T, d>, Eigen::aligned_allocator<Mat<T, d>>> diag_blocks;
    MultigridHierarchy<T, d> hier;
    if (variant == PnVariant::MatrixFree) {
      diag_blocks = assemble_block_diagonal(st, loop.dv, true);
    } else {
      H = assemble_hessian(st, loop.dv, true);
      diag_blocks = H.diagonal_blocks();
      if (variant == PnVariant::Multigrid) {
        hier = build_hierarchy(H, *st.grid, cfg.levels, cfg.embedding);
        ++out.hierarchy_rebuilds;
      }
    }
    std::vector<Mat<T, d>, Eigen::aligned_allocator<Mat<T, d>>> diag_inv(diag_blocks.size());
    for (std::size_t i = 0; i < diag_blocks.size(); ++i) diag_inv[i] = diag_blocks[i].inverse();

    T gpg = T(0);  // g^T D^-1 g, the Jacobi-preconditioned energy norm squared
    for (int i = 0; i < st.node_count(); ++i) {
      const Vec<T, d> gi = loop.g.template segment<d>(d * i);
      gpg += gi.dot(diag_inv[i] * gi);
    }
    const T k = adaptive_cg_tolerance(gpg, cfg.tau);

    long inner_this = 0;
    auto apply_jacobi = [&](const VecX<T>& r) {
      VecX<T> z(r.size());
      for (int i = 0; i < st.node_count(); ++i)
        z.template segment<d>(d * i) = diag_inv[i] * r.template segment<d>(d * i);
      return z;
    };
    PcgResult<T> pr;
    const VecX<T> rhs = -loop.g;
    if (variant == PnVariant::MatrixFree) {
      pr = pcg<T>([&](const VecX<T>& x) { return multiply_matrix_free(st, loop.dv, x); },
                  apply_jacobi, rhs, k, cfg.cg_cap);
      inner_this = pr.iterations;
    } else if (variant == PnVariant::Assembled) {
      pr = pcg<T>([&](const VecX<T>& x) { return H * x; }, apply_jacobi, rhs, k, cfg.cg_cap);
      inner_this = pr.iterations;
    } else {
      auto apply_vcycle = [&](const VecX<T>& r) {
        auto v = vcycle<T, d>(hier, r, CoarseSolveMode{true, cfg.pinned_coarse_iterations});
        inner_this += v.coarse_iterations;
        return v.u;
      };
      pr = pcg<T>([&](const VecX<T>& x) { return H * x; }, apply_vcycle, rhs, k, cfg.cg_cap);
      inner_this += pr.iterations;
    }

    loop.accept(pr.x, outer, inner_this);
    out.outer_iterations = outer;
    out.inner_total += inner_this;
    if (loop.done()) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged)
    throw SolverFailure("projected newton solve: outer iteration cap reached (residual " +
                        std::to_string(static_cast<double>(loop.residual)) + ")");
  out.dv = std::move(loop.dv);
  return out;
}

}  // namespace detail

template <typename T, int d>
SolveResult<T> solve_hot(const ObjectiveState<T, d>& st, const SolverConfig<T>& cfg,
                         std::vector<DiagnosticsRecord>* diag = nullptr, int frame = 0,
                         long step = 0) {
  return detail::solve_quasi_newton(st, cfg, cfg.levels, diag, frame, step);
}

template <typename T, int d>
SolveResult<T> solve_lbfgs_h(const ObjectiveState<T, d>& st, const SolverConfig<T>& cfg,
                             std::vector<DiagnosticsRecord>* diag = nullptr, int frame = 0,
                             long step = 0) {
  return detail::solve_quasi_newton(st, cfg, 1, diag, frame, step);
}

template <typename T, int d>
SolveResult<T> solve_pn_pcg(const ObjectiveState<T, d>& st, const SolverConfig<T>& cfg,
                            bool matrix_free = false,
                            std::vector<DiagnosticsRecord>* diag = nullptr, int frame = 0,
                            long step = 0) {
  return detail::solve_projected_newton(
      st, cfg, matrix_free ? detail::PnVariant::MatrixFree : detail::PnVariant::Assembled, diag,
      frame, step);
}

template <typename T, int d>
SolveResult<T> solve_pn_mgpcg(const ObjectiveState<T, d>& st, const SolverConfig<T>& cfg,
                              std::vector<DiagnosticsRecord>* diag = nullptr, int frame = 0,
                              long step = 0) {
  return detail::solve_projected_newton(st, cfg, detail::PnVariant::Multigrid, diag, frame, step);
}

template <typename T, int d>
struct GridStepResult {
  VecX<T> velocity;  // v^{n+1}, flat
  SolveResult<T> solve;
};

/// Solves the grid time step with the configured solver and applies
/// v^{n+1} = v^n + dv. Dirichlet nodes carry their scripted velocities
/// exactly.
template <typename T, int d>
GridStepResult<T, d> step_grid(const ObjectiveState<T, d>& st, const SolverConfig<T>& cfg,
                               std::vector<DiagnosticsRecord>* diag = nullptr, int frame = 0,
                               long step = 0) {
  GridStepResult<T, d> out;
  switch (cfg.kind) {
    case SolverKind::Hot:
      out.solve = solve_hot(st, cfg, diag, frame, step);
      break;
    case SolverKind::LbfgsH:
      out.solve = solve_lbfgs_h(st, cfg, diag, frame, step);
      break;
    case SolverKind::PnPcg:
      out.solve = solve_pn_pcg(st, cfg, false, diag, frame, step);
      break;
    case SolverKind::PnPcgMatrixFree:
      out.solve = solve_pn_pcg(st, cfg, true, diag, frame, step);
      break;
    case SolverKind::PnMgpcg:
      out.solve = solve_pn_mgpcg(st, cfg, diag, frame, step);
      break;
  }
  out.velocity = st.grid->velocity + out.solve.dv;
  for (int i = 0; i < st.node_count(); ++i)
    if (st.grid->dirichlet[i])
      out.velocity.template segment<d>(d * i) = st.grid->bc_velocity.template segment<d>(d * i);
  return out;
}

}  // namespace hotmpm
