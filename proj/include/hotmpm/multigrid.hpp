#pragma once

#include <memory>
#include <unordered_map>
#include <vector>

#include "hotmpm/objective.hpp"
#include "hotmpm/pcg.hpp"

namespace hotmpm {

/// Sparse fine-to-coarse map: per fine node, the (coarse node, weight) pairs
/// of the embedding kernel. Prolongation is the transpose.
template <typename T, int d>
struct RestrictionOperator {
  struct Entry {
    int coarse;
    T weight;
  };
  std::vector<int> row_start;  // fine_nodes + 1, CSR over fine nodes
  std::vector<Entry> entries;
  int fine_nodes = 0, coarse_nodes = 0;

  void restrict_to_coarse(const VecX<T>& fine, VecX<T>& coarse) const {
    coarse = VecX<T>::Zero(coarse_nodes * d);
    for (int i = 0; i < fine_nodes; ++i)
      for (int e = row_start[i]; e < row_start[i + 1]; ++e)
        coarse.template segment<d>(d * entries[e].coarse) +=
            entries[e].weight * fine.template segment<d>(d * i);
  }

  void prolong_add(const VecX<T>& coarse, VecX<T>& fine) const {
    parallel_for(fine_nodes, [&](std::int64_t i) {
      Vec<T, d> acc = Vec<T, d>::Zero();
      for (int e = row_start[i]; e < row_start[i + 1]; ++e)
        acc += entries[e].weight * coarse.template segment<d>(d * entries[e].coarse);
      fine.template segment<d>(d * i) += acc;
    });
  }

  int max_entries_per_fine_node() const {
    int m = 0;
    for (int i = 0; i < fine_nodes; ++i) m = std::max(m, row_start[i + 1] - row_start[i]);
    return m;
  }
};

/// Lattice structure of one hierarchy level.
template <int d>
struct GridLevelInfo {
  std::vector<LatticeCoord<d>> coords;
  std::unordered_map<LatticeCoord<d>, int, LatticeHash<d>> index;
  std::vector<std::uint8_t> dirichlet;

  int node_count() const { return static_cast<int>(coords.size()); }
};

namespace detail {

inline int floor_div2(int x) { return x >= 0 ? x / 2 : (x - 1) / 2; }

/// Embedding weights of a fine node at coarse-lattice position c/2; entries
/// with zero weight are dropped.
template <typename T, int d>
void embedding_entries_1d(KernelKind kind, int c, int out_coord[3], T out_w[3], int& count) {
  count = 0;
  if (kind == KernelKind::Linear) {
    const int base = floor_div2(c);
    if (c % 2 == 0) {
      out_coord[count] = base;
      out_w[count++] = T(1);
    } else {
      out_coord[count] = base;
      out_w[count++] = T(0.5);
      out_coord[count] = base + 1;
      out_w[count++] = T(0.5);
    }
  } else {
    if (c % 2 == 0) {
      const int mid = c / 2;
      out_coord[count] = mid - 1;
      out_w[count++] = T(0.125);
      out_coord[count] = mid;
      out_w[count++] = T(0.75);
      out_coord[count] = mid + 1;
      out_w[count++] = T(0.125);
    } else {
      const int base = floor_div2(c);
      out_coord[count] = base;
      out_w[count++] = T(0.5);
      out_coord[count] = base + 1;
      out_w[count++] = T(0.5);
    }
  }
}

template <typename T, int d, typename F>
void for_each_embedding(KernelKind kind, const LatticeCoord<d>& c, F&& fn) {
  int coord[d][3];
  T w[d][3];
  int count[d];
  for (int a = 0; a < d; ++a) embedding_entries_1d<T, d>(kind, c[a], coord[a], w[a], count[a]);
  int pick[d] = {};
  while (true) {
    LatticeCoord<d> J;
    T weight = T(1);
    for (int a = 0; a < d; ++a) {
      J[a] = coord[a][pick[a]];
      weight *= w[a][pick[a]];
    }
    fn(J, weight);
    int a = d - 1;
    while (a >= 0) {
      if (++pick[a] < count[a]) break;
      pick[a] = 0;
      --a;
    }
    if (a < 0) break;
  }
}

}  // namespace detail

/// Builds the coarse level reached by embedding fine nodes with the given
/// kernel (coarse spacing = 2x fine). A coarse node is Dirichlet when any
/// fine Dirichlet node has positive weight to it.
template <typename T, int d>
std::pair<GridLevelInfo<d>, RestrictionOperator<T, d>> build_restriction(
    const GridLevelInfo<d>& fine, KernelKind embedding) {
  const int nf = fine.node_count();
  std::vector<LatticeCoord<d>> coarse_coords;
  for (int i = 0; i < nf; ++i)
    detail::for_each_embedding<T, d>(embedding, fine.coords[i],
        [&](const LatticeCoord<d>& J, T) { coarse_coords.push_back(J); });
  std::sort(coarse_coords.begin(), coarse_coords.end());
  coarse_coords.erase(std::unique(coarse_coords.begin(), coarse_coords.end()),
                      coarse_coords.end());

  GridLevelInfo<d> coarse;
  coarse.coords = std::move(coarse_coords);
  coarse.index.reserve(coarse.coords.size());
  for (int j = 0; j < coarse.node_count(); ++j) coarse.index.emplace(coarse.coords[j], j);
  coarse.dirichlet.assign(coarse.node_count(), 0);

  RestrictionOperator<T, d> R;
  R.fine_nodes = nf;
  R.coarse_nodes = coarse.node_count();
  R.row_start.assign(nf + 1, 0);
  for (int i = 0; i < nf; ++i) {
    detail::for_each_embedding<T, d>(embedding, fine.coords[i],
        [&](const LatticeCoord<d>& J, T w) {
          R.entries.push_back({coarse.index.at(J), w});
          if (fine.dirichlet[i]) coarse.dirichlet[coarse.index.at(J)] = 1;
        });
    R.row_start[i + 1] = static_cast<int>(R.entries.size());
  }
  return {std::move(coarse), std::move(R)};
}

/// Galerkin triple product H_coarse = R H R^T in diagonal storage. Exactly
/// symmetric output for symmetric input.
template <typename T, int d>
BlockSparseMatrix<T, d> galerkin_coarsen(const BlockSparseMatrix<T, d>& Hf,
                                         const RestrictionOperator<T, d>& R,
                                         const GridLevelInfo<d>& fine,
                                         const GridLevelInfo<d>& coarse, int coarse_radius) {
  BlockSparseMatrix<T, d> Hc(coarse.coords, coarse.index, coarse_radius);
  using Entry = typename RestrictionOperator<T, d>::Entry;
  auto fine_entries = [&](int i) {
    return std::span<const Entry>(R.entries.data() + R.row_start[i],
                                  R.row_start[i + 1] - R.row_start[i]);
  };
  for (int i = 0; i < Hf.rows(); ++i) {
    for (int s = 0; s < Hf.slots(); ++s) {
      const int l = Hf.col(i, s);
      if (l < i) continue;  // use the stored transpose pair once
      if (l < 0) continue;
      const Mat<T, d>& B = Hf.block(i, s);
      for (const Entry& ea : fine_entries(i)) {
        for (const Entry& eb : fine_entries(l)) {
          const T scale = ea.weight * eb.weight;
          const LatticeCoord<d> off = coarse.coords[eb.coarse] - coarse.coords[ea.coarse];
          const int slot = Hc.slot_of(off);
          if (slot < 0)
            throw std::logic_error("galerkin_coarsen: coarse stencil overflow (kernel misconfiguration)");
          if (i == l) {
            Hc.block(ea.coarse, slot) += scale * B;
          } else if (ea.coarse == eb.coarse) {
            const Mat<T, d> C = scale * B;
            Hc.block(ea.coarse, slot) += C + C.transpose();
          } else {
            LatticeCoord<d> neg;
            for (int a = 0; a < d; ++a) neg[a] = -off[a];
            Hc.block(ea.coarse, slot) += scale * B;
            Hc.block(eb.coarse, Hc.slot_of(neg)) += scale * B.transpose();
          }
        }
      }
    }
  }
  return Hc;
}

template <typename T, int d>
struct MgLevel {
  GridLevelInfo<d> info;
  const BlockSparseMatrix<T, d>* H = nullptr;  // level 0 aliases the caller's matrix
  std::unique_ptr<BlockSparseMatrix<T, d>> owned;
  std::vector<Mat<T, d>, Eigen::aligned_allocator<Mat<T, d>>> diag;
  std::vector<Mat<T, d>, Eigen::aligned_allocator<Mat<T, d>>> diag_inv;
  std::vector<int> sweep_order;  // color classes concatenated
  RestrictionOperator<T, d> R;   // to next coarser level; empty on the coarsest
};

template <typename T, int d>
struct MultigridHierarchy {
  std::vector<MgLevel<T, d>> levels;
  KernelKind embedding = KernelKind::Linear;
  int coarse_cg_cap = 10000;
  bool truncated = false;  // level count was reduced (degenerate coarse grid)

  int level_count() const { return static_cast<int>(levels.size()); }
};

namespace detail {

template <typename T, int d>
void finalize_level(MgLevel<T, d>& lvl, int color_modulus) {
  const auto& H = *lvl.H;
  const int n = H.rows();
  const int ds = H.diagonal_slot();
  lvl.diag.resize(n);
  lvl.diag_inv.resize(n);
  for (int i = 0; i < n; ++i) {
    lvl.diag[i] = H.block(i, ds);
    const T det = lvl.diag[i].determinant();
    if (!(std::abs(det) > T(0)))
      throw std::logic_error("multigrid: singular diagonal block");
    lvl.diag_inv[i] = lvl.diag[i].inverse();
  }
  const int q = color_modulus;
  auto color_of = [&](const LatticeCoord<d>& c) {
    int col = 0;
    for (int a = 0; a < d; ++a) col = col * q + ((c[a] % q) + q) % q;
    return col;
  };
  lvl.sweep_order.resize(n);
  for (int i = 0; i < n; ++i) lvl.sweep_order[i] = i;
  std::stable_sort(lvl.sweep_order.begin(), lvl.sweep_order.end(),
                   [&](int a, int b) { return color_of(lvl.info.coords[a]) < color_of(lvl.info.coords[b]); });
}

}  // namespace detail

/// Builds the M-level node-embedding hierarchy from the projected level-0
/// system. Coarse matrices are Galerkin triple products followed by Dirichlet
/// projection; a degenerate (empty) coarse grid truncates the hierarchy.
template <typename T, int d>
MultigridHierarchy<T, d> build_hierarchy(const BlockSparseMatrix<T, d>& H0,
                                         const SparseGrid<T, d>& grid0, int level_count,
                                         KernelKind embedding) {
  if (level_count < 1) throw std::invalid_argument("build_hierarchy: need at least one level");
  MultigridHierarchy<T, d> hier;
  hier.embedding = embedding;

  MgLevel<T, d> l0;
  l0.info.coords = grid0.coords;
  l0.info.index = grid0.index;
  l0.info.dirichlet = grid0.dirichlet;
  l0.H = &H0;
  detail::finalize_level(l0, 3);
  hier.levels.push_back(std::move(l0));

  const int coarse_radius = embedding == KernelKind::Linear ? 2 : 3;
  const int coarse_modulus = embedding == KernelKind::Linear ? 2 : 3;
  for (int m = 1; m < level_count; ++m) {
    auto& fine = hier.levels.back();
    auto [coarse_info, R] = build_restriction<T, d>(fine.info, embedding);
    if (coarse_info.node_count() == 0) {
      hier.truncated = true;
      break;
    }
    fine.R = std::move(R);
    MgLevel<T, d> lvl;
    lvl.owned = std::make_unique<BlockSparseMatrix<T, d>>(
        galerkin_coarsen(*fine.H, fine.R, fine.info, coarse_info, coarse_radius));
    apply_dirichlet_projection(*lvl.owned, coarse_info.dirichlet);
    lvl.H = lvl.owned.get();
    lvl.info = std::move(coarse_info);
    detail::finalize_level(lvl, coarse_modulus);
    hier.levels.push_back(std::move(lvl));
  }
  return hier;
}

/// One symmetric Gauss-Seidel sweep: forward pass over the color-ordered
/// nodes, then the exact reverse.
template <typename T, int d>
void smooth_sgs(const BlockSparseMatrix<T, d>& H,
                std::span<const Mat<T, d>> diag_inv, std::span<const int> order, VecX<T>& u,
                const VecX<T>& b, int sweeps = 1) {
  const int n = H.rows();
  auto update = [&](int i) {
    Vec<T, d> r = b.template segment<d>(d * i);
    for (int s = 0; s < H.slots(); ++s) {
      const int c = H.col(i, s);
      if (c < 0) continue;
      r -= H.block(i, s) * u.template segment<d>(d * c);
    }
    u.template segment<d>(d * i) += diag_inv[i] * r;
  };
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (int k = 0; k < n; ++k) update(order[k]);
    for (int k = n - 1; k >= 0; --k) update(order[k]);
  }
}

struct CoarseSolveMode {
  bool pinned = false;  // run to machine tolerance (up to the cap) so the
                        // coarse solve acts as a fixed linear operator
  int pinned_cap = 256;
};

template <typename T>
struct CoarseSolveResult {
  VecX<T> u;
  int iterations = 0;
  bool converged = true;
};

/// Jacobi-preconditioned CG on the coarsest level, zero initial guess.
/// Adaptive mode stops at half the initial preconditioned residual norm,
/// i.e. sqrt(r^T D^-1 r) <= 1/2 sqrt(b^T D^-1 b).
template <typename T, int d>
CoarseSolveResult<T> coarse_solve(const BlockSparseMatrix<T, d>& H,
                                  std::span<const Mat<T, d>> diag_inv, const VecX<T>& b,
                                  const CoarseSolveMode& mode, int cap = 10000) {
  auto apply_a = [&](const VecX<T>& x) { return H * x; };
  auto apply_p = [&](const VecX<T>& r) {
    VecX<T> z(r.size());
    const int n = H.rows();
    for (int i = 0; i < n; ++i)
      z.template segment<d>(d * i) = diag_inv[i] * r.template segment<d>(d * i);
    return z;
  };
  const T rel = mode.pinned ? T(1e-14) : T(0.5);
  const int iters = mode.pinned ? mode.pinned_cap : cap;
  PcgResult<T> res = pcg<T>(apply_a, apply_p, b, rel, iters);
  return {std::move(res.x), res.iterations, res.converged || mode.pinned};
}

template <typename T>
struct VCycleResult {
  VecX<T> u;
  int coarse_iterations = 0;
  bool coarse_converged = true;
};

/// Multigrid V-cycle: zero-initialized pre-smoothing and residual restriction
/// on the way down, Jacobi-PCG at the coarsest level, prolongation plus
/// post-smoothing on the way up. Dirichlet right-hand sides are zeroed at
/// every level. A one-level hierarchy degenerates to coarse_solve.
template <typename T, int d>
VCycleResult<T> vcycle(const MultigridHierarchy<T, d>& hier, const VecX<T>& b0,
                       const CoarseSolveMode& mode = {}) {
  const int M = hier.level_count();
  std::vector<VecX<T>> b(M), u(M);
  b[0] = b0;
  auto zero_dirichlet = [&](int m, VecX<T>& x) {
    const auto& dir = hier.levels[m].info.dirichlet;
    for (int i = 0; i < static_cast<int>(dir.size()); ++i)
      if (dir[i]) x.template segment<d>(d * i).setZero();
  };
  zero_dirichlet(0, b[0]);
  for (int m = 0; m < M - 1; ++m) {
    const auto& lvl = hier.levels[m];
    u[m] = VecX<T>::Zero(b[m].size());
    smooth_sgs<T, d>(*lvl.H, lvl.diag_inv, lvl.sweep_order, u[m], b[m]);
    const VecX<T> residual = b[m] - *lvl.H * u[m];
    lvl.R.restrict_to_coarse(residual, b[m + 1]);
    zero_dirichlet(m + 1, b[m + 1]);
  }
  const auto& bottom = hier.levels[M - 1];
  auto cs = coarse_solve<T, d>(*bottom.H, bottom.diag_inv, b[M - 1], mode, hier.coarse_cg_cap);
  u[M - 1] = std::move(cs.u);
  for (int m = M - 2; m >= 0; --m) {
    const auto& lvl = hier.levels[m];
    lvl.R.prolong_add(u[m + 1], u[m]);
    smooth_sgs<T, d>(*lvl.H, lvl.diag_inv, lvl.sweep_order, u[m], b[m]);
  }
  return {std::move(u[0]), cs.iterations, cs.converged};
}

}  // namespace hotmpm
