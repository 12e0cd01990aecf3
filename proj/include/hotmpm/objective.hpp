#pragma once

#include <span>
#include <vector>

#include "hotmpm/constitutive.hpp"
#include "hotmpm/grid.hpp"
#include "hotmpm/transfer.hpp"

namespace hotmpm {

/// d x d block sparse matrix in diagonal (fixed stencil offset) storage: every
/// row owns one slot per lattice offset in {-radius..radius}^d. Slots whose
/// column node is inactive keep column index -1.
template <typename T, int d>
class BlockSparseMatrix {
 public:
  using Block = Mat<T, d>;

  BlockSparseMatrix() = default;

  template <typename IndexMap>
  BlockSparseMatrix(const std::vector<LatticeCoord<d>>& coords, const IndexMap& index, int radius)
      : rows_(static_cast<int>(coords.size())), radius_(radius), nslots_(ipow(2 * radius + 1, d)) {
    offsets_.resize(nslots_);
    for (int s = 0; s < nslots_; ++s) {
      LatticeCoord<d> off = stencil_offset<d>(s, 2 * radius + 1);
      for (int a = 0; a < d; ++a) off[a] -= radius;
      offsets_[s] = off;
    }
    cols_.assign(static_cast<std::size_t>(rows_) * nslots_, -1);
    data_.assign(static_cast<std::size_t>(rows_) * nslots_, Block::Zero());
    parallel_for(rows_, [&](std::int64_t r) {
      for (int s = 0; s < nslots_; ++s) {
        auto it = index.find(coords[r] + offsets_[s]);
        if (it != index.end()) cols_[r * nslots_ + s] = it->second;
      }
    });
  }

  int rows() const { return rows_; }
  int slots() const { return nslots_; }
  int radius() const { return radius_; }
  const LatticeCoord<d>& offset(int slot) const { return offsets_[slot]; }

  int slot_of(const LatticeCoord<d>& off) const {
    int s = 0;
    for (int a = 0; a < d; ++a) {
      if (off[a] < -radius_ || off[a] > radius_) return -1;
      s = s * (2 * radius_ + 1) + (off[a] + radius_);
    }
    return s;
  }
  int diagonal_slot() const { return slot_of(LatticeCoord<d>{}); }

  int col(int row, int slot) const { return cols_[static_cast<std::size_t>(row) * nslots_ + slot]; }
  Block& block(int row, int slot) { return data_[static_cast<std::size_t>(row) * nslots_ + slot]; }
  const Block& block(int row, int slot) const {
    return data_[static_cast<std::size_t>(row) * nslots_ + slot];
  }

  void set_zero() {
    for (auto& b : data_) b.setZero();
  }

  void multiply(const VecX<T>& x, VecX<T>& y) const {
    y.resize(rows_ * d);
    parallel_for(rows_, [&](std::int64_t r) {
      Vec<T, d> acc = Vec<T, d>::Zero();
      for (int s = 0; s < nslots_; ++s) {
        const int c = col(static_cast<int>(r), s);
        if (c < 0) continue;
        acc += block(static_cast<int>(r), s) * x.template segment<d>(d * c);
      }
      y.template segment<d>(d * r) = acc;
    });
  }

  VecX<T> operator*(const VecX<T>& x) const {
    VecX<T> y;
    multiply(x, y);
    return y;
  }

  std::vector<Block, Eigen::aligned_allocator<Block>> diagonal_blocks() const {
    std::vector<Block, Eigen::aligned_allocator<Block>> diag(rows_);
    const int s = diagonal_slot();
    for (int r = 0; r < rows_; ++r) diag[r] = block(r, s);
    return diag;
  }

  int row_nonzero_blocks(int r) const {
    int n = 0;
    for (int s = 0; s < nslots_; ++s)
      if (col(r, s) >= 0 && !block(r, s).isZero(T(0))) ++n;
    return n;
  }
  int max_nonzero_blocks_per_row() const {
    int m = 0;
    for (int r = 0; r < rows_; ++r) m = std::max(m, row_nonzero_blocks(r));
    return m;
  }
  double mean_nonzero_blocks_per_row() const {
    if (rows_ == 0) return 0;
    long total = 0;
    for (int r = 0; r < rows_; ++r) total += row_nonzero_blocks(r);
    return static_cast<double>(total) / rows_;
  }

  /// Max abs difference between block (i,j) and block (j,i)^T.
  T symmetry_error() const {
    T err = T(0);
    for (int r = 0; r < rows_; ++r)
      for (int s = 0; s < nslots_; ++s) {
        const int c = col(r, s);
        if (c < 0) continue;
        LatticeCoord<d> neg;
        for (int a = 0; a < d; ++a) neg[a] = -offsets_[s][a];
        const int sT = slot_of(neg);
        err = std::max(err, (block(r, s) - block(c, sT).transpose()).cwiseAbs().maxCoeff());
      }
    return err;
  }

 private:
  int rows_ = 0, radius_ = 0, nslots_ = 0;
  std::vector<LatticeCoord<d>> offsets_;
  std::vector<int> cols_;
  std::vector<Block, Eigen::aligned_allocator<Block>> data_;
};

/// Replaces Dirichlet rows and columns with identity.
template <typename T, int d>
void apply_dirichlet_projection(BlockSparseMatrix<T, d>& H, std::span<const std::uint8_t> dirichlet) {
  const int ds = H.diagonal_slot();
  parallel_for(H.rows(), [&](std::int64_t r) {
    for (int s = 0; s < H.slots(); ++s) {
      const int c = H.col(static_cast<int>(r), s);
      if (c < 0) continue;
      if (dirichlet[r] || dirichlet[c]) H.block(static_cast<int>(r), s).setZero();
    }
    if (dirichlet[r]) H.block(static_cast<int>(r), ds) = Mat<T, d>::Identity();
  });
}

/// Frozen start-of-step data for the incremental potential E(dv).
/// Particle-grid weights and gradients are cached at x^n; nodal positions are
/// only virtually displaced during the solve.
template <typename T, int d>
struct ObjectiveState {
  static constexpr int stencil_size = ipow(3, d);

  struct ParticleRef {
    T volume{};
    Mat<T, d> F;  // F^n
    int material = 0;
    std::array<int, stencil_size> node;       // -1 on empty slots
    std::array<T, stencil_size> w;
    std::array<Vec<T, d>, stencil_size> grad;
  };

  const SparseGrid<T, d>* grid = nullptr;
  std::vector<ParticleRef> particles;
  std::vector<Material<T>> materials;
  std::vector<T> particle_mass;
  std::vector<T> xi;  // per material, Pa
  T dt{}, dx{};
  Vec<T, d> gravity = Vec<T, d>::Zero();
  T cn_length_factor = T(24);

  int node_count() const { return grid->node_count(); }
  int dof_count() const { return node_count() * d; }
};

template <typename T, int d>
ObjectiveState<T, d> make_objective_state(std::span<const Particle<T, d>> particles,
                                          const SparseGrid<T, d>& grid,
                                          std::span<const Material<T>> materials, T dt,
                                          const Vec<T, d>& gravity, T cn_length_factor = T(24)) {
  ObjectiveState<T, d> st;
  st.grid = &grid;
  st.dt = dt;
  st.dx = grid.dx;
  st.gravity = gravity;
  st.cn_length_factor = cn_length_factor;
  st.materials.assign(materials.begin(), materials.end());
  st.xi.resize(st.materials.size());
  for (std::size_t m = 0; m < st.materials.size(); ++m)
    st.xi[m] = stiffness_scale<T, d>(st.materials[m]);

  st.particles.resize(particles.size());
  st.particle_mass.resize(particles.size());
  parallel_for(static_cast<std::int64_t>(particles.size()), [&](std::int64_t pi) {
    const auto& p = particles[pi];
    auto& ref = st.particles[pi];
    st.particle_mass[pi] = p.mass;
    ref.volume = p.volume;
    ref.F = p.F;
    ref.material = p.material;
    ref.node.fill(-1);
    ref.w.fill(T(0));
    int k = 0;
    detail::for_each_stencil_node<T, d>(p.x, grid.dx, grid.kind,
        [&](const LatticeCoord<d>& node, T w, const Vec<T, d>& grad) {
          ref.node[k] = grid.find(node);
          ref.w[k] = w;
          ref.grad[k] = grad;
          ++k;
        });
  });
  return st;
}

namespace detail {

/// Virtual deformation gradient at nodal velocity increment dv:
/// F(dv) = (I + dt * sum_i (v_i^n + dv_i) grad_i^T) F^n.
template <typename T, int d>
Mat<T, d> virtual_f(const ObjectiveState<T, d>& st,
                    const typename ObjectiveState<T, d>::ParticleRef& ref, const VecX<T>& dv) {
  Mat<T, d> G = Mat<T, d>::Zero();
  for (int k = 0; k < ObjectiveState<T, d>::stencil_size; ++k) {
    const int i = ref.node[k];
    if (i < 0) continue;
    const Vec<T, d> u =
        st.grid->velocity.template segment<d>(d * i) + dv.template segment<d>(d * i);
    G += u * ref.grad[k].transpose();
  }
  return (Mat<T, d>::Identity() + st.dt * G) * ref.F;
}

}  // namespace detail

/// Incremental potential E(dv) = sum 1/2 m |dv|^2 + Phi(x^n + dt(v^n + dv)),
/// with gravity folded in as -dt * m_i g . (v_i^n + dv_i).
template <typename T, int d>
T energy(const ObjectiveState<T, d>& st, const VecX<T>& dv) {
  if (!dv.allFinite()) throw std::invalid_argument("energy: non-finite dv");
  const std::int64_t np = static_cast<std::int64_t>(st.particles.size());
  std::vector<T> phi(np);
  parallel_for(np, [&](std::int64_t pi) {
    const auto& ref = st.particles[pi];
    phi[pi] = ref.volume *
              fcr_energy_density(detail::virtual_f(st, ref, dv), st.materials[ref.material]);
  });
  T e = T(0);
  for (std::int64_t pi = 0; pi < np; ++pi) e += phi[pi];

  const int n = st.node_count();
  for (int i = 0; i < n; ++i) {
    const Vec<T, d> dvi = dv.template segment<d>(d * i);
    const Vec<T, d> u = st.grid->velocity.template segment<d>(d * i) + dvi;
    e += T(0.5) * st.grid->mass[i] * dvi.squaredNorm();
    e -= st.dt * st.grid->mass[i] * st.gravity.dot(u);
  }
  return e;
}

/// Gradient of E; zeroed on Dirichlet nodes.
template <typename T, int d>
VecX<T> gradient(const ObjectiveState<T, d>& st, const VecX<T>& dv) {
  if (!dv.allFinite()) throw std::invalid_argument("gradient: non-finite dv");
  constexpr int S = ObjectiveState<T, d>::stencil_size;
  const std::int64_t np = static_cast<std::int64_t>(st.particles.size());
  std::vector<std::array<Vec<T, d>, S>> contrib(np);
  parallel_for(np, [&](std::int64_t pi) {
    const auto& ref = st.particles[pi];
    const Mat<T, d> P = fcr_stress(detail::virtual_f(st, ref, dv), st.materials[ref.material]);
    const Mat<T, d> PFt = P * ref.F.transpose();
    for (int k = 0; k < S; ++k)
      contrib[pi][k] = ref.node[k] < 0 ? Vec<T, d>::Zero() : Vec<T, d>(ref.volume * (PFt * ref.grad[k]));
  });

  const int n = st.node_count();
  VecX<T> g = VecX<T>::Zero(n * d);
  for (std::int64_t pi = 0; pi < np; ++pi) {
    const auto& ref = st.particles[pi];
    for (int k = 0; k < S; ++k)
      if (ref.node[k] >= 0) g.template segment<d>(d * ref.node[k]) += st.dt * contrib[pi][k];
  }
  for (int i = 0; i < n; ++i) {
    g.template segment<d>(d * i) +=
        st.grid->mass[i] * (dv.template segment<d>(d * i) - st.dt * st.gravity);
    if (st.grid->dirichlet[i]) g.template segment<d>(d * i).setZero();
  }
  return g;
}

namespace detail {

/// Per-particle Hessian tensor dP/dF at dv, optionally eigenvalue-projected.
template <typename T, int d>
StressDerivative<T, d> particle_tensor(const ObjectiveState<T, d>& st,
                                       const typename ObjectiveState<T, d>::ParticleRef& ref,
                                       const VecX<T>& dv, bool project) {
  StressDerivative<T, d> Tn =
      fcr_stress_derivative(virtual_f(st, ref, dv), st.materials[ref.material]);
  if (project) Tn = project_spd(Tn);
  return Tn;
}

/// C(c,e) = wa^T T[(c.),(e.)] wb, the d x d node-pair coupling block.
template <typename T, int d>
Mat<T, d> contract_pair(const StressDerivative<T, d>& Tn, const Vec<T, d>& wa, const Vec<T, d>& wb) {
  Mat<T, d> C;
  for (int c = 0; c < d; ++c)
    for (int e = 0; e < d; ++e)
      C(c, e) = wa.dot(Tn.template block<d, d>(c * d, e * d) * wb);
  return C;
}

}  // namespace detail

/// Assembles H = M + dt^2 d^2Phi/dx^2 with per-particle SPD projection and
/// Dirichlet identity rows/columns. Pairs are written symmetrically, so block
/// (i,j) equals block (j,i)^T exactly.
template <typename T, int d>
BlockSparseMatrix<T, d> assemble_hessian(const ObjectiveState<T, d>& st, const VecX<T>& dv,
                                         bool project = true) {
  if (!dv.allFinite()) throw std::invalid_argument("assemble_hessian: non-finite dv");
  constexpr int S = ObjectiveState<T, d>::stencil_size;
  const std::int64_t np = static_cast<std::int64_t>(st.particles.size());

  std::vector<StressDerivative<T, d>, Eigen::aligned_allocator<StressDerivative<T, d>>> tensors(np);
  parallel_for(np, [&](std::int64_t pi) {
    tensors[pi] = detail::particle_tensor(st, st.particles[pi], dv, project);
  });

  BlockSparseMatrix<T, d> H(st.grid->coords, st.grid->index, 2);
  const T kscale = st.dt * st.dt;
  for (std::int64_t pi = 0; pi < np; ++pi) {
    const auto& ref = st.particles[pi];
    std::array<Vec<T, d>, S> wv;  // F^nT grad, per slot
    for (int k = 0; k < S; ++k)
      if (ref.node[k] >= 0) wv[k] = ref.F.transpose() * ref.grad[k];
    const T kappa = kscale * ref.volume;
    for (int a = 0; a < S; ++a) {
      const int ia = ref.node[a];
      if (ia < 0) continue;
      for (int b = a; b < S; ++b) {
        const int ib = ref.node[b];
        if (ib < 0) continue;
        Mat<T, d> C = kappa * detail::contract_pair(tensors[pi], wv[a], wv[b]);
        const LatticeCoord<d> off = st.grid->coords[ib] - st.grid->coords[ia];
        const int s_ab = H.slot_of(off);
        if (a == b) {
          C = T(0.5) * (C + C.transpose()).eval();
          H.block(ia, s_ab) += C;
        } else {
          H.block(ia, s_ab) += C;
          LatticeCoord<d> neg;
          for (int ax = 0; ax < d; ++ax) neg[ax] = -off[ax];
          H.block(ib, H.slot_of(neg)) += C.transpose();
        }
      }
    }
  }
  const int ds = H.diagonal_slot();
  for (int i = 0; i < st.node_count(); ++i)
    H.block(i, ds) += st.grid->mass[i] * Mat<T, d>::Identity();
  apply_dirichlet_projection(H, st.grid->dirichlet);
  return H;
}

/// Block diagonal of the projected system matrix (for Jacobi preconditioning
/// of the matrix-free path).
template <typename T, int d>
std::vector<Mat<T, d>, Eigen::aligned_allocator<Mat<T, d>>> assemble_block_diagonal(
    const ObjectiveState<T, d>& st, const VecX<T>& dv, bool project = true) {
  constexpr int S = ObjectiveState<T, d>::stencil_size;
  const std::int64_t np = static_cast<std::int64_t>(st.particles.size());
  std::vector<std::array<Mat<T, d>, S>> contrib(np);
  parallel_for(np, [&](std::int64_t pi) {
    const auto& ref = st.particles[pi];
    const StressDerivative<T, d> Tn = detail::particle_tensor(st, ref, dv, project);
    const T kappa = st.dt * st.dt * ref.volume;
    for (int k = 0; k < S; ++k) {
      if (ref.node[k] < 0) continue;
      const Vec<T, d> wv = ref.F.transpose() * ref.grad[k];
      Mat<T, d> C = kappa * detail::contract_pair(Tn, wv, wv);
      contrib[pi][k] = T(0.5) * (C + C.transpose()).eval();
    }
  });
  std::vector<Mat<T, d>, Eigen::aligned_allocator<Mat<T, d>>> diag(
      st.node_count(), Mat<T, d>::Zero());
  for (std::int64_t pi = 0; pi < np; ++pi) {
    const auto& ref = st.particles[pi];
    for (int k = 0; k < S; ++k)
      if (ref.node[k] >= 0) diag[ref.node[k]] += contrib[pi][k];
  }
  for (int i = 0; i < st.node_count(); ++i) {
    diag[i] += st.grid->mass[i] * Mat<T, d>::Identity();
    if (st.grid->dirichlet[i]) diag[i] = Mat<T, d>::Identity();
  }
  return diag;
}

/// H * u without storing H; recomputes per-particle tensors on the fly.
/// Matches assemble_hessian(st, dv) * u to rounding error.
template <typename T, int d>
VecX<T> multiply_matrix_free(const ObjectiveState<T, d>& st, const VecX<T>& dv, const VecX<T>& u,
                             bool project = true) {
  constexpr int S = ObjectiveState<T, d>::stencil_size;
  const int n = st.node_count();
  VecX<T> um = u;
  for (int i = 0; i < n; ++i)
    if (st.grid->dirichlet[i]) um.template segment<d>(d * i).setZero();

  const std::int64_t np = static_cast<std::int64_t>(st.particles.size());
  std::vector<std::array<Vec<T, d>, S>> contrib(np);
  parallel_for(np, [&](std::int64_t pi) {
    const auto& ref = st.particles[pi];
    const StressDerivative<T, d> Tn = detail::particle_tensor(st, ref, dv, project);
    std::array<Vec<T, d>, S> wv;
    Mat<T, d> dF = Mat<T, d>::Zero();
    for (int k = 0; k < S; ++k) {
      if (ref.node[k] < 0) continue;
      wv[k] = ref.F.transpose() * ref.grad[k];
      dF += um.template segment<d>(d * ref.node[k]) * wv[k].transpose();
    }
    const Mat<T, d> dP = unflatten_rm<T, d>(Tn * flatten_rm<T, d>(dF));
    const T kappa = st.dt * st.dt * ref.volume;
    for (int k = 0; k < S; ++k)
      contrib[pi][k] = ref.node[k] < 0 ? Vec<T, d>::Zero() : Vec<T, d>(kappa * (dP * wv[k]));
  });

  VecX<T> y = VecX<T>::Zero(n * d);
  for (std::int64_t pi = 0; pi < np; ++pi) {
    const auto& ref = st.particles[pi];
    for (int k = 0; k < S; ++k)
      if (ref.node[k] >= 0) y.template segment<d>(d * ref.node[k]) += contrib[pi][k];
  }
  for (int i = 0; i < n; ++i) {
    if (st.grid->dirichlet[i])
      y.template segment<d>(d * i) = u.template segment<d>(d * i);
    else
      y.template segment<d>(d * i) += st.grid->mass[i] * um.template segment<d>(d * i);
  }
  return y;
}

/// Per-node characteristic-norm scale l_i xi_i dt, with xi_i the mass-weighted
/// normalized transfer of the per-particle stiffness scale.
template <typename T>
struct NodeCN {
  VecX<T> xi;     // Pa
  VecX<T> scale;  // l * xi * dt
};

template <typename T, int d>
NodeCN<T> compute_node_cn(const ObjectiveState<T, d>& st) {
  const int n = st.node_count();
  VecX<T> num = VecX<T>::Zero(n), den = VecX<T>::Zero(n);
  constexpr int S = ObjectiveState<T, d>::stencil_size;
  for (std::size_t pi = 0; pi < st.particles.size(); ++pi) {
    const auto& ref = st.particles[pi];
    const T mx = st.particle_mass[pi] * st.xi[ref.material];
    for (int k = 0; k < S; ++k) {
      if (ref.node[k] < 0) continue;
      num[ref.node[k]] += ref.w[k] * mx;
      den[ref.node[k]] += ref.w[k] * st.particle_mass[pi];
    }
  }
  NodeCN<T> cn;
  cn.xi = VecX<T>::Zero(n);
  cn.scale = VecX<T>::Zero(n);
  const T ell = st.cn_length_factor * st.dx * st.dx;
  for (int i = 0; i < n; ++i) {
    if (den[i] > T(0)) cn.xi[i] = num[i] / den[i];
    cn.scale[i] = ell * cn.xi[i] * st.dt;
  }
  return cn;
}

/// L2 norm of the per-node CN-scaled gradient (unitless).
template <typename T, int d>
T scaled_norm(const VecX<T>& g, const NodeCN<T>& cn) {
  const int n = static_cast<int>(cn.scale.size());
  T acc = T(0);
  for (int i = 0; i < n; ++i) {
    if (!(cn.scale[i] > T(0)))
      throw std::logic_error("scaled_norm: zero characteristic scale (material misconfiguration)");
    acc += g.template segment<d>(d * i).squaredNorm() / (cn.scale[i] * cn.scale[i]);
  }
  return std::sqrt(acc);
}

}  // namespace hotmpm
