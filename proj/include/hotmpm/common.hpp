#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hotmpm {

template <typename T, int d>
using Vec = Eigen::Matrix<T, d, 1>;
template <typename T, int d>
using Mat = Eigen::Matrix<T, d, d>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

constexpr int ipow(int base, int exp) {
  int r = 1;
  while (exp-- > 0) r *= base;
  return r;
}

/// Per-axis integer lattice index. Ordering is lexicographic so that node
/// enumeration is deterministic.
template <int d>
struct LatticeCoord {
  static_assert(d == 2 || d == 3, "only 2D and 3D lattices are supported");
  std::array<int, d> v{};

  int operator[](int a) const { return v[a]; }
  int& operator[](int a) { return v[a]; }

  friend bool operator==(const LatticeCoord& a, const LatticeCoord& b) { return a.v == b.v; }
  friend bool operator!=(const LatticeCoord& a, const LatticeCoord& b) { return a.v != b.v; }
  friend bool operator<(const LatticeCoord& a, const LatticeCoord& b) { return a.v < b.v; }

  friend LatticeCoord operator+(const LatticeCoord& a, const LatticeCoord& b) {
    LatticeCoord r;
    for (int i = 0; i < d; ++i) r.v[i] = a.v[i] + b.v[i];
    return r;
  }
  friend LatticeCoord operator-(const LatticeCoord& a, const LatticeCoord& b) {
    LatticeCoord r;
    for (int i = 0; i < d; ++i) r.v[i] = a.v[i] - b.v[i];
    return r;
  }

  template <typename T>
  Vec<T, d> cast() const {
    Vec<T, d> r;
    for (int i = 0; i < d; ++i) r[i] = static_cast<T>(v[i]);
    return r;
  }
};

template <int d>
struct LatticeHash {
  std::size_t operator()(const LatticeCoord<d>& c) const {
    std::uint64_t h = 0x9e3779b97f4a7c15ull;
    for (int i = 0; i < d; ++i) {
      std::uint64_t x = static_cast<std::uint64_t>(static_cast<std::int64_t>(c.v[i]));
      x *= 0xbf58476d1ce4e5b9ull;
      x ^= x >> 31;
      h = (h ^ x) * 0x94d049bb133111ebull;
    }
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

inline int& detail_thread_count() {
  static int n = 1;
  return n;
}

inline int thread_count() { return detail_thread_count(); }

inline void set_thread_count(int n) { detail_thread_count() = n < 1 ? 1 : n; }

/// Runs body(i) for i in [0, n). Every index is processed by exactly one
/// thread, so per-index writes are deterministic for any thread count.
template <typename F>
void parallel_for(std::int64_t n, F&& body) {
  const int nt = thread_count();
  if (nt <= 1 || n < 1024) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (int t = 0; t < nt; ++t) {
    const std::int64_t lo = n * t / nt;
    const std::int64_t hi = n * (t + 1) / nt;
    pool.emplace_back([lo, hi, &body] {
      for (std::int64_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

/// Row-major flattening of a d x d matrix: entry (i,j) lands at index i*d+j.
/// This is the layout convention for d^2 x d^2 stress-derivative tensors.
template <typename T, int d>
Vec<T, d * d> flatten_rm(const Mat<T, d>& A) {
  Vec<T, d * d> r;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) r[i * d + j] = A(i, j);
  return r;
}

template <typename T, int d>
Mat<T, d> unflatten_rm(const Vec<T, d * d>& x) {
  Mat<T, d> A;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) A(i, j) = x[i * d + j];
  return A;
}

struct SolverFailure : std::runtime_error {
  explicit SolverFailure(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& path, const std::string& msg)
      : std::runtime_error(path.empty() ? msg : path + ": " + msg) {}
};

}  // namespace hotmpm
