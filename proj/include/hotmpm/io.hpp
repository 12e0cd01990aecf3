#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hotmpm/solvers.hpp"

namespace hotmpm {

/// In-memory form of a particle snapshot file (little-endian binary layout:
/// magic "HOTP", u32 version, u32 dim, u64 count, then count * dim f64
/// positions followed by count * dim f64 velocities).
struct Snapshot {
  std::uint32_t version = 1;
  std::uint32_t dim = 2;
  std::uint64_t count = 0;
  std::vector<double> positions;   // count * dim
  std::vector<double> velocities;  // count * dim
};

void write_snapshot(const std::string& path, const Snapshot& snap);
Snapshot read_snapshot(const std::string& path);

/// Plain-text companion table: one "x y [z]" row per particle.
void write_positions_text(const std::string& path, int dim, const std::vector<double>& positions);

/// Diagnostics as comma-separated text, one row per outer iteration. With
/// zero_wall_time the wall-clock column is written as 0 so that reruns are
/// byte-identical.
void write_diagnostics_csv(const std::string& path, const std::vector<DiagnosticsRecord>& records,
                           bool zero_wall_time);

}  // namespace hotmpm
