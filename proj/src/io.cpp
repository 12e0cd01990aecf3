#include "hotmpm/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hotmpm {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
  return v;
}

double get_f64(const std::string& in, std::size_t& pos) {
  const std::uint64_t bits = get_u64(in, pos);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void write_snapshot(const std::string& path, const Snapshot& snap) {
  std::string buf;
  buf.reserve(20 + 16 * snap.count * snap.dim);
  buf += "HOTP";
  put_u32(buf, snap.version);
  put_u32(buf, snap.dim);
  put_u64(buf, snap.count);
  for (double v : snap.positions) put_f64(buf, v);
  for (double v : snap.velocities) put_f64(buf, v);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_snapshot: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write_snapshot: write failed for " + path);
}

Snapshot read_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_snapshot: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < 20 || buf.compare(0, 4, "HOTP") != 0)
    throw std::runtime_error("read_snapshot: bad header in " + path);
  std::size_t pos = 4;
  Snapshot snap;
  snap.version = get_u32(buf, pos);
  snap.dim = get_u32(buf, pos);
  snap.count = get_u64(buf, pos);
  const std::size_t n = snap.count * snap.dim;
  if (buf.size() < 20 + 16 * n) throw std::runtime_error("read_snapshot: truncated file " + path);
  snap.positions.resize(n);
  snap.velocities.resize(n);
  for (std::size_t i = 0; i < n; ++i) snap.positions[i] = get_f64(buf, pos);
  for (std::size_t i = 0; i < n; ++i) snap.velocities[i] = get_f64(buf, pos);
  return snap;
}

void write_positions_text(const std::string& path, int dim, const std::vector<double>& positions) {
  std::ostringstream out;
  out.precision(17);
  const std::size_t count = positions.size() / dim;
  for (std::size_t i = 0; i < count; ++i) {
    for (int a = 0; a < dim; ++a) {
      if (a) out << ' ';
      out << positions[i * dim + a];
    }
    out << '\n';
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_positions_text: cannot open " + path);
  f << out.str();
  if (!f) throw std::runtime_error("write_positions_text: write failed for " + path);
}

void write_diagnostics_csv(const std::string& path, const std::vector<DiagnosticsRecord>& records,
                           bool zero_wall_time) {
  std::ostringstream out;
  out.precision(17);
  out << "frame,step,outer_iteration,scaled_residual,energy,step_length,inner_iterations,"
         "work_units,wall_ms\n";
  for (const auto& r : records) {
    out << r.frame << ',' << r.step << ',' << r.outer_iteration << ',' << r.scaled_residual << ','
        << r.energy << ',' << r.step_length << ',' << r.inner_iterations << ',' << r.work_units
        << ',' << (zero_wall_time ? 0.0 : r.wall_ms) << '\n';
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_diagnostics_csv: cannot open " + path);
  f << out.str();
  if (!f) throw std::runtime_error("write_diagnostics_csv: write failed for " + path);
}

}  // namespace hotmpm
