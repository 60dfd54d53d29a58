#pragma once

// Versioned grid container.
//
//   version 1:  "SDFG" | u32 version=1 | u32 N | N^3 f32
//   version 2:  "SDFG" | u32 version=2 | u32 N | u32 C | C blocks of N^3 f32
//
// All integers and floats are little-endian; lattice layout inside a block is
// x + N*(y + N*z). Version 2 stores channels as consecutive planes.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/geometry/grid.hpp"

namespace bidiff {

namespace detail {

inline void put_u32(std::vector<char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::vector<char>& buf, float f) { put_u32(buf, std::bit_cast<std::uint32_t>(f)); }

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::string& path, const std::vector<char>& buf) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(Errc::io, "write failed for " + path);
}

}  // namespace detail

/// Writes a single-channel grid as version 1, anything else as version 2.
inline void write_grid(const std::string& path, const Grid3<float>& grid) {
  const std::size_t count = grid.point_count();
  const int c = grid.channels();
  std::vector<char> buf;
  buf.reserve(16 + count * c * 4);
  buf.insert(buf.end(), {'S', 'D', 'F', 'G'});
  detail::put_u32(buf, c == 1 ? 1u : 2u);
  detail::put_u32(buf, static_cast<std::uint32_t>(grid.resolution()));
  if (c != 1) detail::put_u32(buf, static_cast<std::uint32_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < count; ++i) detail::put_f32(buf, grid.values()[i * c + ch]);
  }
  detail::write_all(path, buf);
}

inline Grid3<float> read_grid(const std::string& path) {
  const auto bytes = detail::read_all(path);
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "SDFG", 4) == 0, Errc::parse, path + ": not an SDFG file");
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  const std::uint32_t n = detail::get_u32(bytes.data() + 8);
  std::uint32_t c = 1;
  std::size_t offset = 12;
  if (version == 2) {
    require(bytes.size() >= 16, Errc::parse, path + ": truncated header");
    c = detail::get_u32(bytes.data() + 12);
    offset = 16;
  } else {
    require(version == 1, Errc::parse, path + ": unsupported version " + std::to_string(version));
  }
  require(n >= 2 && n <= 2048 && c >= 1 && c <= 64, Errc::parse, path + ": implausible header");
  const std::size_t count = static_cast<std::size_t>(n) * n * n;
  require(bytes.size() == offset + count * c * 4, Errc::parse, path + ": size does not match header");
  Grid3<float> grid(static_cast<int>(n), static_cast<int>(c));
  for (std::uint32_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint32_t raw = detail::get_u32(bytes.data() + offset + (ch * count + i) * 4);
      grid.values()[i * c + ch] = std::bit_cast<float>(raw);
    }
  }
  return grid;
}

/// Splits channels [first, first + count) into a new grid.
inline Grid3<float> take_channels(const Grid3<float>& g, int first, int count) {
  require(first >= 0 && first + count <= g.channels(), Errc::shape_mismatch, "channel range out of bounds");
  Grid3<float> out(g.resolution(), count);
  for (std::size_t i = 0; i < g.point_count(); ++i) {
    for (int c = 0; c < count; ++c) out.values()[i * count + c] = g.values()[i * g.channels() + first + c];
  }
  return out;
}

/// Concatenates channels of equally sized grids.
inline Grid3<float> stack_channels(const std::vector<const Grid3<float>*>& parts) {
  require(!parts.empty(), Errc::invalid_argument, "nothing to stack");
  const int n = parts.front()->resolution();
  int total = 0;
  for (const auto* p : parts) {
    require(p->resolution() == n, Errc::shape_mismatch, "stacked grids differ in resolution");
    total += p->channels();
  }
  Grid3<float> out(n, total);
  for (std::size_t i = 0; i < out.point_count(); ++i) {
    int c0 = 0;
    for (const auto* p : parts) {
      for (int c = 0; c < p->channels(); ++c) out.values()[i * total + c0 + c] = p->values()[i * p->channels() + c];
      c0 += p->channels();
    }
  }
  return out;
}

}  // namespace bidiff
