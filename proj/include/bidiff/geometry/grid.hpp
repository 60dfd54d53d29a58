#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "bidiff/core/error.hpp"

namespace bidiff {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Dense N^3 lattice over the fixed [-1,1]^3 box with `channels` values per
/// lattice point (interleaved). Lattice point i sits at -1 + 2i/(N-1), so the
/// corners of the box are lattice points.
///
/// Layout: value(x, y, z, c) = values[(x + N*(y + N*z)) * channels + c].
template <typename T>
class Grid3 {
 public:
  Grid3() = default;
  Grid3(int n, int channels, T fill = T{})
      : n_(n), channels_(channels), values_(static_cast<std::size_t>(n) * n * n * channels, fill) {
    require(n >= 2, Errc::invalid_argument, "grid resolution must be >= 2");
    require(channels >= 1, Errc::invalid_argument, "grid needs at least one channel");
  }
  Grid3(int n, int channels, std::vector<T> values) : n_(n), channels_(channels), values_(std::move(values)) {
    require(n >= 2, Errc::invalid_argument, "grid resolution must be >= 2");
    require(values_.size() == static_cast<std::size_t>(n) * n * n * channels, Errc::shape_mismatch,
            "grid value count does not match N^3 * C");
  }

  int resolution() const { return n_; }
  int channels() const { return channels_; }
  std::size_t point_count() const { return static_cast<std::size_t>(n_) * n_ * n_; }
  double spacing() const { return 2.0 / (n_ - 1); }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(n_) * (y + static_cast<std::size_t>(n_) * z);
  }

  double coord(int i) const { return -1.0 + 2.0 * i / (n_ - 1); }
  Vec3 position(int x, int y, int z) const { return {coord(x), coord(y), coord(z)}; }
  Vec3 position(std::size_t flat) const {
    const int x = static_cast<int>(flat % n_);
    const int y = static_cast<int>((flat / n_) % n_);
    const int z = static_cast<int>(flat / (static_cast<std::size_t>(n_) * n_));
    return position(x, y, z);
  }

  T& at(int x, int y, int z, int c = 0) { return values_[index(x, y, z) * channels_ + c]; }
  const T& at(int x, int y, int z, int c = 0) const { return values_[index(x, y, z) * channels_ + c]; }

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }
  std::span<T> span() { return values_; }
  std::span<const T> span() const { return values_; }

  bool same_shape(const Grid3& other) const { return n_ == other.n_ && channels_ == other.channels_; }

  /// Trilinear interpolation of all channels at p. Points outside the box
  /// are clamped to the boundary.
  template <typename Out>
  void sample(const Vec3& p, Out* out) const {
    double f[3];
    int i0[3];
    for (int a = 0; a < 3; ++a) {
      const double u = std::clamp((p[a] + 1.0) * 0.5 * (n_ - 1), 0.0, static_cast<double>(n_ - 1));
      int i = static_cast<int>(u);
      if (i >= n_ - 1) i = n_ - 2;
      i0[a] = i;
      f[a] = u - i;
    }
    for (int c = 0; c < channels_; ++c) out[c] = Out{};
    for (int corner = 0; corner < 8; ++corner) {
      const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
      const double w = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
      if (w == 0.0) continue;
      const T* v = &values_[index(i0[0] + dx, i0[1] + dy, i0[2] + dz) * channels_];
      for (int c = 0; c < channels_; ++c) out[c] += static_cast<Out>(w * v[c]);
    }
  }

  double sample(const Vec3& p) const {
    require(channels_ == 1, Errc::shape_mismatch, "scalar sample on a multi-channel grid");
    double v = 0.0;
    sample(p, &v);
    return v;
  }

 private:
  int n_ = 0;
  int channels_ = 1;
  std::vector<T> values_;
};

/// Signed distance field F: one float per lattice point, negative inside.
using SdfGrid = Grid3<float>;
/// Per-lattice-point RGB color.
using ColorGrid = Grid3<float>;

inline bool inside_box(const Vec3& p) {
  return p.x() >= -1.0 && p.x() <= 1.0 && p.y() >= -1.0 && p.y() <= 1.0 && p.z() >= -1.0 && p.z() <= 1.0;
}

/// Field lookup used by rendering and distillation; clamps to the boundary.
inline double sample_trilinear(const SdfGrid& grid, const Vec3& p) { return grid.sample(p); }

/// Indicator of value < iso, one bool per lattice point.
inline std::vector<bool> occupancy(const SdfGrid& grid, double iso = 0.0) {
  std::vector<bool> occ(grid.point_count());
  for (std::size_t i = 0; i < occ.size(); ++i) occ[i] = grid.values()[i] < iso;
  return occ;
}

}  // namespace bidiff
