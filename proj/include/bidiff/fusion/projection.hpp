#pragma once

// Image-to-grid fusion: bilinear lookups, per-point mean/variance over views,
// positional encoding, and silhouette back-projection into a visual hull.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/core/parallel.hpp"
#include "bidiff/geometry/grid.hpp"
#include "bidiff/render/camera.hpp"
#include "bidiff/render/image.hpp"

namespace bidiff {

/// Bilinear lookup at continuous pixel coordinates (pixel centers at integers).
/// Returns false and zeros `out` when (u, v) lies outside [0, W-1] x [0, H-1].
inline bool sample_image_bilinear(const ImageBuffer& img, double u, double v, double* out) {
  const int c = img.channels();
  if (!(u >= 0.0 && v >= 0.0 && u <= img.width() - 1 && v <= img.height() - 1)) {
    for (int k = 0; k < c; ++k) out[k] = 0.0;
    return false;
  }
  const int x0 = std::min(static_cast<int>(u), img.width() - 2 < 0 ? 0 : img.width() - 2);
  const int y0 = std::min(static_cast<int>(v), img.height() - 2 < 0 ? 0 : img.height() - 2);
  const double fx = u - x0, fy = v - y0;
  const int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  for (int k = 0; k < c; ++k) {
    const double a = img.at(x0, y0, k) * (1.0 - fx) + img.at(x1, y0, k) * fx;
    const double b = img.at(x0, y1, k) * (1.0 - fx) + img.at(x1, y1, k) * fx;
    out[k] = a * (1.0 - fy) + b * fy;
  }
  return true;
}

/// N^3 lattice of per-point features.
using FeatureVolume = Grid3<float>;

/// For each lattice point, [mean over visible views, population variance,
/// coverage] where coverage is 1 if any view sees the point. Points no view
/// sees get zero features and coverage 0. Layout: C mean channels, C variance
/// channels, then the coverage channel. Occlusion is not tested.
inline FeatureVolume aggregate_mean_var(int n, const MultiViewSet& views) {
  require(!views.empty(), Errc::invalid_argument, "aggregate_mean_var: empty view set");
  views.validate();
  const int c = views.images.front().channels();
  for (const auto& img : views.images) {
    require(img.channels() == c, Errc::shape_mismatch, "aggregate_mean_var: views differ in channel count");
  }
  std::vector<CameraFrame> frames;
  for (const auto& p : views.poses) frames.emplace_back(p);
  FeatureVolume vol(n, 2 * c + 1);
  const Grid3<float> lattice(n, 1);
  parallel_for(0, vol.point_count(), [&](std::size_t i) {
    const Vec3 p = lattice.position(i);
    std::vector<double> sum(c, 0.0), sq(c, 0.0), f(c);
    int count = 0;
    for (std::size_t v = 0; v < views.size(); ++v) {
      const Projection pr = project_point(frames[v], p);
      if (!pr.visible) continue;
      if (!sample_image_bilinear(views.images[v], std::clamp(pr.u, 0.0, views.images[v].width() - 1.0),
                                 std::clamp(pr.v, 0.0, views.images[v].height() - 1.0), f.data())) {
        continue;
      }
      ++count;
      for (int k = 0; k < c; ++k) sum[k] += f[k];
    }
    float* out = &vol.values()[i * vol.channels()];
    if (count == 0) return;
    std::vector<double> mean(c);
    for (int k = 0; k < c; ++k) mean[k] = sum[k] / count;
    // Second pass for a numerically stable population variance.
    for (std::size_t v = 0; v < views.size(); ++v) {
      const Projection pr = project_point(frames[v], p);
      if (!pr.visible) continue;
      sample_image_bilinear(views.images[v], std::clamp(pr.u, 0.0, views.images[v].width() - 1.0),
                            std::clamp(pr.v, 0.0, views.images[v].height() - 1.0), f.data());
      for (int k = 0; k < c; ++k) sq[k] += (f[k] - mean[k]) * (f[k] - mean[k]);
    }
    for (int k = 0; k < c; ++k) {
      out[k] = static_cast<float>(mean[k]);
      out[c + k] = static_cast<float>(sq[k] / count);
    }
    out[2 * c] = 1.0f;
  });
  return vol;
}

struct PosEncConfig {
  int octaves = 6;
  double base_frequency = 1.0;

  void validate() const {
    require(octaves >= 1 && base_frequency > 0.0, Errc::invalid_argument, "positional encoding needs L >= 1, omega > 0");
  }
};

/// [sin(2^k w p_a), cos(2^k w p_a)] for every axis a and octave k, ordered
/// axis-major then octave. Length 6 L.
inline std::vector<double> positional_encoding(const Vec3& p, const PosEncConfig& cfg = {}) {
  cfg.validate();
  std::vector<double> out;
  out.reserve(6 * cfg.octaves);
  for (int a = 0; a < 3; ++a) {
    for (int k = 0; k < cfg.octaves; ++k) {
      const double arg = std::ldexp(cfg.base_frequency, k) * p[a];
      out.push_back(std::sin(arg));
      out.push_back(std::cos(arg));
    }
  }
  return out;
}

struct SilhouetteConfig {
  Vec3 background = Vec3::Ones();
  /// Color deviation from the background that counts as fully covered.
  double threshold = 0.4;
  /// Inward offset applied to silhouette-derived surfaces, in world units.
  double erosion = 0.0;
};

/// Soft foreground mask from an RGB view: clamp(max_c |I_c - bg_c| / tau, 0, 1).
inline ImageBuffer silhouette(const ImageBuffer& rgb, const SilhouetteConfig& cfg = {}) {
  require(rgb.channels() == 3, Errc::shape_mismatch, "silhouette needs an RGB image");
  ImageBuffer out(rgb.width(), rgb.height(), 1);
  for (int y = 0; y < rgb.height(); ++y) {
    for (int x = 0; x < rgb.width(); ++x) {
      double d = 0.0;
      for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(rgb.at(x, y, c) - cfg.background[c]));
      out.at(x, y) = static_cast<float>(std::clamp(d / cfg.threshold, 0.0, 1.0));
    }
  }
  return out;
}

struct BackProjection {
  ColorGrid colors;     // 3 channels
  Grid3<float> evidence;  // 1 channel in [0, 1]
};

/// Carves a visual hull from the views' silhouettes. Evidence at a lattice
/// point is the smallest silhouette coverage over all views, so a point is
/// kept only if every view sees foreground there; a point outside a view's
/// frame gets coverage 0. Colors are coverage-weighted means of the sampled
/// view colors, gray where no view contributes.
inline BackProjection back_project_views(const MultiViewSet& views, int n, const SilhouetteConfig& cfg = {}) {
  require(!views.empty(), Errc::invalid_argument, "back_project_views: empty view set");
  views.validate();
  std::vector<CameraFrame> frames;
  std::vector<ImageBuffer> masks;
  for (std::size_t v = 0; v < views.size(); ++v) {
    frames.emplace_back(views.poses[v]);
    masks.push_back(silhouette(views.images[v], cfg));
  }
  BackProjection out{ColorGrid(n, 3), Grid3<float>(n, 1)};
  parallel_for(0, out.evidence.point_count(), [&](std::size_t i) {
    const Vec3 p = out.evidence.position(i);
    double evidence = 1.0, wsum = 0.0;
    Vec3 csum = Vec3::Zero();
    for (std::size_t v = 0; v < views.size(); ++v) {
      const Projection pr = project_point(frames[v], p);
      double a = 0.0;
      if (pr.visible) {
        const double u = std::clamp(pr.u, 0.0, masks[v].width() - 1.0);
        const double w = std::clamp(pr.v, 0.0, masks[v].height() - 1.0);
        sample_image_bilinear(masks[v], u, w, &a);
        if (a > 0.0) {
          double rgb[3];
          sample_image_bilinear(views.images[v], u, w, rgb);
          csum += a * Vec3(rgb[0], rgb[1], rgb[2]);
          wsum += a;
        }
      }
      evidence = std::min(evidence, a);
    }
    out.evidence.values()[i] = static_cast<float>(evidence);
    const Vec3 col = wsum > 0.0 ? Vec3(csum / wsum) : Vec3::Constant(0.5);
    for (int c = 0; c < 3; ++c) out.colors.values()[i * 3 + c] = static_cast<float>(col[c]);
  });
  return out;
}

/// Per-point surface color from views whose per-pixel transmittance is
/// known: each sample is un-composited, c = (I - T bg) / (1 - T), and weighted
/// by its opacity 1 - T. Pixels with opacity below `min_opacity` are skipped;
/// points no view contributes to are gray. Occlusion is not tested.
inline ColorGrid back_project_radiance(const MultiViewSet& views, const std::vector<ImageBuffer>& transmittance, int n,
                                       const Vec3& background = Vec3::Ones(), double min_opacity = 0.05) {
  require(!views.empty(), Errc::invalid_argument, "back_project_radiance: empty view set");
  views.validate();
  require(transmittance.size() == views.size(), Errc::shape_mismatch, "one transmittance map per view required");
  std::vector<CameraFrame> frames;
  for (std::size_t v = 0; v < views.size(); ++v) {
    require(transmittance[v].width() == views.images[v].width() && transmittance[v].height() == views.images[v].height(),
            Errc::shape_mismatch, "transmittance map does not match its view");
    frames.emplace_back(views.poses[v]);
  }
  ColorGrid out(n, 3);
  parallel_for(0, out.point_count(), [&](std::size_t i) {
    const Vec3 p = out.position(i);
    double wsum = 0.0;
    Vec3 csum = Vec3::Zero();
    for (std::size_t v = 0; v < views.size(); ++v) {
      const Projection pr = project_point(frames[v], p);
      if (!pr.visible) continue;
      const double u = std::clamp(pr.u, 0.0, views.images[v].width() - 1.0);
      const double w = std::clamp(pr.v, 0.0, views.images[v].height() - 1.0);
      double tr = 1.0, rgb[3];
      sample_image_bilinear(transmittance[v], u, w, &tr);
      const double a = 1.0 - tr;
      if (a < min_opacity) continue;
      sample_image_bilinear(views.images[v], u, w, rgb);
      for (int c = 0; c < 3; ++c) csum[c] += rgb[c] - tr * background[c];
      wsum += a;
    }
    const Vec3 col = wsum > 0.0 ? Vec3((csum / wsum).cwiseMax(0.0).cwiseMin(1.0)) : Vec3::Constant(0.5);
    for (int c = 0; c < 3; ++c) out.values()[i * 3 + c] = static_cast<float>(col[c]);
  });
  return out;
}

/// Two-pass chamfer distance transform (weights 1, sqrt 2, sqrt 3 in voxel
/// units) of a binary mask. Returns, per point, the approximate distance to
/// the nearest point where mask is true; +inf if there is none.
inline std::vector<double> chamfer_distance(int n, const std::vector<bool>& mask) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) d[i] = mask[i] ? 0.0 : inf;
  auto idx = [n](int x, int y, int z) { return static_cast<std::size_t>(x) + static_cast<std::size_t>(n) * (y + static_cast<std::size_t>(n) * z); };
  const double w[4] = {0.0, 1.0, std::sqrt(2.0), std::sqrt(3.0)};
  auto relax = [&](int x, int y, int z, int sign) {
    double& cur = d[idx(x, y, z)];
    for (int dz = -1; dz <= 1; ++dz) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          // Causal half of the neighborhood for this pass direction.
          const int order = dz * 9 + dy * 3 + dx;
          if (sign > 0 ? order >= 0 : order <= 0) continue;
          const int nx = x + dx, ny = y + dy, nz = z + dz;
          if (nx < 0 || ny < 0 || nz < 0 || nx >= n || ny >= n || nz >= n) continue;
          const double cand = d[idx(nx, ny, nz)] + w[std::abs(dx) + std::abs(dy) + std::abs(dz)];
          if (cand < cur) cur = cand;
        }
      }
    }
  };
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) relax(x, y, z, 1);
  for (int z = n - 1; z >= 0; --z)
    for (int y = n - 1; y >= 0; --y)
      for (int x = n - 1; x >= 0; --x) relax(x, y, z, -1);
  return d;
}

/// Signed distance of a binary occupancy grid (true = inside), negative
/// inside. The surface sits half a voxel between inside and outside points.
/// An all-outside mask maps to +fill everywhere, all-inside to -fill.
inline SdfGrid occupancy_to_sdf(int n, const std::vector<bool>& inside, double fill = 2.0 * std::sqrt(3.0)) {
  require(inside.size() == static_cast<std::size_t>(n) * n * n, Errc::shape_mismatch, "occupancy size mismatch");
  std::vector<bool> outside(inside.size());
  for (std::size_t i = 0; i < inside.size(); ++i) outside[i] = !inside[i];
  const auto d_in = chamfer_distance(n, inside);
  const auto d_out = chamfer_distance(n, outside);
  const double h = 2.0 / (n - 1);
  SdfGrid sdf(n, 1);
  for (std::size_t i = 0; i < inside.size(); ++i) {
    double v;
    if (inside[i]) v = std::isinf(d_out[i]) ? -fill : -(d_out[i] - 0.5) * h;
    else v = std::isinf(d_in[i]) ? fill : (d_in[i] - 0.5) * h;
    sdf.values()[i] = static_cast<float>(v);
  }
  return sdf;
}

namespace detail {

// Squared distance to the lower envelope of parabolas rooted at f (1D exact
// Euclidean distance transform, Felzenszwalb & Huttenlocher).
inline void squared_edt_1d(std::vector<double>& f) {
  const int n = static_cast<int>(f.size());
  if (n == 0) return;
  std::vector<int> root(n);
  std::vector<double> bound(n + 1), out(n);
  int k = 0;
  root[0] = 0;
  bound[0] = -std::numeric_limits<double>::infinity();
  bound[1] = std::numeric_limits<double>::infinity();
  auto cross = [&](int q, int r) { return ((f[q] + double(q) * q) - (f[r] + double(r) * r)) / (2.0 * q - 2.0 * r); };
  for (int q = 1; q < n; ++q) {
    if (std::isinf(f[q])) continue;
    if (std::isinf(f[root[k]])) {
      root[k] = q;
      continue;
    }
    double s = cross(q, root[k]);
    while (k > 0 && s <= bound[k]) s = cross(q, root[--k]);
    root[++k] = q;
    bound[k] = s;
    bound[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (bound[k + 1] < q) ++k;
    out[q] = std::isinf(f[root[k]]) ? f[root[k]] : (q - root[k]) * double(q - root[k]) + f[root[k]];
  }
  f.swap(out);
}

}  // namespace detail

/// Exact Euclidean distance (in pixels) from every pixel to the nearest pixel
/// where mask is true; +inf when the mask is empty. Row-major w x h.
inline std::vector<double> distance_transform_2d(int w, int h, const std::vector<bool>& mask) {
  require(mask.size() == static_cast<std::size_t>(w) * h, Errc::shape_mismatch, "distance transform: mask size");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> g(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) g[i] = mask[i] ? 0.0 : inf;
  std::vector<double> line(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) line[y] = g[x + static_cast<std::size_t>(w) * y];
    detail::squared_edt_1d(line);
    for (int y = 0; y < h; ++y) g[x + static_cast<std::size_t>(w) * y] = line[y];
  }
  line.resize(w);
  for (int y = 0; y < h; ++y) {
    std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(w) * y, w, line.begin());
    detail::squared_edt_1d(line);
    for (int x = 0; x < w; ++x) g[x + static_cast<std::size_t>(w) * y] = std::sqrt(line[x]);
  }
  return g;
}

/// Signed pixel distance to the coverage-0.5 contour of a silhouette,
/// negative inside. Boundary pixels sit half a pixel from the contour.
inline ImageBuffer silhouette_distance(const ImageBuffer& mask) {
  const int w = mask.width(), h = mask.height();
  std::vector<bool> in(static_cast<std::size_t>(w) * h), out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    in[i] = mask.values()[i] >= 0.5f;
    out[i] = !in[i];
  }
  const auto d_in = distance_transform_2d(w, h, in);
  const auto d_out = distance_transform_2d(w, h, out);
  const double far = std::hypot(w, h);
  ImageBuffer sd(w, h, 1);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double d = in[i] ? -(std::min(d_out[i], far) - 0.5) : std::min(d_in[i], far) - 0.5;
    sd.values()[i] = static_cast<float>(d);
  }
  return sd;
}

/// Visual-hull SDF built from the silhouettes directly: each view's 2D signed
/// distance is lifted to world units at the point's depth, and the hull is
/// the maximum over views (intersection of the silhouette cones). Points that
/// project outside a frame add their distance to the frame; points behind a
/// camera are outside. The result is
/// offset outward by cfg.erosion, which shrinks the hull.
inline SdfGrid silhouette_sdf(const MultiViewSet& views, int n, const SilhouetteConfig& cfg = {}) {
  require(!views.empty(), Errc::invalid_argument, "silhouette_sdf: empty view set");
  require(n >= 2, Errc::invalid_argument, "silhouette_sdf: resolution must be >= 2");
  views.validate();
  std::vector<CameraFrame> frames;
  std::vector<ImageBuffer> dist;
  for (std::size_t v = 0; v < views.size(); ++v) {
    frames.emplace_back(views.poses[v]);
    dist.push_back(silhouette_distance(silhouette(views.images[v], cfg)));
  }
  SdfGrid out(n, 1);
  parallel_for(0, out.point_count(), [&](std::size_t i) {
    const Vec3 p = out.position(i);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < views.size(); ++v) {
      const Projection pr = project_point(frames[v], p);
      const ImageBuffer& sd = dist[v];
      const double u = std::clamp(pr.u, 0.0, sd.width() - 1.0), w = std::clamp(pr.v, 0.0, sd.height() - 1.0);
      double d = 0.0;
      sample_image_bilinear(sd, u, w, &d);
      d += std::hypot(pr.u - u, pr.v - w);
      // One pixel spans 2 tan(fov/2) depth / height world units at that depth.
      const double pixel = 2.0 * frames[v].tan_y * std::max(pr.depth, 1e-6) / sd.height();
      best = std::max(best, pr.depth > 0.0 ? d * pixel : 1.0e3);
    }
    out.values()[i] = static_cast<float>(best + cfg.erosion);
  });
  return out;
}

/// Visual-hull SDF: evidence >= 0.5 is inside.
inline SdfGrid hull_to_sdf(const Grid3<float>& evidence) {
  std::vector<bool> inside(evidence.point_count());
  for (std::size_t i = 0; i < inside.size(); ++i) inside[i] = evidence.values()[i] >= 0.5f;
  return occupancy_to_sdf(evidence.resolution(), inside);
}

}  // namespace bidiff
