#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/core/parallel.hpp"
#include "bidiff/core/random.hpp"
#include "bidiff/geometry/grid.hpp"
#include "bidiff/geometry/mesh.hpp"
#include "bidiff/render/image.hpp"
#include "bidiff/render/volume.hpp"

namespace bidiff {

/// |A n B| / |A u B| over lattice points with value < iso. Two empty sets
/// count as identical.
inline double metric_iou(const SdfGrid& a, const SdfGrid& b, double iso = 0.0) {
  require(a.same_shape(b), Errc::shape_mismatch, "IoU: grids differ in resolution");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    const bool ia = a.values()[i] < iso, ib = b.values()[i] < iso;
    inter += ia && ib;
    uni += ia || ib;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double metric_iou(const std::vector<bool>& a, const std::vector<bool>& b) {
  require(a.size() == b.size(), Errc::shape_mismatch, "IoU: masks differ in size");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Area-weighted uniform points on a mesh surface.
inline std::vector<Vec3> sample_surface(const TriMesh& mesh, int count, const RandomStream& stream) {
  require(!mesh.empty(), Errc::invalid_argument, "cannot sample an empty mesh");
  std::vector<double> cdf(mesh.triangles.size());
  double acc = 0.0;
  for (std::size_t t = 0; t < cdf.size(); ++t) cdf[t] = (acc += mesh.triangle_area(t));
  std::vector<Vec3> pts(count);
  for (int i = 0; i < count; ++i) {
    const double r = stream.uniform(3 * static_cast<std::uint64_t>(i)) * acc;
    const std::size_t t = std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin(), cdf.size() - 1);
    double u = stream.uniform(3 * static_cast<std::uint64_t>(i) + 1), v = stream.uniform(3 * static_cast<std::uint64_t>(i) + 2);
    if (u + v > 1.0) u = 1.0 - u, v = 1.0 - v;
    const auto& f = mesh.triangles[t];
    const Vec3& a = mesh.vertices[f[0]];
    pts[i] = a + u * (mesh.vertices[f[1]] - a) + v * (mesh.vertices[f[2]] - a);
  }
  return pts;
}

namespace detail {
/// Content hash, so that a mesh draws the same surface samples in either
/// argument position.
inline std::uint64_t mesh_key(const TriMesh& m) {
  std::uint64_t h = hash_combine(m.vertices.size(), m.triangles.size());
  for (const auto& v : m.vertices)
    for (int a = 0; a < 3; ++a) h = hash_combine(h, std::bit_cast<std::uint64_t>(v[a]));
  for (const auto& t : m.triangles)
    for (int a = 0; a < 3; ++a) h = hash_combine(h, static_cast<std::uint64_t>(t[a]));
  return h;
}

inline double mean_nearest(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  std::vector<double> best(from.size());
  parallel_for(0, from.size(), [&](std::size_t i) {
    double b = std::numeric_limits<double>::infinity();
    for (const auto& q : to) b = std::min(b, (from[i] - q).squaredNorm());
    best[i] = std::sqrt(b);
  });
  double s = 0.0;
  for (double b : best) s += b;
  return s / static_cast<double>(from.size());
}
}  // namespace detail

/// Symmetric Chamfer distance: the average of the two mean nearest-neighbor
/// distances between surface samples. Exactly symmetric in (a, b).
inline double metric_chamfer(const TriMesh& a, const TriMesh& b, int n_samples, const RandomStream& stream) {
  require(!a.empty() && !b.empty(), Errc::invalid_argument, "Chamfer distance needs non-empty meshes");
  require(n_samples >= 1, Errc::invalid_argument, "Chamfer distance needs samples");
  const auto pa = sample_surface(a, n_samples, stream.fork(detail::mesh_key(a)));
  const auto pb = sample_surface(b, n_samples, stream.fork(detail::mesh_key(b)));
  return 0.5 * (detail::mean_nearest(pa, pb) + detail::mean_nearest(pb, pa));
}

inline double metric_mse(const ImageBuffer& a, const ImageBuffer& b) {
  require(a.same_shape(b), Errc::shape_mismatch, "images differ in shape");
  require(a.size() > 0, Errc::invalid_argument, "empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.values()[i]) - b.values()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// 10 log10(1 / MSE); +infinity for identical images.
inline double metric_psnr(const ImageBuffer& a, const ImageBuffer& b) {
  const double mse = metric_mse(a, b);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

struct ConsistencyReport {
  double mean_psnr = 0.0;
  /// Mean squared difference between views and renders (lower = more consistent).
  double reprojection_error = 0.0;
  std::vector<double> per_view_psnr;
};

/// Compares each view with a render of the field from the same pose.
template <RadianceField Field>
ConsistencyReport multiview_consistency(const MultiViewSet& views, const Field& field, const RenderConfig& cfg) {
  views.validate();
  require(!views.empty(), Errc::invalid_argument, "consistency needs views");
  ConsistencyReport r;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const ImageBuffer render = render_view(field, views.poses[i], cfg, i).rgb;
    const double mse = metric_mse(views.images[i], render);
    r.per_view_psnr.push_back(mse == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(1.0 / mse));
    r.reprojection_error += mse;
  }
  r.reprojection_error /= static_cast<double>(views.size());
  for (double p : r.per_view_psnr) r.mean_psnr += p;
  r.mean_psnr /= static_cast<double>(views.size());
  return r;
}

/// Mean per-view PSNR between V and renders of (F, colors); higher = more consistent.
inline double metric_multiview_consistency(const MultiViewSet& views, const SdfGrid& sdf, const ColorGrid& colors,
                                           const SDensityParams& density, const RenderConfig& cfg) {
  return multiview_consistency(views, field_from_grid(sdf, colors, density), cfg).mean_psnr;
}

/// Mean absolute RGB difference between two view sets.
inline double mean_color_distance(const MultiViewSet& a, const MultiViewSet& b) {
  require(a.size() == b.size() && !a.empty(), Errc::shape_mismatch, "view sets differ in size");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t v = 0; v < a.size(); ++v) {
    require(a.images[v].same_shape(b.images[v]), Errc::shape_mismatch, "views differ in shape");
    for (std::size_t i = 0; i < a.images[v].size(); ++i) s += std::abs(a.images[v].values()[i] - b.images[v].values()[i]);
    n += a.images[v].size();
  }
  return s / static_cast<double>(n);
}

}  // namespace bidiff
