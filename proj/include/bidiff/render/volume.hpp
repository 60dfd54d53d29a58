#pragma once

// Volumetric rendering of radiance fields by discrete alpha compositing.

#include <array>
#include <cmath>
#include <concepts>
#include <functional>
#include <numbers>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/core/parallel.hpp"
#include "bidiff/core/random.hpp"
#include "bidiff/geometry/grid.hpp"
#include "bidiff/render/camera.hpp"
#include "bidiff/render/image.hpp"

namespace bidiff {

struct SDensityParams {
  double s = 20.0;

  void validate() const { require(s > 0.0, Errc::invalid_argument, "S-density sharpness must be positive"); }
};

/// Logistic density phi_s(x) = s e^{-sx} / (1 + e^{-sx})^2. Even in x, peak s/4 at 0.
inline double sdf_to_density(double sdf, const SDensityParams& params) {
  const double e = std::exp(-params.s * std::abs(sdf));
  return params.s * e / ((1.0 + e) * (1.0 + e));
}

/// Distance outside a surface of curvature radius `radius` at which a grazing
/// ray accumulates the given opacity. S-density renders of an SDF appear
/// inflated by this much.
inline double halo_offset(const SDensityParams& params, double radius = 0.5, double opacity = 0.5) {
  require(params.s > 0.0 && radius > 0.0 && opacity > 0.0 && opacity < 1.0, Errc::invalid_argument,
          "halo offset needs s > 0, radius > 0 and opacity in (0, 1)");
  // Far from the surface density ~ s e^{-s d}; along a grazing ray d grows as
  // d0 + x^2 / 2r, so the optical depth is e^{-s d0} sqrt(2 pi r s).
  const double depth = -std::log1p(-opacity);
  return std::log(std::sqrt(2.0 * std::numbers::pi * radius * params.s) / depth) / params.s;
}

/// Anything that answers density and color queries. Queries must be pure.
template <typename F>
concept RadianceField = requires(const F& f, const Vec3& p, const Vec3& d, double* rgb) {
  { f.density(p) } -> std::convertible_to<double>;
  f.color(p, d, rgb);
  { f.background() } -> std::convertible_to<Vec3>;
};

/// Field backed by std::function; convenient for analytic test scenes.
struct FunctionField {
  std::function<double(const Vec3&)> sigma;
  std::function<Vec3(const Vec3&, const Vec3&)> rgb;
  Vec3 bg = Vec3::Ones();

  double density(const Vec3& p) const { return sigma ? sigma(p) : 0.0; }
  void color(const Vec3& p, const Vec3& d, double* out) const {
    const Vec3 c = rgb ? rgb(p, d) : Vec3::Zero();
    out[0] = c[0], out[1] = c[1], out[2] = c[2];
  }
  Vec3 background() const { return bg; }
};

/// sigma(p) = phi_s(trilinear SDF), color from a trilinear RGB grid (view
/// independent). Space outside [-1,1]^3 is empty.
class GridRadianceField {
 public:
  GridRadianceField(const SdfGrid& sdf, const ColorGrid& colors, SDensityParams params, Vec3 background = Vec3::Ones())
      : sdf_(&sdf), colors_(&colors), params_(params), bg_(background) {
    params_.validate();
    require(colors.channels() == 3, Errc::shape_mismatch, "color grid needs 3 channels");
  }

  double density(const Vec3& p) const {
    if (!inside_box(p)) return 0.0;
    return sdf_to_density(sdf_->sample(p), params_);
  }
  void color(const Vec3& p, const Vec3&, double* out) const {
    colors_->sample(p, out);
    for (int c = 0; c < 3; ++c) out[c] = std::clamp(out[c], 0.0, 1.0);
  }
  Vec3 background() const { return bg_; }

  const SdfGrid& sdf() const { return *sdf_; }
  const ColorGrid& colors() const { return *colors_; }
  const SDensityParams& params() const { return params_; }

 private:
  const SdfGrid* sdf_;
  const ColorGrid* colors_;
  SDensityParams params_;
  Vec3 bg_;
};

/// Builds a renderable field over a grid; the grids must outlive the field.
inline GridRadianceField field_from_grid(const SdfGrid& sdf, const ColorGrid& colors, SDensityParams params,
                                         Vec3 background = Vec3::Ones()) {
  return GridRadianceField(sdf, colors, params, background);
}

struct RaySample {
  Vec3 rgb = Vec3::Zero();
  double depth = 0.0;
  double transmittance = 1.0;
};

/// Per-sample record of one composited ray, for invariant checks.
struct RayTrace {
  std::vector<double> positions, sigma, alpha, transmittance_before, weights;
};

inline constexpr double kDepthEpsilon = 1e-10;

/// Stratified quadrature of the rendering integral on [t_near, t_far]: sample
/// i lies uniformly inside stratum i of width delta = (far - near) / n, and
/// alpha_i = 1 - exp(-sigma_i delta), w_i = T_i alpha_i with
/// T_i = prod_{j<i} (1 - alpha_j). `jitter` supplies one uniform per sample;
/// pass nullptr for stratum midpoints.
template <RadianceField Field>
RaySample render_ray(const Field& field, const Ray& ray, int n_samples, double t_near, double t_far,
                     const RandomStream* jitter = nullptr, RayTrace* trace = nullptr) {
  require(n_samples >= 2, Errc::invalid_argument, "render_ray needs at least two samples");
  require(t_near < t_far && std::isfinite(t_near) && std::isfinite(t_far), Errc::invalid_argument,
          "degenerate ray interval");
  const double delta = (t_far - t_near) / n_samples;
  double T = 1.0;
  double wsum = 0.0, depth = 0.0;
  Vec3 rgb = Vec3::Zero();
  if (trace) *trace = RayTrace{};
  for (int i = 0; i < n_samples; ++i) {
    const double u = jitter ? jitter->uniform(static_cast<std::uint64_t>(i)) : 0.5;
    const double m = t_near + (i + u) * delta;
    const Vec3 p = ray.at(m);
    const double sigma = field.density(p);
    const double alpha = sigma > 0.0 ? -std::expm1(-sigma * delta) : 0.0;
    const double T_next = T * (1.0 - alpha);
    const double w = T - T_next;
    if (w > 0.0) {
      double c[3];
      field.color(p, ray.direction, c);
      rgb += w * Vec3(c[0], c[1], c[2]);
      depth += w * m;
      wsum += w;
    }
    if (trace) {
      trace->positions.push_back(m);
      trace->sigma.push_back(sigma);
      trace->alpha.push_back(alpha);
      trace->transmittance_before.push_back(T);
      trace->weights.push_back(w);
    }
    T = T_next;
  }
  RaySample out;
  out.rgb = rgb + T * field.background();
  out.depth = depth / std::max(wsum, kDepthEpsilon);
  out.transmittance = T;
  return out;
}

struct RenderConfig {
  int n_samples = 64;
  /// Ray interval; when near >= far the interval is the camera distance ± sqrt(3).
  double near = 0.0;
  double far = 0.0;
  bool jitter = true;
  std::uint64_t seed = 0;

  std::pair<double, double> interval(const CameraPose& cam) const {
    if (near < far) return {near, far};
    const double r = std::sqrt(3.0);
    return {std::max(1e-3, cam.radius - r), cam.radius + r};
  }
};

struct RenderOutput {
  ImageBuffer rgb;            // 3 channels
  ImageBuffer depth;          // 1 channel, distance along the ray
  ImageBuffer transmittance;  // 1 channel
};

/// Renders every pixel of `cam`. Pixel p draws its jitter from the stream
/// (seed, view_tag, p), so output does not depend on traversal order.
template <RadianceField Field>
RenderOutput render_view(const Field& field, const CameraPose& cam, const RenderConfig& cfg,
                         std::uint64_t view_tag = 0) {
  cam.validate();
  const CameraFrame frame(cam);
  const auto [t0, t1] = cfg.interval(cam);
  RenderOutput out{ImageBuffer(cam.width, cam.height, 3), ImageBuffer(cam.width, cam.height, 1),
                   ImageBuffer(cam.width, cam.height, 1)};
  const RandomStream base = RandomStream(cfg.seed).fork(view_tag);
  parallel_for(0, out.rgb.pixel_count(), [&](std::size_t i) {
    const int x = static_cast<int>(i % cam.width);
    const int y = static_cast<int>(i / cam.width);
    const RandomStream jitter = base.fork(i);
    const RaySample s = render_ray(field, gen_ray(frame, x, y), cfg.n_samples, t0, t1, cfg.jitter ? &jitter : nullptr);
    for (int c = 0; c < 3; ++c) out.rgb.at(x, y, c) = static_cast<float>(std::clamp(s.rgb[c], 0.0, 1.0));
    out.depth.at(x, y) = static_cast<float>(s.depth);
    out.transmittance.at(x, y) = static_cast<float>(s.transmittance);
  });
  return out;
}

/// RGB renders of a field from every pose.
template <RadianceField Field>
MultiViewSet render_views(const Field& field, const std::vector<CameraPose>& poses, const RenderConfig& cfg) {
  MultiViewSet set;
  set.poses = poses;
  for (std::size_t i = 0; i < poses.size(); ++i) set.images.push_back(render_view(field, poses[i], cfg, i).rgb);
  return set;
}

}  // namespace bidiff
