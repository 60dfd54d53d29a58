#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/core/random.hpp"
#include "bidiff/geometry/grid.hpp"

namespace bidiff {

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

/// Orbit camera looking at the origin with +y up. Pixel (x, y) has its center
/// at continuous image coordinates (x, y); y grows downward.
struct CameraPose {
  double azimuth = 0.0;    // degrees
  double elevation = 30.0; // degrees
  double radius = 2.5;
  double fov_y = 40.0;     // degrees
  int width = 64;
  int height = 64;

  void validate() const {
    require(radius > 0.0, Errc::invalid_argument, "camera radius must be positive");
    require(fov_y > 0.0 && fov_y < 180.0, Errc::invalid_argument, "fov_y must lie in (0, 180)");
    require(width >= 8 && height >= 8, Errc::invalid_argument, "image must be at least 8x8");
    require(std::abs(elevation) < 89.9, Errc::invalid_argument, "elevation must lie strictly inside (-90, 90)");
  }

  Vec3 position() const {
    const double az = deg2rad(azimuth), el = deg2rad(elevation);
    return radius * Vec3(std::cos(el) * std::cos(az), std::sin(el), std::cos(el) * std::sin(az));
  }
  Vec3 forward() const { return -position().normalized(); }
  Vec3 right() const { return forward().cross(Vec3::UnitY()).normalized(); }
  Vec3 up() const { return right().cross(forward()); }

  double tan_half_fov() const { return std::tan(deg2rad(fov_y) * 0.5); }
  double aspect() const { return static_cast<double>(width) / height; }
};

/// Precomputed camera frame for inner loops.
struct CameraFrame {
  Vec3 origin, forward, right, up;
  double tan_y = 1.0, tan_x = 1.0;
  int width = 0, height = 0;

  explicit CameraFrame(const CameraPose& cam)
      : origin(cam.position()),
        forward(cam.forward()),
        right(cam.right()),
        up(cam.up()),
        tan_y(cam.tan_half_fov()),
        tan_x(cam.tan_half_fov() * cam.aspect()),
        width(cam.width),
        height(cam.height) {}

  /// Unit direction through continuous pixel coordinates (u, v).
  Vec3 direction(double u, double v) const {
    const double x = ((u + 0.5) / width * 2.0 - 1.0) * tan_x;
    const double y = (1.0 - (v + 0.5) / height * 2.0) * tan_y;
    return (forward + x * right + y * up).normalized();
  }
};

/// M poses on a ring at fixed elevation, azimuths -180 + 360k/M.
inline std::vector<CameraPose> make_camera_ring(int count, double elevation, double radius, double fov_y, int width,
                                                int height) {
  require(count >= 1, Errc::invalid_argument, "invalid count: camera ring needs at least one view");
  std::vector<CameraPose> poses;
  poses.reserve(count);
  for (int k = 0; k < count; ++k) {
    CameraPose c{-180.0 + 360.0 * k / count, elevation, radius, fov_y, width, height};
    c.validate();
    poses.push_back(c);
  }
  return poses;
}

/// Random viewpoints on a sphere around the origin: azimuth uniform in
/// [-180, 180), elevation uniform in [0, 60] degrees.
inline std::vector<CameraPose> random_poses(const RandomStream& stream, int count, int size, double radius = 2.5,
                                            double fov_y = 40.0) {
  std::vector<CameraPose> poses;
  for (int i = 0; i < count; ++i) {
    CameraPose p;
    p.azimuth = stream.uniform(2 * static_cast<std::uint64_t>(i), -180.0, 180.0);
    p.elevation = stream.uniform(2 * static_cast<std::uint64_t>(i) + 1, 0.0, 60.0);
    p.radius = radius;
    p.fov_y = fov_y;
    p.width = p.height = size;
    poses.push_back(p);
  }
  return poses;
}

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
  Vec3 at(double m) const { return origin + m * direction; }
};

inline Ray gen_ray(const CameraFrame& frame, double u, double v) { return {frame.origin, frame.direction(u, v)}; }

/// One ray per pixel through pixel centers, row-major.
inline std::vector<Ray> gen_rays(const CameraPose& cam) {
  cam.validate();
  const CameraFrame frame(cam);
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(cam.width) * cam.height);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) rays.push_back(gen_ray(frame, x, y));
  }
  return rays;
}

/// Pixel projection of a world point.
struct Projection {
  double u = 0.0, v = 0.0, depth = 0.0;
  bool visible = false;
};

/// Pinhole projection; `visible` is false behind the camera or outside the
/// pixel footprint [-0.5, W-0.5) x [-0.5, H-0.5).
inline Projection project_point(const CameraFrame& frame, const Vec3& p) {
  const Vec3 q = p - frame.origin;
  Projection out;
  out.depth = q.dot(frame.forward);
  if (out.depth <= 1e-9) return out;
  const double x = q.dot(frame.right) / (out.depth * frame.tan_x);
  const double y = q.dot(frame.up) / (out.depth * frame.tan_y);
  out.u = (x + 1.0) * 0.5 * frame.width - 0.5;
  out.v = (1.0 - y) * 0.5 * frame.height - 0.5;
  out.visible = out.u >= -0.5 && out.u < frame.width - 0.5 && out.v >= -0.5 && out.v < frame.height - 0.5;
  return out;
}

inline Projection project_point(const Vec3& p, const CameraPose& cam) { return project_point(CameraFrame(cam), p); }

}  // namespace bidiff
