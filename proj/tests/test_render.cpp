#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bidiff/eval/metrics.hpp"
#include "bidiff/geometry/scene.hpp"
#include "bidiff/render/camera.hpp"
#include "bidiff/render/volume.hpp"

using namespace bidiff;

TEST(CameraRing, EightViewsAtThirtyDegrees) {
  const auto ring = make_camera_ring(8, 30.0, 2.5, 40.0, 64, 64);
  ASSERT_EQ(ring.size(), 8u);
  for (int k = 0; k < 8; ++k) {
    EXPECT_DOUBLE_EQ(ring[k].azimuth, -180.0 + 45.0 * k);
    EXPECT_DOUBLE_EQ(ring[k].elevation, 30.0);
  }
}

TEST(CameraRing, SingleView) {
  const auto ring = make_camera_ring(1, 30.0, 2.5, 40.0, 64, 64);
  ASSERT_EQ(ring.size(), 1u);
  EXPECT_DOUBLE_EQ(ring[0].azimuth, -180.0);
}

TEST(CameraRing, FourViewsQuarterTurns) {
  const auto ring = make_camera_ring(4, 30.0, 2.5, 40.0, 64, 64);
  for (int k = 0; k < 4; ++k) {
    Vec3 a = ring[k].forward(), b = ring[(k + 1) % 4].forward();
    a.y() = b.y() = 0.0;
    EXPECT_NEAR(a.normalized().dot(b.normalized()), 0.0, 1e-12);
  }
}

TEST(CameraRing, InvalidCount) { EXPECT_THROW(make_camera_ring(0, 30, 2.5, 40, 64, 64), Error); }

TEST(CameraPose, Invariants) {
  EXPECT_THROW((CameraPose{0, 30, -1.0, 40, 64, 64}.validate()), Error);
  EXPECT_THROW((CameraPose{0, 30, 2.5, 180, 64, 64}.validate()), Error);
  EXPECT_THROW((CameraPose{0, 30, 2.5, 40, 4, 64}.validate()), Error);
}

TEST(Rays, PrincipalRayAndSymmetry) {
  const CameraPose cam{20, 30, 2.5, 40, 65, 65};
  const auto rays = gen_rays(cam);
  const Vec3 look = (-cam.position()).normalized();
  EXPECT_NEAR(rays[32 * 65 + 32].direction.dot(look), 1.0, 1e-12);
  for (const auto& r : rays) ASSERT_NEAR(r.direction.norm(), 1.0, 1e-6);
  const Vec3 c0 = rays[0].direction, c1 = rays[65 * 65 - 1].direction;
  EXPECT_NEAR(c0.dot(look), c1.dot(look), 1e-12);
  EXPECT_NEAR((c0 + c1).normalized().dot(look), 1.0, 1e-12);
}

TEST(Rays, EdgeSpreadMatchesHalfFov) {
  const CameraPose cam{0, 0, 2.5, 40, 64, 64};
  const CameraFrame frame(cam);
  const double edge = std::acos(frame.direction(31.5, -0.5).dot(cam.forward()));
  const double pixel = 40.0 / 64.0 * std::numbers::pi / 180.0;
  EXPECT_NEAR(edge, 20.0 * std::numbers::pi / 180.0, pixel);
}

TEST(SDensity, PeakSymmetryAndNormalization) {
  const SDensityParams p{20.0};
  EXPECT_DOUBLE_EQ(sdf_to_density(0.0, p), 5.0);
  for (double x : {0.01, 0.1, 0.37, 2.0}) EXPECT_DOUBLE_EQ(sdf_to_density(x, p), sdf_to_density(-x, p));
  double integral = 0.0;
  const double dx = 1e-4;
  for (double x = -3.0; x <= 3.0; x += dx) integral += sdf_to_density(x, p) * dx;
  EXPECT_NEAR(integral, 1.0, 0.01);
  EXPECT_THROW(SDensityParams{0.0}.validate(), Error);
}

TEST(RenderRay, EmptySpaceShowsBackground) {
  FunctionField empty;
  empty.bg = Vec3(0.1, 0.2, 0.3);
  const RaySample s = render_ray(empty, Ray{Vec3(0, 0, -2), Vec3(0, 0, 1)}, 64, 0.5, 3.5);
  EXPECT_EQ(s.transmittance, 1.0);
  EXPECT_EQ(s.rgb, empty.bg);
}

TEST(RenderRay, HomogeneousSlabBeerLambert) {
  FunctionField slab{[](const Vec3& p) { return std::abs(p.z()) <= 0.25 ? 4.0 : 0.0; }, nullptr};
  const RaySample s = render_ray(slab, Ray{Vec3(0, 0, -2), Vec3(0, 0, 1)}, 256, 1.0, 3.0);
  EXPECT_NEAR(s.transmittance / std::exp(-2.0), 1.0, 0.01);
}

TEST(RenderRay, OpaqueRedWall) {
  FunctionField wall{[](const Vec3& p) { return p.z() > 0.0 ? 1e6 : 0.0; },
                     [](const Vec3&, const Vec3&) { return Vec3(1, 0, 0); }};
  const RaySample s = render_ray(wall, Ray{Vec3(0, 0, -2), Vec3(0, 0, 1)}, 128, 1.0, 3.0);
  EXPECT_NEAR(s.transmittance, 0.0, 1e-12);
  EXPECT_NEAR((s.rgb - Vec3(1, 0, 0)).norm(), 0.0, 1e-9);
  EXPECT_NEAR(s.depth, 2.0, 2.0 / 128);
}

TEST(RenderRay, WeightsPartitionUnity) {
  FunctionField f{[](const Vec3& p) { return 3.0 * (1.0 + std::sin(5.0 * p.z())); }, nullptr};
  RayTrace tr;
  const RandomStream jitter(4);
  const RaySample s = render_ray(f, Ray{Vec3(0, 0, -2), Vec3(0, 0, 1)}, 97, 0.5, 3.5, &jitter, &tr);
  double sum = 0.0;
  for (double w : tr.weights) sum += w;
  EXPECT_NEAR(sum + s.transmittance, 1.0, 1e-14);
  for (std::size_t i = 0; i < tr.weights.size(); ++i) {
    EXPECT_GE(tr.weights[i], 0.0);
    EXPECT_NEAR(tr.weights[i], tr.transmittance_before[i] * tr.alpha[i], 1e-15);
  }
}

TEST(RenderRay, RejectsDegenerateInterval) {
  FunctionField f;
  EXPECT_THROW(render_ray(f, Ray{Vec3::Zero(), Vec3::UnitZ()}, 1, 0.0, 1.0), Error);
  EXPECT_THROW(render_ray(f, Ray{Vec3::Zero(), Vec3::UnitZ()}, 8, 1.0, 1.0), Error);
}

namespace {
struct SphereFixture {
  SceneSpec scene = SceneSpec::single(AnalyticShape::sphere(0.5));
  SdfGrid sdf = bake_grid(scene, 48);
  ColorGrid colors = bake_color_grid(scene, 48);
};
}  // namespace

TEST(RenderView, EmptyFieldIsBackground) {
  FunctionField empty;
  const RenderOutput out = render_view(empty, CameraPose{0, 30, 2.5, 40, 16, 16}, RenderConfig{});
  for (float v : out.rgb.values()) ASSERT_EQ(v, 1.0f);
  for (float v : out.transmittance.values()) ASSERT_EQ(v, 1.0f);
}

TEST(RenderView, SphereSilhouetteAreaSymmetric) {
  SphereFixture fx;
  const auto field = field_from_grid(fx.sdf, fx.colors, SDensityParams{});
  RenderConfig rc;
  rc.n_samples = 64;
  std::vector<double> areas;
  for (const auto& cam : make_camera_ring(8, 30, 2.5, 40, 64, 64)) {
    const RenderOutput out = render_view(field, cam, rc);
    double a = 0.0;
    for (float t : out.transmittance.values()) a += 1.0 - t;
    areas.push_back(a);
  }
  const auto [lo, hi] = std::minmax_element(areas.begin(), areas.end());
  EXPECT_LT((*hi - *lo) / *hi, 0.02);
}

TEST(RenderView, SameSeedBitIdentical) {
  SphereFixture fx;
  const auto field = field_from_grid(fx.sdf, fx.colors, SDensityParams{});
  RenderConfig rc;
  rc.seed = 99;
  const CameraPose cam{10, 20, 2.5, 40, 24, 24};
  EXPECT_EQ(render_view(field, cam, rc).rgb.values(), render_view(field, cam, rc).rgb.values());
}

TEST(FieldFromGrid, DensityAtSurfaceAndDeepInside) {
  SphereFixture fx;
  const auto field = field_from_grid(fx.sdf, fx.colors, SDensityParams{20});
  SdfGrid zero(8, 1);
  const ColorGrid gray(8, 3, 0.5f);
  EXPECT_DOUBLE_EQ(field_from_grid(zero, gray, SDensityParams{20}).density(Vec3(0.1, 0.2, 0.3)), 5.0);
  EXPECT_LT(field.density(Vec3::Zero()), 1e-2);
}

TEST(FieldFromGrid, QuadratureAgainstDenseReference) {
  SphereFixture fx;
  const auto field = field_from_grid(fx.sdf, fx.colors, SDensityParams{});
  const CameraPose cam{30, 30, 2.5, 40, 32, 32};
  RenderConfig coarse, dense;
  coarse.n_samples = 64;
  dense.n_samples = 4096;
  dense.jitter = false;
  EXPECT_GT(metric_psnr(render_view(field, cam, coarse).rgb, render_view(field, cam, dense).rgb), 35.0);
}

TEST(HaloOffset, GrazingOpacityMatchesTarget) {
  // Opacity of a grazing ray passing a sphere at the predicted offset.
  const SDensityParams p{20.0};
  const double r = 0.5, target = 0.5;
  const double d0 = halo_offset(p, r, target);
  FunctionField f{[&](const Vec3& q) { return sdf_to_density(q.norm() - r, p); }, nullptr};
  const RaySample s = render_ray(f, Ray{Vec3(r + d0, 0, -2), Vec3(0, 0, 1)}, 2048, 0.0, 4.0);
  EXPECT_NEAR(1.0 - s.transmittance, target, 0.05);
}
