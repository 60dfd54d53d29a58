#include <gtest/gtest.h>

#include <cmath>

#include "bidiff/diffusion/denoisers.hpp"
#include "bidiff/eval/metrics.hpp"
#include "bidiff/sampler/sampler.hpp"

using namespace bidiff;

namespace {
const SceneSpec kSphere = SceneSpec::single(AnalyticShape::sphere(0.5));
const SceneSpec kBox = SceneSpec::single(AnalyticShape::box(Vec3(0.4, 0.4, 0.4)));

struct Views {
  SamplerConfig cfg;
  MultiViewSet of(const SceneSpec& s, int samples = 64) const {
    return render_scene_views(s, cfg.poses(), cfg.grid_n, "default", SDensityParams{cfg.s_density}, samples);
  }
};

// Silhouette settings matching the oracle setup for these views.
Oracle3dSpec spec_3d(const SceneSpec& target, const MultiViewSet& views, double lambda_c) {
  Oracle3dSpec s;
  s.target = bake_grid(target, 32);
  s.lambda_c = lambda_c;
  s.lambda_p = 0.0;
  const double contrast = max_contrast(views, Vec3::Ones());
  s.silhouette = {Vec3::Ones(), 1.0, halo_offset(SDensityParams{}, 0.5, std::clamp(0.5 / contrast, 0.05, 0.95))};
  return s;
}

double iou_of(const Tensor& t, const SdfGrid& g) { return metric_iou(SdfGrid(g.resolution(), 1, t), g); }
}  // namespace

TEST(OracleEps, RecoversTheNoise) {
  const NoiseSchedule s = make_schedule(ScheduleKind::cosine, 50);
  const Tensor x0 = gaussian(1000, RandomStream(1)), eps = gaussian(1000, RandomStream(2));
  for (int t : {1, 10, 25, 50}) {
    const Tensor e = oracle_eps(forward_noise(x0, t, eps, s), x0, t, s);
    for (std::size_t i = 0; i < e.size(); ++i) ASSERT_NEAR(e[i], eps[i], 2e-4) << "t=" << t;
  }
}

TEST(OracleEps, ScaledStateGivesZeroNoise) {
  const NoiseSchedule s = make_schedule(ScheduleKind::cosine, 50);
  const Tensor xt{0.5f, -1.0f, 2.0f};
  Tensor x0(3);
  for (int i = 0; i < 3; ++i) x0[i] = static_cast<float>(xt[i] / std::sqrt(s.alpha_bar(20)));
  for (float e : oracle_eps(xt, x0, 20, s)) EXPECT_NEAR(e, 0.0, 1e-6);
}

TEST(OracleEps, UndefinedAtZero) {
  const NoiseSchedule s = make_schedule(ScheduleKind::cosine, 50);
  const Tensor x{1.0f};
  EXPECT_THROW(oracle_eps(x, x, 0, s), Error);
}

TEST(Oracle3d, NoConditioningIsExactOracle) {
  const NoiseSchedule s = make_schedule(ScheduleKind::cosine, 50);
  Oracle3dSpec spec;
  spec.target = bake_grid(kSphere, 16);
  spec.lambda_c = 0.0;
  const Tensor xt = gaussian(spec.target.point_count(), RandomStream(3));
  EXPECT_EQ(conditioned_oracle_3d(spec, xt, 30, Cond3d{}, s), oracle_eps(xt, spec.target.values(), 30, s));
}

TEST(Oracle3d, MissingViewsRejected) {
  const NoiseSchedule s = make_schedule(ScheduleKind::cosine, 50);
  Oracle3dSpec spec;
  spec.target = bake_grid(kSphere, 16);
  spec.lambda_c = 0.5;
  const Tensor xt(spec.target.point_count(), 0.0f);
  EXPECT_THROW(conditioned_oracle_3d(spec, xt, 30, Cond3d{}, s), Error);
}

TEST(Oracle3d, HullOfTrueViewsMatchesTarget) {
  const Views v;
  const MultiViewSet views = v.of(kSphere);
  const Oracle3dSpec spec = spec_3d(kSphere, views, 1.0);
  const Tensor full = implied_target_3d(spec, Cond3d{&views, nullptr, "default"});
  EXPECT_GT(iou_of(full, spec.target), 0.9);
}

TEST(Oracle3d, ViewsPullTowardTheirShape) {
  const Views v;
  const MultiViewSet views = v.of(kSphere);
  const Oracle3dSpec spec = spec_3d(kBox, views, 1.0);
  const Tensor x0 = implied_target_3d(spec, Cond3d{&views, nullptr, "default"});
  EXPECT_GT(iou_of(x0, bake_grid(kSphere, 32)), iou_of(x0, bake_grid(kBox, 32)));
}

TEST(Oracle3d, LivePriorBlendsIntoOwnTarget) {
  Oracle3dSpec spec;
  spec.target = bake_grid(kSphere, 16);
  spec.lambda_c = 0.0;
  spec.lambda_p = 0.3;
  const RadiancePrior prior = build_prior(kBox, PriorConfig{}, make_schedule(ScheduleKind::cosine, 50), 1);
  const RadiancePrior dropped = drop_prior(prior);
  const Tensor live = implied_target_3d(spec, Cond3d{nullptr, &prior, ""});
  const Tensor off = implied_target_3d(spec, Cond3d{nullptr, &dropped, ""});
  EXPECT_EQ(off, Tensor(spec.target.values().begin(), spec.target.values().end()));
  EXPECT_NE(live, off);
}

TEST(Oracle2d, NoConditioningIsExactPerViewOracle) {
  const Views v;
  const NoiseSchedule s = make_schedule(ScheduleKind::cosine, 50);
  Oracle2dSpec spec;
  spec.poses = v.cfg.poses();
  spec.targets["default"] = v.of(kSphere);
  spec.lambda_c = 0.0;
  const Tensor target = flatten_views(spec.targets["default"]);
  const Tensor xt = gaussian(target.size(), RandomStream(4));
  EXPECT_EQ(conditioned_oracle_2d(spec, xt, 12, Cond2d{nullptr, "default"}, s), oracle_eps(xt, target, 12, s));
}

TEST(Oracle2d, RendersOfTrueSceneReproduceTargets) {
  const Views v;
  Oracle2dSpec spec;
  spec.poses = v.cfg.poses();
  spec.targets["default"] = v.of(kSphere, 64);
  spec.lambda_c = 1.0;
  const MultiViewSet renders = v.of(kSphere, 32);
  const MultiViewSet implied = unflatten_views(implied_target_2d(spec, Cond2d{&renders, "default"}), spec.poses);
  for (std::size_t i = 0; i < implied.size(); ++i)
    EXPECT_GT(metric_psnr(implied.images[i], spec.targets["default"].images[i]), 30.0);
}

TEST(Oracle2d, EmptyLabelDenoisesToGray) {
  Oracle2dSpec spec;
  spec.poses = make_camera_ring(2, 30, 2.5, 40, 8, 8);
  spec.lambda_c = 0.0;
  for (float v : implied_target_2d(spec, Cond2d{nullptr, ""})) ASSERT_EQ(v, 0.5f);
}

TEST(Oracle2d, UnknownLabelRejected) {
  Oracle2dSpec spec;
  spec.poses = make_camera_ring(2, 30, 2.5, 40, 8, 8);
  spec.lambda_c = 0.0;
  EXPECT_THROW(implied_target_2d(spec, Cond2d{nullptr, "purple"}), Error);
}

TEST(Perturbed, ZeroBiasIsIdentity) {
  Oracle3dSpec s3;
  s3.target = bake_grid(kSphere, 16);
  const Oracle3dSpec p3 = perturbed_oracle_3d(s3, PerturbationSpec{});
  EXPECT_EQ(implied_target_3d(p3, Cond3d{}, 0.0), implied_target_3d(s3, Cond3d{}, 0.0));
  Oracle2dSpec s2;
  s2.poses = make_camera_ring(2, 30, 2.5, 40, 8, 8);
  s2.targets["a"].poses = s2.poses;
  s2.targets["a"].images = {ImageBuffer(8, 8, 3, 0.2f), ImageBuffer(8, 8, 3, 0.7f)};
  const Oracle2dSpec p2 = perturbed_oracle_2d(s2, PerturbationSpec{});
  EXPECT_EQ(implied_target_2d(p2, Cond2d{nullptr, "a"}, 0.0), implied_target_2d(s2, Cond2d{nullptr, "a"}, 0.0));
}

TEST(Perturbed, WarpedOracleRolloutDrifts) {
  SamplerConfig cfg;
  cfg.gamma3d = 1.0;
  cfg.views = 2;
  cfg.image_size = 16;
  const SdfGrid gt = bake_grid(kSphere, 32);
  const Tensor clean = rollout_3d(cfg, make_oracle_setup(cfg, kSphere));
  cfg.warp_amplitude = 0.1;
  const Tensor warped = rollout_3d(cfg, make_oracle_setup(cfg, kSphere));
  const double iou_clean = iou_of(clean, gt), iou_warped = iou_of(warped, gt);
  EXPECT_LT(iou_warped, 0.9);
  EXPECT_LT(iou_warped, iou_clean);
}

TEST(Perturbed, ShiftedViewsBreakConsistencyWithoutGuidance) {
  SamplerConfig cfg;
  cfg.gamma3d = 1.0;
  cfg.gamma2d = 1.0;
  cfg.enable_2d_to_3d = cfg.enable_3d_to_2d = false;
  const double base = run_sampler(cfg, kSphere).consistency.reprojection_error;
  cfg.shift_px = 4;
  const double shifted = run_sampler(cfg, kSphere).consistency.reprojection_error;
  EXPECT_GT(shifted, 2.0 * base) << "base " << base << " shifted " << shifted;
}

TEST(ShiftHorizontal, MovesAndFills) {
  ImageBuffer img(4, 1, 3, 0.0f);
  img.at(0, 0, 0) = 1.0f;
  const ImageBuffer s = shift_horizontal(img, 2);
  EXPECT_EQ(s.at(2, 0, 0), 1.0f);
  EXPECT_EQ(s.at(0, 0, 1), 1.0f);
  EXPECT_EQ(s.at(3, 0, 0), 0.0f);
}
