#include <gtest/gtest.h>

#include "bidiff/eval/metrics.hpp"
#include "bidiff/geometry/scene_io.hpp"
#include "bidiff/sampler/sampler.hpp"

using namespace bidiff;

namespace {
const SceneSpec kSphere = SceneSpec::single(AnalyticShape::sphere(0.5), Rgb(0.9, 0.1, 0.1));
const SceneSpec kBox = SceneSpec::single(AnalyticShape::box(Vec3(0.4, 0.4, 0.4)));

SamplerConfig small() {
  SamplerConfig c;
  c.grid_n = 16;
  c.views = 4;
  c.image_size = 24;
  c.steps = 10;
  c.guide_samples = 16;
  c.final_samples = 16;
  c.prior.coarse_n = 8;
  c.set_seed(11);
  return c;
}

SceneSpec labeled_sphere() { return load_scene(std::string(BIDIFF_SCENE_DIR) + "/sphere.scene"); }
}  // namespace

TEST(Guidance, ThreeDCombinationIdentities) {
  SamplerConfig cfg = small();
  const SamplerSetup setup = make_oracle_setup(cfg, kSphere, &kBox);
  const SamplerState s = initial_state(cfg, setup);
  const RadiancePrior dropped = drop_prior(setup.prior);
  const Tensor ec = setup.denoise3d(s.grid, 7, Cond3d{nullptr, &setup.prior, cfg.label});
  const Tensor eu = setup.denoise3d(s.grid, 7, Cond3d{nullptr, &dropped, cfg.label});
  ASSERT_NE(ec, eu);
  cfg.gamma3d = 0.0;
  EXPECT_EQ(detail::guided_eps_3d(cfg, setup, s.grid, 7, nullptr, nullptr), eu);
  cfg.gamma3d = 1.0;
  EXPECT_EQ(detail::guided_eps_3d(cfg, setup, s.grid, 7, nullptr, nullptr), ec);
  cfg.gamma3d = 2.0;
  const Tensor two = detail::guided_eps_3d(cfg, setup, s.grid, 7, nullptr, nullptr);
  for (std::size_t i = 0; i < two.size(); ++i) ASSERT_NEAR(two[i], 2.0f * ec[i] - eu[i], 1e-5);
}

TEST(Guidance, TwoDCombinationIdentities) {
  SamplerConfig cfg = small();
  const SamplerSetup setup = make_oracle_setup(cfg, kSphere);
  const SamplerState s = initial_state(cfg, setup);
  const Tensor ec = setup.denoise2d(s.views, 7, Cond2d{nullptr, cfg.label});
  const Tensor eu = setup.denoise2d(s.views, 7, Cond2d{nullptr, ""});
  cfg.gamma2d = 0.0;
  EXPECT_EQ(detail::guided_eps_2d(cfg, setup, s.views, 7, nullptr, nullptr), eu);
  cfg.gamma2d = 1.0;
  EXPECT_EQ(detail::guided_eps_2d(cfg, setup, s.views, 7, nullptr, nullptr), ec);
}

TEST(BidiStep, DecoupledRunEqualsIndependentRollouts) {
  SamplerConfig cfg = small();
  cfg.enable_2d_to_3d = cfg.enable_3d_to_2d = false;
  const SamplerSetup setup = make_oracle_setup(cfg, kSphere);
  const SamplerResult r = run_sampler(cfg, setup);
  EXPECT_EQ(r.grid.values(), rollout_3d(cfg, setup));
  EXPECT_EQ(flatten_views(r.views), rollout_2d(cfg, setup));
}

TEST(BidiStep, TeacherForcingFeedsGroundTruthViews) {
  SamplerConfig cfg = small();
  cfg.teacher_forced = true;
  const SamplerSetup setup = make_oracle_setup(cfg, kSphere);
  SamplerState s = initial_state(cfg, setup);
  EXPECT_EQ(s.denoised_views, flatten_views(setup.reference_views));
  const StepOutput a = bidi_step(s, cfg, setup);
  std::fill(s.denoised_views.begin(), s.denoised_views.end(), 0.0f);
  const StepOutput b = bidi_step(s, cfg, setup);
  EXPECT_EQ(a.x0_grid, b.x0_grid);
  EXPECT_EQ(a.next.grid, b.next.grid);
  cfg.teacher_forced = false;
  const StepOutput c = bidi_step(s, cfg, setup);
  EXPECT_NE(a.x0_grid, c.x0_grid);
}

TEST(BidiStep, RecordsGuidanceAndRenders) {
  const SamplerConfig cfg = small();
  const SamplerSetup setup = make_oracle_setup(cfg, kSphere);
  const StepOutput out = bidi_step(initial_state(cfg, setup), cfg, setup);
  EXPECT_EQ(out.record.t, cfg.steps);
  EXPECT_EQ(out.next.t, cfg.steps - 1);
  EXPECT_GT(out.record.guidance_gap3d, 0.0);
  EXPECT_GT(out.record.guidance_gap2d, 0.0);
  EXPECT_EQ(out.renders.size(), static_cast<std::size_t>(cfg.views));
}

TEST(RunSampler, SameSeedBitIdentical) {
  const SamplerConfig cfg = small();
  const SamplerResult a = run_sampler(cfg, kSphere), b = run_sampler(cfg, kSphere);
  EXPECT_EQ(a.grid.values(), b.grid.values());
  EXPECT_EQ(flatten_views(a.views), flatten_views(b.views));
  EXPECT_EQ(a.colors.values(), b.colors.values());
  EXPECT_EQ(a.manifest.to_string(), b.manifest.to_string());
}

TEST(RunSampler, DifferentSeedsDiffer) {
  SamplerConfig cfg = small();
  const SamplerResult a = run_sampler(cfg, kSphere);
  cfg.set_seed(12);
  EXPECT_NE(a.grid.values(), run_sampler(cfg, kSphere).grid.values());
}

TEST(RunSampler, ManifestRecordsDefaultsAndRebuildsConfig) {
  SamplerConfig cfg = small();
  const SamplerResult r = run_sampler(cfg, kSphere);
  EXPECT_EQ(r.manifest.get_double("sampler.gamma3d"), 3.0);
  EXPECT_EQ(r.manifest.get_double("sampler.gamma2d"), 7.5);
  EXPECT_EQ(SamplerConfig::from_keyvalues(r.manifest).to_keyvalues().to_string(), cfg.to_keyvalues().to_string());
  EXPECT_EQ(r.trajectory.steps.size(), static_cast<std::size_t>(cfg.steps));
  EXPECT_EQ(r.trajectory.snapshots.size(), 1u);
}

TEST(RunSampler, RecoversSceneWithExactOracles) {
  SamplerConfig cfg = small();
  cfg.grid_n = 24;
  cfg.steps = 20;
  cfg.gamma3d = cfg.gamma2d = 1.0;
  const SamplerResult r = run_sampler(cfg, kSphere);
  EXPECT_GT(metric_iou(r.grid, bake_grid(kSphere, 24)), 0.85);
  EXPECT_GT(r.consistency.mean_psnr, 20.0);
}

TEST(RunSampler, GuidanceReducesReprojectionErrorUnderShift) {
  SamplerConfig cfg;
  cfg.gamma3d = cfg.gamma2d = 1.0;
  cfg.shift_px = 4;
  cfg.image_size = 32;
  cfg.views = 4;
  cfg.set_seed(3);
  const double on = run_sampler(cfg, kSphere).consistency.reprojection_error;
  cfg.enable_2d_to_3d = cfg.enable_3d_to_2d = false;
  const double off = run_sampler(cfg, kSphere).consistency.reprojection_error;
  EXPECT_LT(on, 0.8 * off) << "on " << on << " off " << off;
}

TEST(RunSampler, InvalidConfigRejected) {
  SamplerConfig cfg = small();
  cfg.steps = 1;
  EXPECT_THROW(run_sampler(cfg, kSphere), Error);
  try {
    SamplerConfig::from_keyvalues(KeyValues::parse("sched3d.steps = 20\nsched2d.steps = 30\n"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_argument);
  }
}

TEST(ControlTexture, SameLabelTwiceIdentical) {
  const SamplerConfig cfg = small();
  const SceneSpec s = labeled_sphere();
  const SamplerResult a = control_texture(cfg, s, "blue", 3.0), b = control_texture(cfg, s, "blue", 3.0);
  EXPECT_EQ(a.grid.values(), b.grid.values());
  EXPECT_EQ(flatten_views(a.views), flatten_views(b.views));
}

TEST(ControlTexture, LabelsChangeColorNotShape) {
  SamplerConfig cfg = small();
  cfg.gamma3d = 1.0;
  const SceneSpec s = labeled_sphere();
  const SamplerResult a = control_texture(cfg, s, "blue", 3.0), b = control_texture(cfg, s, "green", 3.0);
  EXPECT_GT(metric_iou(a.grid, b.grid), 0.85);
  EXPECT_GT(mean_color_distance(a.views, b.views), 0.05);
}

TEST(ControlTexture, ImpliedTargetMovesMonotonicallyWithScale) {
  SamplerConfig cfg = small();
  cfg.label = "blue";
  const SamplerSetup setup = make_oracle_setup(cfg, labeled_sphere());
  const SamplerState s = initial_state(cfg, setup);
  const int t = 6;
  const Tensor xu = predict_x0(s.views, setup.denoise2d(s.views, t, Cond2d{nullptr, ""}), t, setup.sched2d);
  const Tensor xc = predict_x0(s.views, setup.denoise2d(s.views, t, Cond2d{nullptr, "blue"}), t, setup.sched2d);
  double prev = -1e9;
  for (double g : {1.0, 2.0, 3.0, 5.0, 7.5}) {
    cfg.gamma2d = g;
    const Tensor x = predict_x0(s.views, detail::guided_eps_2d(cfg, setup, s.views, t, nullptr, nullptr), t, setup.sched2d);
    double along = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      along += (static_cast<double>(x[i]) - xu[i]) * (static_cast<double>(xc[i]) - xu[i]);
      norm += (static_cast<double>(xc[i]) - xu[i]) * (static_cast<double>(xc[i]) - xu[i]);
    }
    const double coeff = along / norm;
    EXPECT_GT(coeff, prev);
    EXPECT_NEAR(coeff, g, 1e-2 * g);
    prev = coeff;
  }
}

TEST(ControlGeometry, SamePriorTwiceIdentical) {
  const SamplerConfig cfg = small();
  const SamplerResult a = control_geometry(cfg, kSphere, kBox, 5.0), b = control_geometry(cfg, kSphere, kBox, 5.0);
  EXPECT_EQ(a.grid.values(), b.grid.values());
}

TEST(ControlGeometry, PriorIgnoredAtZeroScale) {
  SamplerConfig cfg = small();
  cfg.gamma3d = 0.0;
  const SamplerResult a = control_geometry(cfg, kSphere, kSphere, 0.0), b = control_geometry(cfg, kSphere, kBox, 0.0);
  EXPECT_EQ(a.grid.values(), b.grid.values());
  EXPECT_EQ(flatten_views(a.views), flatten_views(b.views));
}

TEST(ControlGeometry, DroppedPriorMatchesZeroScale) {
  SamplerConfig cfg = small();
  cfg.gamma3d = 0.0;
  const SamplerResult zero = run_sampler(cfg, kSphere);
  cfg.gamma3d = 3.0;
  cfg.prior.drop_probability = 1.0;
  const SamplerResult dropped = run_sampler(cfg, kSphere);
  EXPECT_EQ(zero.grid.values(), dropped.grid.values());
}
