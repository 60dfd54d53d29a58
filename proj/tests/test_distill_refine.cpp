#include <gtest/gtest.h>

#include <cmath>

#include "bidiff/distill/distill.hpp"
#include "bidiff/eval/metrics.hpp"
#include "bidiff/selftest/selftest.hpp"

using namespace bidiff;

namespace {
const SceneSpec kSphere = SceneSpec::single(AnalyticShape::sphere(0.5));

struct Source {
  SdfGrid sdf = bake_grid(kSphere, 32);
  ColorGrid colors = bake_color_grid(kSphere, 32);
  SourceField field() const { return {&sdf, &colors, SDensityParams{}}; }
  auto radiance() const { return field_from_grid(sdf, colors, SDensityParams{}); }
};

std::vector<bool> bound(const Source& s, int n_h) { return occupancy_bound(s.radiance(), n_h); }

// Distance from the surface at which the S-density drops to `sigma`.
double density_radius(double sigma, const SDensityParams& p) {
  double lo = 0.0, hi = 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (sdf_to_density(mid, p) > sigma ? lo : hi) = mid;
  }
  return lo;
}

double mean_psnr(const HiResField& f, const std::vector<CameraPose>& poses, const std::vector<ImageBuffer>& gt) {
  const auto r = render_batch_targets(HiResRadiance(f), poses, 64);
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += metric_psnr(r[i], gt[i]);
  return s / static_cast<double>(r.size());
}

HiResField perturbed_start(const Source& src, int n_h) {
  HiResField f = initial_field(src.field(), bound(src, n_h), n_h, DistillInit::resampled);
  for (auto& d : f.density.values()) d *= 0.6f;
  for (std::size_t i = 0; i < f.colors.point_count(); ++i) f.colors.values()[i * 3 + 2] += 0.3f;
  f.project();
  return f;
}
}  // namespace

TEST(OccupancyBound, EmptyFieldEmptyMask) {
  const FunctionField empty;
  for (bool m : occupancy_bound(empty, 16)) ASSERT_FALSE(m);
}

TEST(OccupancyBound, SphereMaskMatchesAnalyticShell) {
  const Source src;
  const int n_h = 64;
  const auto mask = bound(src, n_h);
  const Grid3<float> lattice(n_h, 1);
  const double sigma = -std::log1p(-0.01) / lattice.spacing();
  const double d = density_radius(sigma, SDensityParams{});
  std::vector<bool> hit(mask.size()), shell(mask.size(), false);
  for (std::size_t i = 0; i < hit.size(); ++i) hit[i] = std::abs(lattice.position(i).norm() - 0.5) < d;
  for (int z = 0; z < n_h; ++z)
    for (int y = 0; y < n_h; ++y)
      for (int x = 0; x < n_h; ++x)
        for (int k = 0; k < 27 && !shell[lattice.index(x, y, z)]; ++k) {
          const int a = x + k % 3 - 1, b = y + (k / 3) % 3 - 1, c = z + k / 9 - 1;
          if (a >= 0 && b >= 0 && c >= 0 && a < n_h && b < n_h && c < n_h && hit[lattice.index(a, b, c)])
            shell[lattice.index(x, y, z)] = true;
        }
  EXPECT_GT(metric_iou(mask, shell), 0.9);
}

TEST(Distill, ResampledStartIsFixedPoint) {
  const Source src;
  DistillConfig cfg;
  cfg.hires_n = 32;
  cfg.iterations = 5;
  cfg.init = DistillInit::resampled;
  const auto mask = bound(src, 32);
  const HiResField start = initial_field(src.field(), mask, 32, DistillInit::resampled);
  DistillReport rep;
  const HiResField out = distill(src.field(), mask, cfg, &rep);
  EXPECT_EQ(rep.initial_density_l1, 0.0);
  EXPECT_LT(rep.initial_render_l1, 0.01);
  EXPECT_GT(init_similarity(out, start), 0.999);
}

TEST(Distill, DensityOnlyObjectiveConvergesToTarget) {
  const Source src;
  DistillConfig cfg;
  cfg.hires_n = 32;
  cfg.w_render = 0.0;
  cfg.iterations = 400;
  DistillReport rep;
  const HiResField f = distill(src.field(), bound(src, 32), cfg, &rep);
  EXPECT_LT(rep.final_density_l1, 1e-3);
  const auto target = sampled_density(src.field(), 32);
  double worst = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i)
    if (f.mask[i]) worst = std::max(worst, std::abs(static_cast<double>(f.density.values()[i]) - target[i]));
  EXPECT_LT(worst, 1e-2);
}

TEST(Gradient, ZeroDensityLeavesColorsUnreached) {
  HiResField f(8, std::vector<bool>(512, true));
  RenderBatch batch;
  batch.n_samples = 16;
  batch.poses = random_poses(RandomStream(1), 2, 8);
  batch.targets = {ImageBuffer(8, 8, 3, 0.2f), ImageBuffer(8, 8, 3, 0.3f)};
  FieldGradient g(f);
  grad_render_l1(f, batch, &g);
  for (double c : g.color) ASSERT_EQ(c, 0.0);
  double any = 0.0;
  for (double d : g.density) any += std::abs(d);
  EXPECT_GT(any, 0.0);
}

TEST(Gradient, ColorGradientLinearInColorScale) {
  const int n = 8;
  HiResField f(n, std::vector<bool>(static_cast<std::size_t>(n) * n * n, true));
  f.background = Vec3::Zero();
  Sequence rng(RandomStream(2));
  for (auto& v : f.density.values()) v = static_cast<float>(rng.uniform(0.5, 3.0));
  for (auto& v : f.colors.values()) v = static_cast<float>(rng.uniform(0.1, 0.4));
  RenderBatch batch;
  batch.n_samples = 16;
  batch.poses = random_poses(RandomStream(3), 2, 8);
  for (int i = 0; i < 2; ++i) {
    ImageBuffer t(8, 8, 3);
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform(0.0, 0.4));
    batch.targets.push_back(t);
  }
  FieldGradient g1(f);
  grad_render_loss(f, batch, PixelLoss::squared, &g1);
  const float c = 2.0f;
  for (auto& v : f.colors.values()) v *= c;
  for (auto& t : batch.targets)
    for (auto& v : t.values()) v *= c;
  FieldGradient g2(f);
  grad_render_loss(f, batch, PixelLoss::squared, &g2);
  for (std::size_t i = 0; i < g1.color.size(); ++i) ASSERT_NEAR(g2.color[i], c * g1.color[i], 1e-6 * (1.0 + std::abs(g1.color[i])));
  for (std::size_t i = 0; i < g1.density.size(); ++i)
    ASSERT_NEAR(g2.density[i], c * c * g1.density[i], 1e-6 * (1.0 + std::abs(g1.density[i])));
}

TEST(Gradient, MatchesFiniteDifferences) {
  const CheckResult r = check::compositing_gradient(100);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Refine, ExactScoreIsBitwiseNoop) {
  const CheckResult r = check::refine_noop();
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Refine, OracleScoreImprovesRenders) {
  const Source src;
  const int n_h = 32;
  RefineConfig cfg;
  cfg.iterations = 20;
  const ScoreSource score = oracle_score(src.radiance(), cfg);
  const auto poses = make_camera_ring(4, 20, 2.5, 40, 32, 32);
  const auto gt = render_batch_targets(src.radiance(), poses, 64);
  HiResField f = perturbed_start(src, n_h);
  std::vector<double> psnr{mean_psnr(f, poses, gt)};
  for (int chunk = 0; chunk < 10; ++chunk) {
    cfg.seed = static_cast<std::uint64_t>(chunk);
    f = sds_refine(f, score, cfg);
    psnr.push_back(mean_psnr(f, poses, gt));
  }
  for (std::size_t i = 1; i < psnr.size(); ++i) EXPECT_GT(psnr[i], psnr[i - 1]) << "after chunk " << i;
}

TEST(Refine, NarrowRangeStaysCloserToStart) {
  const Source src;
  RefineConfig narrow, wide;
  narrow.iterations = wide.iterations = 60;
  narrow.set_range("0.02:0.2");
  wide.set_range("0.02:0.98");
  const HiResField start = perturbed_start(src, 32);
  RefineReport rn, rw;
  sds_refine(start, oracle_score(src.radiance(), narrow), narrow, &rn);
  sds_refine(start, oracle_score(src.radiance(), wide), wide, &rw);
  EXPECT_GT(rn.init_similarity, rw.init_similarity);
}

TEST(Refine, RangeValidation) {
  RefineConfig c;
  EXPECT_THROW(c.set_range("0.5:0.2"), Error);
  EXPECT_THROW(c.set_range("0:0.5"), Error);
  EXPECT_THROW(c.set_range("abc"), Error);
  c.set_range("0.02:0.5");
  EXPECT_EQ(c.lo, 0.02);
  EXPECT_EQ(c.hi, 0.5);
}

TEST(Refine, BlowUpRaisesDivergence) {
  const Source src;
  RefineConfig cfg;
  cfg.iterations = 3;
  cfg.step_size = 1e30;
  const ScoreSource wild = [](const ScoreQuery& q) { return Tensor(q.noisy.size(), 1e30f); };
  try {
    sds_refine(perturbed_start(src, 16), wild, cfg);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.code(), Errc::divergence);
    EXPECT_EQ(e.state().resolution(), 16);
  }
}

TEST(Pipeline, ZeroRefineIterationsReturnsDistilled) {
  const Source src;
  DistillConfig d;
  d.hires_n = 16;
  d.iterations = 5;
  RefineConfig r;
  r.iterations = 0;
  const HiResField a = distill_then_refine(src.field(), d, oracle_score(src.radiance(), r), r);
  const HiResField b = distill(src.field(), bound(src, 16), d);
  EXPECT_EQ(a.density.values(), b.density.values());
  EXPECT_EQ(a.colors.values(), b.colors.values());
}

TEST(Pipeline, ComposesDistillAndRefine) {
  const Source src;
  DistillConfig d;
  d.hires_n = 16;
  d.iterations = 5;
  RefineConfig r;
  r.iterations = 5;
  const auto score = oracle_score(src.radiance(), r);
  PipelineReport rep;
  const HiResField a = distill_then_refine(src.field(), d, score, r, &rep);
  const HiResField b = sds_refine(distill(src.field(), bound(src, 16), d), score, r);
  EXPECT_EQ(a.density.values(), b.density.values());
  EXPECT_EQ(a.colors.values(), b.colors.values());
  EXPECT_EQ(rep.distill.iterations, 5);
  EXPECT_EQ(rep.refine.iterations, 5);
}

TEST(Pipeline, ExactOracleSphereEndToEnd) {
  const Source src;
  DistillConfig d;
  RefineConfig r;
  DistillReport drep;
  const HiResField distilled = distill(src.field(), bound(src, 64), d, &drep);
  EXPECT_LT(drep.final_density_l1, 0.01);
  EXPECT_EQ(drep.iterations, 500);
  EXPECT_LT(drep.seconds, 120.0);
  for (std::size_t i = 0; i < distilled.mask.size(); ++i)
    if (!distilled.mask[i]) ASSERT_EQ(distilled.density.values()[i], 0.0f);
  const HiResField refined = sds_refine(distilled, oracle_score(src.radiance(), r), r);
  const SdfGrid gt = bake_grid(kSphere, 64);
  const double iou_d = metric_iou(density_to_sdf(distilled.density, SDensityParams{}), gt);
  const double iou_r = metric_iou(density_to_sdf(refined.density, SDensityParams{}), gt);
  EXPECT_GE(iou_d, 0.9);
  EXPECT_GE(iou_r, iou_d) << "distilled " << iou_d << " refined " << iou_r;
}

TEST(DensityToSdf, RecoversSphere) {
  const Source src;
  Grid3<float> density(48, 1);
  density.values() = sampled_density(src.field(), 48);
  EXPECT_GT(metric_iou(density_to_sdf(density, SDensityParams{}), bake_grid(kSphere, 48)), 0.9);
}
