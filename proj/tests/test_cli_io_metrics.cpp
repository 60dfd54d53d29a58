#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "bidiff/distill/distill.hpp"
#include "bidiff/eval/metrics.hpp"
#include "bidiff/io/run_io.hpp"

using namespace bidiff;
namespace fs = std::filesystem;

namespace {
const SceneSpec kSphere = SceneSpec::single(AnalyticShape::sphere(0.5));

SceneSpec ball(double r, const Vec3& center = Vec3::Zero()) { return SceneSpec::single(AnalyticShape::sphere(r, center)); }

std::string scene(const char* name) { return std::string(BIDIFF_SCENE_DIR) + "/" + name + ".scene"; }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bidiff_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Every regular file under root, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BIDIFF_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ImageBuffer random_image(int w, int h, std::uint64_t seed) {
  Sequence rng{RandomStream(seed)};
  ImageBuffer img(w, h, 3);
  for (auto& v : img.values()) v = static_cast<float>(rng.uniform());
  return img;
}
}  // namespace

TEST(Dataset, DefaultCounts) {
  const DatasetSpec d;
  EXPECT_EQ(d.fixed_views, 8);
  EXPECT_EQ(d.random_views, 16);
  EXPECT_EQ(d.image_size, 64);
}

TEST(Dataset, LayoutAndRingPoses) {
  DatasetSpec d;
  d.scenes = {scene("sphere")};
  d.grid_n = 16;
  d.image_size = 16;
  d.samples = 16;
  const fs::path out = scratch("layout");
  gen_dataset(d, out);
  const fs::path dir = out / "sphere";
  for (const char* f : {"sdf.grid", "colors.grid", "prior_code.grid", "prior_latent.grid"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  const MultiViewSet fixed = read_view_set(dir / "fixed");
  const MultiViewSet random = read_view_set(dir / "random");
  EXPECT_EQ(fixed.size(), 8u);
  EXPECT_EQ(random.size(), 16u);
  const auto ring = make_camera_ring(8, 30, 2.5, 40, 16, 16);
  for (std::size_t i = 0; i < ring.size(); ++i) {
    EXPECT_EQ(fixed.poses[i].azimuth, ring[i].azimuth);
    EXPECT_EQ(fixed.poses[i].elevation, ring[i].elevation);
  }
  EXPECT_EQ(read_grid((dir / "sdf.grid").string()).values(), bake_grid(load_scene(scene("sphere")), 16).values());
  fs::remove_all(out);
}

TEST(Dataset, RerunIsByteIdentical) {
  DatasetSpec d;
  d.scenes = {scene("sphere"), scene("box")};
  d.grid_n = 16;
  d.image_size = 16;
  d.samples = 16;
  d.random_views = 4;
  d.seed = 9;
  const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
  gen_dataset(d, a);
  gen_dataset(d, b);
  const auto ta = tree(a), tb = tree(b);
  EXPECT_FALSE(ta.empty());
  EXPECT_TRUE(ta == tb);
  d.seed = 10;
  const fs::path c = scratch("rerun_c");
  gen_dataset(d, c);
  EXPECT_NE(slurp(a / "sphere" / "random" / "views.bin"), slurp(c / "sphere" / "random" / "views.bin"));
  for (const auto& p : {a, b, c}) fs::remove_all(p);
}

TEST(Dataset, UnwritableOutputIsIoError) {
  DatasetSpec d;
  d.scenes = {scene("sphere")};
  const fs::path blocker = scratch("blocker");
  std::ofstream(blocker) << "file";
  try {
    gen_dataset(d, blocker / "sub");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io);
  }
  fs::remove(blocker);
}

TEST(Dataset, InvalidSpecRejected) {
  DatasetSpec d;
  d.scenes = {scene("sphere")};
  d.fixed_views = 0;
  EXPECT_THROW(d.validate(), Error);
  d.fixed_views = 8;
  d.image_size = 4;
  EXPECT_THROW(d.validate(), Error);
}

TEST(MetricIou, SelfDisjointAndNestedBalls) {
  const SdfGrid a = bake_grid(ball(0.5), 64);
  EXPECT_EQ(metric_iou(a, a), 1.0);
  const SdfGrid l = bake_grid(ball(0.3, Vec3(-0.6, 0, 0)), 64), r = bake_grid(ball(0.3, Vec3(0.6, 0, 0)), 64);
  EXPECT_EQ(metric_iou(l, r), 0.0);
  const SdfGrid b = bake_grid(ball(0.4), 64);
  EXPECT_NEAR(metric_iou(a, b), 0.512, 0.05 * 0.512);
  EXPECT_EQ(metric_iou(a, b), metric_iou(b, a));
}

TEST(MetricIou, ResolutionMismatchRejected) {
  try {
    metric_iou(bake_grid(kSphere, 16), bake_grid(kSphere, 17));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::shape_mismatch);
  }
}

TEST(MetricChamfer, SelfIsBelowVoxelScale) {
  const TriMesh m = extract_mesh(bake_grid(kSphere, 64));
  EXPECT_LT(metric_chamfer(m, m, 4000, RandomStream(1)), 2.0 / 63.0);
}

TEST(MetricChamfer, ConcentricSpheres) {
  const TriMesh a = extract_mesh(bake_grid(ball(0.5), 64)), b = extract_mesh(bake_grid(ball(0.4), 64));
  EXPECT_NEAR(metric_chamfer(a, b, 4000, RandomStream(2)), 0.1, 0.01);
}

TEST(MetricChamfer, TranslatedSphere) {
  const double delta = 0.1;
  const TriMesh a = extract_mesh(bake_grid(ball(0.5), 64));
  const TriMesh b = extract_mesh(bake_grid(ball(0.5, Vec3(delta, 0, 0)), 64));
  const double c = metric_chamfer(a, b, 4000, RandomStream(3));
  EXPECT_NEAR(c, delta, 0.15 * delta);
}

TEST(MetricChamfer, Symmetric) {
  const TriMesh a = extract_mesh(bake_grid(ball(0.5), 32)), b = extract_mesh(bake_grid(load_scene(scene("box")), 32));
  EXPECT_EQ(metric_chamfer(a, b, 1000, RandomStream(4)), metric_chamfer(b, a, 1000, RandomStream(4)));
}

TEST(MetricChamfer, EmptyMeshRejected) {
  const TriMesh a = extract_mesh(bake_grid(kSphere, 16));
  EXPECT_THROW(metric_chamfer(a, TriMesh{}, 10, RandomStream(5)), Error);
}

TEST(MetricPsnr, IdenticalIsInfinite) {
  const ImageBuffer a = random_image(8, 8, 1);
  EXPECT_EQ(metric_psnr(a, a), std::numeric_limits<double>::infinity());
}

TEST(MetricPsnr, UniformOffset) {
  EXPECT_NEAR(metric_psnr(ImageBuffer(8, 8, 3, 0.0f), ImageBuffer(8, 8, 3, 0.1f)), 20.0, 1e-5);
}

TEST(MetricPsnr, MatchesBruteForce) {
  const ImageBuffer a = random_image(13, 7, 2), b = random_image(13, 7, 3);
  double s = 0.0;
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 13; ++x)
      for (int c = 0; c < 3; ++c) {
        const double d = static_cast<double>(a.at(x, y, c)) - b.at(x, y, c);
        s += d * d;
      }
  EXPECT_NEAR(metric_psnr(a, b), 10.0 * std::log10(1.0 / (s / (13 * 7 * 3))), 1e-6);
  EXPECT_EQ(metric_psnr(a, b), metric_psnr(b, a));
}

TEST(MetricPsnr, ShapeMismatchRejected) {
  EXPECT_THROW(metric_psnr(ImageBuffer(4, 4, 3), ImageBuffer(4, 5, 3)), Error);
}

TEST(Consistency, SelfRendersReachCeilingAndDiscriminate) {
  const SdfGrid sdf = bake_grid(kSphere, 32);
  const ColorGrid colors = bake_color_grid(kSphere, 32);
  const auto poses = make_camera_ring(4, 30, 2.5, 40, 32, 32);
  RenderConfig rc;
  rc.n_samples = 128;
  const MultiViewSet own = render_views(field_from_grid(sdf, colors, SDensityParams{}), poses, rc);
  const double self = metric_multiview_consistency(own, sdf, colors, SDensityParams{}, rc);
  EXPECT_GT(self, 35.0);
  const SceneSpec box = load_scene(scene("box"));
  const MultiViewSet other =
      render_views(field_from_grid(bake_grid(box, 32), bake_color_grid(box, 32), SDensityParams{}), poses, rc);
  EXPECT_LT(metric_multiview_consistency(other, sdf, colors, SDensityParams{}, rc), self - 10.0);
}

TEST(Files, ViewSetRoundTrip) {
  MultiViewSet v;
  v.poses = make_camera_ring(3, 30, 2.5, 40, 9, 8);
  for (int i = 0; i < 3; ++i) v.images.push_back(random_image(9, 8, 10 + i));
  const fs::path dir = scratch("views");
  write_view_set(dir, v);
  const MultiViewSet r = read_view_set(dir);
  ASSERT_EQ(r.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.images[i].values(), v.images[i].values());
    EXPECT_EQ(r.poses[i].azimuth, v.poses[i].azimuth);
    EXPECT_EQ(r.poses[i].fov_y, v.poses[i].fov_y);
  }
  fs::remove_all(dir);
}

TEST(Files, GridAndFieldRoundTrip) {
  const fs::path dir = scratch("grids");
  fs::create_directories(dir);
  const ColorGrid c = bake_color_grid(kSphere, 12);
  write_grid((dir / "c.grid").string(), c);
  EXPECT_EQ(read_grid((dir / "c.grid").string()).values(), c.values());
  std::vector<bool> mask(8 * 8 * 8);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = i % 3 != 0;
  HiResField f(8, mask);
  Sequence rng{RandomStream(6)};
  for (auto& v : f.density.values()) v = static_cast<float>(rng.uniform(0.0, 5.0));
  for (auto& v : f.colors.values()) v = static_cast<float>(rng.uniform());
  f.project();
  write_field((dir / "f.grid").string(), f);
  const HiResField g = read_field((dir / "f.grid").string());
  EXPECT_EQ(g.density.values(), f.density.values());
  EXPECT_EQ(g.colors.values(), f.colors.values());
  EXPECT_EQ(g.mask, f.mask);
  fs::remove_all(dir);
}

TEST(Files, CorruptGridIsParseError) {
  const fs::path p = scratch("bad.grid");
  std::ofstream(p) << "not a grid";
  try {
    read_grid(p.string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::parse);
  }
  fs::remove(p);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("sample --out /tmp/x"), 2);
  EXPECT_EQ(run_cli("sample --scene /nonexistent.scene --out " + scratch("cli_missing").string()), 1);
}

TEST(Cli, RenderWritesViews) {
  const fs::path out = scratch("cli_render");
  ASSERT_EQ(run_cli("render --in " + scene("sphere") + " --out " + out.string() + " --views 2 --size 16"), 0);
  EXPECT_EQ(read_view_set(out).size(), 2u);
  fs::remove_all(out);
}
