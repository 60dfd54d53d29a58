#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "bidiff/geometry/grid.hpp"
#include "bidiff/geometry/mesh.hpp"
#include "bidiff/geometry/scene.hpp"
#include "bidiff/geometry/scene_io.hpp"

using namespace bidiff;

namespace {
SceneSpec sphere(double r = 0.5) { return SceneSpec::single(AnalyticShape::sphere(r)); }

// Nearest point on a densely sampled box surface.
double brute_box_distance(const Vec3& h, const Vec3& p, int res) {
  double best = 1e9;
  for (int face = 0; face < 6; ++face) {
    const int axis = face / 2;
    const double sign = face % 2 ? 1.0 : -1.0;
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    for (int i = 0; i <= res; ++i)
      for (int j = 0; j <= res; ++j) {
        Vec3 q;
        q[axis] = sign * h[axis];
        q[a1] = -h[a1] + 2.0 * h[a1] * i / res;
        q[a2] = -h[a2] + 2.0 * h[a2] * j / res;
        best = std::min(best, (q - p).norm());
      }
  }
  return best;
}
}  // namespace

TEST(EvalSdf, SphereCenterAndSurface) {
  EXPECT_DOUBLE_EQ(eval_sdf(sphere(), Vec3(0, 0, 0)), -0.5);
  EXPECT_DOUBLE_EQ(eval_sdf(sphere(), Vec3(0.5, 0, 0)), 0.0);
}

TEST(EvalSdf, BoxMatchesBruteForceNearestPoint) {
  const Vec3 h(0.3, 0.3, 0.3);
  const SceneSpec box = SceneSpec::single(AnalyticShape::box(h));
  const Vec3 p(0.5, 0.5, 0.5);
  // Corner region: the nearest surface point is the corner, which the lattice hits exactly.
  EXPECT_NEAR(eval_sdf(box, p), brute_box_distance(h, p, 600), 1e-4);
  const Vec3 q(0.45, 0.1, -0.2);
  EXPECT_NEAR(eval_sdf(box, q), brute_box_distance(h, q, 600), 1e-3);
}

TEST(EvalSdf, CsgDifference) {
  SceneSpec s;
  s.parts = {AnalyticShape::sphere(0.5), AnalyticShape::sphere(0.3)};
  s.csg = CsgNode::combine(CsgNode::Op::difference, {CsgNode::leaf(0), CsgNode::leaf(1)});
  s.palette[0] = Rgb(1, 0, 0);
  EXPECT_GT(eval_sdf(s, Vec3::Zero()), 0.0);
  EXPECT_LT(eval_sdf(s, Vec3(0.4, 0, 0)), 0.0);
}

TEST(BakeGrid, CenterVoxelAndLayout) {
  const SdfGrid g = bake_grid(sphere(), 33);
  EXPECT_NEAR(g.at(16, 16, 16), -0.5, 1e-6);
  EXPECT_EQ(g.index(1, 2, 3), 1u + 33u * (2u + 33u * 3u));
}

TEST(BakeGrid, ResolutionOf128) {
  const SdfGrid g = bake_grid(sphere(), 128);
  EXPECT_EQ(g.values().size(), 128u * 128u * 128u);
}

TEST(BakeGrid, NegativeVoxelCountMatchesBallVolume) {
  const SdfGrid g = bake_grid(sphere(), 33);
  std::size_t neg = 0;
  for (float v : g.values()) neg += v < 0.0f;
  const double h = 2.0 / 32.0;
  const double want = 4.0 / 3.0 * std::numbers::pi * 0.125 / (h * h * h);
  EXPECT_NEAR(static_cast<double>(neg) / want, 1.0, 0.05);
}

TEST(BakeGrid, CleanGridsRespectDiameterBound) {
  const SdfGrid g = bake_grid(load_scene(std::string(BIDIFF_SCENE_DIR) + "/snowman.scene"), 24);
  for (float v : g.values()) {
    ASSERT_TRUE(std::isfinite(v));
    ASSERT_LE(std::abs(v), 2.0 * std::sqrt(3.0));
  }
}

TEST(Trilinear, LatticeIdentityConstantAndRamp) {
  const SdfGrid g = bake_grid(sphere(), 9);
  EXPECT_DOUBLE_EQ(g.sample(g.position(3, 4, 5)), g.at(3, 4, 5));
  const SdfGrid c(9, 1, std::vector<float>(729, 0.25f));
  EXPECT_DOUBLE_EQ(c.sample(Vec3(0.123, -0.77, 0.4)), 0.25);
  SdfGrid ramp(9, 1);
  for (std::size_t i = 0; i < ramp.point_count(); ++i) ramp.values()[i] = static_cast<float>(ramp.position(i).x());
  const Vec3 a = ramp.position(2, 3, 4), b = ramp.position(3, 3, 4);
  EXPECT_NEAR(ramp.sample(0.5 * (a + b)), 0.5 * (a.x() + b.x()), 1e-7);
}

TEST(Mesh, AllPositiveGridIsEmpty) {
  const SdfGrid g(8, 1, std::vector<float>(512, 1.0f));
  EXPECT_TRUE(extract_mesh(g).empty());
}

TEST(Mesh, SphereVertexRadii) {
  const SdfGrid g = bake_grid(sphere(), 65);
  const TriMesh m = extract_mesh(g);
  ASSERT_FALSE(m.empty());
  const double h = g.spacing();
  for (const auto& v : m.vertices) ASSERT_NEAR(v.norm(), 0.5, 2.0 * h);
}

TEST(Mesh, BoxSurfaceArea) {
  const Vec3 h(0.4, 0.3, 0.4);
  const SdfGrid g = bake_grid(SceneSpec::single(AnalyticShape::box(h)), 64);
  const double want = 8.0 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
  EXPECT_NEAR(extract_mesh(g).area() / want, 1.0, 0.10);
}

TEST(Mesh, IndicesValidAndNoDegenerateTriangles) {
  const TriMesh m = extract_mesh(bake_grid(load_scene(std::string(BIDIFF_SCENE_DIR) + "/ring.scene"), 32));
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    for (int k = 0; k < 3; ++k) ASSERT_LT(static_cast<std::size_t>(m.triangles[t][k]), m.vertices.size());
    ASSERT_GT(m.triangle_area(t), 0.0);
  }
}

TEST(Mesh, TrianglesFaceOutward) {
  const TriMesh m = extract_mesh(bake_grid(sphere(), 32));
  double vol = 0.0;
  int outward = 0;
  for (const auto& t : m.triangles) {
    const Vec3 &a = m.vertices[t[0]], &b = m.vertices[t[1]], &c = m.vertices[t[2]];
    vol += a.dot(b.cross(c)) / 6.0;
    outward += (b - a).cross(c - a).dot((a + b + c) / 3.0) > 0.0;
  }
  EXPECT_NEAR(vol, 4.0 / 3.0 * std::numbers::pi * 0.125, 0.02);
  EXPECT_EQ(outward, static_cast<int>(m.triangles.size()));
}

TEST(Mesh, ObjRoundTrip) {
  const TriMesh m = extract_mesh(bake_grid(sphere(), 16));
  const std::string path = ::testing::TempDir() + "/sphere.obj";
  write_obj(path, m);
  const TriMesh back = read_obj(path);
  ASSERT_EQ(back.triangles, m.triangles);
  ASSERT_EQ(back.vertices.size(), m.vertices.size());
  for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_LT((back.vertices[i] - m.vertices[i]).norm(), 1e-6);
}

TEST(SceneIo, LoadsShippedScenes) {
  for (const char* name : {"sphere", "box", "snowman", "capsule", "ring"}) {
    const SceneSpec s = load_scene(std::string(BIDIFF_SCENE_DIR) + "/" + name + ".scene");
    EXPECT_EQ(s.name, name);
    EXPECT_NO_THROW(s.validate());
  }
}

TEST(SceneIo, RejectsUnknownKind) {
  try {
    scene_from_keyvalues(KeyValues::parse("part.0.kind = cone\n"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::parse);
  }
}

TEST(Scene, InvalidPartsRejected) {
  EXPECT_THROW(SceneSpec::single(AnalyticShape::sphere(-0.1)).validate(), Error);
  EXPECT_THROW(SceneSpec{}.validate(), Error);
}
