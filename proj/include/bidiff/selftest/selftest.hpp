#pragma once

// Invariant suite run by `bidiff selftest` and by the test binaries.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bidiff/core/random.hpp"
#include "bidiff/diffusion/schedule.hpp"
#include "bidiff/distill/distill.hpp"
#include "bidiff/eval/metrics.hpp"
#include "bidiff/fusion/projection.hpp"
#include "bidiff/geometry/mesh.hpp"
#include "bidiff/geometry/scene.hpp"
#include "bidiff/io/grid_file.hpp"
#include "bidiff/render/volume.hpp"
#include "bidiff/sampler/sampler.hpp"

namespace bidiff {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace check {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

/// forward_noise then predict_x0 with the same noise, random sizes and steps.
inline CheckResult noise_roundtrip(int trials = 10000) {
  Sequence rng(RandomStream(11).fork("roundtrip"));
  double worst = 0.0;
  for (const auto kind : {ScheduleKind::cosine, ScheduleKind::linear_beta}) {
    const NoiseSchedule s = make_schedule(kind, 1000);
    for (int k = 0; k < trials / 2; ++k) {
      const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.steps())));
      Tensor x0(1 + rng.below(8)), eps(x0.size());
      for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = static_cast<float>(rng.normal()), eps[i] = static_cast<float>(rng.normal());
      const Tensor back = predict_x0(forward_noise(x0, t, eps, s), eps, t, s);
      for (std::size_t i = 0; i < x0.size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(back[i]) - x0[i]));
    }
  }
  return {"noise_roundtrip", worst <= 1e-5, "max |x0' - x0| = " + fmt(worst)};
}

/// gamma = 0 and 1 reproduce the unconditional / conditional branch bitwise.
inline CheckResult guidance_identities() {
  Sequence rng(RandomStream(12));
  bool ok = true;
  for (int k = 0; k < 100 && ok; ++k) {
    Tensor eu(64), ec(64);
    for (std::size_t i = 0; i < eu.size(); ++i) eu[i] = static_cast<float>(rng.normal() * 1e3), ec[i] = static_cast<float>(rng.normal() * 1e-3);
    ok = guidance_combine(eu, ec, 0.0) == eu && guidance_combine(eu, ec, 1.0) == ec;
  }
  return {"guidance_identities", ok, ok ? "bitwise" : "mismatch"};
}

/// Homogeneous slab of density sigma over [a, b]: T = exp(-sigma L).
inline CheckResult slab_transmittance() {
  const double sigma = 2.0, a = -0.5, b = 0.5;
  FunctionField slab{[&](const Vec3& p) { return p.z() >= a && p.z() <= b ? sigma : 0.0; }, nullptr};
  const Ray ray{Vec3(0, 0, -2), Vec3(0, 0, 1)};
  const RaySample s = render_ray(slab, ray, 256, 0.0, 4.0);
  const double want = std::exp(-sigma * (b - a));
  const double rel = std::abs(s.transmittance - want) / want;
  return {"slab_transmittance", rel < 0.01, "relative error " + fmt(rel)};
}

/// sum(w) + T_final == 1 on random fields (up to double rounding of the sum).
inline CheckResult weight_partition() {
  Sequence rng(RandomStream(13));
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const double amp = rng.uniform(0.1, 50.0), freq = rng.uniform(1.0, 8.0);
    FunctionField f{[&](const Vec3& p) { return amp * (1.0 + std::sin(freq * p.z())); }, nullptr};
    RayTrace tr;
    const RaySample s = render_ray(f, Ray{Vec3(0, 0, -2), Vec3(0, 0, 1)}, 2 + static_cast<int>(rng.below(200)), 0.5, 3.5,
                                   nullptr, &tr);
    double sum = 0.0;
    for (double w : tr.weights) sum += w;
    worst = std::max(worst, std::abs(sum + s.transmittance - 1.0));
  }
  return {"weight_partition", worst <= 1e-12, "max |sum w + T - 1| = " + fmt(worst)};
}

inline CheckResult density_peak() {
  bool ok = true;
  for (double s : {1.0, 7.0, 20.0, 64.0, 1000.0}) ok = ok && sdf_to_density(0.0, SDensityParams{s}) == s / 4.0;
  return {"density_peak", ok, ok ? "phi_s(0) == s/4" : "peak differs from s/4"};
}

/// Straightforward re-implementation of the per-point view statistics.
inline FeatureVolume naive_aggregate(int n, const MultiViewSet& views) {
  const int c = views.images.front().channels();
  FeatureVolume out(n, 2 * c + 1);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const Vec3 p(-1.0 + 2.0 * x / (n - 1), -1.0 + 2.0 * y / (n - 1), -1.0 + 2.0 * z / (n - 1));
        std::vector<std::vector<double>> seen;
        for (std::size_t v = 0; v < views.size(); ++v) {
          const CameraPose& cam = views.poses[v];
          const double az = cam.azimuth * std::numbers::pi / 180.0, el = cam.elevation * std::numbers::pi / 180.0;
          const Vec3 eye = cam.radius * Vec3(std::cos(el) * std::cos(az), std::sin(el), std::cos(el) * std::sin(az));
          const Vec3 fwd = -eye.normalized();
          const Vec3 right = fwd.cross(Vec3::UnitY()).normalized();
          const Vec3 up = right.cross(fwd);
          const double depth = (p - eye).dot(fwd);
          if (depth <= 1e-9) continue;
          const double ty = std::tan(cam.fov_y * std::numbers::pi / 360.0), tx = ty * cam.width / cam.height;
          const double u = ((p - eye).dot(right) / (depth * tx) + 1.0) * 0.5 * cam.width - 0.5;
          const double vv = (1.0 - (p - eye).dot(up) / (depth * ty)) * 0.5 * cam.height - 0.5;
          if (u < -0.5 || u >= cam.width - 0.5 || vv < -0.5 || vv >= cam.height - 0.5) continue;
          const ImageBuffer& img = views.images[v];
          const double cu = std::clamp(u, 0.0, img.width() - 1.0), cv = std::clamp(vv, 0.0, img.height() - 1.0);
          const int x0 = std::min(static_cast<int>(std::floor(cu)), img.width() - 2);
          const int y0 = std::min(static_cast<int>(std::floor(cv)), img.height() - 2);
          const double fx = cu - x0, fy = cv - y0;
          std::vector<double> f(c);
          for (int k = 0; k < c; ++k) {
            f[k] = (1 - fy) * ((1 - fx) * img.at(x0, y0, k) + fx * img.at(x0 + 1, y0, k)) +
                   fy * ((1 - fx) * img.at(x0, y0 + 1, k) + fx * img.at(x0 + 1, y0 + 1, k));
          }
          seen.push_back(f);
        }
        if (seen.empty()) continue;
        for (int k = 0; k < c; ++k) {
          double m = 0.0, var = 0.0;
          for (const auto& f : seen) m += f[k];
          m /= seen.size();
          for (const auto& f : seen) var += (f[k] - m) * (f[k] - m);
          out.at(x, y, z, k) = static_cast<float>(m);
          out.at(x, y, z, c + k) = static_cast<float>(var / seen.size());
        }
        out.at(x, y, z, 2 * c) = 1.0f;
      }
  return out;
}

/// View aggregation against the naive loop on random 8-view inputs, N = 16.
inline CheckResult aggregation_naive(int trials = 3) {
  double worst = 0.0;
  for (int k = 0; k < trials; ++k) {
    const RandomStream rs = RandomStream(14).fork(static_cast<std::uint64_t>(k));
    MultiViewSet views;
    views.poses = random_poses(rs.fork("poses"), 8, 16 + 4 * k);
    Sequence px(rs.fork("pixels"));
    for (const auto& p : views.poses) {
      ImageBuffer img(p.width, p.height, 3);
      for (auto& v : img.values()) v = static_cast<float>(px.uniform());
      views.images.push_back(std::move(img));
    }
    const FeatureVolume a = aggregate_mean_var(16, views), b = naive_aggregate(16, views);
    for (std::size_t i = 0; i < a.values().size(); ++i) worst = std::max(worst, std::abs(static_cast<double>(a.values()[i]) - b.values()[i]));
  }
  return {"aggregation_naive", worst <= 1e-6, "max deviation " + fmt(worst)};
}

/// Analytic compositing gradient against central differences (squared loss).
inline CheckResult compositing_gradient(int params = 100) {
  const int n = 8;
  HiResField f(n, std::vector<bool>(static_cast<std::size_t>(n) * n * n, true));
  Sequence rng(RandomStream(15));
  for (auto& v : f.density.values()) v = static_cast<float>(rng.uniform(0.2, 3.0));
  for (auto& v : f.colors.values()) v = static_cast<float>(rng.uniform(0.1, 0.9));
  RenderBatch batch;
  batch.n_samples = 24;
  batch.poses = random_poses(RandomStream(16), 2, 8);
  for (std::size_t i = 0; i < batch.poses.size(); ++i) {
    ImageBuffer t(8, 8, 3);
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform());
    batch.targets.push_back(std::move(t));
  }
  FieldGradient g(f);
  grad_render_loss(f, batch, PixelLoss::squared, &g);
  const std::size_t nd = f.density.values().size(), nc = f.colors.values().size();
  double worst = 0.0;
  for (int k = 0; k < params; ++k) {
    const std::size_t i = rng.below(nd + nc);
    float& p = i < nd ? f.density.values()[i] : f.colors.values()[i - nd];
    const double analytic = i < nd ? g.density[i] : g.color[i - nd];
    const float keep = p;
    const double h = 1e-3;
    p = static_cast<float>(keep + h);
    const double hp = static_cast<double>(p) - keep;
    const double lp = grad_render_loss(f, batch, PixelLoss::squared, nullptr);
    p = static_cast<float>(keep - h);
    const double hm = keep - static_cast<double>(p);
    const double lm = grad_render_loss(f, batch, PixelLoss::squared, nullptr);
    p = keep;
    const double fd = (lp - lm) / (hp + hm);
    worst = std::max(worst, std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6}));
  }
  return {"compositing_gradient", worst <= 1e-3, "worst relative error " + fmt(worst) + " over " + std::to_string(params)};
}

/// sds_refine with a score that returns the injected noise leaves the field bitwise unchanged.
inline CheckResult refine_noop() {
  const int n = 12;
  std::vector<bool> mask(static_cast<std::size_t>(n) * n * n);
  const Grid3<float> lattice(n, 1);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = lattice.position(i).norm() < 0.7;
  HiResField f(n, mask);
  Sequence rng(RandomStream(17));
  for (std::size_t i = 0; i < mask.size(); ++i) f.density.values()[i] = mask[i] ? static_cast<float>(rng.uniform(0.0, 4.0)) : 0.0f;
  for (auto& v : f.colors.values()) v = static_cast<float>(rng.uniform());
  RefineConfig cfg;
  cfg.iterations = 5;
  cfg.image_size = 8;
  cfg.n_samples = 16;
  const ScoreSource exact = [&](const ScoreQuery& q) { return refine_noise(cfg, q.iteration, q.noisy.size()); };
  const HiResField out = sds_refine(f, exact, cfg);
  const bool ok = out.density.values() == f.density.values() && out.colors.values() == f.colors.values();
  return {"refine_zero_residual_noop", ok, ok ? "bitwise identical" : "field changed"};
}

inline CheckResult metric_symmetry() {
  SceneSpec a = SceneSpec::single(AnalyticShape::sphere(0.5));
  SceneSpec b = SceneSpec::single(AnalyticShape::sphere(0.4, Vec3(0.1, 0, 0)));
  const SdfGrid ga = bake_grid(a, 24), gb = bake_grid(b, 24);
  const TriMesh ma = extract_mesh(ga), mb = extract_mesh(gb);
  const RandomStream rs(18);
  const bool ok = metric_iou(ga, gb) == metric_iou(gb, ga) &&
                  std::abs(metric_chamfer(ma, mb, 500, rs) - metric_chamfer(mb, ma, 500, rs)) < 1e-12 &&
                  metric_iou(ga, ga) == 1.0;
  return {"metric_symmetry", ok, ok ? "IoU and Chamfer symmetric" : "asymmetric metric"};
}

/// Outward-facing triangles give a positive enclosed volume.
inline CheckResult mesh_orientation() {
  const SdfGrid g = bake_grid(SceneSpec::single(AnalyticShape::sphere(0.5)), 32);
  const TriMesh m = extract_mesh(g);
  double vol = 0.0;
  for (const auto& t : m.triangles) vol += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]])) / 6.0;
  const double want = 4.0 / 3.0 * std::numbers::pi * 0.125;
  return {"mesh_orientation", vol > 0.0 && std::abs(vol - want) / want < 0.05, "signed volume " + fmt(vol)};
}

/// Renders do not depend on the worker count.
inline CheckResult thread_invariance() {
  const SceneSpec sc = SceneSpec::single(AnalyticShape::sphere(0.5));
  const SdfGrid sdf = bake_grid(sc, 16);
  const ColorGrid col = bake_color_grid(sc, 16);
  const auto field = field_from_grid(sdf, col, SDensityParams{});
  const CameraPose cam{30.0, 20.0, 2.5, 40.0, 24, 24};
  RenderConfig rc;
  rc.n_samples = 32;
  const char* old = std::getenv("BIDIFF_THREADS");
  const std::string keep = old ? old : "";
  setenv("BIDIFF_THREADS", "1", 1);
  const ImageBuffer one = render_view(field, cam, rc).rgb;
  setenv("BIDIFF_THREADS", "4", 1);
  const ImageBuffer four = render_view(field, cam, rc).rgb;
  if (old) setenv("BIDIFF_THREADS", keep.c_str(), 1); else unsetenv("BIDIFF_THREADS");
  const bool ok = one.values() == four.values();
  return {"thread_invariance", ok, ok ? "1 vs 4 workers bitwise" : "render depends on worker count"};
}

/// Two small sampler runs with the same config agree bitwise.
inline CheckResult sampler_reproducible() {
  SamplerConfig cfg;
  cfg.grid_n = 16;
  cfg.views = 4;
  cfg.image_size = 16;
  cfg.steps = 6;
  cfg.guide_samples = 16;
  cfg.final_samples = 16;
  cfg.prior.coarse_n = 8;
  cfg.set_seed(5);
  const SceneSpec sc = SceneSpec::single(AnalyticShape::sphere(0.5));
  const SamplerResult a = run_sampler(cfg, sc), b = run_sampler(cfg, sc);
  const bool ok = a.grid.values() == b.grid.values() && flatten_views(a.views) == flatten_views(b.views) &&
                  a.manifest.to_string() == b.manifest.to_string();
  return {"sampler_reproducible", ok, ok ? "grid, views and manifest identical" : "runs differ"};
}

/// Grid container round trip, single and multi-channel.
inline CheckResult grid_roundtrip(const std::string& dir) {
  Grid3<float> g(6, 4);
  Sequence rng(RandomStream(19));
  for (auto& v : g.values()) v = static_cast<float>(rng.normal());
  const std::string path = dir + "/selftest_roundtrip.grid";
  write_grid(path, g);
  const Grid3<float> back = read_grid(path);
  std::remove(path.c_str());
  const bool ok = back.same_shape(g) && back.values() == g.values();
  return {"grid_roundtrip", ok, ok ? "bitwise" : "grid changed on disk"};
}

/// Small distillation twice: identical fields; the field file round-trips.
inline CheckResult distill_reproducible(const std::string& dir) {
  const SdfGrid sdf = bake_grid(SceneSpec::single(AnalyticShape::sphere(0.5)), 16);
  const ColorGrid col(16, 3, 0.6f);
  const SourceField src{&sdf, &col, SDensityParams{}};
  DistillConfig cfg;
  cfg.hires_n = 16;
  cfg.iterations = 10;
  cfg.image_size = 8;
  cfg.n_samples = 16;
  const auto mask = occupancy_bound(field_from_grid(sdf, col, src.density), cfg.hires_n, cfg.threshold);
  const HiResField a = distill(src, mask, cfg), b = distill(src, mask, cfg);
  const std::string path = dir + "/selftest_field.grid";
  write_field(path, a);
  const HiResField c = read_field(path);
  std::remove(path.c_str());
  const bool same = a.density.values() == b.density.values() && a.colors.values() == b.colors.values();
  const bool disk = c.density.values() == a.density.values() && c.colors.values() == a.colors.values() && c.mask == a.mask;
  return {"distill_reproducible", same && disk,
          same ? (disk ? "runs and file round trip identical" : "field file round trip differs") : "runs differ"};
}

}  // namespace check

/// Runs every check, printing one line each; returns true when all pass.
inline bool run_selftest(std::ostream& out, const std::string& scratch_dir) {
  const std::vector<std::function<CheckResult()>> checks = {
      [] { return check::noise_roundtrip(); },
      [] { return check::guidance_identities(); },
      [] { return check::slab_transmittance(); },
      [] { return check::weight_partition(); },
      [] { return check::density_peak(); },
      [] { return check::aggregation_naive(); },
      [] { return check::compositing_gradient(); },
      [] { return check::refine_noop(); },
      [] { return check::metric_symmetry(); },
      [] { return check::mesh_orientation(); },
      [] { return check::thread_invariance(); },
      [] { return check::sampler_reproducible(); },
      [&] { return check::grid_roundtrip(scratch_dir); },
      [&] { return check::distill_reproducible(scratch_dir); },
  };
  bool all = true;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& c : checks) {
    CheckResult r;
    try {
      r = c();
    } catch (const std::exception& e) {
      r = {"(exception)", false, e.what()};
    }
    all = all && r.pass;
    out << (r.pass ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << (all ? "selftest passed" : "selftest FAILED") << " in " << check::fmt(secs) << " s\n";
  return all;
}

}  // namespace bidiff
