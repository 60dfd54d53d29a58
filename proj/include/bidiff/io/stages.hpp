#pragma once

// Pipeline stages as run by the command-line tool. Every stage writes a
// manifest that, passed back as its config, reproduces the outputs byte for
// byte. Wall-clock numbers go to separate timings files.

#include <filesystem>
#include <string>

#include "bidiff/core/error.hpp"
#include "bidiff/core/keyvalue.hpp"
#include "bidiff/distill/distill.hpp"
#include "bidiff/eval/metrics.hpp"
#include "bidiff/geometry/scene_io.hpp"
#include "bidiff/io/run_io.hpp"
#include "bidiff/sampler/sampler.hpp"

namespace bidiff {

/// Manifest path belonging to a single-file output.
inline fs::path sidecar(const fs::path& file, const std::string& what) {
  return fs::path(file.string() + "." + what + ".txt");
}

inline SamplerResult sample_stage(const std::string& scene_path, const KeyValues& config, const fs::path& out) {
  const SceneSpec scene = load_scene(scene_path);
  const SamplerConfig cfg = SamplerConfig::from_keyvalues(config);
  SamplerResult r = run_sampler(cfg, scene);
  KeyValues extra;
  extra.set("run.scene", scene_path);
  extra.set("run.scene_name", scene.name);
  write_run(out, r, extra);
  return r;
}

/// Source run -> bounded, distilled hi-res field at `out`.
inline HiResField distill_stage(const fs::path& run_dir, const KeyValues& config, const fs::path& out,
                                DistillReport* report = nullptr) {
  const RunFiles run = read_run(run_dir);
  const DistillConfig cfg = DistillConfig::from_keyvalues(config);
  const SDensityParams density{run.manifest.get_double("render.s", 20.0)};
  const SourceField src{&run.sdf, &run.colors, density};
  const auto t0 = std::chrono::steady_clock::now();
  const auto mask = occupancy_bound(field_from_grid(run.sdf, run.colors, density), cfg.hires_n, cfg.threshold);
  const double bound_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  DistillReport rep;
  HiResField f;
  try {
    f = distill(src, mask, cfg, &rep);
  } catch (const DivergenceError& e) {
    write_field(out.string() + ".diverged", e.state());
    throw;
  }
  if (!out.parent_path().empty()) ensure_dir(out.parent_path());
  write_field(out.string(), f);

  KeyValues m = cfg.to_keyvalues();
  m.set("source.run", run_dir.string());
  for (const char* key : {"run.scene", "sampler.label", "grid.n", "render.s"}) {
    if (run.manifest.has(key)) m.set(std::string("source.") + key, run.manifest.get_string(key));
  }
  PipelineReport pr;
  pr.distill = rep;
  const KeyValues results = pr.to_keyvalues();
  for (const auto& [k, v] : results.entries()) {
    if (k.rfind("result.distill.", 0) == 0) m.set(k, v);
  }
  m.save(sidecar(out, "manifest").string());
  KeyValues timings;
  timings.set("bound.seconds", bound_seconds);
  timings.set("distill.seconds", rep.seconds);
  timings.save(sidecar(out, "timings").string());
  if (report) *report = rep;
  return f;
}

/// Oracle score for a distilled field: the clean target is the scene the
/// field's source run was sampled from, at the run's resolution and label.
struct RefineReference {
  SdfGrid sdf;
  ColorGrid colors;
  SDensityParams density;
};

inline RefineReference refine_reference(const KeyValues& field_manifest) {
  const std::string scene_path = field_manifest.get_string("source.run.scene");
  const SceneSpec scene = load_scene(scene_path);
  const int n = static_cast<int>(field_manifest.get_int("source.grid.n", 32));
  const std::string label = field_manifest.get_string("source.sampler.label", "default");
  return {bake_grid(scene, n), bake_color_grid(scene, n, label), SDensityParams{field_manifest.get_double("source.render.s", 20.0)}};
}

inline HiResField refine_stage(const fs::path& field_path, const KeyValues& config, const fs::path& out,
                               RefineReport* report = nullptr) {
  const HiResField init = read_field(field_path.string());
  const KeyValues fm = KeyValues::load(sidecar(field_path, "manifest").string());
  RefineConfig cfg = RefineConfig::from_keyvalues(config);
  if (!config.has("refine.label")) cfg.label = fm.get_string("source.sampler.label", cfg.label);
  const RefineReference ref = refine_reference(fm);
  const ScoreSource score = oracle_score(field_from_grid(ref.sdf, ref.colors, ref.density), cfg);
  RefineReport rep;
  const HiResField f = sds_refine(init, score, cfg, &rep);
  if (!out.parent_path().empty()) ensure_dir(out.parent_path());
  write_field(out.string(), f);

  KeyValues m = cfg.to_keyvalues();
  m.set("source.field", field_path.string());
  for (const auto& [k, v] : fm.entries()) {
    if (k.rfind("source.", 0) == 0 && k != "source.field") m.set(k, v);
  }
  m.set("result.refine.iterations", rep.iterations);
  m.set("result.refine.init_similarity", rep.init_similarity);
  double mean_residual = 0.0;
  for (double r : rep.residual) mean_residual += r;
  m.set("result.refine.mean_residual", rep.residual.empty() ? 0.0 : mean_residual / rep.residual.size());
  m.save(sidecar(out, "manifest").string());
  KeyValues timings;
  timings.set("refine.seconds", rep.seconds);
  timings.save(sidecar(out, "timings").string());
  if (report) *report = rep;
  return f;
}

struct RenderRequest {
  int views = 8;
  int image_size = 64;
  int samples = 64;
  double elevation = 30.0;
  double camera_radius = 2.5;
  double fov_y = 40.0;
  double s_density = 20.0;
  std::string label = "default";
  std::uint64_t seed = 0;

  KeyValues to_keyvalues() const {
    KeyValues kv;
    kv.set("render.views", views);
    kv.set("render.image_size", image_size);
    kv.set("render.samples", samples);
    kv.set("camera.elevation", elevation);
    kv.set("camera.radius", camera_radius);
    kv.set("camera.fov_y", fov_y);
    kv.set("render.s", s_density);
    kv.set("render.label", label);
    kv.set("render.seed", seed);
    return kv;
  }

  static RenderRequest from_keyvalues(const KeyValues& kv) {
    RenderRequest r;
    r.views = static_cast<int>(kv.get_int("render.views", r.views));
    r.image_size = static_cast<int>(kv.get_int("render.image_size", r.image_size));
    r.samples = static_cast<int>(kv.get_int("render.samples", r.samples));
    r.elevation = kv.get_double("camera.elevation", r.elevation);
    r.camera_radius = kv.get_double("camera.radius", r.camera_radius);
    r.fov_y = kv.get_double("camera.fov_y", r.fov_y);
    r.s_density = kv.get_double("render.s", r.s_density);
    r.label = kv.get_string("render.label", r.label);
    r.seed = kv.get_u64("render.seed", r.seed);
    require(r.views >= 1 && r.image_size >= 8 && r.samples >= 2, Errc::invalid_argument, "render settings out of range");
    return r;
  }
};

namespace detail {
template <RadianceField Field>
void write_renders(const Field& field, const RenderRequest& req, const fs::path& out) {
  ensure_dir(out);
  RenderConfig rc;
  rc.n_samples = req.samples;
  rc.seed = req.seed;
  const auto poses = make_camera_ring(req.views, req.elevation, req.camera_radius, req.fov_y, req.image_size, req.image_size);
  MultiViewSet set;
  set.poses = poses;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const RenderOutput r = render_view(field, poses[i], rc, i);
    char name[48];
    std::snprintf(name, sizeof name, "depth_%02zu.pgm", i);
    write_pgm16((out / name).string(), r.depth, rc.interval(poses[i]).second);
    std::snprintf(name, sizeof name, "transmittance_%02zu.pgm", i);
    write_pgm16((out / name).string(), r.transmittance, 1.0);
    set.images.push_back(r.rgb);
  }
  write_view_set(out, set);
}
}  // namespace detail

/// Renders a scene file, a run directory, or a field file on a camera ring.
/// Depth PGMs are scaled by the far plane, transmittance by 1.
inline void render_stage(const std::string& input, const KeyValues& config, const fs::path& out) {
  const RenderRequest req = RenderRequest::from_keyvalues(config);
  KeyValues m = req.to_keyvalues();
  m.set("render.input", input);
  const SDensityParams density{req.s_density};
  if (fs::is_directory(input)) {
    const RunFiles run = read_run(input);
    detail::write_renders(field_from_grid(run.sdf, run.colors, density), req, out);
  } else if (input.size() > 6 && input.substr(input.size() - 6) == ".scene") {
    const SceneSpec scene = load_scene(input);
    const SdfGrid sdf = bake_grid(scene, 64);
    const ColorGrid colors = bake_color_grid(scene, 64, req.label);
    detail::write_renders(field_from_grid(sdf, colors, density), req, out);
  } else {
    const HiResField f = read_field(input);
    detail::write_renders(HiResRadiance(f), req, out);
  }
  m.save((out / "manifest.txt").string());
}

/// Named scalar metrics plus per-view PSNR and the hash of the inputs.
struct MetricReport {
  KeyValues values;

  void finish(const std::string& inputs) {
    values.set("config.hash", std::to_string(hash_string(inputs)));
    for (const auto& [k, v] : values.entries()) {
      if (k == "config.hash" || k.rfind("input.", 0) == 0) continue;
      const double d = values.get_double(k);
      require(std::isfinite(d) || k.find("psnr") != std::string::npos, Errc::numerical_guard, "metric " + k + " is not finite");
    }
  }
};

/// Metrics of a run directory against the scene it was sampled from (or
/// `scene_override`): IoU and Chamfer of F_0, and multi-view consistency of V_0.
/// With `field` also the IoU of a distilled/refined field converted back to an SDF.
inline MetricReport metrics_stage(const fs::path& run_dir, const std::string& scene_override, const std::string& field,
                                  int chamfer_samples = 2000) {
  MetricReport rep;
  const RunFiles run = read_run(run_dir);
  const std::string scene_path = scene_override.empty() ? run.manifest.get_string("run.scene") : scene_override;
  const SceneSpec scene = load_scene(scene_path);
  const int n = run.sdf.resolution();
  const SdfGrid gt = bake_grid(scene, n);
  const SDensityParams density{run.manifest.get_double("render.s", 20.0)};
  const SamplerConfig cfg = SamplerConfig::from_keyvalues(run.manifest);
  rep.values.set("input.run", run_dir.string());
  rep.values.set("input.scene", scene_path);
  rep.values.set("geometry.iou", metric_iou(run.sdf, gt));
  const TriMesh ma = extract_mesh(run.sdf), mb = extract_mesh(gt);
  if (!ma.empty() && !mb.empty()) {
    rep.values.set("geometry.chamfer", metric_chamfer(ma, mb, chamfer_samples, RandomStream(cfg.seed).fork("chamfer")));
  }
  const ConsistencyReport c = multiview_consistency(run.views, field_from_grid(run.sdf, run.colors, density),
                                                    final_render_config(cfg));
  rep.values.set("consistency.psnr", c.mean_psnr);
  rep.values.set("consistency.reprojection_error", c.reprojection_error);
  for (std::size_t i = 0; i < c.per_view_psnr.size(); ++i) rep.values.set("consistency.view." + std::to_string(i) + ".psnr", c.per_view_psnr[i]);
  if (!field.empty()) {
    const HiResField f = read_field(field);
    const SdfGrid back = density_to_sdf(f.density, density);
    rep.values.set("input.field", field);
    rep.values.set("field.iou", metric_iou(back, bake_grid(scene, f.resolution())));
  }
  rep.finish(run.manifest.to_string() + scene_path + field);
  return rep;
}

}  // namespace bidiff
