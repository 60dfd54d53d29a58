#pragma once

// Joint reverse diffusion of an SDF grid and a multi-view image set. Each
// step the 3D denoiser sees the previous step's denoised views, and the 2D
// denoiser sees renders of the current 3D x0 estimate.

#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/core/keyvalue.hpp"
#include "bidiff/core/random.hpp"
#include "bidiff/diffusion/denoisers.hpp"
#include "bidiff/diffusion/schedule.hpp"
#include "bidiff/eval/metrics.hpp"
#include "bidiff/fusion/projection.hpp"
#include "bidiff/geometry/scene.hpp"
#include "bidiff/prior/prior.hpp"
#include "bidiff/render/volume.hpp"

namespace bidiff {

struct SamplerConfig {
  int grid_n = 32;
  int views = 8;
  double elevation = 30.0;
  double camera_radius = 2.5;
  double fov_y = 40.0;
  int image_size = 64;

  ScheduleKind kind3d = ScheduleKind::cosine;
  ScheduleKind kind2d = ScheduleKind::cosine;
  int steps = 50;
  StepMode mode = StepMode::ancestral;

  double gamma3d = 3.0;
  double gamma2d = 7.5;
  bool enable_2d_to_3d = true;
  bool enable_3d_to_2d = true;
  bool teacher_forced = false;

  std::uint64_t seed = 0;        // 2D noise and everything not listed below
  std::uint64_t seed3d = 0;      // initial grid noise and 3D step noise
  std::uint64_t prior_seed = 0;  // prior latent noise

  int guide_samples = 32;  // ray samples for the intermediate renders
  int final_samples = 64;
  double s_density = 20.0;
  std::string label = "default";
  int snapshot_every = 10;

  // Oracle settings.
  double lambda_c3d = 0.5;
  double lambda_c2d = 0.5;
  double lambda_p = 0.3;
  double warp_amplitude = 0.0;
  int shift_px = 0;
  /// Color deviation that counts as full silhouette coverage.
  double silhouette_threshold = 1.0;
  PriorConfig prior;

  void validate() const {
    require(grid_n >= 8, Errc::invalid_argument, "sampler grid resolution must be >= 8");
    require(views >= 1, Errc::invalid_argument, "sampler needs at least one view");
    require(image_size >= 8, Errc::invalid_argument, "image size must be >= 8");
    require(steps >= 2, Errc::invalid_argument, "sampler needs at least 2 steps");
    require(std::isfinite(gamma3d) && std::isfinite(gamma2d), Errc::invalid_argument, "guidance scales must be finite");
    require(guide_samples >= 2 && final_samples >= 2, Errc::invalid_argument, "render sample counts must be >= 2");
    require(silhouette_threshold > 0.0, Errc::invalid_argument, "silhouette threshold must be positive");
    require(snapshot_every >= 1, Errc::invalid_argument, "snapshot interval must be >= 1");
    prior.validate();
  }

  std::vector<CameraPose> poses() const {
    return make_camera_ring(views, elevation, camera_radius, fov_y, image_size, image_size);
  }

  /// Sets every seed from one value.
  void set_seed(std::uint64_t s) { seed = seed3d = prior_seed = s; }

  KeyValues to_keyvalues() const {
    KeyValues kv;
    kv.set("grid.n", grid_n);
    kv.set("camera.views", views);
    kv.set("camera.elevation", elevation);
    kv.set("camera.radius", camera_radius);
    kv.set("camera.fov_y", fov_y);
    kv.set("camera.image_size", image_size);
    kv.set("sched3d.kind", to_string(kind3d));
    kv.set("sched3d.steps", steps);
    kv.set("sched2d.kind", to_string(kind2d));
    kv.set("sched2d.steps", steps);
    kv.set("sampler.mode", std::string(mode == StepMode::ddim ? "ddim" : "ancestral"));
    kv.set("sampler.gamma3d", gamma3d);
    kv.set("sampler.gamma2d", gamma2d);
    kv.set("sampler.enable_2d_to_3d", enable_2d_to_3d);
    kv.set("sampler.enable_3d_to_2d", enable_3d_to_2d);
    kv.set("sampler.teacher_forced", teacher_forced);
    kv.set("sampler.seed", seed);
    kv.set("sampler.seed3d", seed3d);
    kv.set("sampler.prior_seed", prior_seed);
    kv.set("sampler.guide_samples", guide_samples);
    kv.set("sampler.final_samples", final_samples);
    kv.set("sampler.label", label);
    kv.set("sampler.snapshot_every", snapshot_every);
    kv.set("render.s", s_density);
    kv.set("oracle.lambda_c3d", lambda_c3d);
    kv.set("oracle.lambda_c2d", lambda_c2d);
    kv.set("oracle.lambda_p", lambda_p);
    kv.set("oracle.warp_amplitude", warp_amplitude);
    kv.set("oracle.shift_px", shift_px);
    kv.set("oracle.silhouette_threshold", silhouette_threshold);
    kv.set("prior.t0", prior.t0);
    kv.set("prior.coarse_n", prior.coarse_n);
    kv.set("prior.drop_probability", prior.drop_probability);
    kv.set("prior.sharpness", prior.sharpness);
    return kv;
  }

  /// Reads known keys; anything missing keeps its default. `sampler.seed`
  /// also sets the other two seeds unless they are given explicitly.
  static SamplerConfig from_keyvalues(const KeyValues& kv, SamplerConfig c) {
    c.grid_n = static_cast<int>(kv.get_int("grid.n", c.grid_n));
    c.views = static_cast<int>(kv.get_int("camera.views", c.views));
    c.elevation = kv.get_double("camera.elevation", c.elevation);
    c.camera_radius = kv.get_double("camera.radius", c.camera_radius);
    c.fov_y = kv.get_double("camera.fov_y", c.fov_y);
    c.image_size = static_cast<int>(kv.get_int("camera.image_size", c.image_size));
    c.kind3d = parse_schedule_kind(kv.get_string("sched3d.kind", to_string(c.kind3d)));
    c.kind2d = parse_schedule_kind(kv.get_string("sched2d.kind", to_string(c.kind2d)));
    c.steps = static_cast<int>(kv.get_int("sampler.steps", c.steps));
    const int s3 = static_cast<int>(kv.get_int("sched3d.steps", c.steps));
    const int s2 = static_cast<int>(kv.get_int("sched2d.steps", s3));
    require(s3 == s2, Errc::invalid_argument, "sched3d.steps and sched2d.steps must match (lockstep sampling)");
    c.steps = s3;
    const std::string mode = kv.get_string("sampler.mode", c.mode == StepMode::ddim ? "ddim" : "ancestral");
    require(mode == "ddim" || mode == "ancestral", Errc::parse, "sampler.mode must be ddim or ancestral");
    c.mode = mode == "ddim" ? StepMode::ddim : StepMode::ancestral;
    c.gamma3d = kv.get_double("sampler.gamma3d", c.gamma3d);
    c.gamma2d = kv.get_double("sampler.gamma2d", c.gamma2d);
    c.enable_2d_to_3d = kv.get_bool("sampler.enable_2d_to_3d", c.enable_2d_to_3d);
    c.enable_3d_to_2d = kv.get_bool("sampler.enable_3d_to_2d", c.enable_3d_to_2d);
    c.teacher_forced = kv.get_bool("sampler.teacher_forced", c.teacher_forced);
    if (kv.has("sampler.seed")) c.set_seed(kv.get_u64("sampler.seed", c.seed));
    c.seed3d = kv.get_u64("sampler.seed3d", c.seed3d);
    c.prior_seed = kv.get_u64("sampler.prior_seed", c.prior_seed);
    c.guide_samples = static_cast<int>(kv.get_int("sampler.guide_samples", c.guide_samples));
    c.final_samples = static_cast<int>(kv.get_int("sampler.final_samples", c.final_samples));
    c.label = kv.get_string("sampler.label", c.label);
    c.snapshot_every = static_cast<int>(kv.get_int("sampler.snapshot_every", c.snapshot_every));
    c.s_density = kv.get_double("render.s", c.s_density);
    c.lambda_c3d = kv.get_double("oracle.lambda_c3d", c.lambda_c3d);
    c.lambda_c2d = kv.get_double("oracle.lambda_c2d", c.lambda_c2d);
    c.lambda_p = kv.get_double("oracle.lambda_p", c.lambda_p);
    c.warp_amplitude = kv.get_double("oracle.warp_amplitude", c.warp_amplitude);
    c.shift_px = static_cast<int>(kv.get_int("oracle.shift_px", c.shift_px));
    c.silhouette_threshold = kv.get_double("oracle.silhouette_threshold", c.silhouette_threshold);
    c.prior.t0 = kv.get_double("prior.t0", c.prior.t0);
    c.prior.coarse_n = static_cast<int>(kv.get_int("prior.coarse_n", c.prior.coarse_n));
    c.prior.drop_probability = kv.get_double("prior.drop_probability", c.prior.drop_probability);
    c.prior.sharpness = kv.get_double("prior.sharpness", c.prior.sharpness);
    c.validate();
    return c;
  }
  static SamplerConfig from_keyvalues(const KeyValues& kv) { return from_keyvalues(kv, SamplerConfig{}); }
};

/// Everything a run needs besides the config: the two denoisers, the prior,
/// the poses, and the reference data used for teacher forcing and for
/// coloring renders when no views are fed back.
struct SamplerSetup {
  std::vector<CameraPose> poses;
  NoiseSchedule sched3d;
  NoiseSchedule sched2d;
  Denoiser3d denoise3d;
  Denoiser2d denoise2d;
  RadiancePrior prior;
  ColorGrid palette_colors;
  MultiViewSet reference_views;
};

inline RenderConfig guide_render_config(const SamplerConfig& cfg, std::uint64_t seed) {
  RenderConfig rc;
  rc.n_samples = cfg.guide_samples;
  rc.seed = seed;
  return rc;
}

inline RenderConfig final_render_config(const SamplerConfig& cfg) {
  RenderConfig rc;
  rc.n_samples = cfg.final_samples;
  rc.seed = RandomStream(cfg.seed).fork("final-render").key();
  return rc;
}

/// Renders of a scene's baked SDF and palette, used as clean 2D targets.
inline MultiViewSet render_scene_views(const SceneSpec& scene, const std::vector<CameraPose>& poses, int n,
                                       const std::string& label, const SDensityParams& density, int samples) {
  const SdfGrid sdf = bake_grid(scene, n);
  const ColorGrid colors = bake_color_grid(scene, n, label);
  RenderConfig rc;
  rc.n_samples = samples;
  rc.seed = hash_string("targets");
  return render_views(field_from_grid(sdf, colors, density), poses, rc);
}

/// Largest per-pixel color deviation from the background over a view set.
inline double max_contrast(const MultiViewSet& views, const Vec3& background) {
  double m = 0.0;
  for (const auto& img : views.images)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        for (int c = 0; c < 3; ++c) m = std::max(m, std::abs(img.at(x, y, c) - background[c]));
  return m;
}

/// Oracle-backed setup for a scene. `prior_scene` defaults to the scene itself.
inline SamplerSetup make_oracle_setup(const SamplerConfig& cfg, const SceneSpec& scene,
                                      const SceneSpec* prior_scene = nullptr) {
  cfg.validate();
  SamplerSetup s;
  s.poses = cfg.poses();
  s.sched3d = make_schedule(cfg.kind3d, cfg.steps);
  s.sched2d = make_schedule(cfg.kind2d, cfg.steps);
  const SDensityParams density{cfg.s_density};

  auto spec3 = std::make_shared<Oracle3dSpec>();
  spec3->target = bake_grid(scene, cfg.grid_n);
  spec3->lambda_c = cfg.lambda_c3d;
  spec3->lambda_p = cfg.lambda_p;
  *spec3 = perturbed_oracle_3d(*spec3, {cfg.warp_amplitude, 0});

  auto spec2 = std::make_shared<Oracle2dSpec>();
  spec2->poses = s.poses;
  spec2->lambda_c = cfg.lambda_c2d;
  spec2->targets[cfg.label] = render_scene_views(scene, s.poses, cfg.grid_n, cfg.label, density, cfg.final_samples);
  *spec2 = perturbed_oracle_2d(*spec2, {0.0, cfg.shift_px});

  // Silhouettes of S-density renders extend past the surface. Coverage 0.5
  // is reached where opacity * contrast = threshold / 2; erode by the halo
  // width at that opacity.
  const double contrast = max_contrast(spec2->targets[cfg.label], spec2->background);
  const double opacity = std::clamp(0.5 * cfg.silhouette_threshold / std::max(contrast, 1e-6), 0.05, 0.95);
  spec3->silhouette = {spec2->background, cfg.silhouette_threshold, halo_offset(density, 0.5, opacity)};

  s.denoise3d = make_denoiser_3d(spec3, s.sched3d);
  s.denoise2d = make_denoiser_2d(spec2, s.sched2d);
  s.prior = build_prior(prior_scene ? *prior_scene : scene, cfg.prior, s.sched3d, cfg.prior_seed);
  s.palette_colors = bake_color_grid(scene, cfg.grid_n, cfg.label);
  s.reference_views = spec2->targets[cfg.label];
  return s;
}

/// State entering step t: F_t, V_t and the denoised views of the previous
/// step (V'_{t+1}).
struct SamplerState {
  int t = 0;
  Tensor grid;
  Tensor views;
  Tensor denoised_views;
};

struct StepRecord {
  int t = 0;
  double guidance_gap3d = 0.0;  // MSE between conditioned and unconditioned eps_3d
  double guidance_gap2d = 0.0;
  double render_psnr = 0.0;     // renders H vs denoised views V'_t, 0 when no renders
};

struct Snapshot {
  SamplerState state;  // before the step
  Tensor x0_grid;      // F'_0 of this step
  Tensor x0_views;     // V'_t of this step
};

struct Trajectory {
  std::vector<StepRecord> steps;  // decreasing t
  std::vector<Snapshot> snapshots;
};

struct StepOutput {
  SamplerState next;
  StepRecord record;
  Tensor x0_grid;
  MultiViewSet renders;  // empty when 3D->2D guidance is off
};

inline SamplerState initial_state(const SamplerConfig& cfg, const SamplerSetup& setup) {
  SamplerState s;
  s.t = cfg.steps;
  const std::size_t n3 = static_cast<std::size_t>(cfg.grid_n) * cfg.grid_n * cfg.grid_n;
  std::size_t n2 = 0;
  for (const auto& p : setup.poses) n2 += static_cast<std::size_t>(p.width) * p.height * 3;
  s.grid = gaussian(n3, RandomStream(cfg.seed3d).fork("init-3d"));
  s.views = gaussian(n2, RandomStream(cfg.seed).fork("init-2d"));
  s.denoised_views = cfg.teacher_forced ? flatten_views(setup.reference_views) : s.views;
  return s;
}

namespace detail {

inline StepOptions view_step_options(const SamplerConfig& cfg) { return {cfg.mode, true, 0.0, 1.0}; }

/// eps_3d with prior-present vs prior-dropped guidance.
inline Tensor guided_eps_3d(const SamplerConfig& cfg, const SamplerSetup& setup, std::span<const float> grid, int t,
                            const MultiViewSet* views, double* gap) {
  const RadiancePrior dropped = drop_prior(setup.prior);
  const bool drop = cfg.prior.drop_probability > 0.0 &&
                    RandomStream(cfg.prior_seed).fork("drop").uniform(static_cast<std::uint64_t>(t)) <
                        cfg.prior.drop_probability;
  const Cond3d cond{views, drop ? &dropped : &setup.prior, cfg.label};
  const Cond3d uncond{views, &dropped, cfg.label};
  const Tensor ec = setup.denoise3d(grid, t, cond);
  const Tensor eu = setup.denoise3d(grid, t, uncond);
  if (gap) *gap = simple_loss(ec, eu);
  return guidance_combine(eu, ec, cfg.gamma3d);
}

/// eps_2d with labeled vs empty-label guidance.
inline Tensor guided_eps_2d(const SamplerConfig& cfg, const SamplerSetup& setup, std::span<const float> views, int t,
                            const MultiViewSet* renders, double* gap) {
  const Tensor ec = setup.denoise2d(views, t, {renders, cfg.label});
  const Tensor eu = setup.denoise2d(views, t, {renders, ""});
  if (gap) *gap = simple_loss(ec, eu);
  return guidance_combine(eu, ec, cfg.gamma2d);
}

/// Surface colors for `sdf` taken from views of it. The transmittance of the
/// SDF's own renders undoes the background compositing in the views.
inline ColorGrid view_colors(const MultiViewSet& views, const SdfGrid& sdf, const SDensityParams& density,
                             const RenderConfig& rc) {
  const ColorGrid gray(sdf.resolution(), 3, 0.5f);
  const auto field = field_from_grid(sdf, gray, density);
  std::vector<ImageBuffer> tr;
  for (std::size_t i = 0; i < views.size(); ++i) tr.push_back(render_view(field, views.poses[i], rc, i).transmittance);
  return back_project_radiance(views, tr, sdf.resolution());
}

inline RandomStream step_noise(std::uint64_t seed, const char* domain, int t) {
  return RandomStream(seed).fork(domain).fork(static_cast<std::uint64_t>(t));
}

inline Tensor clipped(Tensor x) {
  for (auto& v : x) v = std::clamp(v, 0.0f, 1.0f);
  return x;
}

}  // namespace detail

/// One joint step t -> t-1:
///   1. eps_3d from D_3d, conditioned on V'_{t+1} when 2D->3D is on
///   2. F'_0 from eps_3d
///   3. H = renders of F'_0 when 3D->2D is on
///   4. eps_2d from D_2d, conditioned on H
///   5. reverse step in both domains
///   6. V'_t = x0 estimate of the views, cached for the next step
inline StepOutput bidi_step(const SamplerState& state, const SamplerConfig& cfg, const SamplerSetup& setup) {
  const int t = state.t;
  require(t >= 1, Errc::invalid_argument, "bidi_step needs t >= 1");
  try {
    StepOutput out;
    out.record.t = t;
    std::optional<MultiViewSet> fed_views;
    if (cfg.enable_2d_to_3d) {
      fed_views = cfg.teacher_forced ? setup.reference_views : unflatten_views(state.denoised_views, setup.poses);
    }
    const Tensor eps3 = detail::guided_eps_3d(cfg, setup, state.grid, t, fed_views ? &*fed_views : nullptr,
                                              &out.record.guidance_gap3d);
    out.x0_grid = predict_x0(state.grid, eps3, t, setup.sched3d);

    std::optional<MultiViewSet> renders;
    if (cfg.enable_3d_to_2d) {
      const int n = cfg.grid_n;
      const SdfGrid sdf(n, 1, out.x0_grid);
      const RenderConfig rc = guide_render_config(cfg, RandomStream(cfg.seed).fork("guide").fork(t).key());
      const SDensityParams density{cfg.s_density};
      const ColorGrid colors = fed_views ? detail::view_colors(*fed_views, sdf, density, rc) : setup.palette_colors;
      renders = render_views(field_from_grid(sdf, colors, SDensityParams{cfg.s_density}), setup.poses, rc);
    }
    const Tensor eps2 = detail::guided_eps_2d(cfg, setup, state.views, t, renders ? &*renders : nullptr,
                                              &out.record.guidance_gap2d);

    out.next.t = t - 1;
    out.next.grid = ddpm_step(state.grid, eps3, t, setup.sched3d, detail::step_noise(cfg.seed3d, "step-3d", t),
                              {cfg.mode, false, 0.0, 0.0});
    out.next.views = ddpm_step(state.views, eps2, t, setup.sched2d, detail::step_noise(cfg.seed, "step-2d", t),
                               detail::view_step_options(cfg));
    out.next.denoised_views = detail::clipped(predict_x0(state.views, eps2, t, setup.sched2d));
    if (renders) {
      const MultiViewSet dv = unflatten_views(out.next.denoised_views, setup.poses);
      double psnr = 0.0;
      for (std::size_t i = 0; i < dv.size(); ++i) psnr += std::min(metric_psnr(dv.images[i], renders->images[i]), 99.0);
      out.record.render_psnr = psnr / static_cast<double>(dv.size());
      out.renders = std::move(*renders);
    }
    return out;
  } catch (const Error& e) {
    rethrow_with_context(e, "step t=" + std::to_string(t));
  }
}

struct SamplerResult {
  SdfGrid grid;           // F_0
  ColorGrid colors;       // back-projected from V_0
  MultiViewSet views;     // V_0
  Trajectory trajectory;
  KeyValues manifest;
  ConsistencyReport consistency;
  double seconds = 0.0;
};

/// Runs steps state.t .. 1 and assembles the outputs.
inline SamplerResult resume_sampler(const SamplerConfig& cfg, const SamplerSetup& setup, SamplerState state) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  SamplerResult res;
  while (state.t >= 1) {
    const bool snap = (cfg.steps - state.t) % cfg.snapshot_every == 0;
    StepOutput out = bidi_step(state, cfg, setup);
    res.trajectory.steps.push_back(out.record);
    if (snap) res.trajectory.snapshots.push_back({state, out.x0_grid, out.next.denoised_views});
    state = std::move(out.next);
  }
  res.grid = SdfGrid(cfg.grid_n, 1, state.grid);
  res.views = unflatten_views(detail::clipped(state.views), setup.poses);
  res.colors = detail::view_colors(res.views, res.grid, SDensityParams{cfg.s_density}, final_render_config(cfg));
  res.consistency = multiview_consistency(
      res.views, field_from_grid(res.grid, res.colors, SDensityParams{cfg.s_density}), final_render_config(cfg));

  KeyValues& m = res.manifest;
  m.merge(cfg.to_keyvalues());
  m.set("config.hash", std::to_string(hash_string(cfg.to_keyvalues().to_string())));
  m.set("schedule.3d", setup.sched3d.describe());
  m.set("schedule.2d", setup.sched2d.describe());
  m.set("prior.scene", setup.prior.provenance.scene);
  m.set("prior.seed", setup.prior.provenance.seed);
  m.set("prior.dropped", setup.prior.provenance.dropped);
  m.set("result.consistency_psnr", res.consistency.mean_psnr);
  m.set("result.reprojection_error", res.consistency.reprojection_error);
  m.set("result.empty_surface", std::none_of(res.grid.values().begin(), res.grid.values().end(),
                                             [](float v) { return v < 0.0f; }));
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

inline SamplerResult run_sampler(const SamplerConfig& cfg, const SamplerSetup& setup) {
  return resume_sampler(cfg, setup, initial_state(cfg, setup));
}

/// Oracle run on a scene.
inline SamplerResult run_sampler(const SamplerConfig& cfg, const SceneSpec& scene) {
  return run_sampler(cfg, make_oracle_setup(cfg, scene));
}

/// 3D chain alone, with the same noise streams as the joint sampler.
inline Tensor rollout_3d(const SamplerConfig& cfg, const SamplerSetup& setup) {
  SamplerState s = initial_state(cfg, setup);
  for (int t = cfg.steps; t >= 1; --t) {
    const Tensor eps = detail::guided_eps_3d(cfg, setup, s.grid, t, nullptr, nullptr);
    s.grid = ddpm_step(s.grid, eps, t, setup.sched3d, detail::step_noise(cfg.seed3d, "step-3d", t),
                       {cfg.mode, false, 0.0, 0.0});
  }
  return s.grid;
}

/// 2D chain alone, with the same noise streams as the joint sampler.
inline Tensor rollout_2d(const SamplerConfig& cfg, const SamplerSetup& setup) {
  SamplerState s = initial_state(cfg, setup);
  for (int t = cfg.steps; t >= 1; --t) {
    const Tensor eps = detail::guided_eps_2d(cfg, setup, s.views, t, nullptr, nullptr);
    s.views = ddpm_step(s.views, eps, t, setup.sched2d, detail::step_noise(cfg.seed, "step-2d", t),
                        detail::view_step_options(cfg));
  }
  return detail::clipped(s.views);
}

/// Re-samples with the geometry inputs (3D noise, prior) pinned and only the
/// 2D label changed, at a raised 2D guidance scale.
inline SamplerResult control_texture(SamplerConfig cfg, const SceneSpec& scene, const std::string& label,
                                     double gamma2d) {
  cfg.label = label;
  cfg.gamma2d = gamma2d;
  return run_sampler(cfg, scene);
}

/// Re-samples with the label pinned and the prior taken from `prior_scene`,
/// at a raised 3D guidance scale.
inline SamplerResult control_geometry(SamplerConfig cfg, const SceneSpec& scene, const SceneSpec& prior_scene,
                                      double gamma3d) {
  cfg.gamma3d = gamma3d;
  return run_sampler(cfg, make_oracle_setup(cfg, scene, &prior_scene));
}

}  // namespace bidiff
