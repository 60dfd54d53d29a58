#pragma once

// Post-sampling: bound the occupancy of a generated SDF field, distill it
// into a high-resolution voxel radiance field by gradient descent, then
// refine that field with low-noise score distillation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <numbers>
#include <string>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/core/keyvalue.hpp"
#include "bidiff/core/parallel.hpp"
#include "bidiff/core/random.hpp"
#include "bidiff/diffusion/schedule.hpp"
#include "bidiff/fusion/projection.hpp"
#include "bidiff/geometry/grid.hpp"
#include "bidiff/io/grid_file.hpp"
#include "bidiff/render/camera.hpp"
#include "bidiff/render/image.hpp"
#include "bidiff/render/volume.hpp"

namespace bidiff {

/// Density and color lattices at resolution N_h plus the occupancy mask that
/// bounds where density may live.
struct HiResField {
  Grid3<float> density;  // >= 0, zero outside the mask
  ColorGrid colors;      // 3 channels
  std::vector<bool> mask;
  Vec3 background = Vec3::Ones();

  HiResField() = default;
  HiResField(int n, std::vector<bool> m)
      : density(n, 1), colors(n, 3, 0.5f), mask(std::move(m)) {
    require(mask.size() == density.point_count(), Errc::shape_mismatch, "mask size does not match N_h^3");
  }

  int resolution() const { return density.resolution(); }
  std::size_t masked_count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }

  /// Projects onto the feasible set: density >= 0 and 0 outside the mask,
  /// colors in [0, 1].
  void project() {
    for (std::size_t i = 0; i < mask.size(); ++i) {
      float& d = density.values()[i];
      d = mask[i] ? std::max(d, 0.0f) : 0.0f;
    }
    for (auto& c : colors.values()) c = std::clamp(c, 0.0f, 1.0f);
  }

  void validate() const {
    require(density.channels() == 1 && colors.channels() == 3 && density.resolution() == colors.resolution(),
            Errc::shape_mismatch, "hi-res field: density/color grids disagree");
    require(mask.size() == density.point_count(), Errc::shape_mismatch, "hi-res field: mask size");
    for (std::size_t i = 0; i < mask.size(); ++i) {
      const float d = density.values()[i];
      require(std::isfinite(d) && d >= 0.0f && (mask[i] || d == 0.0f), Errc::invalid_argument,
              "hi-res field: density must be finite, >= 0 and zero outside the mask");
    }
  }
};

/// Radiance view of a HiResField: trilinear density and color, no color
/// clamping so that renders stay differentiable in the parameters.
class HiResRadiance {
 public:
  explicit HiResRadiance(const HiResField& f) : f_(&f) {}
  double density(const Vec3& p) const { return inside_box(p) ? f_->density.sample(p) : 0.0; }
  void color(const Vec3& p, const Vec3&, double* out) const { f_->colors.sample(p, out); }
  Vec3 background() const { return f_->background; }

 private:
  const HiResField* f_;
};

/// Stored as one grid of 5 channels: density, RGB, mask (0/1).
inline void write_field(const std::string& path, const HiResField& f) {
  f.validate();
  Grid3<float> g(f.resolution(), 5);
  for (std::size_t i = 0; i < f.mask.size(); ++i) {
    g.values()[i * 5] = f.density.values()[i];
    for (int c = 0; c < 3; ++c) g.values()[i * 5 + 1 + c] = f.colors.values()[i * 3 + c];
    g.values()[i * 5 + 4] = f.mask[i] ? 1.0f : 0.0f;
  }
  write_grid(path, g);
}

inline HiResField read_field(const std::string& path) {
  const Grid3<float> g = read_grid(path);
  require(g.channels() == 5, Errc::parse, path + ": expected a 5-channel field (density, RGB, mask)");
  std::vector<bool> mask(g.point_count());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = g.values()[i * 5 + 4] > 0.5f;
  HiResField f(g.resolution(), std::move(mask));
  for (std::size_t i = 0; i < f.mask.size(); ++i) {
    f.density.values()[i] = g.values()[i * 5];
    for (int c = 0; c < 3; ++c) f.colors.values()[i * 3 + c] = g.values()[i * 5 + 1 + c];
  }
  f.validate();
  return f;
}

/// Marks hi-res lattice points whose local opacity 1 - exp(-sigma h) exceeds
/// `threshold` (h = hi-res spacing), then dilates by one voxel (26-neighborhood).
template <RadianceField Field>
std::vector<bool> occupancy_bound(const Field& field, int n_h, double threshold = 0.01) {
  require(threshold > 0.0 && threshold < 1.0, Errc::invalid_argument, "bounding threshold must lie in (0, 1)");
  const Grid3<float> lattice(n_h, 1);
  const double h = lattice.spacing();
  std::vector<char> hit(lattice.point_count(), 0);
  parallel_for(0, hit.size(), [&](std::size_t i) {
    hit[i] = -std::expm1(-field.density(lattice.position(i)) * h) > threshold;
  });
  std::vector<bool> mask(hit.size(), false);
  for (int z = 0; z < n_h; ++z)
    for (int y = 0; y < n_h; ++y)
      for (int x = 0; x < n_h; ++x) {
        bool any = false;
        for (int dz = -1; dz <= 1 && !any; ++dz)
          for (int dy = -1; dy <= 1 && !any; ++dy)
            for (int dx = -1; dx <= 1 && !any; ++dx) {
              const int a = x + dx, b = y + dy, c = z + dz;
              if (a < 0 || b < 0 || c < 0 || a >= n_h || b >= n_h || c >= n_h) continue;
              any = hit[lattice.index(a, b, c)] != 0;
            }
        mask[lattice.index(x, y, z)] = any;
      }
  return mask;
}

/// Gradient of a scalar objective w.r.t. the field parameters.
struct FieldGradient {
  std::vector<double> density;  // N_h^3
  std::vector<double> color;    // 3 N_h^3

  explicit FieldGradient(const HiResField& f)
      : density(f.density.point_count(), 0.0), color(f.colors.values().size(), 0.0) {}
};

struct RenderBatch {
  std::vector<CameraPose> poses;
  std::vector<ImageBuffer> targets;  // RGB, one per pose; may be empty for adjoint-only use
  int n_samples = 64;
};

enum class PixelLoss { l1, squared };

/// Per-pixel objective: returns the pixel's loss and writes dL/dC.
using PixelObjective = std::function<double(std::size_t view, std::size_t pixel, const Vec3& rendered, Vec3& grad)>;

namespace detail {

struct SampleAdjoint {
  Vec3 position;
  double d_sigma;
  Vec3 d_color;
};

// Trilinear corner indices and weights of p on the lattice.
inline int trilinear_corners(const Grid3<float>& g, const Vec3& p, std::size_t* idx, double* w) {
  const int n = g.resolution();
  double f[3];
  int i0[3];
  for (int a = 0; a < 3; ++a) {
    const double u = std::clamp((p[a] + 1.0) * 0.5 * (n - 1), 0.0, static_cast<double>(n - 1));
    int i = static_cast<int>(u);
    if (i >= n - 1) i = n - 2;
    i0[a] = i;
    f[a] = u - i;
  }
  int k = 0;
  for (int corner = 0; corner < 8; ++corner) {
    const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
    const double wc = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
    if (wc == 0.0) continue;
    idx[k] = g.index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
    w[k++] = wc;
  }
  return k;
}

}  // namespace detail

/// Renders the field at the batch poses (midpoint quadrature, same sampling
/// as render_ray without jitter), evaluates the per-pixel objective and, when
/// `grad` is given, adds the exact gradient of the summed objective w.r.t.
/// masked densities and colors. Per sample i with spacing delta:
///   dC/dc_i     = w_i
///   dC/dsigma_i = delta (T_{i+1} c_i - S_i),  S_i = sum_{j>i} w_j c_j + T_final bg
/// Accumulation runs in ray order, so the result is independent of threads.
inline double composite_backward(const HiResField& field, const RenderBatch& batch, const PixelObjective& objective,
                                 FieldGradient* grad, std::vector<ImageBuffer>* renders = nullptr) {
  field.validate();
  require(batch.n_samples >= 2, Errc::invalid_argument, "render batch needs at least two samples per ray");
  const HiResRadiance radiance(field);
  const Vec3 bg = field.background;
  double total = 0.0;
  if (renders) renders->clear();
  for (std::size_t v = 0; v < batch.poses.size(); ++v) {
    const CameraPose& cam = batch.poses[v];
    cam.validate();
    const CameraFrame frame(cam);
    RenderConfig rc;
    rc.jitter = false;
    const auto [t0, t1] = rc.interval(cam);
    const double delta = (t1 - t0) / batch.n_samples;
    const std::size_t pixels = static_cast<std::size_t>(cam.width) * cam.height;
    std::vector<double> loss(pixels, 0.0);
    std::vector<std::vector<detail::SampleAdjoint>> adj(grad ? pixels : 0);
    ImageBuffer img(cam.width, cam.height, 3);
    parallel_for(0, pixels, [&](std::size_t px) {
      const Ray ray = gen_ray(frame, static_cast<double>(px % cam.width), static_cast<double>(px / cam.width));
      const int n = batch.n_samples;
      std::vector<Vec3> pos(n), col(n);
      std::vector<double> sigma(n), w(n), T(n + 1);
      T[0] = 1.0;
      Vec3 c = Vec3::Zero();
      for (int i = 0; i < n; ++i) {
        pos[i] = ray.at(t0 + (i + 0.5) * delta);
        sigma[i] = radiance.density(pos[i]);
        const double alpha = sigma[i] > 0.0 ? -std::expm1(-sigma[i] * delta) : 0.0;
        T[i + 1] = T[i] * (1.0 - alpha);
        w[i] = T[i] - T[i + 1];
        double rgb[3];
        radiance.color(pos[i], ray.direction, rgb);
        col[i] = Vec3(rgb[0], rgb[1], rgb[2]);
        c += w[i] * col[i];
      }
      c += T[n] * bg;
      for (int k = 0; k < 3; ++k) img.at(static_cast<int>(px % cam.width), static_cast<int>(px / cam.width), k) =
          static_cast<float>(c[k]);
      Vec3 g = Vec3::Zero();
      loss[px] = objective(v, px, c, g);
      if (!grad || g.isZero(0.0)) return;
      auto& out = adj[px];
      Vec3 suffix = T[n] * bg;
      for (int i = n - 1; i >= 0; --i) {
        if (inside_box(pos[i])) {
          const double ds = delta * g.dot(T[i + 1] * col[i] - suffix);
          out.push_back({pos[i], ds, w[i] * g});
        }
        suffix += w[i] * col[i];
      }
    });
    for (double l : loss) total += l;
    if (renders) renders->push_back(std::move(img));
    if (!grad) continue;
    std::size_t idx[8];
    double tw[8];
    for (const auto& samples : adj) {
      for (const auto& s : samples) {
        const int k = detail::trilinear_corners(field.density, s.position, idx, tw);
        for (int j = 0; j < k; ++j) {
          if (!field.mask[idx[j]]) continue;
          grad->density[idx[j]] += tw[j] * s.d_sigma;
          for (int ch = 0; ch < 3; ++ch) grad->color[idx[j] * 3 + ch] += tw[j] * s.d_color[ch];
        }
      }
    }
  }
  return total;
}

/// Mean per-channel image loss between renders of the field and the batch
/// targets; adds its gradient to `grad` when given. L1 uses the subgradient
/// sign(pred - target), 0 at ties.
inline double grad_render_loss(const HiResField& field, const RenderBatch& batch, PixelLoss kind,
                               FieldGradient* grad) {
  require(batch.targets.size() == batch.poses.size(), Errc::shape_mismatch, "one target image per pose required");
  std::size_t count = 0;
  for (std::size_t v = 0; v < batch.poses.size(); ++v) {
    require(batch.targets[v].channels() == 3 && batch.targets[v].width() == batch.poses[v].width &&
                batch.targets[v].height() == batch.poses[v].height,
            Errc::shape_mismatch, "target image does not match its pose");
    count += batch.targets[v].size();
  }
  require(count > 0, Errc::invalid_argument, "empty render batch");
  const double scale = 1.0 / static_cast<double>(count);
  const PixelObjective obj = [&](std::size_t v, std::size_t px, const Vec3& c, Vec3& g) {
    double l = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = c[k] - batch.targets[v].values()[px * 3 + k];
      if (kind == PixelLoss::l1) {
        l += std::abs(d);
        g[k] = scale * (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0);
      } else {
        l += d * d;
        g[k] = scale * 2.0 * d;
      }
    }
    return scale * l;
  };
  return composite_backward(field, batch, obj, grad);
}

inline double grad_render_l1(const HiResField& field, const RenderBatch& batch, FieldGradient* grad) {
  return grad_render_loss(field, batch, PixelLoss::l1, grad);
}

/// Renders of any field at the batch poses with midpoint quadrature.
template <RadianceField Field>
std::vector<ImageBuffer> render_batch_targets(const Field& field, const std::vector<CameraPose>& poses, int n_samples) {
  RenderConfig rc;
  rc.n_samples = n_samples;
  rc.jitter = false;
  std::vector<ImageBuffer> out;
  for (std::size_t i = 0; i < poses.size(); ++i) out.push_back(render_view(field, poses[i], rc, i).rgb);
  return out;
}

enum class DistillInit { zero, resampled };

struct DistillConfig {
  int hires_n = 64;
  double threshold = 0.01;
  int iterations = 500;
  /// Initial step, in density units per masked voxel per iteration.
  double step_size = 0.05;
  double w_density = 1.0;
  double w_render = 1.0;
  int views_per_iteration = 2;
  int image_size = 32;
  int n_samples = 64;
  DistillInit init = DistillInit::zero;
  std::uint64_t seed = 0;

  void validate() const {
    require(hires_n >= 8, Errc::invalid_argument, "hi-res resolution must be >= 8");
    require(threshold > 0.0 && threshold < 1.0, Errc::invalid_argument, "bounding threshold must lie in (0, 1)");
    require(iterations >= 0, Errc::invalid_argument, "iterations must be >= 0");
    require(step_size > 0.0, Errc::invalid_argument, "step size must be positive");
    require(w_density >= 0.0 && w_render >= 0.0 && w_density + w_render > 0.0, Errc::invalid_argument,
            "loss weights must be >= 0 and not both zero");
    require(views_per_iteration >= 1 && image_size >= 8 && n_samples >= 2, Errc::invalid_argument,
            "distill render settings out of range");
  }

  KeyValues to_keyvalues() const {
    KeyValues kv;
    kv.set("distill.hires_n", hires_n);
    kv.set("distill.threshold", threshold);
    kv.set("distill.iterations", iterations);
    kv.set("distill.step_size", step_size);
    kv.set("distill.w_density", w_density);
    kv.set("distill.w_render", w_render);
    kv.set("distill.views_per_iteration", views_per_iteration);
    kv.set("distill.image_size", image_size);
    kv.set("distill.n_samples", n_samples);
    kv.set("distill.init", std::string(init == DistillInit::zero ? "zero" : "resampled"));
    kv.set("distill.seed", seed);
    return kv;
  }

  static DistillConfig from_keyvalues(const KeyValues& kv) {
    DistillConfig c;
    c.hires_n = static_cast<int>(kv.get_int("distill.hires_n", c.hires_n));
    c.threshold = kv.get_double("distill.threshold", c.threshold);
    c.iterations = static_cast<int>(kv.get_int("distill.iterations", c.iterations));
    c.step_size = kv.get_double("distill.step_size", c.step_size);
    c.w_density = kv.get_double("distill.w_density", c.w_density);
    c.w_render = kv.get_double("distill.w_render", c.w_render);
    c.views_per_iteration = static_cast<int>(kv.get_int("distill.views_per_iteration", c.views_per_iteration));
    c.image_size = static_cast<int>(kv.get_int("distill.image_size", c.image_size));
    c.n_samples = static_cast<int>(kv.get_int("distill.n_samples", c.n_samples));
    const std::string init = kv.get_string("distill.init", "zero");
    require(init == "zero" || init == "resampled", Errc::parse, "distill.init must be zero or resampled");
    c.init = init == "zero" ? DistillInit::zero : DistillInit::resampled;
    c.seed = kv.get_u64("distill.seed", c.seed);
    c.validate();
    return c;
  }
};

struct DistillReport {
  double initial_density_l1 = 0.0;
  double final_density_l1 = 0.0;
  double initial_render_l1 = 0.0;
  double final_render_l1 = 0.0;
  int iterations = 0;
  int halvings = 0;
  double final_step = 0.0;
  std::size_t masked_voxels = 0;
  double seconds = 0.0;
  std::vector<double> loss;  // objective before each iteration's step
};

/// Distillation diverged; carries the field as it was when aborted.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, HiResField state)
      : Error(Errc::divergence, what), state_(std::move(state)) {}
  const HiResField& state() const { return state_; }

 private:
  HiResField state_;
};

/// Source field for distillation: an SDF grid with colors under S-density.
struct SourceField {
  const SdfGrid* sdf;
  const ColorGrid* colors;
  SDensityParams density;
};

/// Target densities of the source at the hi-res lattice points.
inline std::vector<float> sampled_density(const SourceField& src, int n_h) {
  const Grid3<float> lattice(n_h, 1);
  std::vector<float> out(lattice.point_count());
  const auto f = field_from_grid(*src.sdf, *src.colors, src.density);
  parallel_for(0, out.size(), [&](std::size_t i) { out[i] = static_cast<float>(f.density(lattice.position(i))); });
  return out;
}

/// Mean |density - target| over masked lattice points; adds the (sub)gradient
/// times `weight` when `grad` is given.
inline double density_l1(const HiResField& f, const std::vector<float>& target, double weight = 1.0,
                         FieldGradient* grad = nullptr) {
  const std::size_t m = f.masked_count();
  if (m == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < f.mask.size(); ++i) {
    if (!f.mask[i]) continue;
    const double d = static_cast<double>(f.density.values()[i]) - target[i];
    s += std::abs(d);
    if (grad) grad->density[i] += weight * (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0) / static_cast<double>(m);
  }
  return s / static_cast<double>(m);
}

inline HiResField initial_field(const SourceField& src, const std::vector<bool>& mask, int n_h, DistillInit init) {
  HiResField f(n_h, mask);
  if (init == DistillInit::resampled) {
    f.density.values() = sampled_density(src, n_h);
    const Grid3<float> lattice(n_h, 1);
    for (std::size_t i = 0; i < lattice.point_count(); ++i) {
      double c[3];
      src.colors->sample(lattice.position(i), c);
      for (int k = 0; k < 3; ++k) f.colors.values()[i * 3 + k] = static_cast<float>(c[k]);
    }
  }
  f.project();
  return f;
}

namespace detail {

inline void apply_step(HiResField& f, const FieldGradient& g, double step) {
  for (std::size_t i = 0; i < f.mask.size(); ++i) {
    if (!f.mask[i]) continue;
    f.density.values()[i] = static_cast<float>(f.density.values()[i] - step * g.density[i]);
    for (int c = 0; c < 3; ++c) f.colors.values()[i * 3 + c] = static_cast<float>(f.colors.values()[i * 3 + c] - step * g.color[i * 3 + c]);
  }
  f.project();
}

}  // namespace detail

/// Gradient descent on w_d * masked density L1 + w_r * render L1 against
/// fresh random views each iteration. A step that increases the objective on
/// the iteration's views is retried at half the size; the next iteration
/// starts from twice the last accepted step, capped at the configured one.
/// The gradient is scaled by the masked voxel count, so the step is measured
/// per voxel.
inline HiResField distill(const SourceField& src, const std::vector<bool>& mask, const DistillConfig& cfg,
                          DistillReport* report = nullptr, const HiResField* start = nullptr) {
  cfg.validate();
  require(mask.size() == static_cast<std::size_t>(cfg.hires_n) * cfg.hires_n * cfg.hires_n, Errc::shape_mismatch,
          "mask does not match the hi-res resolution");
  const auto t_start = std::chrono::steady_clock::now();
  const auto target = sampled_density(src, cfg.hires_n);
  const auto source = field_from_grid(*src.sdf, *src.colors, src.density);
  HiResField f = start ? *start : initial_field(src, mask, cfg.hires_n, cfg.init);
  require(f.mask == mask, Errc::invalid_argument, "starting field has a different mask");
  const double scale = static_cast<double>(std::max<std::size_t>(f.masked_count(), 1));
  const RandomStream views = RandomStream(cfg.seed).fork("distill-views");

  DistillReport rep;
  rep.masked_voxels = f.masked_count();
  double step = cfg.step_size;
  double reference = -1.0;
  auto objective = [&](const HiResField& x, const RenderBatch& b, FieldGradient* g, double* dl, double* rl) {
    const double d = cfg.w_density > 0.0 ? density_l1(x, target, cfg.w_density, g) : 0.0;
    double r = 0.0;
    if (cfg.w_render > 0.0) {
      FieldGradient tmp(x);
      r = grad_render_l1(x, b, g ? &tmp : nullptr);
      if (g) {
        for (std::size_t i = 0; i < tmp.density.size(); ++i) g->density[i] += cfg.w_render * tmp.density[i];
        for (std::size_t i = 0; i < tmp.color.size(); ++i) g->color[i] += cfg.w_render * tmp.color[i];
      }
    }
    if (dl) *dl = d;
    if (rl) *rl = r;
    return cfg.w_density * d + cfg.w_render * r;
  };
  auto make_batch = [&](int it) {
    RenderBatch b;
    b.n_samples = cfg.n_samples;
    b.poses = random_poses(views.fork(static_cast<std::uint64_t>(it)), cfg.views_per_iteration, cfg.image_size);
    if (cfg.w_render > 0.0) b.targets = render_batch_targets(source, b.poses, cfg.n_samples);
    return b;
  };

  for (int it = 0; it <= cfg.iterations; ++it) {
    const RenderBatch batch = make_batch(it);
    const bool last = it == cfg.iterations;
    FieldGradient g(f);
    double dl = 0.0, rl = 0.0;
    const double before = objective(f, batch, last ? nullptr : &g, &dl, &rl);
    if (it == 0) {
      rep.initial_density_l1 = dl;
      rep.initial_render_l1 = rl;
      reference = before;
    }
    rep.final_density_l1 = dl;
    rep.final_render_l1 = rl;
    if (last) break;
    rep.loss.push_back(before);
    if (before > 10.0 * reference && reference > 0.0) {
      throw DivergenceError("distillation diverged at iteration " + std::to_string(it), f);
    }
    for (auto& v : g.density) v *= scale;
    for (auto& v : g.color) v *= scale;
    for (int tries = 0; tries < 30; ++tries) {
      HiResField trial = f;
      detail::apply_step(trial, g, step);
      if (objective(trial, batch, nullptr, nullptr, nullptr) <= before) {
        f = std::move(trial);
        break;
      }
      step *= 0.5;
      ++rep.halvings;
    }
    rep.iterations = it + 1;
    step = std::min(cfg.step_size, 2.0 * step);
  }
  rep.final_step = step;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (report) *report = std::move(rep);
  return f;
}

struct RefineConfig {
  double lo = 0.02;
  double hi = 0.5;
  int iterations = 200;
  double step_size = 1.0;
  int image_size = 32;
  int n_samples = 64;
  ScheduleKind schedule = ScheduleKind::cosine;
  int schedule_steps = 1000;
  std::string label = "default";
  std::uint64_t seed = 0;

  void validate() const {
    require(lo > 0.0 && lo < hi && hi <= 1.0, Errc::invalid_argument, "refine range must satisfy 0 < lo < hi <= 1");
    require(iterations >= 0 && step_size > 0.0, Errc::invalid_argument, "refine iterations/step out of range");
    require(image_size >= 8 && n_samples >= 2 && schedule_steps >= 2, Errc::invalid_argument,
            "refine render settings out of range");
  }

  KeyValues to_keyvalues() const {
    KeyValues kv;
    kv.set("refine.lo", lo);
    kv.set("refine.hi", hi);
    kv.set("refine.iterations", iterations);
    kv.set("refine.step_size", step_size);
    kv.set("refine.image_size", image_size);
    kv.set("refine.n_samples", n_samples);
    kv.set("refine.schedule", to_string(schedule));
    kv.set("refine.schedule_steps", schedule_steps);
    kv.set("refine.label", label);
    kv.set("refine.seed", seed);
    return kv;
  }

  static RefineConfig from_keyvalues(const KeyValues& kv) {
    RefineConfig c;
    c.lo = kv.get_double("refine.lo", c.lo);
    c.hi = kv.get_double("refine.hi", c.hi);
    c.iterations = static_cast<int>(kv.get_int("refine.iterations", c.iterations));
    c.step_size = kv.get_double("refine.step_size", c.step_size);
    c.image_size = static_cast<int>(kv.get_int("refine.image_size", c.image_size));
    c.n_samples = static_cast<int>(kv.get_int("refine.n_samples", c.n_samples));
    c.schedule = parse_schedule_kind(kv.get_string("refine.schedule", to_string(c.schedule)));
    c.schedule_steps = static_cast<int>(kv.get_int("refine.schedule_steps", c.schedule_steps));
    c.label = kv.get_string("refine.label", c.label);
    c.seed = kv.get_u64("refine.seed", c.seed);
    c.validate();
    return c;
  }

  /// Parses "lo:hi".
  void set_range(const std::string& text) {
    const auto colon = text.find(':');
    require(colon != std::string::npos, Errc::parse, "range must look like lo:hi");
    try {
      lo = std::stod(text.substr(0, colon));
      hi = std::stod(text.substr(colon + 1));
    } catch (const std::exception&) {
      throw Error(Errc::parse, "range must look like lo:hi, got '" + text + "'");
    }
    validate();
  }
};

/// One score request: a noised render at diffusion step t seen from `pose`.
struct ScoreQuery {
  std::span<const float> noisy;
  int t = 0;
  const CameraPose* pose = nullptr;
  const std::string* label = nullptr;
  int iteration = 0;
};

using ScoreSource = std::function<Tensor(const ScoreQuery&)>;

struct RefineReport {
  int iterations = 0;
  std::vector<int> timesteps;
  std::vector<double> residual;  // mean |w (eps_pred - eps)| per iteration
  double init_similarity = 1.0;
  double seconds = 0.0;
};

/// The noise sds_refine draws at an iteration, for scores that need it.
inline Tensor refine_noise(const RefineConfig& cfg, int iteration, std::size_t size) {
  return gaussian(size, RandomStream(cfg.seed).fork("refine-noise").fork(static_cast<std::uint64_t>(iteration)));
}

/// 1 / (1 + mean |density_a - density_b|) over points masked in either field.
inline double init_similarity(const HiResField& a, const HiResField& b) {
  require(a.density.same_shape(b.density), Errc::shape_mismatch, "fields differ in resolution");
  double s = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < a.mask.size(); ++i) {
    if (!a.mask[i] && !b.mask[i]) continue;
    s += std::abs(static_cast<double>(a.density.values()[i]) - b.density.values()[i]);
    ++m;
  }
  return 1.0 / (1.0 + (m ? s / static_cast<double>(m) : 0.0));
}

/// Score distillation at small noise: per iteration a step t uniform in
/// [lo T, hi T] and a random pose; the render x is noised, scored, and the
/// residual w(t) (eps_pred - eps) with w(t) = 1 - abar_t is pulled back
/// through the compositing. A zero residual leaves the field untouched.
inline HiResField sds_refine(const HiResField& init, const ScoreSource& score, const RefineConfig& cfg,
                             RefineReport* report = nullptr) {
  cfg.validate();
  init.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const NoiseSchedule sched = make_schedule(cfg.schedule, cfg.schedule_steps);
  const int t_lo = std::max(1, static_cast<int>(std::ceil(cfg.lo * sched.steps())));
  const int t_hi = std::max(t_lo, static_cast<int>(std::floor(cfg.hi * sched.steps())));
  const RandomStream pick = RandomStream(cfg.seed).fork("refine-steps");
  HiResField f = init;
  RefineReport rep;
  for (int it = 0; it < cfg.iterations; ++it) {
    const int t = t_lo + static_cast<int>(pick.uniform(static_cast<std::uint64_t>(it)) * (t_hi - t_lo + 1));
    const CameraPose pose = random_poses(pick.fork("pose").fork(static_cast<std::uint64_t>(it)), 1, cfg.image_size)[0];
    RenderBatch batch;
    batch.poses = {pose};
    batch.n_samples = cfg.n_samples;
    std::vector<ImageBuffer> rendered;
    composite_backward(f, batch, [](std::size_t, std::size_t, const Vec3&, Vec3&) { return 0.0; }, nullptr, &rendered);
    const Tensor& x = rendered[0].values();
    const Tensor eps = refine_noise(cfg, it, x.size());
    const Tensor xt = forward_noise(x, t, eps, sched);
    const Tensor pred = score({xt, t, &pose, &cfg.label, it});
    require(pred.size() == x.size(), Errc::shape_mismatch, "score size does not match the render");
    const double w = 1.0 - sched.alpha_bar(t);
    std::vector<double> residual(x.size());
    bool any = false;
    double mean_abs = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      residual[i] = w * (static_cast<double>(pred[i]) - eps[i]);
      any = any || residual[i] != 0.0;
      mean_abs += std::abs(residual[i]);
    }
    rep.timesteps.push_back(t);
    rep.residual.push_back(mean_abs / static_cast<double>(x.size()));
    rep.iterations = it + 1;
    if (!any) continue;
    FieldGradient g(f);
    composite_backward(
        f, batch,
        [&](std::size_t, std::size_t px, const Vec3&, Vec3& grad) {
          for (int k = 0; k < 3; ++k) grad[k] = residual[px * 3 + k];
          return 0.0;
        },
        &g);
    detail::apply_step(f, g, cfg.step_size);
    for (float v : f.density.values()) {
      if (!std::isfinite(v)) throw DivergenceError("refinement diverged at iteration " + std::to_string(it), f);
    }
  }
  rep.init_similarity = init_similarity(f, init);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  if (report) *report = std::move(rep);
  return f;
}

/// Score of the 2D oracle whose clean target is a reference field rendered
/// at the query pose.
template <RadianceField Field>
ScoreSource oracle_score(Field reference, const RefineConfig& cfg) {
  const NoiseSchedule sched = make_schedule(cfg.schedule, cfg.schedule_steps);
  const int samples = cfg.n_samples;
  return [reference = std::move(reference), sched, samples](const ScoreQuery& q) {
    const auto target = render_batch_targets(reference, {*q.pose}, samples);
    return implied_eps(q.noisy, target[0].values(), q.t, sched);
  };
}

/// Inverts the S-density bump for |sdf| (0 at or above the peak s/4). The
/// sign comes from a flood fill: points reachable from the box boundary
/// through density below s/8 are outside, the enclosed rest is inside, and
/// dense shell points take the side whose region is nearer.
inline SdfGrid density_to_sdf(const Grid3<float>& density, const SDensityParams& params) {
  const int n = density.resolution();
  const double s = params.s;
  const std::size_t count = density.point_count();
  SdfGrid out(n, 1);
  std::vector<double> mag(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double sig = std::max(0.0, static_cast<double>(density.values()[i]));
    if (sig >= 0.25 * s) {
      mag[i] = 0.0;
    } else if (sig <= 0.0) {
      mag[i] = std::numeric_limits<double>::infinity();
    } else {
      // sigma e^2 + (2 sigma - s) e + sigma = 0, smaller root.
      const double e = ((s - 2.0 * sig) - std::sqrt(s * s - 4.0 * s * sig)) / (2.0 * sig);
      mag[i] = -std::log(std::max(e, 1e-300)) / s;
    }
  }
  const double shell = s / 8.0;
  std::vector<bool> outside(count, false), dense(count);
  for (std::size_t i = 0; i < count; ++i) dense[i] = density.values()[i] >= shell;
  std::vector<std::size_t> stack;
  auto visit = [&](int x, int y, int z) {
    const std::size_t i = density.index(x, y, z);
    if (outside[i] || dense[i]) return;
    outside[i] = true;
    stack.push_back(i);
  };
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      visit(a, b, 0), visit(a, b, n - 1), visit(a, 0, b), visit(a, n - 1, b), visit(0, a, b), visit(n - 1, a, b);
    }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const int x = static_cast<int>(i % n), y = static_cast<int>((i / n) % n), z = static_cast<int>(i / (static_cast<std::size_t>(n) * n));
    if (x > 0) visit(x - 1, y, z);
    if (x + 1 < n) visit(x + 1, y, z);
    if (y > 0) visit(x, y - 1, z);
    if (y + 1 < n) visit(x, y + 1, z);
    if (z > 0) visit(x, y, z - 1);
    if (z + 1 < n) visit(x, y, z + 1);
  }
  std::vector<bool> inner(count);
  for (std::size_t i = 0; i < count; ++i) inner[i] = !outside[i] && !dense[i];
  const auto d_out = chamfer_distance(n, outside);
  const auto d_in = chamfer_distance(n, inner);
  const double cap = 2.0 * std::sqrt(3.0);
  for (std::size_t i = 0; i < count; ++i) {
    const bool is_inside = inner[i] || (dense[i] && d_in[i] < d_out[i]);
    const double m = std::min(mag[i], cap);
    out.values()[i] = static_cast<float>(is_inside ? -m : m);
  }
  return out;
}

struct PipelineReport {
  DistillReport distill;
  RefineReport refine;
  double bound_seconds = 0.0;
  double init_similarity = 1.0;

  KeyValues to_keyvalues() const {
    KeyValues kv;
    kv.set("result.distill.masked_voxels", static_cast<std::int64_t>(distill.masked_voxels));
    kv.set("result.distill.initial_density_l1", distill.initial_density_l1);
    kv.set("result.distill.final_density_l1", distill.final_density_l1);
    kv.set("result.distill.initial_render_l1", distill.initial_render_l1);
    kv.set("result.distill.final_render_l1", distill.final_render_l1);
    kv.set("result.distill.iterations", distill.iterations);
    kv.set("result.distill.halvings", distill.halvings);
    kv.set("result.refine.iterations", refine.iterations);
    kv.set("result.refine.init_similarity", init_similarity);
    return kv;
  }

  /// Wall-clock numbers, kept apart so that result files stay reproducible.
  KeyValues timings() const {
    KeyValues kv;
    kv.set("bound.seconds", bound_seconds);
    kv.set("distill.seconds", distill.seconds);
    kv.set("refine.seconds", refine.seconds);
    return kv;
  }
};

/// occupancy_bound -> distill -> sds_refine.
inline HiResField distill_then_refine(const SourceField& src, const DistillConfig& dcfg, const ScoreSource& score,
                                      const RefineConfig& rcfg, PipelineReport* report = nullptr) {
  PipelineReport rep;
  std::vector<bool> mask;
  HiResField distilled, refined;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    mask = occupancy_bound(field_from_grid(*src.sdf, *src.colors, src.density), dcfg.hires_n, dcfg.threshold);
    rep.bound_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } catch (const Error& e) {
    rethrow_with_context(e, "bound");
  }
  try {
    distilled = distill(src, mask, dcfg, &rep.distill);
  } catch (const DivergenceError&) {
    throw;
  } catch (const Error& e) {
    rethrow_with_context(e, "distill");
  }
  try {
    refined = rcfg.iterations > 0 ? sds_refine(distilled, score, rcfg, &rep.refine) : distilled;
  } catch (const DivergenceError&) {
    throw;
  } catch (const Error& e) {
    rethrow_with_context(e, "refine");
  }
  rep.init_similarity = init_similarity(refined, distilled);
  if (report) *report = std::move(rep);
  return refined;
}

}  // namespace bidiff
