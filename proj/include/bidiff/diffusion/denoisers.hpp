#pragma once

// Denoiser contracts for the two domains and the analytic oracles that
// implement them. Oracles know the clean target and return the exact noise
// that maps it to the current state; conditioning moves that target.

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/diffusion/schedule.hpp"
#include "bidiff/fusion/projection.hpp"
#include "bidiff/geometry/scene.hpp"
#include "bidiff/prior/prior.hpp"
#include "bidiff/render/volume.hpp"

namespace bidiff {

/// Inputs a 3D denoiser may condition on. Null pointers mean "absent".
struct Cond3d {
  const MultiViewSet* views = nullptr;
  const RadiancePrior* prior = nullptr;
  std::string label;
};

/// Inputs a 2D denoiser may condition on; an empty label is the unconditional
/// branch.
struct Cond2d {
  const MultiViewSet* renders = nullptr;
  std::string label;
};

/// eps'_3d = D(F_t, t, cond); output has the grid's size.
using Denoiser3d = std::function<Tensor(std::span<const float> grid, int t, const Cond3d& cond)>;
/// eps'_2d = D(V_t, t, cond); V_t is the concatenation of all views.
using Denoiser2d = std::function<Tensor(std::span<const float> views, int t, const Cond2d& cond)>;

/// Exact noise for a known clean target.
inline Tensor oracle_eps(std::span<const float> xt, std::span<const float> x0_target, int t, const NoiseSchedule& s) {
  require(t >= 1, Errc::invalid_argument, "oracle_eps needs t >= 1");
  return implied_eps(xt, x0_target, t, s);
}

/// Concatenates every image of a view set, view-major.
inline Tensor flatten_views(const MultiViewSet& views) {
  Tensor out;
  for (const auto& img : views.images) out.insert(out.end(), img.values().begin(), img.values().end());
  return out;
}

/// Inverse of flatten_views for the given poses (3 channels per view).
inline MultiViewSet unflatten_views(std::span<const float> flat, const std::vector<CameraPose>& poses) {
  MultiViewSet out;
  out.poses = poses;
  std::size_t off = 0;
  for (const auto& p : poses) {
    ImageBuffer img(p.width, p.height, 3);
    require(off + img.size() <= flat.size(), Errc::shape_mismatch, "view tensor shorter than its poses");
    std::copy(flat.begin() + off, flat.begin() + off + img.size(), img.values().begin());
    off += img.size();
    out.images.push_back(std::move(img));
  }
  require(off == flat.size(), Errc::shape_mismatch, "view tensor longer than its poses");
  return out;
}

/// Additive low-frequency SDF warp: amplitude * cos(2 pi x) cos(2 pi z).
inline SdfGrid warp_bias(int n, double amplitude) {
  SdfGrid g(n, 1);
  for (std::size_t i = 0; i < g.point_count(); ++i) {
    const Vec3 p = g.position(i);
    g.values()[i] = static_cast<float>(amplitude * std::cos(2.0 * std::numbers::pi * p.x()) *
                                       std::cos(2.0 * std::numbers::pi * p.z()));
  }
  return g;
}

/// Shifts an image right by k pixels (left for negative k), filling with `fill`.
inline ImageBuffer shift_horizontal(const ImageBuffer& img, int k, const Vec3& fill = Vec3::Ones()) {
  ImageBuffer out(img.width(), img.height(), img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const int src = x - k;
      for (int c = 0; c < img.channels(); ++c) {
        out.at(x, y, c) = src >= 0 && src < img.width() ? img.at(src, y, c) : static_cast<float>(fill[c % 3]);
      }
    }
  }
  return out;
}

struct Oracle3dSpec {
  SdfGrid target;                 // clean SDF at the sampling resolution
  SdfGrid bias;                   // added to the target; empty grid means none
  double lambda_c = 0.5;          // weight of the view-derived hull
  double lambda_p = 0.3;          // weight of the prior inside the own target
  SilhouetteConfig silhouette;

  void validate() const {
    require(lambda_c >= 0.0 && lambda_c <= 1.0, Errc::invalid_argument, "lambda_c must lie in [0, 1]");
    require(lambda_p >= 0.0 && lambda_p <= 1.0, Errc::invalid_argument, "lambda_p must lie in [0, 1]");
    require(bias.resolution() == 0 || bias.same_shape(target), Errc::shape_mismatch, "3D bias grid shape mismatch");
  }
};

/// The clean SDF the 3D oracle aims at under `cond`:
///   own  = (1 - lp) (target + bias) + lp prior_sdf      (lp = 0 without a live prior)
///   x0   = (1 - lc) own + lc hull_sdf(views)
inline Tensor implied_target_3d(const Oracle3dSpec& spec, const Cond3d& cond, double lambda_c) {
  spec.validate();
  const int n = spec.target.resolution();
  Tensor own(spec.target.values().begin(), spec.target.values().end());
  if (spec.bias.resolution() != 0) {
    for (std::size_t i = 0; i < own.size(); ++i) own[i] += spec.bias.values()[i];
  }
  if (spec.lambda_p > 0.0 && cond.prior && !cond.prior->dropped()) {
    const SdfGrid p = prior_sdf(*cond.prior, n);
    const double lp = spec.lambda_p;
    for (std::size_t i = 0; i < own.size(); ++i) own[i] = static_cast<float>((1.0 - lp) * own[i] + lp * p.values()[i]);
  }
  if (lambda_c > 0.0) {
    require(cond.views != nullptr && !cond.views->empty(), Errc::invalid_argument,
            "3D oracle with lambda_c > 0 needs conditioning views");
    const SdfGrid hull = silhouette_sdf(*cond.views, n, spec.silhouette);
    const double lc = lambda_c;
    for (std::size_t i = 0; i < own.size(); ++i) {
      own[i] = static_cast<float>((1.0 - lc) * own[i] + lc * hull.values()[i]);
    }
  }
  return own;
}

inline Tensor implied_target_3d(const Oracle3dSpec& spec, const Cond3d& cond) {
  return implied_target_3d(spec, cond, spec.lambda_c);
}

inline Tensor conditioned_oracle_3d(const Oracle3dSpec& spec, std::span<const float> grid, int t, const Cond3d& cond,
                                    const NoiseSchedule& sched) {
  return oracle_eps(grid, implied_target_3d(spec, cond), t, sched);
}

struct Oracle2dSpec {
  std::vector<CameraPose> poses;
  /// Clean target views per condition label.
  std::map<std::string, MultiViewSet> targets;
  double lambda_c = 0.5;
  /// Per-view horizontal shift of the own target, in pixels.
  int shift_px = 0;
  Vec3 background = Vec3::Ones();
  /// Value of the label-free target.
  double neutral = 0.5;

  void validate() const {
    require(lambda_c >= 0.0 && lambda_c <= 1.0, Errc::invalid_argument, "lambda_c must lie in [0, 1]");
  }
};

/// Per-view clean targets the 2D oracle aims at under `cond`:
///   own_i = label empty ? neutral : shift(target_label_i)
///   x0_i  = (1 - lc) own_i + lc H_i
inline Tensor implied_target_2d(const Oracle2dSpec& spec, const Cond2d& cond, double lambda_c) {
  spec.validate();
  Tensor own;
  if (cond.label.empty()) {
    std::size_t total = 0;
    for (const auto& p : spec.poses) total += static_cast<std::size_t>(p.width) * p.height * 3;
    own.assign(total, static_cast<float>(spec.neutral));
  } else {
    const auto it = spec.targets.find(cond.label);
    require(it != spec.targets.end(), Errc::invalid_argument, "2D oracle has no target for label '" + cond.label + "'");
    require(it->second.size() == spec.poses.size(), Errc::shape_mismatch, "2D target/pose count mismatch");
    for (const auto& img : it->second.images) {
      const ImageBuffer shifted = spec.shift_px != 0 ? shift_horizontal(img, spec.shift_px, spec.background) : img;
      own.insert(own.end(), shifted.values().begin(), shifted.values().end());
    }
  }
  if (lambda_c > 0.0) {
    require(cond.renders != nullptr, Errc::invalid_argument, "2D oracle with lambda_c > 0 needs conditioning renders");
    require(cond.renders->size() == spec.poses.size(), Errc::shape_mismatch,
            "2D oracle: render count does not match view count");
    const Tensor h = flatten_views(*cond.renders);
    require(h.size() == own.size(), Errc::shape_mismatch, "2D oracle: render size mismatch");
    const double lc = lambda_c;
    for (std::size_t i = 0; i < own.size(); ++i) own[i] = static_cast<float>((1.0 - lc) * own[i] + lc * h[i]);
  }
  return own;
}

inline Tensor implied_target_2d(const Oracle2dSpec& spec, const Cond2d& cond) {
  return implied_target_2d(spec, cond, spec.lambda_c);
}

inline Tensor conditioned_oracle_2d(const Oracle2dSpec& spec, std::span<const float> views, int t, const Cond2d& cond,
                                    const NoiseSchedule& sched) {
  const Tensor target = implied_target_2d(spec, cond);
  require(target.size() == views.size(), Errc::shape_mismatch, "2D oracle: state size does not match its views");
  return oracle_eps(views, target, t, sched);
}

/// Wraps an oracle spec as a denoiser. Conditioning that is absent from a
/// call switches the corresponding blend off instead of failing, which is
/// how the sampler runs with a guidance direction disabled.
inline Denoiser3d make_denoiser_3d(std::shared_ptr<const Oracle3dSpec> spec, NoiseSchedule sched) {
  return [spec, sched](std::span<const float> grid, int t, const Cond3d& cond) {
    const bool has_views = cond.views != nullptr && !cond.views->empty();
    return oracle_eps(grid, implied_target_3d(*spec, cond, has_views ? spec->lambda_c : 0.0), t, sched);
  };
}

inline Denoiser2d make_denoiser_2d(std::shared_ptr<const Oracle2dSpec> spec, NoiseSchedule sched) {
  return [spec, sched](std::span<const float> views, int t, const Cond2d& cond) {
    const Tensor target = implied_target_2d(*spec, cond, cond.renders != nullptr ? spec->lambda_c : 0.0);
    require(target.size() == views.size(), Errc::shape_mismatch, "2D oracle: state size does not match its views");
    return oracle_eps(views, target, t, sched);
  };
}

struct PerturbationSpec {
  double warp_amplitude = 0.0;  // 3D
  int shift_px = 0;             // 2D
};

/// Oracles whose own targets carry a controlled disagreement.
inline Oracle3dSpec perturbed_oracle_3d(Oracle3dSpec base, const PerturbationSpec& p) {
  if (p.warp_amplitude != 0.0) base.bias = warp_bias(base.target.resolution(), p.warp_amplitude);
  return base;
}

inline Oracle2dSpec perturbed_oracle_2d(Oracle2dSpec base, const PerturbationSpec& p) {
  base.shift_px = p.shift_px;
  return base;
}

}  // namespace bidiff
