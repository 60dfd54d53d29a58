#pragma once

// Coarse 3D prior: a deterministic occupancy code of a scene, noised at a
// fixed level and decoded into a low-resolution density grid.

#include <cmath>
#include <string>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/core/random.hpp"
#include "bidiff/diffusion/schedule.hpp"
#include "bidiff/fusion/projection.hpp"
#include "bidiff/geometry/grid.hpp"
#include "bidiff/geometry/scene.hpp"

namespace bidiff {

struct PriorConfig {
  double t0 = 0.4;
  int coarse_n = 16;
  double drop_probability = 0.0;
  /// Slope of the decode squashing.
  double sharpness = 8.0;

  void validate() const {
    require(t0 > 0.0 && t0 < 1.0, Errc::invalid_argument, "prior t0 must lie in (0, 1)");
    require(coarse_n >= 8, Errc::invalid_argument, "prior resolution must be >= 8");
    require(drop_probability >= 0.0 && drop_probability <= 1.0, Errc::invalid_argument,
            "drop probability must lie in [0, 1]");
    require(sharpness > 0.0, Errc::invalid_argument, "prior sharpness must be positive");
  }
};

struct LatentCode {
  int n = 0;                 // code is an n^3 lattice
  std::vector<float> values;
  double alpha_bar = 1.0;    // signal level the code carries

  std::size_t size() const { return values.size(); }
};

namespace detail {
// Sub-samples per axis when measuring coarse occupancy.
inline constexpr int kEncodeSubsamples = 3;
}  // namespace detail

/// Occupancy fraction of the scene around each coarse lattice point, measured
/// on a 3^3 sub-lattice spanning one coarse cell. A scene with no parts
/// encodes to zeros.
inline LatentCode encode_prior(const SceneSpec& scene, int coarse_n) {
  require(coarse_n >= 8, Errc::invalid_argument, "prior resolution must be >= 8");
  LatentCode code{coarse_n, std::vector<float>(static_cast<std::size_t>(coarse_n) * coarse_n * coarse_n, 0.0f), 1.0};
  if (scene.parts.empty()) return code;
  scene.validate();
  const Grid3<float> lattice(coarse_n, 1);
  const double h = lattice.spacing();
  const int k = detail::kEncodeSubsamples;
  parallel_for(0, code.size(), [&](std::size_t i) {
    const Vec3 c = lattice.position(i);
    int inside = 0;
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b)
        for (int d = 0; d < k; ++d) {
          const Vec3 off((a - (k - 1) * 0.5) / k, (b - (k - 1) * 0.5) / k, (d - (k - 1) * 0.5) / k);
          if (eval_sdf(scene, c + h * off) < 0.0) ++inside;
        }
    code.values[i] = static_cast<float>(inside) / (k * k * k);
  });
  return code;
}

/// C_t0 = sqrt(abar) C + sqrt(1 - abar) z with abar read from the 3D schedule
/// at fractional step t0 * T.
inline LatentCode noise_latent(const LatentCode& code, double t0, const NoiseSchedule& sched,
                               const RandomStream& stream) {
  require(t0 >= 0.0 && t0 < 1.0, Errc::invalid_argument, "noise level must lie in [0, 1)");
  const double ab = sched.alpha_bar_at(t0 * sched.steps());
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  LatentCode out = code;
  out.alpha_bar = code.alpha_bar * ab;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = static_cast<float>(a * code.values[i] + b * stream.normal(i));
  return out;
}

struct PriorProvenance {
  std::string scene = "none";
  double t0 = 0.0;
  std::uint64_t seed = 0;
  bool dropped = false;
};

struct RadiancePrior {
  Grid3<float> density;  // coarse, >= 0
  ColorGrid colors;      // coarse, 3 channels
  double alpha_bar = 1.0;
  double sharpness = 8.0;
  PriorProvenance provenance;

  int resolution() const { return density.resolution(); }
  bool dropped() const { return provenance.dropped; }
};

namespace detail {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

/// Squashed density with the zero-code value subtracted, clamped at 0.
inline double squash(double c, double k) {
  return std::max(0.0, softplus(k * (c - 0.5)) - softplus(-0.5 * k));
}

/// Separable [1/4, 1/2, 1/4] filter with edge clamping.
inline std::vector<float> binomial_smooth(int n, const std::vector<float>& v) {
  std::vector<float> a = v, b(v.size());
  auto idx = [n](int x, int y, int z) {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(n) * (y + static_cast<std::size_t>(n) * z);
  };
  for (int axis = 0; axis < 3; ++axis) {
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          int lo[3] = {x, y, z}, hi[3] = {x, y, z};
          lo[axis] = std::max(lo[axis] - 1, 0);
          hi[axis] = std::min(hi[axis] + 1, n - 1);
          b[idx(x, y, z)] = 0.25f * a[idx(lo[0], lo[1], lo[2])] + 0.5f * a[idx(x, y, z)] + 0.25f * a[idx(hi[0], hi[1], hi[2])];
        }
    std::swap(a, b);
  }
  return a;
}

}  // namespace detail

/// Coarse density = squash(smoothed code), colors neutral gray.
inline RadiancePrior decode_prior(const LatentCode& code, const PriorConfig& cfg, PriorProvenance provenance = {}) {
  cfg.validate();
  const std::size_t expect = static_cast<std::size_t>(code.n) * code.n * code.n;
  require(code.n >= 8 && code.size() == expect, Errc::shape_mismatch, "latent code is not an n^3 lattice with n >= 8");
  RadiancePrior prior{Grid3<float>(code.n, 1), ColorGrid(code.n, 3, 0.5f), code.alpha_bar, cfg.sharpness,
                      std::move(provenance)};
  const auto smooth = detail::binomial_smooth(code.n, code.values);
  for (std::size_t i = 0; i < expect; ++i) {
    prior.density.values()[i] = static_cast<float>(detail::squash(smooth[i], cfg.sharpness));
  }
  return prior;
}

/// Zero density and color; marks the prior as dropped. Idempotent.
inline RadiancePrior drop_prior(const RadiancePrior& prior) {
  RadiancePrior out = prior;
  std::fill(out.density.values().begin(), out.density.values().end(), 0.0f);
  std::fill(out.colors.values().begin(), out.colors.values().end(), 0.0f);
  out.provenance.dropped = true;
  return out;
}

/// Density level separating occupied from empty: the decode of a code value
/// halfway between the clean empty (0) and full (sqrt(abar)) levels.
inline double prior_threshold(const RadiancePrior& prior) {
  return detail::squash(0.5 * std::sqrt(prior.alpha_bar), prior.sharpness);
}

/// Occupancy of the prior sampled at an n^3 lattice.
inline std::vector<bool> prior_occupancy(const RadiancePrior& prior, int n) {
  std::vector<bool> occ(static_cast<std::size_t>(n) * n * n, false);
  if (prior.dropped()) return occ;
  const double thr = prior_threshold(prior);
  const Grid3<float> lattice(n, 1);
  for (std::size_t i = 0; i < occ.size(); ++i) occ[i] = prior.density.sample(lattice.position(i)) >= thr;
  return occ;
}

/// Signed distance of the prior's occupied region at resolution n.
inline SdfGrid prior_sdf(const RadiancePrior& prior, int n) { return occupancy_to_sdf(n, prior_occupancy(prior, n)); }

/// encode -> noise at t0 -> decode.
inline RadiancePrior build_prior(const SceneSpec& scene, const PriorConfig& cfg, const NoiseSchedule& sched,
                                 std::uint64_t seed) {
  cfg.validate();
  const LatentCode clean = encode_prior(scene, cfg.coarse_n);
  const LatentCode noisy = noise_latent(clean, cfg.t0, sched, RandomStream(seed).fork("prior"));
  return decode_prior(noisy, cfg, {scene.name, cfg.t0, seed, false});
}

}  // namespace bidiff
