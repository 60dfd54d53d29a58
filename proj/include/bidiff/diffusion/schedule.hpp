#pragma once

// Noise schedules, forward noising, x0 recovery and the ancestral / DDIM
// reverse step. Tensors are flat float spans; arithmetic runs in double.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "bidiff/core/error.hpp"
#include "bidiff/core/parallel.hpp"
#include "bidiff/core/random.hpp"

namespace bidiff {

enum class ScheduleKind { linear_beta, cosine };

inline std::string to_string(ScheduleKind k) { return k == ScheduleKind::cosine ? "cosine" : "linear_beta"; }

inline ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "linear_beta" || s == "linear") return ScheduleKind::linear_beta;
  throw Error(Errc::parse, "unknown schedule kind '" + s + "'");
}

/// Lower bound mixed into every schedule: abar'_t = floor + (1 - floor) abar_t.
/// Keeps abar_T inside (0, 0.05) and x0 recovery well conditioned in float.
inline constexpr double kTerminalFloor = 2e-3;
inline constexpr double kCosineOffset = 0.008;

inline double cosine_alpha_bar(double t, double steps) {
  const double f = std::cos((t / steps + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi * 0.5);
  const double f0 = std::cos(kCosineOffset / (1.0 + kCosineOffset) * std::numbers::pi * 0.5);
  const double raw = (f * f) / (f0 * f0);
  return kTerminalFloor + (1.0 - kTerminalFloor) * raw;
}

/// abar_t for t = 0..T with abar_0 = 1, strictly decreasing.
class NoiseSchedule {
 public:
  NoiseSchedule() : NoiseSchedule(ScheduleKind::cosine, 50) {}

  NoiseSchedule(ScheduleKind kind, int steps) : kind_(kind), steps_(steps) {
    require(steps >= 2, Errc::invalid_argument, "schedule needs at least 2 steps");
    alpha_bar_.resize(steps + 1);
    alpha_bar_[0] = 1.0;
    if (kind == ScheduleKind::cosine) {
      for (int t = 1; t <= steps; ++t) alpha_bar_[t] = cosine_alpha_bar(t, steps);
    } else {
      // Betas from 1e-4 to 0.02 at 1000 steps, rescaled for other lengths.
      const double scale = 1000.0 / steps;
      const double lo = 1e-4 * scale, hi = std::min(0.02 * scale, 0.999);
      double prod = 1.0;
      for (int t = 1; t <= steps; ++t) {
        const double beta = lo + (hi - lo) * (t - 1) / (steps - 1);
        prod *= 1.0 - std::min(beta, 0.999);
        alpha_bar_[t] = kTerminalFloor + (1.0 - kTerminalFloor) * prod;
      }
    }
  }

  ScheduleKind kind() const { return kind_; }
  int steps() const { return steps_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

  double alpha_bar(int t) const {
    require(t >= 0 && t <= steps_, Errc::invalid_argument, "timestep " + std::to_string(t) + " out of range");
    return alpha_bar_[t];
  }
  double beta(int t) const { return 1.0 - alpha_bar(t) / alpha_bar(t - 1); }
  /// Posterior variance of q(x_{t-1} | x_t, x0).
  double posterior_variance(int t) const {
    return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
  }

  /// abar at a fractional position tau in [0, T], linear between entries.
  double alpha_bar_at(double tau) const {
    require(tau >= 0.0 && tau <= steps_, Errc::invalid_argument, "fractional timestep out of range");
    const int lo = std::min(static_cast<int>(tau), steps_ - 1);
    const double f = tau - lo;
    return (1.0 - f) * alpha_bar_[lo] + f * alpha_bar_[lo + 1];
  }

  std::string describe() const { return to_string(kind_) + "/" + std::to_string(steps_); }

 private:
  ScheduleKind kind_;
  int steps_;
  std::vector<double> alpha_bar_;
};

inline NoiseSchedule make_schedule(ScheduleKind kind, int steps) { return NoiseSchedule(kind, steps); }

using Tensor = std::vector<float>;

namespace detail {
inline void check_same(std::size_t a, std::size_t b, const char* what) {
  require(a == b, Errc::shape_mismatch, std::string(what) + ": size " + std::to_string(a) + " vs " + std::to_string(b));
}
}  // namespace detail

/// x_t = sqrt(abar) x0 + sqrt(1 - abar) eps.
inline Tensor forward_noise(std::span<const float> x0, int t, std::span<const float> eps, const NoiseSchedule& s) {
  detail::check_same(x0.size(), eps.size(), "forward_noise");
  const double ab = s.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(a * x0[i] + b * eps[i]);
  return out;
}

inline constexpr double kMinAlphaBar = 1e-8;

/// Inverts the forward process for a given noise estimate.
inline Tensor predict_x0(std::span<const float> xt, std::span<const float> eps, int t, const NoiseSchedule& s) {
  detail::check_same(xt.size(), eps.size(), "predict_x0");
  require(t >= 1, Errc::invalid_argument, "predict_x0 needs t >= 1");
  const double ab = s.alpha_bar(t);
  require(ab >= kMinAlphaBar, Errc::numerical_guard, "alpha_bar below 1e-8 at t=" + std::to_string(t));
  const double inv = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(xt.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>((xt[i] - b * eps[i]) * inv);
  return out;
}

/// The noise that maps x0 to x_t at step t.
inline Tensor implied_eps(std::span<const float> xt, std::span<const float> x0, int t, const NoiseSchedule& s) {
  detail::check_same(xt.size(), x0.size(), "implied_eps");
  const double ab = s.alpha_bar(t);
  require(ab < 1.0, Errc::numerical_guard, "noise undefined where alpha_bar = 1");
  const double a = std::sqrt(ab), inv = 1.0 / std::sqrt(1.0 - ab);
  Tensor out(xt.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>((xt[i] - a * x0[i]) * inv);
  return out;
}

enum class StepMode { ancestral, ddim };

struct StepOptions {
  StepMode mode = StepMode::ancestral;
  /// Clamp the x0 estimate to [clip_lo, clip_hi] before stepping.
  bool clip = false;
  double clip_lo = 0.0, clip_hi = 1.0;
};

/// One reverse step x_t -> x_{t-1}. Ancestral mode samples the posterior with
/// variance beta_tilde_t (noise drawn from `noise` at counters 0..n-1, none at
/// t = 1); DDIM mode is deterministic.
inline Tensor ddpm_step(std::span<const float> xt, std::span<const float> eps, int t, const NoiseSchedule& s,
                        const RandomStream& noise, const StepOptions& opt = {}) {
  require(t >= 1 && t <= s.steps(), Errc::invalid_argument, "ddpm_step: t out of range");
  Tensor x0 = predict_x0(xt, eps, t, s);
  if (opt.clip) {
    for (auto& v : x0) v = static_cast<float>(std::clamp<double>(v, opt.clip_lo, opt.clip_hi));
  }
  const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1);
  Tensor out(xt.size());
  if (opt.mode == StepMode::ddim) {
    const double a = std::sqrt(ab), inv = 1.0 / std::sqrt(1.0 - ab);
    const double ap = std::sqrt(ab_prev), bp = std::sqrt(1.0 - ab_prev);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double e = (xt[i] - a * x0[i]) * inv;
      out[i] = static_cast<float>(ap * x0[i] + bp * e);
    }
    return out;
  }
  const double beta = s.beta(t);
  const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
  const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
  const double sigma = t > 1 ? std::sqrt(s.posterior_variance(t)) : 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = c0 * x0[i] + ct * xt[i];
    if (sigma > 0.0) v += sigma * noise.normal(i);
    out[i] = static_cast<float>(v);
  }
  return out;
}

/// Mean squared error between predicted and true noise.
inline double simple_loss(std::span<const float> pred, std::span<const float> truth) {
  detail::check_same(pred.size(), truth.size(), "simple_loss");
  require(!pred.empty(), Errc::invalid_argument, "simple_loss on empty tensors");
  const double sum = ordered_sum(pred.size(), [&](std::size_t i) {
    const double d = static_cast<double>(pred[i]) - truth[i];
    return d * d;
  });
  return sum / static_cast<double>(pred.size());
}

/// Standard normal tensor drawn from a stream.
inline Tensor gaussian(std::size_t n, const RandomStream& stream) {
  Tensor out(n);
  stream.fill_normal(std::span<float>(out));
  return out;
}

/// eps_u + gamma (eps_c - eps_u), elementwise. Exact at gamma = 0 and 1.
inline Tensor guidance_combine(std::span<const float> eps_uncond, std::span<const float> eps_cond, double gamma) {
  detail::check_same(eps_uncond.size(), eps_cond.size(), "guidance_combine");
  Tensor out(eps_uncond.size());
  if (gamma == 0.0) return Tensor(eps_uncond.begin(), eps_uncond.end());
  if (gamma == 1.0) return Tensor(eps_cond.begin(), eps_cond.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(eps_uncond[i] + gamma * (static_cast<double>(eps_cond[i]) - eps_uncond[i]));
  }
  return out;
}

}  // namespace bidiff
