// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "osdiff/rng.hpp"
#include "osdiff/tensor.hpp"

namespace osdiff {

/// Per-step noise rates and their running products. alpha_bar is indexed
/// 0..T with alpha_bar[0] = 1; beta/alpha are indexed 1..T (slot 0 unused).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;       // beta[t], t in 1..T
  std::vector<double> alpha;      // 1 - beta[t]
  std::vector<double> alpha_bar;  // prod_{i<=t} alpha[i], alpha_bar[0] = 1

  double beta_at(int t) const { return beta.at(static_cast<size_t>(t)); }
  double alpha_at(int t) const { return alpha.at(static_cast<size_t>(t)); }
  double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<size_t>(t)); }
};

/// Linear beta ramp from beta_start to beta_end over T steps.
inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
    throw std::invalid_argument("schedule: beta endpoints must lie in (0,1)");
  if (beta_start > beta_end) throw std::invalid_argument("schedule: beta_start > beta_end");
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<size_t>(T) + 1, 0.0);
  s.alpha.resize(static_cast<size_t>(T) + 1, 0.0);
  s.alpha_bar.resize(static_cast<size_t>(T) + 1, 0.0);
  s.alpha_bar[0] = 1.0;
  for (int t = 1; t <= T; ++t) {
    double b = (T == 1) ? beta_start
                        : beta_start + (beta_end - beta_start) * double(t - 1) / double(T - 1);
    s.beta[static_cast<size_t>(t)] = b;
    s.alpha[static_cast<size_t>(t)] = 1.0 - b;
    s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t - 1)] * (1.0 - b);
  }
  return s;
}

constexpr double kAlphaBarFloor = 1e-8;

namespace detail {
inline void check_t(const NoiseSchedule& s, int t) {
  if (t < 1 || t > s.T) throw std::invalid_argument("diffusion: t out of range [1, T]");
}
template <class S>
inline void check_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}
}  // namespace detail

/// y_t = sqrt(abar_t) * y0 + sqrt(1 - abar_t) * eps.
template <class S>
TensorT<S> forward_diffuse(const TensorT<S>& y0, int t, const TensorT<S>& eps, const NoiseSchedule& s) {
  detail::check_t(s, t);
  detail::check_same_shape(y0, eps, "forward_diffuse");
  double ab = s.alpha_bar_at(t);
  S ca = static_cast<S>(std::sqrt(ab));
  S cb = static_cast<S>(std::sqrt(1.0 - ab));
  TensorT<S> out(y0.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = ca * y0[i] + cb * eps[i];
  return out;
}

/// One ancestral step t -> t-1: mean (1/sqrt(a_t)) (y_t - (1-a_t)/sqrt(1-abar_t) * eps_hat),
/// variance ((1 - abar_{t-1}) / (1 - abar_t)) * beta_t. At t = 1 the variance
/// is exactly zero and no noise is drawn.
template <class S>
TensorT<S> reverse_step(const TensorT<S>& y_t, const TensorT<S>& eps_hat, int t, const NoiseSchedule& s,
                        Rng& rng) {
  detail::check_t(s, t);
  detail::check_same_shape(y_t, eps_hat, "reverse_step");
  double a = s.alpha_at(t);
  double ab = s.alpha_bar_at(t);
  double ab_prev = s.alpha_bar_at(t - 1);
  double mean_y = 1.0 / std::sqrt(a);
  double mean_e = -mean_y * (1.0 - a) / std::sqrt(1.0 - ab);
  double var = (1.0 - ab_prev) / (1.0 - ab) * s.beta_at(t);
  TensorT<S> out(y_t.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = static_cast<S>(mean_y * double(y_t[i]) + mean_e * double(eps_hat[i]));
  if (var > 0.0) {
    double sd = std::sqrt(var);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += static_cast<S>(sd * rng.normal());
  }
  return out;
}

/// Mean squared error between the injected and predicted noise.
template <class S>
double noise_prediction_loss(const TensorT<S>& eps, const TensorT<S>& eps_hat) {
  detail::check_same_shape(eps, eps_hat, "noise_prediction_loss");
  double acc = 0;
  for (int64_t i = 0; i < eps.numel(); ++i) {
    double d = double(eps[i]) - double(eps_hat[i]);
    acc += d * d;
  }
  return acc / double(eps.numel());
}

/// y0_hat = (y_t - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t); the exact
/// inverse of forward_diffuse when eps_hat equals the injected noise.
template <class S>
TensorT<S> one_step_sample(const TensorT<S>& y_t, const TensorT<S>& eps_hat, int t,
                           const NoiseSchedule& s) {
  detail::check_t(s, t);
  detail::check_same_shape(y_t, eps_hat, "one_step_sample");
  double ab = s.alpha_bar_at(t);
  if (ab <= kAlphaBarFloor)
    throw std::invalid_argument("one_step_sample: alpha_bar below numeric floor at t=" + std::to_string(t));
  S inv = static_cast<S>(1.0 / std::sqrt(ab));
  S ce = static_cast<S>(std::sqrt(1.0 - ab));
  TensorT<S> out(y_t.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = inv * (y_t[i] - ce * eps_hat[i]);
  return out;
}

/// Evenly spaced parent timesteps for an N-step subsampled chain ending at
/// t_max: tau_k = round(k * t_max / N), k = 1..N (returned in ascending
/// order; index 0 of the result is tau_1).
inline std::vector<int> sub_schedule_timesteps(int steps, int t_max) {
  if (steps < 1) throw std::invalid_argument("sub_schedule: steps must be >= 1");
  if (steps > t_max) throw std::invalid_argument("sub_schedule: steps exceeds t_max");
  std::vector<int> taus(static_cast<size_t>(steps));
  for (int k = 1; k <= steps; ++k) {
    int tau = static_cast<int>(std::llround(double(k) * double(t_max) / double(steps)));
    taus[static_cast<size_t>(k - 1)] = std::max(1, std::min(t_max, tau));
  }
  return taus;
}

/// Derived N-step schedule over the evenly spaced parent timesteps:
/// abar'_k = abar(tau_k). Running a reverse_step chain on it reproduces the
/// subsampled ancestral sampler, and N = 1 coincides with one_step_sample
/// at t_max.
inline NoiseSchedule sub_schedule(const NoiseSchedule& s, int steps, int t_max) {
  if (steps > s.T) throw std::invalid_argument("sub_schedule: steps exceeds schedule length");
  detail::check_t(s, t_max);
  std::vector<int> taus = sub_schedule_timesteps(steps, t_max);
  NoiseSchedule d;
  d.T = steps;
  d.beta.resize(static_cast<size_t>(steps) + 1, 0.0);
  d.alpha.resize(static_cast<size_t>(steps) + 1, 0.0);
  d.alpha_bar.resize(static_cast<size_t>(steps) + 1, 0.0);
  d.alpha_bar[0] = 1.0;
  double prev_ab = 1.0;
  for (int k = 1; k <= steps; ++k) {
    double ab = s.alpha_bar_at(taus[static_cast<size_t>(k - 1)]);
    double a = ab / prev_ab;
    d.alpha[static_cast<size_t>(k)] = a;
    d.beta[static_cast<size_t>(k)] = 1.0 - a;
    d.alpha_bar[static_cast<size_t>(k)] = ab;
    prev_ab = ab;
  }
  return d;
}

}  // namespace osdiff
