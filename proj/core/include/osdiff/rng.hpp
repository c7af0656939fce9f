// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

#include "osdiff/tensor.hpp"

namespace osdiff {

/// Deterministic 64-bit stream generator (splitmix64 core). The integer
/// sequence for a given seed is identical on every platform; decode
/// reproducibility depends on it.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n), rejection-sampled.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) return 0;
    uint64_t bound = ~uint64_t(0) - (~uint64_t(0) % n);
    uint64_t x = next_u64();
    while (x >= bound) x = next_u64();
    return x % n;
  }

  /// Standard normal via Box-Muller; the spare draw is cached so one seed
  /// yields one fixed sequence.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <class S>
  void fill_normal(TensorT<S>& t, double mean = 0.0, double stddev = 1.0) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(mean + stddev * normal());
  }

  template <class S>
  void fill_uniform(TensorT<S>& t, double lo, double hi) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(uniform(lo, hi));
  }

  template <class S>
  TensorT<S> normal_tensor(const Shape& shape, double mean = 0.0, double stddev = 1.0) {
    TensorT<S> t(shape);
    fill_normal(t, mean, stddev);
    return t;
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace osdiff
