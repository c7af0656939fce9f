// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "osdiff/rng.hpp"
#include "osdiff/tape.hpp"

using namespace osdiff;

namespace {

void BM_Conv2dForward(benchmark::State& state) {
  int c = static_cast<int>(state.range(0));
  int h = static_cast<int>(state.range(1));
  Rng rng(7);
  TensorT<float> x({4, c, h, h}), w({c, c, 3, 3}), b({c});
  rng.fill_normal(x);
  rng.fill_normal(w, 0.0, 0.05);
  for (auto _ : state) {
    Tape<float> tape;
    int xi = tape.leaf(x);
    int wi = tape.leaf(w);
    int bi = tape.leaf(b);
    benchmark::DoNotOptimize(tape.conv2d(xi, wi, bi, 1, 1));
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 4 * c * int64_t(c) * h * h * 9 * 2);
}
BENCHMARK(BM_Conv2dForward)->Args({32, 16})->Args({32, 32})->Args({16, 64});

void BM_Conv2dTrainStep(benchmark::State& state) {
  int c = static_cast<int>(state.range(0));
  int h = static_cast<int>(state.range(1));
  Rng rng(7);
  TensorT<float> x({4, c, h, h}), w({c, c, 3, 3}), b({c});
  rng.fill_normal(x);
  rng.fill_normal(w, 0.0, 0.05);
  for (auto _ : state) {
    Tape<float> tape;
    int xi = tape.leaf(x, true);
    int wi = tape.leaf(w, true);
    int bi = tape.leaf(b, true);
    int loss = tape.mean(tape.conv2d(xi, wi, bi, 1, 1));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(wi));
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * 4 * c * int64_t(c) * h * h * 9 * 2 * 3);
}
BENCHMARK(BM_Conv2dTrainStep)->Args({32, 16})->Args({32, 32});

void BM_GroupNorm(benchmark::State& state) {
  Rng rng(9);
  TensorT<float> x({4, 64, 16, 16}), g({64}, 1.0f), b({64});
  rng.fill_normal(x);
  for (auto _ : state) {
    Tape<float> tape;
    int xi = tape.leaf(x);
    int gi = tape.leaf(g);
    int bi = tape.leaf(b);
    benchmark::DoNotOptimize(tape.group_norm(xi, 8, gi, bi));
  }
}
BENCHMARK(BM_GroupNorm);

}  // namespace
