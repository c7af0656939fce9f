// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "osdiff/corpus.hpp"
#include "osdiff/pipeline.hpp"

using namespace osdiff;

namespace {

ModelConfig bench_config() {
  ModelConfig c;
  c.vae_base = 16;
  c.transform_width = 16;
  c.denoiser_base = 32;
  c.res_blocks = 1;
  c.temb_dim = 64;
  c.t_star = 400;
  c.mlp_hidden = 32;
  return c;
}

OsdiffModelT<float>& bench_model() {
  static OsdiffModelT<float> model =
      OsdiffModelT<float>::build(bench_config(), 77, /*with_discriminator=*/false);
  return model;
}

void BM_Compress(benchmark::State& state) {
  auto& model = bench_model();
  Image img = make_toy_image(5, 1, 64, 64);
  for (auto _ : state) {
    CompressResult r = compress(model, img, 0);
    benchmark::DoNotOptimize(r.bytes);
  }
}
BENCHMARK(BM_Compress);

void BM_DecompressSteps(benchmark::State& state) {
  auto& model = bench_model();
  Image img = make_toy_image(5, 1, 64, 64);
  CompressResult r = compress(model, img, 0);
  int steps = static_cast<int>(state.range(0));
  for (auto _ : state) {
    Image rec = decompress(model, r.bytes, steps);
    benchmark::DoNotOptimize(rec);
  }
}
BENCHMARK(BM_DecompressSteps)->Arg(1)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_DenoiserEval(benchmark::State& state) {
  auto& model = bench_model();
  Rng rng(3);
  TensorT<float> y_c({1, 4, 16, 16});
  rng.fill_normal(y_c);
  for (auto _ : state) {
    TensorT<float> y =
        model.denoiser.decode_one_step(model.params, model.schedule, y_c, model.cfg.t_star, 1);
    benchmark::DoNotOptimize(y);
  }
  state.SetLabel("one network evaluation per decode");
}
BENCHMARK(BM_DenoiserEval)->Unit(benchmark::kMillisecond);

}  // namespace
