// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "osdiff/model.hpp"
#include "test_util.hpp"

using namespace osdiff;
using test::tiny_config;

namespace {

template <class S>
TensorT<S> run_vae_encode(OsdiffModelT<S>& m, const TensorT<S>& x) {
  Tape<S> tape;
  ParamBind<S> pb(tape, m.params, true);
  return tape.val(m.vae.encode(pb, tape.constant(x)));
}

}  // namespace

TEST_CASE("vae: shape contracts and determinism") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 1);
  Rng rng(10);
  TensorT<float> x({1, 3, 64, 64});
  rng.fill_uniform(x, 0.0, 1.0);

  TensorT<float> y0 = run_vae_encode(model, x);
  CHECK(y0.shape() == Shape{1, 4, 16, 16});
  TensorT<float> y0b = run_vae_encode(model, x);
  for (int64_t i = 0; i < y0.numel(); ++i) CHECK(y0[i] == y0b[i]);

  Tape<float> tape;
  ParamBind<float> pb(tape, model.params, true);
  int img = model.vae.decode(pb, tape.constant(y0));
  CHECK(tape.val(img).shape() == Shape{1, 3, 64, 64});
  for (int64_t i = 0; i < tape.val(img).numel(); ++i) {
    CHECK(tape.val(img)[i] >= 0.0f);
    CHECK(tape.val(img)[i] <= 1.0f);
  }
}

TEST_CASE("vae: dimension validation") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 1);
  Tape<float> tape;
  ParamBind<float> pb(tape, model.params, true);
  int bad = tape.constant(TensorT<float>({1, 3, 30, 30}));
  CHECK_THROWS_AS(model.vae.encode(pb, bad), std::invalid_argument);
  int bad_latent = tape.constant(TensorT<float>({1, 3, 8, 8}));
  CHECK_THROWS_AS(model.vae.decode(pb, bad_latent), std::invalid_argument);
}

TEST_CASE("transforms: 4x16x16 latent maps to code and back") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 2);
  Rng rng(3);
  TensorT<float> y0({1, 4, 16, 16});
  rng.fill_normal(y0);
  Tape<float> tape;
  ParamBind<float> pb(tape, model.params, true);
  int v = model.codec.analysis(pb, tape.constant(y0));
  CHECK(tape.val(v).shape() == Shape{1, tiny_config().code_channels, 8, 8});
  int y_c = model.codec.synthesis(pb, v);
  CHECK(tape.val(y_c).shape() == Shape{1, 4, 16, 16});

  int odd = tape.constant(TensorT<float>({1, 4, 15, 15}));
  CHECK_THROWS_AS(model.codec.analysis(pb, odd), std::invalid_argument);
  int wrong_ch = tape.constant(TensorT<float>({1, 3, 8, 8}));
  CHECK_THROWS_AS(model.codec.synthesis(pb, wrong_ch), std::invalid_argument);

  // all-zero code decodes to a deterministic bias pattern
  int zeros = tape.constant(TensorT<float>({1, tiny_config().code_channels, 8, 8}, 0.0f));
  int out1 = model.codec.synthesis(pb, zeros);
  int out2 = model.codec.synthesis(pb, zeros);
  for (int64_t i = 0; i < tape.val(out1).numel(); ++i) CHECK(tape.val(out1)[i] == tape.val(out2)[i]);
}

TEST_CASE("denoiser: zero-initialized control branch is exactly neutral") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 4);
  Rng rng(8);
  TensorT<float> y_t({2, 4, 16, 16}), y_c({2, 4, 16, 16});
  rng.fill_normal(y_t);
  rng.fill_normal(y_c);

  Tape<float> tape;
  ParamBind<float> pb(tape, model.params, true);
  int yt = tape.constant(y_t);
  int yc = tape.constant(y_c);
  std::vector<int> ts = {100, 900};
  int with_ctrl = model.denoiser.predict_noise(pb, yt, yc, ts);
  int without = model.denoiser.predict_noise(pb, yt, -1, ts);
  CHECK(tape.val(with_ctrl).shape() == Shape{2, 4, 16, 16});
  for (int64_t i = 0; i < tape.val(with_ctrl).numel(); ++i)
    CHECK(tape.val(with_ctrl)[i] == tape.val(without)[i]);
}

TEST_CASE("denoiser: control branch departs from neutral once projections are nonzero") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 4);
  Rng rng(9);
  rng.fill_normal(model.params.value("denoiser.ctrl.proj_mid.weight"), 0.0, 0.2);
  TensorT<float> y_t({1, 4, 16, 16}), y_c({1, 4, 16, 16});
  rng.fill_normal(y_t);
  rng.fill_normal(y_c);
  Tape<float> tape;
  ParamBind<float> pb(tape, model.params, true);
  int with_ctrl = model.denoiser.predict_noise(pb, tape.constant(y_t), tape.constant(y_c), {50});
  int without = model.denoiser.predict_noise(pb, tape.constant(y_t), -1, {50});
  double diff = 0;
  for (int64_t i = 0; i < tape.val(with_ctrl).numel(); ++i)
    diff += std::fabs(double(tape.val(with_ctrl)[i]) - double(tape.val(without)[i]));
  CHECK(diff > 1e-3);
}

TEST_CASE("denoiser: shape validation and per-sample timesteps required") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 4);
  Tape<float> tape;
  ParamBind<float> pb(tape, model.params, true);
  int yt = tape.constant(TensorT<float>({1, 4, 16, 16}));
  int yc_bad = tape.constant(TensorT<float>({1, 4, 8, 8}));
  CHECK_THROWS_AS(model.denoiser.predict_noise(pb, yt, yc_bad, {10}), std::invalid_argument);
  CHECK_THROWS_AS(model.denoiser.predict_noise(pb, yt, -1, {10, 20}), std::invalid_argument);
}

TEST_CASE("denoiser: decode_one_step is seeded-deterministic and runs one evaluation") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 5);
  Rng rng(11);
  TensorT<float> y_c({1, 4, 16, 16});
  rng.fill_normal(y_c);

  int64_t before = model.denoiser.eval_count.load();
  TensorT<float> a = model.denoiser.decode_one_step(model.params, model.schedule, y_c, 400, 1234);
  int64_t after = model.denoiser.eval_count.load();
  CHECK(after - before == 1);

  TensorT<float> b = model.denoiser.decode_one_step(model.params, model.schedule, y_c, 400, 1234);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

  TensorT<float> c = model.denoiser.decode_one_step(model.params, model.schedule, y_c, 400, 99);
  double diff = 0;
  for (int64_t i = 0; i < a.numel(); ++i) diff += std::fabs(double(a[i]) - double(c[i]));
  CHECK(diff > 0.0);
}

TEST_CASE("denoiser: decode_multi_step evaluation counts and N=1 equivalence") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 6);
  Rng rng(12);
  TensorT<float> y_c({1, 4, 16, 16});
  rng.fill_normal(y_c);

  int64_t before = model.denoiser.eval_count.load();
  TensorT<float> multi = model.denoiser.decode_multi_step(model.params, model.schedule, y_c, 5, 400, 7);
  CHECK(model.denoiser.eval_count.load() - before == 5);

  // N = 1 must coincide with the one-step sampler (same seed, same t*)
  TensorT<float> one = model.denoiser.decode_multi_step(model.params, model.schedule, y_c, 1, 400, 7);
  TensorT<float> direct = model.denoiser.decode_one_step(model.params, model.schedule, y_c, 400, 7);
  for (int64_t i = 0; i < one.numel(); ++i) CHECK(one[i] == doctest::Approx(direct[i]).epsilon(1e-5));

  CHECK_THROWS_AS(
      model.denoiser.decode_multi_step(model.params, model.schedule, y_c, 1001, 400, 7),
      std::invalid_argument);
  (void)multi;
}

TEST_CASE("discriminator: zero-initialized head scores exactly 0.5") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 7);
  REQUIRE(model.latent_disc.has_value());
  Rng rng(13);
  TensorT<float> y({3, 4, 16, 16});
  rng.fill_normal(y, 0.0, 5.0);
  Tape<float> tape;
  ParamBind<float> pb(tape, model.params, true);
  int s = model.latent_disc->score(pb, tape.constant(y), {1, 100, 200});
  CHECK(tape.val(s).shape() == Shape{3, 1});
  for (int i = 0; i < 3; ++i) CHECK(tape.val(s)[i] == 0.5f);
}

TEST_CASE("discriminator: scores stay inside the clamp for extreme inputs") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 7);
  Rng rng(14);
  rng.fill_normal(model.params.value("disc.mlp.out.weight"), 0.0, 50.0);
  model.params.value("disc.mlp.out.bias")[0] = 500.0f;
  TensorT<float> y({1, 4, 16, 16});
  rng.fill_normal(y, 0.0, 10.0);
  Tape<float> tape;
  ParamBind<float> pb(tape, model.params, true);
  int s = model.latent_disc->score(pb, tape.constant(y), {10});
  CHECK(tape.val(s)[0] >= float(kScoreClamp));
  CHECK(tape.val(s)[0] <= float(1.0 - kScoreClamp));
}

TEST_CASE("gan losses: equilibrium and hand-computed anchors") {
  CHECK(generator_gan_loss(0.5) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(generator_gan_loss(std::vector<double>{0.25, 0.5}) ==
        doctest::Approx((std::log(4.0) + std::log(2.0)) / 2.0).epsilon(1e-9));
  CHECK(generator_gan_loss(1.0 - 1e-12) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(discriminator_loss(0.5, 0.5) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
  CHECK(discriminator_loss(0.75, 0.25) == doctest::Approx(-std::log(0.25) - std::log(0.25)).epsilon(1e-9));
  CHECK(discriminator_loss(1e-9, 1.0 - 1e-9) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK_THROWS_AS(generator_gan_loss(0.0), std::invalid_argument);
}

TEST_CASE("gan losses: tape composition matches the scalar forms") {
  Tape<float> t;
  int fake = t.leaf(TensorT<float>({2, 1}, {0.25f, 0.5f}));
  int real = t.leaf(TensorT<float>({2, 1}, {0.8f, 0.9f}));
  CHECK(t.val(generator_gan_loss_node(t, fake))[0] ==
        doctest::Approx(generator_gan_loss({0.25, 0.5})).epsilon(1e-6));
  CHECK(t.val(discriminator_loss_node(t, fake, real))[0] ==
        doctest::Approx(discriminator_loss({0.25, 0.5}, {0.8, 0.9})).epsilon(1e-6));
}

TEST_CASE("sample_noisy_pair: range, independence, shared-noise test mode") {
  NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  Rng rng(15);
  TensorT<float> y0({1, 2, 4, 4});
  rng.fill_normal(y0);

  // shared noise and y_r = y0 gives an identical pair
  NoisyPair<float> same = sample_noisy_pair(y0, y0, s, 500, rng, /*share_noise=*/true);
  for (int64_t i = 0; i < same.y0_t.numel(); ++i) CHECK(same.y0_t[i] == same.yr_t[i]);

  // independent noise should differ
  NoisyPair<float> indep = sample_noisy_pair(y0, y0, s, 500, rng);
  double diff = 0;
  for (int64_t i = 0; i < indep.y0_t.numel(); ++i)
    diff += std::fabs(double(indep.y0_t[i]) - double(indep.yr_t[i]));
  CHECK(diff > 0.0);

  for (int i = 0; i < 200; ++i) {
    NoisyPair<float> p = sample_noisy_pair(y0, y0, s, 500, rng);
    CHECK(p.t >= 1);
    CHECK(p.t <= 500);
  }
}

TEST_CASE("sample_noisy_pair: timestep distribution is uniform (chi-square)") {
  NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  Rng rng(16);
  TensorT<float> y0({1, 1, 1, 1}, 0.0f);
  const int t_max = 50, draws = 10000;
  std::vector<int> counts(t_max, 0);
  for (int i = 0; i < draws; ++i) {
    NoisyPair<float> p = sample_noisy_pair(y0, y0, s, t_max, rng);
    counts[static_cast<size_t>(p.t - 1)]++;
  }
  double expect = double(draws) / t_max;
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  // dof = 49; mean 49, sd ~9.9; 4 sigma ~ 89
  CHECK(chi2 < 89.0);
}

TEST_CASE("model: save/load roundtrip preserves weights, config, tables and hash") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 21);
  std::string path = "/tmp/osdiff_test_model.osdm";
  uint64_t hash = model.save(path);
  CHECK(hash == model.file_hash);

  auto loaded = OsdiffModelT<float>::load(path);
  CHECK(loaded.file_hash == hash);
  CHECK(loaded.cfg.code_channels == model.cfg.code_channels);
  CHECK(loaded.cfg.t_star == model.cfg.t_star);
  CHECK(loaded.cdf_tables.size() == model.cdf_tables.size());
  for (size_t c = 0; c < model.cdf_tables.size(); ++c)
    CHECK(loaded.cdf_tables[c].cum == model.cdf_tables[c].cum);

  bool same = true;
  model.params.for_each([&](const std::string& name, const ParamEntry<float>& e) {
    const auto& lv = loaded.params.value(name);
    for (int64_t i = 0; i < e.value.numel(); ++i)
      if (lv[i] != e.value[i]) same = false;
  });
  CHECK(same);

  // inference load: discriminator tensors skipped, hash unchanged
  auto inf = OsdiffModelT<float>::load(path, /*include_discriminator=*/false);
  CHECK(inf.file_hash == hash);
  CHECK_FALSE(inf.latent_disc.has_value());
  CHECK_FALSE(inf.params.contains("disc.mlp.out.weight"));
}

TEST_CASE("model: control-branch seeding preserves pretrained behavior at init") {
  auto model = OsdiffModelT<float>::build(tiny_config(), 22);
  Rng rng(23);
  // pretend-pretrain: randomize the main branch away from its init
  model.params.for_each([&](const std::string& name, ParamEntry<float>& e) {
    if (name.rfind("denoiser.main.", 0) == 0) rng.fill_normal(e.value, 0.0, 0.1);
  });
  seed_control_branch(model.params, model.cfg.denoiser());

  TensorT<float> y_t({1, 4, 16, 16}), y_c({1, 4, 16, 16});
  rng.fill_normal(y_t);
  rng.fill_normal(y_c);
  Tape<float> tape;
  ParamBind<float> pb(tape, model.params, true);
  int with_ctrl = model.denoiser.predict_noise(pb, tape.constant(y_t), tape.constant(y_c), {77});
  int without = model.denoiser.predict_noise(pb, tape.constant(y_t), -1, {77});
  for (int64_t i = 0; i < tape.val(with_ctrl).numel(); ++i)
    CHECK(tape.val(with_ctrl)[i] == tape.val(without)[i]);
}
