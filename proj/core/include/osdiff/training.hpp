// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdiff/corpus.hpp"
#include "osdiff/model.hpp"
#include "osdiff/pipeline.hpp"

namespace osdiff {

struct LossWeights {
  double lambda1 = 1.0;   // reconstruction in latent space (y0 vs y_r)
  double lambda2 = 1.0;   // rate
  double lambda3 = 2.0;   // transform shortcut (y0 vs y_c)
  double lambda4 = 0.01;  // adversarial

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
      throw std::invalid_argument("loss weights must be non-negative");
  }
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

/// Fixed random draws for one generator forward; training samples them per
/// step, the gradient audit pins them so finite differences see a smooth
/// deterministic function.
template <class S>
struct GenDraws {
  TensorT<S> eps_star;   // noise injected at t* for the one-step path
  TensorT<S> u_rate;     // uniform(-0.5, 0.5) relaxation for the rate path
  TensorT<S> eps_disc;   // noise for y_r^t before scoring
  int t_disc = 1;        // shared discriminator timestep for this step
};

template <class S>
GenDraws<S> sample_gen_draws(const Shape& latent_shape, int disc_tsteps, Rng& rng) {
  GenDraws<S> d;
  d.eps_star = TensorT<S>(latent_shape);
  rng.fill_normal(d.eps_star);
  d.u_rate = TensorT<S>(latent_shape);  // resized by caller to the code shape
  d.eps_disc = TensorT<S>(latent_shape);
  rng.fill_normal(d.eps_disc);
  d.t_disc = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(disc_tsteps)));
  return d;
}

template <class S>
struct GenForwardNodes {
  int y0 = -1, v = -1, code = -1, y_c = -1, y_t = -1, eps_hat = -1, y_r = -1;
  int score_fake = -1;
  int L_diff = -1, L_rate = -1, L_feature = -1, L_G = -1;
  int total = -1;
};

struct GenForwardOpts {
  LossWeights weights;
  bool gan_term = true;     // wire λ4·L_G into the total (warm-up turns it off)
  bool ste_round = false;   // false: additive-noise relaxation on the recon path
                            // too (smooth everywhere, used by the gradient audit)
};

/// The full generator loss of one batch: analysis -> quantize -> synthesis ->
/// one-step decode -> the four weighted terms. Returns every intermediate
/// node so callers can log components or probe gradients. `y0_value` is the
/// (frozen) VAE latent, entered as a constant.
template <class S>
GenForwardNodes<S> generator_forward(OsdiffModelT<S>& model, ParamBind<S>& pb,
                                     const TensorT<S>& y0_value, const GenDraws<S>& draws,
                                     const GenForwardOpts& opts, int64_t source_pixels) {
  opts.weights.validate();
  Tape<S>& t = pb.tape();
  GenForwardNodes<S> n;
  n.y0 = t.constant(y0_value);
  n.v = model.codec.analysis(pb, n.y0);

  int u_node = t.constant(draws.u_rate);
  int v_noisy = t.add(n.v, u_node);
  n.code = opts.ste_round ? t.round_ste(n.v, static_cast<S>(model.cfg.alphabet_bound)) : v_noisy;
  n.y_c = model.codec.synthesis(pb, n.code);

  int bits = model.entropy.rate_bits_node(pb, v_noisy);
  n.L_rate = t.mul_scalar(bits, static_cast<S>(1.0 / double(source_pixels)));

  int t_star = model.cfg.t_star;
  double ab = model.schedule.alpha_bar_at(t_star);
  if (ab <= kAlphaBarFloor) throw std::invalid_argument("generator_forward: alpha_bar floor at t*");
  int eps_node = t.constant(draws.eps_star);
  n.y_t = t.affine(n.y_c, eps_node, static_cast<S>(std::sqrt(ab)), static_cast<S>(std::sqrt(1.0 - ab)));
  std::vector<int> ts(static_cast<size_t>(y0_value.dim(0)), t_star);
  n.eps_hat = model.denoiser.predict_noise(pb, n.y_t, n.y_c, ts);
  n.y_r = t.affine(n.y_t, n.eps_hat, static_cast<S>(1.0 / std::sqrt(ab)),
                   static_cast<S>(-std::sqrt(1.0 - ab) / std::sqrt(ab)));

  n.L_diff = t.mean_sq_diff(n.y0, n.y_r);
  n.L_feature = t.mean_sq_diff(n.y0, n.y_c);

  bool has_disc = model.latent_disc.has_value() || model.pixel_disc.has_value();
  if (has_disc) {
    if (model.latent_disc) {
      double ab_d = model.schedule.alpha_bar_at(draws.t_disc);
      int eps_d = t.constant(draws.eps_disc);
      int yr_t = t.affine(n.y_r, eps_d, static_cast<S>(std::sqrt(ab_d)),
                          static_cast<S>(std::sqrt(1.0 - ab_d)));
      std::vector<int> tds(static_cast<size_t>(y0_value.dim(0)), draws.t_disc);
      n.score_fake = model.latent_disc->score(pb, yr_t, tds);
    } else {
      int x_hat = model.vae.decode(pb, n.y_r);
      n.score_fake = model.pixel_disc->score(pb, x_hat);
    }
    n.L_G = generator_gan_loss_node(t, n.score_fake);
  }

  n.total = t.add(t.add(t.mul_scalar(n.L_diff, static_cast<S>(opts.weights.lambda1)),
                        t.mul_scalar(n.L_rate, static_cast<S>(opts.weights.lambda2))),
                  t.mul_scalar(n.L_feature, static_cast<S>(opts.weights.lambda3)));
  if (has_disc && opts.gan_term && opts.weights.lambda4 > 0)
    n.total = t.add(n.total, t.mul_scalar(n.L_G, static_cast<S>(opts.weights.lambda4)));
  return n;
}

/// Discriminator loss over detached generator output: scores of noisy real
/// and generated latents (or decoded pixels for the pixel variant).
template <class S>
int discriminator_forward(OsdiffModelT<S>& model, ParamBind<S>& pb, const TensorT<S>& real_input,
                          const TensorT<S>& fake_input, int t_noisy) {
  Tape<S>& t = pb.tape();
  int real_node = t.constant(real_input);
  int fake_node = t.constant(fake_input);
  int score_real, score_fake;
  if (model.latent_disc) {
    std::vector<int> ts(static_cast<size_t>(real_input.dim(0)), t_noisy);
    score_real = model.latent_disc->score(pb, real_node, ts);
    score_fake = model.latent_disc->score(pb, fake_node, ts);
  } else if (model.pixel_disc) {
    score_real = model.pixel_disc->score(pb, real_node);
    score_fake = model.pixel_disc->score(pb, fake_node);
  } else {
    throw std::logic_error("discriminator_forward: model has no discriminator");
  }
  return discriminator_loss_node(t, score_fake, score_real);
}

struct GeneratorLossBreakdown {
  double L_diff = 0, L_rate = 0, L_feature = 0, L_G = 0;
  double total = 0;
};

/// Direct evaluation of the weighted generator loss from its ingredients:
/// lambda1*mean|y0-y_r|^2 + lambda2*R(code)/pixels + lambda3*mean|y0-y_c|^2 +
/// lambda4*(-mean log score). Components are reported alongside the total.
/// An empty score batch drops the adversarial term (no-discriminator runs).
template <class S>
GeneratorLossBreakdown generator_total_loss(const TensorT<S>& y0, const TensorT<S>& y_r,
                                            const TensorT<S>& y_c, const TensorT<S>& noisy_code,
                                            const std::vector<double>& fake_scores,
                                            const LossWeights& w, const EntropyModelT<S>& em,
                                            const ParamStoreT<S>& ps, int64_t source_pixels) {
  w.validate();
  if (!y0.same_shape(y_r) || !y0.same_shape(y_c))
    throw std::invalid_argument("generator_total_loss: latent shape mismatch");
  if (source_pixels <= 0) throw std::invalid_argument("generator_total_loss: bad pixel count");
  GeneratorLossBreakdown out;
  double acc_r = 0, acc_c = 0;
  for (int64_t i = 0; i < y0.numel(); ++i) {
    double dr = double(y0[i]) - double(y_r[i]);
    double dc = double(y0[i]) - double(y_c[i]);
    acc_r += dr * dr;
    acc_c += dc * dc;
  }
  out.L_diff = acc_r / double(y0.numel());
  out.L_feature = acc_c / double(y0.numel());
  out.L_rate = em.estimate_bits(ps, noisy_code, nullptr, /*strict_support=*/false) / double(source_pixels);
  if (!fake_scores.empty()) out.L_G = generator_gan_loss(fake_scores);
  out.total = w.lambda1 * out.L_diff + w.lambda2 * out.L_rate + w.lambda3 * out.L_feature +
              w.lambda4 * out.L_G;
  return out;
}

struct StepMetrics {
  double L_diff = 0, L_rate = 0, L_feature = 0, L_G = 0, L_D = 0, bpp_est = 0;
};

struct TrainStepConfig {
  LossWeights weights;
  bool gan_active = true;
  double lr = 1e-4;
  double disc_lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
};

/// One alternating optimization step: generator update (Eq.-style weighted
/// sum) then discriminator update on detached outputs. Frozen parameters are
/// never touched; the two optimizer groups never cross.
template <class S>
StepMetrics train_step(OsdiffModelT<S>& model, const TensorT<S>& batch, const TrainStepConfig& cfg,
                       Rng& rng) {
  cfg.weights.validate();
  int N = batch.dim(0), H = batch.dim(2), W = batch.dim(3);
  int64_t source_pixels = int64_t(N) * H * W;

  // Frozen VAE encode outside the gradient graph.
  TensorT<S> y0_value;
  {
    Tape<S> tape;
    ParamBind<S> pb(tape, model.params, /*inference=*/true);
    int x = tape.constant(batch);
    y0_value = tape.val(model.vae.encode(pb, x));
  }

  GenDraws<S> draws = sample_gen_draws<S>(y0_value.shape(), model.cfg.disc_tsteps, rng);
  {  // the rate relaxation lives on the code grid, not the latent grid
    Shape code_shape{N, model.cfg.code_channels, y0_value.dim(2) / 2, y0_value.dim(3) / 2};
    draws.u_rate = TensorT<S>(code_shape);
    rng.fill_uniform(draws.u_rate, -0.5, 0.5);
  }

  StepMetrics m;
  TensorT<S> y_r_value;
  {
    Tape<S> tape;
    ParamBind<S> pb(tape, model.params);
    pb.set_lease_filter(
        [](const std::string&, const ParamEntry<S>& e) { return e.group == ParamGroup::kGenerator; });
    GenForwardOpts opts;
    opts.weights = cfg.weights;
    opts.gan_term = cfg.gan_active;
    opts.ste_round = true;
    GenForwardNodes<S> n = generator_forward(model, pb, y0_value, draws, opts, source_pixels);

    model.params.zero_grad();
    tape.backward(n.total);
    pb.flush_grads();
    model.params.adam_step_group(ParamGroup::kGenerator, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);

    m.L_diff = double(tape.val(n.L_diff)[0]);
    m.L_rate = double(tape.val(n.L_rate)[0]);
    m.L_feature = double(tape.val(n.L_feature)[0]);
    m.L_G = n.L_G >= 0 ? double(tape.val(n.L_G)[0]) : 0.0;
    y_r_value = tape.val(n.y_r);

    TensorT<S> hard = quantize_hard(tape.val(n.v), model.cfg.alphabet_bound);
    m.bpp_est = model.entropy.estimate_bits(model.params, hard) / double(source_pixels);
  }

  if (model.latent_disc || model.pixel_disc) {
    Tape<S> tape;
    ParamBind<S> pb(tape, model.params);
    pb.set_lease_filter(
        [](const std::string&, const ParamEntry<S>& e) { return e.group == ParamGroup::kDiscriminator; });
    int loss;
    if (model.latent_disc) {
      NoisyPair<S> pair =
          sample_noisy_pair(y0_value, y_r_value, model.schedule, model.cfg.disc_tsteps, rng);
      loss = discriminator_forward(model, pb, pair.y0_t, pair.yr_t, pair.t);
    } else {
      TensorT<S> x_hat_value;
      {
        Tape<S> dec_tape;
        ParamBind<S> dec_pb(dec_tape, model.params, /*inference=*/true);
        int yr_node = dec_tape.constant(y_r_value);
        x_hat_value = dec_tape.val(model.vae.decode(dec_pb, yr_node));
      }
      loss = discriminator_forward(model, pb, batch, x_hat_value, 1);
    }
    model.params.zero_grad();
    tape.backward(loss);
    pb.flush_grads();
    model.params.adam_step_group(ParamGroup::kDiscriminator, cfg.disc_lr, cfg.adam_beta1,
                                 cfg.adam_beta2);
    m.L_D = double(tape.val(loss)[0]);
  }
  return m;
}

/// Noise-prediction pretraining of the unconditional main branch on clean
/// toy latents: t ~ U{1..T} per sample, MSE between injected and predicted
/// noise. The caller freezes the branch afterwards.
template <class S>
std::vector<double> pretrain_denoiser(OsdiffModelT<S>& model, const std::vector<TensorT<S>>& latents,
                                      int steps, int batch, double lr, Rng& rng,
                                      const std::function<void(int, double)>& on_step = {}) {
  if (latents.empty()) throw std::invalid_argument("pretrain_denoiser: no latents");
  Shape ls = latents[0].shape();  // [1,4,h,w]
  std::vector<double> losses;
  auto main_only = [](const std::string& name, const ParamEntry<S>&) {
    return name.rfind("denoiser.main.", 0) == 0;
  };
  for (int step = 0; step < steps; ++step) {
    TensorT<S> y_t({batch, ls[1], ls[2], ls[3]});
    TensorT<S> eps({batch, ls[1], ls[2], ls[3]});
    std::vector<int> ts(static_cast<size_t>(batch));
    int64_t per = int64_t(ls[1]) * ls[2] * ls[3];
    for (int b = 0; b < batch; ++b) {
      const TensorT<S>& y0 = latents[static_cast<size_t>(rng.uniform_int(latents.size()))];
      int tt = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(model.cfg.T)));
      ts[static_cast<size_t>(b)] = tt;
      TensorT<S> e(y0.shape());
      rng.fill_normal(e);
      TensorT<S> noised = forward_diffuse(y0, tt, e, model.schedule);
      for (int64_t i = 0; i < per; ++i) {
        y_t[int64_t(b) * per + i] = noised[i];
        eps[int64_t(b) * per + i] = e[i];
      }
    }
    Tape<S> tape;
    ParamBind<S> pb(tape, model.params);
    pb.set_lease_filter(main_only);
    int yt_node = tape.constant(y_t);
    int eps_node = tape.constant(eps);
    int eps_hat = model.denoiser.predict_noise(pb, yt_node, /*condition=*/-1, ts);
    int loss = tape.mean_sq_diff(eps_hat, eps_node);
    model.params.zero_grad();
    tape.backward(loss);
    pb.flush_grads();
    model.params.adam_step(lr, 0.9, 0.999, 1e-8, main_only);
    losses.push_back(double(tape.val(loss)[0]));
    if (on_step) on_step(step, losses.back());
  }
  return losses;
}

/// Rate-distortion warm-up of the transform codec alone: G_a -> STE round ->
/// G_s against the latent shortcut loss plus the weighted rate term, no
/// denoiser or discriminator in the graph. Gives every training run a sane
/// y_c starting point; the transforms stay trainable afterwards.
template <class S>
std::vector<double> pretrain_transforms(OsdiffModelT<S>& model, const std::vector<TensorT<S>>& latents,
                                        int steps, int batch, double lr, double lambda2,
                                        double lambda3, Rng& rng,
                                        const std::function<void(int, double)>& on_step = {}) {
  if (latents.empty()) throw std::invalid_argument("pretrain_transforms: no latents");
  Shape ls = latents[0].shape();
  int64_t per = int64_t(ls[1]) * ls[2] * ls[3];
  auto codec_only = [](const std::string& name, const ParamEntry<S>&) {
    return name.rfind("ga.", 0) == 0 || name.rfind("gs.", 0) == 0 || name.rfind("entropy.", 0) == 0;
  };
  std::vector<double> losses;
  for (int step = 0; step < steps; ++step) {
    TensorT<S> y0({batch, ls[1], ls[2], ls[3]});
    for (int b = 0; b < batch; ++b) {
      const TensorT<S>& l = latents[static_cast<size_t>(rng.uniform_int(latents.size()))];
      for (int64_t i = 0; i < per; ++i) y0[int64_t(b) * per + i] = l[i];
    }
    TensorT<S> u({batch, model.cfg.code_channels, ls[2] / 2, ls[3] / 2});
    rng.fill_uniform(u, -0.5, 0.5);

    Tape<S> tape;
    ParamBind<S> pb(tape, model.params);
    pb.set_lease_filter(codec_only);
    int y0n = tape.constant(y0);
    int v = model.codec.analysis(pb, y0n);
    int code = tape.round_ste(v, static_cast<S>(model.cfg.alphabet_bound));
    int y_c = model.codec.synthesis(pb, code);
    int v_noisy = tape.add(v, tape.constant(u));
    int bits = model.entropy.rate_bits_node(pb, v_noisy);
    // rate normalized per source pixel: latents sit at 1/16 the pixel count
    int64_t source_pixels = int64_t(batch) * ls[2] * ls[3] * 16;
    int loss = tape.add(tape.mul_scalar(tape.mean_sq_diff(y0n, y_c), static_cast<S>(lambda3)),
                        tape.mul_scalar(bits, static_cast<S>(lambda2 / double(source_pixels))));
    model.params.zero_grad();
    tape.backward(loss);
    pb.flush_grads();
    model.params.adam_step(lr, 0.9, 0.999, 1e-8, codec_only);
    losses.push_back(double(tape.val(loss)[0]));
    if (on_step) on_step(step, losses.back());
  }
  return losses;
}

/// Frozen-path VAE encodes of a set of images, one [1,4,h,w] latent each.
template <class S>
std::vector<TensorT<S>> encode_corpus(OsdiffModelT<S>& model, const std::vector<Image>& images) {
  std::vector<TensorT<S>> out;
  out.reserve(images.size());
  for (const Image& img : images) {
    Tape<S> tape;
    ParamBind<S> pb(tape, model.params, /*inference=*/true);
    int x = tape.constant(stack_images<S>({img}, {0}));
    out.push_back(tape.val(model.vae.encode(pb, x)));
  }
  return out;
}

}  // namespace osdiff
