// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "osdiff/denoiser.hpp"
#include "osdiff/diffusion.hpp"

namespace osdiff {

constexpr double kScoreClamp = 1e-6;

enum class DiscVariant : int { kNone = 0, kPixel = 1, kLatent = 2 };

/// Latent-space discriminator: a trainable copy of the denoiser's input +
/// middle blocks (f_d) followed by a pooled MLP scoring head. The final
/// layer starts zero-initialized, so an untrained head scores exactly 0.5.
template <class S>
struct LatentDiscriminatorT {
  EncoderStack<S> fd;
  LinearLayer<S> h1, h2, out;
  int mlp_hidden = 64;

  static LatentDiscriminatorT create(ParamStoreT<S>& ps, const DenoiserConfig& dcfg, int mlp_hidden,
                                     Rng& rng) {
    LatentDiscriminatorT d;
    d.mlp_hidden = mlp_hidden;
    auto G = ParamGroup::kDiscriminator;
    d.fd = EncoderStack<S>::create(ps, "disc.fd", dcfg, dcfg.latent_channels, rng, G);
    d.h1 = LinearLayer<S>::create(ps, "disc.mlp.h1", d.fd.mid_width(), mlp_hidden, rng, G);
    d.h2 = LinearLayer<S>::create(ps, "disc.mlp.h2", mlp_hidden, mlp_hidden, rng, G);
    d.out = LinearLayer<S>::create(ps, "disc.mlp.out", mlp_hidden, 1, rng, G, /*zero_init=*/true);
    return d;
  }

  /// Probability-of-real scores, [N,1], clamped into (1e-6, 1-1e-6).
  int score(ParamBind<S>& pb, int y_noisy, const std::vector<int>& ts) const {
    Tape<S>& t = pb.tape();
    typename EncoderStack<S>::Out enc = fd.forward(pb, y_noisy, ts);
    int h = t.global_avg_pool(enc.mid);
    h = t.silu(h1(pb, h));
    h = t.silu(h2(pb, h));
    int s = t.sigmoid(out(pb, h));
    return t.clamp(s, static_cast<S>(kScoreClamp), static_cast<S>(1.0 - kScoreClamp));
  }
};

/// Pixel-space discriminator used by the ablation config: a small strided
/// conv stack over decoded images with the same pooled MLP head.
template <class S>
struct PixelDiscriminatorT {
  Conv2dLayer<S> c1, c2, c3;
  GroupNormLayer<S> gn1, gn2, gn3;
  LinearLayer<S> h1, h2, out;

  static PixelDiscriminatorT create(ParamStoreT<S>& ps, int mlp_hidden, int gn_groups, Rng& rng) {
    PixelDiscriminatorT d;
    auto G = ParamGroup::kDiscriminator;
    d.c1 = Conv2dLayer<S>::create(ps, "disc.pix.c1", 3, 16, 4, 2, 1, rng, G);
    d.gn1 = GroupNormLayer<S>::create(ps, "disc.pix.gn1", 16, gn_groups, G);
    d.c2 = Conv2dLayer<S>::create(ps, "disc.pix.c2", 16, 32, 4, 2, 1, rng, G);
    d.gn2 = GroupNormLayer<S>::create(ps, "disc.pix.gn2", 32, gn_groups, G);
    d.c3 = Conv2dLayer<S>::create(ps, "disc.pix.c3", 32, 64, 4, 2, 1, rng, G);
    d.gn3 = GroupNormLayer<S>::create(ps, "disc.pix.gn3", 64, gn_groups, G);
    d.h1 = LinearLayer<S>::create(ps, "disc.pix.h1", 64, mlp_hidden, rng, G);
    d.h2 = LinearLayer<S>::create(ps, "disc.pix.h2", mlp_hidden, mlp_hidden, rng, G);
    d.out = LinearLayer<S>::create(ps, "disc.pix.out", mlp_hidden, 1, rng, G, /*zero_init=*/true);
    return d;
  }

  int score(ParamBind<S>& pb, int image) const {
    Tape<S>& t = pb.tape();
    int h = t.silu(gn1(pb, c1(pb, image)));
    h = t.silu(gn2(pb, c2(pb, h)));
    h = t.silu(gn3(pb, c3(pb, h)));
    h = t.global_avg_pool(h);
    h = t.silu(h1(pb, h));
    h = t.silu(h2(pb, h));
    int s = t.sigmoid(out(pb, h));
    return t.clamp(s, static_cast<S>(kScoreClamp), static_cast<S>(1.0 - kScoreClamp));
  }
};

// ---- GAN losses (natural-log convention) -------------------------------------

inline double generator_gan_loss(const std::vector<double>& fake_scores) {
  if (fake_scores.empty()) throw std::invalid_argument("generator_gan_loss: empty score batch");
  double acc = 0;
  for (double s : fake_scores) {
    if (!(s > 0.0 && s <= 1.0)) throw std::invalid_argument("generator_gan_loss: score outside (0,1]");
    acc -= std::log(s);
  }
  return acc / double(fake_scores.size());
}

inline double generator_gan_loss(double fake_score) {
  return generator_gan_loss(std::vector<double>{fake_score});
}

inline double discriminator_loss(const std::vector<double>& fake_scores,
                                 const std::vector<double>& real_scores) {
  if (fake_scores.empty() || real_scores.empty())
    throw std::invalid_argument("discriminator_loss: empty score batch");
  double acc_fake = 0, acc_real = 0;
  for (double s : fake_scores) {
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("discriminator_loss: score outside (0,1)");
    acc_fake -= std::log(1.0 - s);
  }
  for (double s : real_scores) {
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("discriminator_loss: score outside (0,1)");
    acc_real -= std::log(s);
  }
  return acc_fake / double(fake_scores.size()) + acc_real / double(real_scores.size());
}

inline double discriminator_loss(double fake_score, double real_score) {
  return discriminator_loss(std::vector<double>{fake_score}, std::vector<double>{real_score});
}

/// Tape composition of -mean(log(score)); scores must arrive pre-clamped.
template <class S>
int generator_gan_loss_node(Tape<S>& t, int fake_scores) {
  return t.mul_scalar(t.mean(t.log(fake_scores)), S(-1));
}

/// Tape composition of -mean(log(1 - fake)) - mean(log(real)).
template <class S>
int discriminator_loss_node(Tape<S>& t, int fake_scores, int real_scores) {
  int one_minus_fake = t.add_scalar(t.mul_scalar(fake_scores, S(-1)), S(1));
  int lf = t.mul_scalar(t.mean(t.log(one_minus_fake)), S(-1));
  int lr = t.mul_scalar(t.mean(t.log(real_scores)), S(-1));
  return t.add(lf, lr);
}

/// Noisy (y0, y_r) pair at a shared uniformly drawn timestep with
/// independent noise draws (shared noise is a test-only mode).
template <class S>
struct NoisyPair {
  int t = 0;
  TensorT<S> y0_t;
  TensorT<S> yr_t;
};

template <class S>
NoisyPair<S> sample_noisy_pair(const TensorT<S>& y0, const TensorT<S>& y_r, const NoiseSchedule& s,
                               int t_max, Rng& rng, bool share_noise = false) {
  if (!y0.same_shape(y_r)) throw std::invalid_argument("sample_noisy_pair: shape mismatch");
  if (t_max < 1 || t_max > s.T) throw std::invalid_argument("sample_noisy_pair: bad timestep range");
  NoisyPair<S> p;
  p.t = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(t_max)));
  TensorT<S> eps_a(y0.shape());
  rng.fill_normal(eps_a);
  TensorT<S> eps_b = eps_a;
  if (!share_noise) rng.fill_normal(eps_b);
  p.y0_t = forward_diffuse(y0, p.t, eps_a, s);
  p.yr_t = forward_diffuse(y_r, p.t, eps_b, s);
  return p;
}

}  // namespace osdiff
