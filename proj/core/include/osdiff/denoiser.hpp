// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "osdiff/diffusion.hpp"
#include "osdiff/layers.hpp"

namespace osdiff {

struct DenoiserConfig {
  int base = 64;                         // channel width at full latent resolution
  std::vector<int> channel_mult = {1, 2};
  int res_blocks = 2;                    // residual blocks per level (and in the middle)
  int temb_dim = 128;                    // timestep-embedding dimension
  int t_star = 999;                      // one-step inference timestep
  int gn_groups = 8;
  int latent_channels = 4;
};

/// Encoder + middle stack shared by the main branch, the control branch and
/// the discriminator's feature extractor f_d: input conv, `res_blocks`
/// residual blocks per level with stride-2 transitions, and a residual
/// middle. Returns the per-level skip activations plus the middle output.
template <class S>
struct EncoderStack {
  DenoiserConfig cfg;
  int in_channels = 4;
  Conv2dLayer<S> in_conv;
  TimeEmbed<S> temb;
  std::vector<std::vector<ResBlock<S>>> level_blocks;
  std::vector<Conv2dLayer<S>> downs;
  std::vector<ResBlock<S>> mid_blocks;

  int width(int level) const { return cfg.base * cfg.channel_mult[static_cast<size_t>(level)]; }
  int levels() const { return static_cast<int>(cfg.channel_mult.size()); }
  int mid_width() const { return width(levels() - 1); }

  static EncoderStack create(ParamStoreT<S>& ps, const std::string& prefix, const DenoiserConfig& cfg,
                             int in_channels, Rng& rng, ParamGroup group) {
    EncoderStack e;
    e.cfg = cfg;
    e.in_channels = in_channels;
    e.in_conv = Conv2dLayer<S>::create(ps, prefix + ".in", in_channels, cfg.base * cfg.channel_mult[0],
                                       3, 1, 1, rng, group);
    e.temb = TimeEmbed<S>::create(ps, prefix + ".temb", cfg.base, cfg.temb_dim, rng, group);
    int prev = cfg.base * cfg.channel_mult[0];
    for (int lv = 0; lv < e.levels(); ++lv) {
      std::vector<ResBlock<S>> blocks;
      for (int b = 0; b < cfg.res_blocks; ++b) {
        int in_w = (b == 0) ? prev : e.width(lv);
        blocks.push_back(ResBlock<S>::create(ps, prefix + ".enc" + std::to_string(lv) + ".b" + std::to_string(b),
                                             in_w, e.width(lv), cfg.temb_dim, cfg.gn_groups, rng, group));
      }
      e.level_blocks.push_back(std::move(blocks));
      prev = e.width(lv);
      if (lv + 1 < e.levels())
        e.downs.push_back(Conv2dLayer<S>::create(ps, prefix + ".down" + std::to_string(lv), prev, prev,
                                                 4, 2, 1, rng, group));
    }
    for (int b = 0; b < cfg.res_blocks; ++b)
      e.mid_blocks.push_back(ResBlock<S>::create(ps, prefix + ".mid.b" + std::to_string(b), e.mid_width(),
                                                 e.mid_width(), cfg.temb_dim, cfg.gn_groups, rng, group));
    return e;
  }

  struct Out {
    std::vector<int> skips;  // one per level, at that level's resolution
    int mid = -1;
    int temb_node = -1;
  };

  Out forward(ParamBind<S>& pb, int x, const std::vector<int>& ts) const {
    Out out;
    out.temb_node = temb(pb, ts);
    int h = in_conv(pb, x);
    for (int lv = 0; lv < levels(); ++lv) {
      for (const auto& block : level_blocks[static_cast<size_t>(lv)]) h = block(pb, h, out.temb_node);
      out.skips.push_back(h);
      if (lv + 1 < levels()) h = downs[static_cast<size_t>(lv)](pb, h);
    }
    for (const auto& block : mid_blocks) h = block(pb, h, out.temb_node);
    out.mid = h;
    return out;
  }
};

/// Conditional noise-prediction UNet. The main branch sees only (y_t, t);
/// conditioning on y_c enters through a control branch that duplicates the
/// encoder + middle, takes concat(y_t, y_c) as input, and feeds its
/// activations back through zero-initialized 1x1 projections, so an
/// untrained control branch leaves the output bit-identical to the
/// unconditioned net.
template <class S>
struct DenoiserT {
  DenoiserConfig cfg;
  EncoderStack<S> main;
  std::vector<std::vector<ResBlock<S>>> dec_blocks;  // per level, reverse order applied
  GroupNormLayer<S> out_gn;
  Conv2dLayer<S> out_conv;
  EncoderStack<S> ctrl;
  std::vector<Conv2dLayer<S>> ctrl_proj;  // zero-init 1x1 per skip level
  Conv2dLayer<S> ctrl_proj_mid;
  mutable std::atomic<int64_t> eval_count{0};

  DenoiserT() = default;
  DenoiserT(const DenoiserT& o)
      : cfg(o.cfg), main(o.main), dec_blocks(o.dec_blocks), out_gn(o.out_gn), out_conv(o.out_conv),
        ctrl(o.ctrl), ctrl_proj(o.ctrl_proj), ctrl_proj_mid(o.ctrl_proj_mid),
        eval_count(o.eval_count.load()) {}
  DenoiserT& operator=(const DenoiserT& o) {
    cfg = o.cfg;
    main = o.main;
    dec_blocks = o.dec_blocks;
    out_gn = o.out_gn;
    out_conv = o.out_conv;
    ctrl = o.ctrl;
    ctrl_proj = o.ctrl_proj;
    ctrl_proj_mid = o.ctrl_proj_mid;
    eval_count.store(o.eval_count.load());
    return *this;
  }

  static DenoiserT create(ParamStoreT<S>& ps, const DenoiserConfig& cfg, Rng& rng) {
    DenoiserT d;
    d.cfg = cfg;
    d.main = EncoderStack<S>::create(ps, "denoiser.main", cfg, cfg.latent_channels, rng,
                                     ParamGroup::kGenerator);
    int levels = d.main.levels();
    int cur = d.main.mid_width();
    d.dec_blocks.resize(static_cast<size_t>(levels));
    for (int lv = levels - 1; lv >= 0; --lv) {
      std::vector<ResBlock<S>> blocks;
      int w = d.main.width(lv);
      blocks.push_back(ResBlock<S>::create(ps, "denoiser.main.dec" + std::to_string(lv) + ".b0",
                                           cur + w, w, cfg.temb_dim, cfg.gn_groups, rng,
                                           ParamGroup::kGenerator));
      for (int b = 1; b < cfg.res_blocks; ++b)
        blocks.push_back(ResBlock<S>::create(ps, "denoiser.main.dec" + std::to_string(lv) + ".b" + std::to_string(b),
                                             w, w, cfg.temb_dim, cfg.gn_groups, rng,
                                             ParamGroup::kGenerator));
      d.dec_blocks[static_cast<size_t>(lv)] = std::move(blocks);
      cur = w;
    }
    d.out_gn = GroupNormLayer<S>::create(ps, "denoiser.main.out_gn", d.main.width(0), cfg.gn_groups,
                                         ParamGroup::kGenerator);
    d.out_conv = Conv2dLayer<S>::create(ps, "denoiser.main.out", d.main.width(0), cfg.latent_channels,
                                        3, 1, 1, rng, ParamGroup::kGenerator);
    d.ctrl = EncoderStack<S>::create(ps, "denoiser.ctrl", cfg, 2 * cfg.latent_channels, rng,
                                     ParamGroup::kGenerator);
    for (int lv = 0; lv < levels; ++lv)
      d.ctrl_proj.push_back(Conv2dLayer<S>::create(ps, "denoiser.ctrl.proj" + std::to_string(lv),
                                                   d.main.width(lv), d.main.width(lv), 1, 1, 0, rng,
                                                   ParamGroup::kGenerator, /*zero_init=*/true));
    d.ctrl_proj_mid = Conv2dLayer<S>::create(ps, "denoiser.ctrl.proj_mid", d.main.mid_width(),
                                             d.main.mid_width(), 1, 1, 0, rng,
                                             ParamGroup::kGenerator, /*zero_init=*/true);
    return d;
  }

  /// eps_hat = net(y_t, y_c, t). Pass condition = -1 for the unconditioned
  /// main branch alone (pretraining and the zero-init neutrality check).
  int predict_noise(ParamBind<S>& pb, int y_t, int condition, const std::vector<int>& ts) const {
    Tape<S>& t = pb.tape();
    const auto& shp = t.val(y_t).shape();
    if (shp.size() != 4 || shp[1] != cfg.latent_channels)
      throw std::invalid_argument("predict_noise: y_t must be [N,4,h,w]");
    if (condition >= 0 && !t.val(condition).same_shape(t.val(y_t)))
      throw std::invalid_argument("predict_noise: y_t and y_c shapes differ");
    if (ts.size() != static_cast<size_t>(shp[0]))
      throw std::invalid_argument("predict_noise: one timestep per batch sample required");

    typename EncoderStack<S>::Out enc = main.forward(pb, y_t, ts);
    std::vector<int> skips = enc.skips;
    int mid = enc.mid;
    if (condition >= 0) {
      int ctrl_in = t.concat_channels(y_t, condition);
      typename EncoderStack<S>::Out c = ctrl.forward(pb, ctrl_in, ts);
      for (size_t lv = 0; lv < skips.size(); ++lv)
        skips[lv] = t.add(skips[lv], ctrl_proj[lv](pb, c.skips[lv]));
      mid = t.add(mid, ctrl_proj_mid(pb, c.mid));
    }

    int h = mid;
    for (int lv = main.levels() - 1; lv >= 0; --lv) {
      h = t.concat_channels(h, skips[static_cast<size_t>(lv)]);
      for (const auto& block : dec_blocks[static_cast<size_t>(lv)]) h = block(pb, h, enc.temb_node);
      if (lv > 0) h = t.upsample_nearest_2x(h);
    }
    h = out_conv(pb, t.silu(out_gn(pb, h)));
    eval_count.fetch_add(1, std::memory_order_relaxed);
    return h;
  }

  /// One-step decode: noise the condition at t_star with the seeded draw,
  /// predict once, invert once. Exactly one network evaluation.
  TensorT<S> decode_one_step(ParamStoreT<S>& ps, const NoiseSchedule& schedule, const TensorT<S>& y_c,
                             int t_star, uint64_t seed) const {
    if (schedule.alpha_bar_at(t_star) <= kAlphaBarFloor)
      throw std::invalid_argument("decode_one_step: alpha_bar below floor at t*");
    Rng rng(seed);
    TensorT<S> eps(y_c.shape());
    rng.fill_normal(eps);
    TensorT<S> y_t = forward_diffuse(y_c, t_star, eps, schedule);
    Tape<S> tape;
    ParamBind<S> pb(tape, ps, /*inference=*/true);
    int yt_node = tape.constant(y_t);
    int yc_node = tape.constant(y_c);
    int eps_hat = predict_noise(pb, yt_node, yc_node, std::vector<int>(size_t(y_c.dim(0)), t_star));
    return one_step_sample(y_t, tape.val(eps_hat), t_star, schedule);
  }

  /// N-step decode over the evenly spaced sub-schedule ending at t_star;
  /// N network evaluations. N = 1 reduces to the one-step path.
  TensorT<S> decode_multi_step(ParamStoreT<S>& ps, const NoiseSchedule& schedule, const TensorT<S>& y_c,
                               int steps, int t_star, uint64_t seed) const {
    if (steps < 1) throw std::invalid_argument("decode_multi_step: steps must be >= 1");
    if (steps > schedule.T) throw std::invalid_argument("decode_multi_step: steps exceeds T");
    std::vector<int> taus = sub_schedule_timesteps(steps, t_star);
    NoiseSchedule sub = sub_schedule(schedule, steps, t_star);
    Rng rng(seed);
    TensorT<S> eps(y_c.shape());
    rng.fill_normal(eps);
    TensorT<S> y = forward_diffuse(y_c, t_star, eps, schedule);
    for (int k = steps; k >= 1; --k) {
      Tape<S> tape;
      ParamBind<S> pb(tape, ps, /*inference=*/true);
      int y_node = tape.constant(y);
      int yc_node = tape.constant(y_c);
      int eps_hat =
          predict_noise(pb, y_node, yc_node, std::vector<int>(size_t(y_c.dim(0)), taus[static_cast<size_t>(k - 1)]));
      y = reverse_step(y, tape.val(eps_hat), k, sub, rng);
    }
    return y;
  }
};

/// Seeds the control branch and (optionally) a discriminator feature stack
/// from the pretrained main-branch weights. The control input conv is wider
/// than the main one: the y_t channels take the pretrained kernel, the y_c
/// channels start at zero so the pretrained behavior is preserved exactly.
template <class S>
void seed_control_branch(ParamStoreT<S>& ps, const DenoiserConfig& cfg) {
  copy_params_prefix(ps, "denoiser.main.", "denoiser.ctrl.");
  const auto& src = ps.value("denoiser.main.in.weight");
  auto& dst = ps.value("denoiser.ctrl.in.weight");
  int co = src.dim(0), ci = src.dim(1), k = src.dim(2);
  dst.fill(S(0));
  for (int o = 0; o < co; ++o)
    for (int i = 0; i < ci; ++i)
      for (int p = 0; p < k * k; ++p)
        dst[((int64_t(o) * (2 * cfg.latent_channels) + i) * k * k) + p] =
            src[((int64_t(o) * ci + i) * k * k) + p];
  ps.value("denoiser.ctrl.in.bias") = ps.value("denoiser.main.in.bias");
}

}  // namespace osdiff
