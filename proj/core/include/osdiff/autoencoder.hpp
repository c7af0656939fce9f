// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "osdiff/image_io.hpp"
#include "osdiff/layers.hpp"
#include "osdiff/metrics.hpp"

namespace osdiff {

struct VaeConfig {
  int base = 16;        // encoder width; doubled after the first downsample
  int gn_groups = 8;
  int latent_channels = 4;
};

/// Toy stand-in for a frozen diffusion VAE pair: plain deterministic
/// autoencoder mapping [N,3,H,W] images to a 4-channel latent at 4x spatial
/// reduction (two stride-2 stages around residual blocks) and back.
/// Pretrained once on the toy corpus, then frozen for codec training.
template <class S>
struct VaeT {
  VaeConfig cfg;
  Conv2dLayer<S> e_in, e_d1, e_d2, e_out;
  ResBlock<S> e_r1, e_r2;
  GroupNormLayer<S> e_out_gn;
  Conv2dLayer<S> d_in, d_u1, d_u2, d_out;
  ResBlock<S> d_r1, d_r2;
  GroupNormLayer<S> d_out_gn;

  static VaeT create(ParamStoreT<S>& ps, const VaeConfig& cfg, Rng& rng) {
    VaeT v;
    v.cfg = cfg;
    int b = cfg.base, b2 = 2 * cfg.base;
    auto G = ParamGroup::kGenerator;
    v.e_in = Conv2dLayer<S>::create(ps, "vae.enc.in", 3, b, 3, 1, 1, rng, G);
    v.e_d1 = Conv2dLayer<S>::create(ps, "vae.enc.down1", b, b2, 4, 2, 1, rng, G);
    v.e_r1 = ResBlock<S>::create(ps, "vae.enc.res1", b2, b2, 0, cfg.gn_groups, rng, G);
    v.e_d2 = Conv2dLayer<S>::create(ps, "vae.enc.down2", b2, b2, 4, 2, 1, rng, G);
    v.e_r2 = ResBlock<S>::create(ps, "vae.enc.res2", b2, b2, 0, cfg.gn_groups, rng, G);
    v.e_out_gn = GroupNormLayer<S>::create(ps, "vae.enc.out_gn", b2, cfg.gn_groups, G);
    v.e_out = Conv2dLayer<S>::create(ps, "vae.enc.out", b2, cfg.latent_channels, 3, 1, 1, rng, G);
    v.d_in = Conv2dLayer<S>::create(ps, "vae.dec.in", cfg.latent_channels, b2, 3, 1, 1, rng, G);
    v.d_r1 = ResBlock<S>::create(ps, "vae.dec.res1", b2, b2, 0, cfg.gn_groups, rng, G);
    v.d_u1 = Conv2dLayer<S>::create(ps, "vae.dec.up1", b2, b2, 3, 1, 1, rng, G);
    v.d_r2 = ResBlock<S>::create(ps, "vae.dec.res2", b2, b2, 0, cfg.gn_groups, rng, G);
    v.d_u2 = Conv2dLayer<S>::create(ps, "vae.dec.up2", b2, b, 3, 1, 1, rng, G);
    v.d_out_gn = GroupNormLayer<S>::create(ps, "vae.dec.out_gn", b, cfg.gn_groups, G);
    v.d_out = Conv2dLayer<S>::create(ps, "vae.dec.out", b, 3, 3, 1, 1, rng, G);
    return v;
  }

  /// [N,3,H,W] -> [N,4,H/4,W/4]; H and W must be divisible by 4.
  int encode(ParamBind<S>& pb, int x) const {
    Tape<S>& t = pb.tape();
    const auto& shp = t.val(x).shape();
    if (shp.size() != 4 || shp[1] != 3) throw std::invalid_argument("vae encode: input must be [N,3,H,W]");
    if (shp[2] % 4 != 0 || shp[3] % 4 != 0)
      throw std::invalid_argument("vae encode: spatial dims must be divisible by 4");
    int h = t.silu(e_in(pb, x));
    h = e_r1(pb, e_d1(pb, h));
    h = e_r2(pb, e_d2(pb, h));
    return e_out(pb, t.silu(e_out_gn(pb, h)));
  }

  /// [N,4,h,w] -> [N,3,4h,4w], sigmoid-bounded to [0,1].
  int decode(ParamBind<S>& pb, int y) const {
    Tape<S>& t = pb.tape();
    const auto& shp = t.val(y).shape();
    if (shp.size() != 4 || shp[1] != cfg.latent_channels)
      throw std::invalid_argument("vae decode: latent must have " + std::to_string(cfg.latent_channels) +
                                  " channels");
    int h = d_r1(pb, d_in(pb, y));
    h = t.silu(d_u1(pb, t.upsample_nearest_2x(h)));
    h = d_r2(pb, h);
    h = t.silu(d_u2(pb, t.upsample_nearest_2x(h)));
    return t.sigmoid(d_out(pb, t.silu(d_out_gn(pb, h))));
  }
};

/// Stacks a list of [3,H,W] images into one [N,3,H,W] batch tensor.
template <class S>
TensorT<S> stack_images(const std::vector<Image>& images, const std::vector<size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("stack_images: empty batch");
  const Image& first = images.at(indices[0]);
  int h = first.dim(1), w = first.dim(2);
  TensorT<S> out({static_cast<int>(indices.size()), 3, h, w});
  int64_t per = int64_t(3) * h * w;
  for (size_t n = 0; n < indices.size(); ++n) {
    const Image& img = images.at(indices[n]);
    if (img.dim(1) != h || img.dim(2) != w) throw std::invalid_argument("stack_images: mixed sizes");
    for (int64_t i = 0; i < per; ++i) out[int64_t(n) * per + i] = static_cast<S>(img[i]);
  }
  return out;
}

template <class S>
Image image_from_batch(const TensorT<S>& batch, int n) {
  int h = batch.dim(2), w = batch.dim(3);
  Image img({3, h, w});
  int64_t per = int64_t(3) * h * w;
  for (int64_t i = 0; i < per; ++i) img[i] = static_cast<float>(batch[int64_t(n) * per + i]);
  return img;
}

struct VaePretrainConfig {
  int epochs = 12;
  int batch = 8;
  double lr = 1e-3;
  uint64_t seed = 11;
};

struct VaePretrainResult {
  std::vector<double> epoch_loss;   // mean reconstruction MSE per epoch
  double holdout_psnr = 0;          // mean decode(encode(x)) PSNR on held-out images
  double untrained_holdout_mse = 0; // baseline before any update
  double trained_holdout_mse = 0;
};

/// Reconstruction MSE of the current weights over a set of images
/// (inference mode, no gradients).
template <class S>
double vae_holdout_mse(const VaeT<S>& vae, ParamStoreT<S>& ps, const std::vector<Image>& holdout) {
  double acc = 0;
  for (const Image& img : holdout) {
    Tape<S> tape;
    ParamBind<S> pb(tape, ps);
    int x = tape.constant(stack_images<S>({img}, {0}));
    int rec = vae.decode(pb, vae.encode(pb, x));
    const auto& r = tape.val(rec);
    const auto& xv = tape.val(x);
    double mse = 0;
    for (int64_t i = 0; i < r.numel(); ++i) {
      double d = double(r[i]) - double(xv[i]);
      mse += d * d;
    }
    acc += mse / double(r.numel());
  }
  return acc / double(holdout.size());
}

template <class S>
double vae_holdout_psnr(const VaeT<S>& vae, ParamStoreT<S>& ps, const std::vector<Image>& holdout) {
  double acc = 0;
  for (const Image& img : holdout) {
    Tape<S> tape;
    ParamBind<S> pb(tape, ps);
    int x = tape.constant(stack_images<S>({img}, {0}));
    int rec = vae.decode(pb, vae.encode(pb, x));
    Image out = image_from_batch(tape.val(rec), 0);
    acc += psnr(img, out);
  }
  return acc / double(holdout.size());
}

/// MSE pretraining of the VAE pair on the toy corpus; the caller freezes the
/// weights afterwards. Requires >= 1000 training images.
template <class S>
VaePretrainResult pretrain_vae(VaeT<S>& vae, ParamStoreT<S>& ps, const std::vector<Image>& corpus,
                               const std::vector<Image>& holdout, const VaePretrainConfig& cfg,
                               const std::function<void(int, double)>& on_epoch = {}) {
  if (corpus.size() < 1000) throw std::invalid_argument("pretrain_vae: corpus must hold >= 1000 images");
  Rng rng(cfg.seed);
  VaePretrainResult res;
  res.untrained_holdout_mse = vae_holdout_mse(vae, ps, holdout);

  std::vector<size_t> order(corpus.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with the deterministic stream
    for (size_t i = order.size() - 1; i > 0; --i) {
      size_t j = static_cast<size_t>(rng.uniform_int(i + 1));
      std::swap(order[i], order[j]);
    }
    double loss_acc = 0;
    int batches = 0;
    for (size_t off = 0; off + static_cast<size_t>(cfg.batch) <= order.size();
         off += static_cast<size_t>(cfg.batch)) {
      std::vector<size_t> idx(order.begin() + static_cast<long>(off),
                              order.begin() + static_cast<long>(off + static_cast<size_t>(cfg.batch)));
      Tape<S> tape;
      ParamBind<S> pb(tape, ps);
      int x = tape.constant(stack_images<S>(corpus, idx));
      int rec = vae.decode(pb, vae.encode(pb, x));
      int loss = tape.mean_sq_diff(rec, x);
      ps.zero_grad();
      tape.backward(loss);
      pb.flush_grads();
      ps.adam_step(cfg.lr, 0.9, 0.999, 1e-8,
                   [](const std::string& name, const ParamEntry<S>&) {
                     return name.rfind("vae.", 0) == 0;
                   });
      loss_acc += double(tape.val(loss)[0]);
      ++batches;
    }
    double epoch_loss = loss_acc / std::max(1, batches);
    res.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  res.trained_holdout_mse = vae_holdout_mse(vae, ps, holdout);
  res.holdout_psnr = vae_holdout_psnr(vae, ps, holdout);
  return res;
}

}  // namespace osdiff
