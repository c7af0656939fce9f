// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "osdiff/params.hpp"
#include "osdiff/tape.hpp"

namespace osdiff {

template <class S>
struct Conv2dLayer {
  std::string w, b;
  int stride = 1;
  int pad = 0;

  static Conv2dLayer create(ParamStoreT<S>& ps, const std::string& name, int in_c, int out_c, int k,
                            int stride, int pad, Rng& rng, ParamGroup group, bool zero_init = false) {
    Conv2dLayer l;
    l.w = name + ".weight";
    l.b = name + ".bias";
    l.stride = stride;
    l.pad = pad;
    auto& wt = ps.create(l.w, {out_c, in_c, k, k}, group);
    ps.create(l.b, {out_c}, group);
    if (!zero_init) init_kaiming(wt, in_c * k * k, rng);
    return l;
  }

  int operator()(ParamBind<S>& pb, int x) const {
    return pb.tape().conv2d(x, pb.node(w), pb.node(b), stride, pad);
  }
};

template <class S>
struct LinearLayer {
  std::string w, b;

  static LinearLayer create(ParamStoreT<S>& ps, const std::string& name, int in_f, int out_f, Rng& rng,
                            ParamGroup group, bool zero_init = false) {
    LinearLayer l;
    l.w = name + ".weight";
    l.b = name + ".bias";
    auto& wt = ps.create(l.w, {out_f, in_f}, group);
    ps.create(l.b, {out_f}, group);
    if (!zero_init) init_kaiming(wt, in_f, rng);
    return l;
  }

  int operator()(ParamBind<S>& pb, int x) const {
    return pb.tape().linear(x, pb.node(w), pb.node(b));
  }
};

template <class S>
struct GroupNormLayer {
  std::string gamma, beta;
  int groups = 8;

  static GroupNormLayer create(ParamStoreT<S>& ps, const std::string& name, int channels, int groups,
                               ParamGroup group) {
    GroupNormLayer l;
    l.gamma = name + ".gamma";
    l.beta = name + ".beta";
    l.groups = groups;
    auto& g = ps.create(l.gamma, {channels}, group);
    g.fill(S(1));
    ps.create(l.beta, {channels}, group);
    return l;
  }

  int operator()(ParamBind<S>& pb, int x) const {
    return pb.tape().group_norm(x, groups, pb.node(gamma), pb.node(beta));
  }
};

/// GN -> SiLU -> conv -> (+ timestep offset) -> GN -> SiLU -> conv, with an
/// identity or 1x1-projected skip. temb projection exists only when
/// temb_dim > 0.
template <class S>
struct ResBlock {
  GroupNormLayer<S> gn1, gn2;
  Conv2dLayer<S> conv1, conv2;
  LinearLayer<S> temb_proj;
  Conv2dLayer<S> skip;
  bool has_temb = false;
  bool has_skip = false;

  static ResBlock create(ParamStoreT<S>& ps, const std::string& name, int in_c, int out_c, int temb_dim,
                         int gn_groups, Rng& rng, ParamGroup group) {
    ResBlock b;
    b.gn1 = GroupNormLayer<S>::create(ps, name + ".gn1", in_c, gn_groups, group);
    b.conv1 = Conv2dLayer<S>::create(ps, name + ".conv1", in_c, out_c, 3, 1, 1, rng, group);
    b.gn2 = GroupNormLayer<S>::create(ps, name + ".gn2", out_c, gn_groups, group);
    b.conv2 = Conv2dLayer<S>::create(ps, name + ".conv2", out_c, out_c, 3, 1, 1, rng, group);
    if (temb_dim > 0) {
      b.temb_proj = LinearLayer<S>::create(ps, name + ".temb", temb_dim, out_c, rng, group);
      b.has_temb = true;
    }
    if (in_c != out_c) {
      b.skip = Conv2dLayer<S>::create(ps, name + ".skip", in_c, out_c, 1, 1, 0, rng, group);
      b.has_skip = true;
    }
    return b;
  }

  int operator()(ParamBind<S>& pb, int x, int temb = -1) const {
    Tape<S>& t = pb.tape();
    int h = conv1(pb, t.silu(gn1(pb, x)));
    if (has_temb && temb >= 0) h = t.add_sample_channel_bias(h, temb_proj(pb, temb));
    h = conv2(pb, t.silu(gn2(pb, h)));
    int s = has_skip ? skip(pb, x) : x;
    return t.add(h, s);
  }
};

/// Sinusoidal position features for a batch of timesteps: [N, dim] with the
/// first half sine, second half cosine, geometric frequency ladder.
template <class S>
TensorT<S> sinusoidal_embedding(const std::vector<int>& ts, int dim) {
  int half = dim / 2;
  TensorT<S> out({static_cast<int>(ts.size()), dim});
  for (size_t n = 0; n < ts.size(); ++n)
    for (int i = 0; i < half; ++i) {
      double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
      double a = double(ts[n]) * freq;
      out[int64_t(n) * dim + i] = static_cast<S>(std::sin(a));
      out[int64_t(n) * dim + half + i] = static_cast<S>(std::cos(a));
    }
  return out;
}

/// Two-layer SiLU MLP on top of the sinusoidal features.
template <class S>
struct TimeEmbed {
  LinearLayer<S> lin1, lin2;
  int in_dim = 0;
  int out_dim = 0;

  static TimeEmbed create(ParamStoreT<S>& ps, const std::string& name, int in_dim, int out_dim,
                          Rng& rng, ParamGroup group) {
    TimeEmbed e;
    e.in_dim = in_dim;
    e.out_dim = out_dim;
    e.lin1 = LinearLayer<S>::create(ps, name + ".lin1", in_dim, out_dim, rng, group);
    e.lin2 = LinearLayer<S>::create(ps, name + ".lin2", out_dim, out_dim, rng, group);
    return e;
  }

  int operator()(ParamBind<S>& pb, const std::vector<int>& ts) const {
    Tape<S>& t = pb.tape();
    int base = t.constant(sinusoidal_embedding<S>(ts, in_dim));
    return lin2(pb, t.silu(lin1(pb, base)));
  }
};

/// Copies parameter values from one name prefix to another; shapes must
/// match. Used to seed the control branch and f_d from the pretrained
/// denoiser weights.
template <class S>
void copy_params_prefix(ParamStoreT<S>& ps, const std::string& src_prefix,
                        const std::string& dst_prefix) {
  std::vector<std::pair<std::string, std::string>> pairs;
  ps.for_each([&](const std::string& name, ParamEntry<S>&) {
    if (name.rfind(src_prefix, 0) == 0) {
      std::string dst = dst_prefix + name.substr(src_prefix.size());
      if (ps.contains(dst)) pairs.emplace_back(name, dst);
    }
  });
  for (auto& [src, dst] : pairs) {
    const auto& sv = ps.value(src);
    auto& dv = ps.value(dst);
    if (!sv.same_shape(dv)) continue;  // e.g. widened input convs are seeded separately
    dv = sv;
  }
}

}  // namespace osdiff
