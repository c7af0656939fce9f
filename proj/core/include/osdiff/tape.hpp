// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "osdiff/tensor.hpp"

namespace osdiff {

/// Thrown when a forward output or a gradient contains NaN/Inf. Carries the
/// name of the op that produced the value.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
template <class S>
inline S stable_sigmoid(S z) {
  if (z >= S(0)) {
    return S(1) / (S(1) + std::exp(-z));
  }
  S e = std::exp(z);
  return e / (S(1) + e);
}
}  // namespace detail

/// Reverse-mode autodiff over a recorded computation graph. Nodes are
/// appended in topological order; backward() walks them in reverse. Values
/// are owned by the tape except for parameter leaves, which alias tensors
/// living in a ParamStore.
template <class S>
class Tape {
 public:
  using Tensor = TensorT<S>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int size() const { return static_cast<int>(nodes_.size()); }

  const Tensor& val(int id) const { return resolve(check_id(id)); }

  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(check_id(id))].requires_grad; }

  bool has_grad(int id) const {
    check_id(id);
    return static_cast<size_t>(id) < grads_.size() && !grads_[static_cast<size_t>(id)].empty();
  }

  const Tensor& grad(int id) const {
    if (!has_grad(id)) throw std::logic_error("tape: gradient not computed for node " + std::to_string(id));
    return grads_[static_cast<size_t>(id)];
  }

  // ---- leaves ------------------------------------------------------------

  int leaf(Tensor v, bool track_grad = false) {
    Node n;
    n.owned = std::move(v);
    n.requires_grad = track_grad;
    n.op = "leaf";
    return push(std::move(n), /*check=*/false);
  }

  int constant(Tensor v) { return leaf(std::move(v), false); }

  int scalar_const(S v) { return constant(Tensor::scalar(v)); }

  /// Parameter leaf aliasing an external tensor (no copy). The tensor must
  /// outlive the tape.
  int param(const Tensor* v, bool track_grad) {
    Node n;
    n.external = v;
    n.requires_grad = track_grad;
    n.op = "param";
    return push(std::move(n), false);
  }

  // ---- elementwise -------------------------------------------------------

  int add(int a, int b) { return binary_ew("add", a, b, [](S x, S y) { return x + y; }, S(1), S(1)); }
  int sub(int a, int b) { return binary_ew("sub", a, b, [](S x, S y) { return x - y; }, S(1), S(-1)); }

  int mul(int a, int b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    require(va.same_shape(vb), "mul: shape mismatch ", va, vb);
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
    return make_op("mul", std::move(out), {a, b}, [a, b](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      if (t.requires_grad(a)) {
        Tensor& ga = t.grad_buf(a);
        const Tensor& vb2 = t.val(b);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb2[i];
      }
      if (t.requires_grad(b)) {
        Tensor& gb = t.grad_buf(b);
        const Tensor& va2 = t.val(a);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va2[i];
      }
    });
  }

  /// ca*a + cb*b with constant coefficients; the workhorse of the diffusion
  /// affine algebra.
  int affine(int a, int b, S ca, S cb) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    require(va.same_shape(vb), "affine: shape mismatch ", va, vb);
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = ca * va[i] + cb * vb[i];
    return make_op("affine", std::move(out), {a, b}, [a, b, ca, cb](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      if (t.requires_grad(a)) {
        Tensor& ga = t.grad_buf(a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += ca * g[i];
      }
      if (t.requires_grad(b)) {
        Tensor& gb = t.grad_buf(b);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] += cb * g[i];
      }
    });
  }

  int add_scalar(int a, S c) {
    const Tensor& va = val(a);
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] + c;
    return make_op("add_scalar", std::move(out), {a}, [a](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      if (!t.requires_grad(a)) return;
      Tensor& ga = t.grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
  }

  int mul_scalar(int a, S c) {
    const Tensor& va = val(a);
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * c;
    return make_op("mul_scalar", std::move(out), {a}, [a, c](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      if (!t.requires_grad(a)) return;
      Tensor& ga = t.grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
    });
  }

  int silu(int a) {
    const Tensor& va = val(a);
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
      S s = detail::stable_sigmoid(va[i]);
      out[i] = va[i] * s;
    }
    return make_op("silu", std::move(out), {a}, [a](Tape& t, int self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.grad(self);
      const Tensor& x = t.val(a);
      Tensor& ga = t.grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) {
        S s = detail::stable_sigmoid(x[i]);
        ga[i] += g[i] * s * (S(1) + x[i] * (S(1) - s));
      }
    });
  }

  int sigmoid(int a) {
    const Tensor& va = val(a);
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = detail::stable_sigmoid(va[i]);
    return make_op("sigmoid", std::move(out), {a}, [a](Tape& t, int self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.grad(self);
      const Tensor& y = t.val(self);
      Tensor& ga = t.grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (S(1) - y[i]);
    });
  }

  /// Natural log. Inputs must be positive; a non-positive input surfaces as
  /// a NonFiniteError on the output scan.
  int log(int a) {
    const Tensor& va = val(a);
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(va[i]);
    return make_op("log", std::move(out), {a}, [a](Tape& t, int self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.grad(self);
      const Tensor& x = t.val(a);
      Tensor& ga = t.grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / x[i];
    });
  }

  int clamp(int a, S lo, S hi) {
    const Tensor& va = val(a);
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(hi, std::max(lo, va[i]));
    return make_op("clamp", std::move(out), {a}, [a, lo, hi](Tape& t, int self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.grad(self);
      const Tensor& x = t.val(a);
      Tensor& ga = t.grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i)
        if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
    });
  }

  /// Round-to-nearest-even, clamped to [-bound, bound]; straight-through
  /// (identity) gradient.
  int round_ste(int a, S bound) {
    const Tensor& va = val(a);
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i)
      out[i] = std::min(bound, std::max(-bound, static_cast<S>(std::nearbyint(va[i]))));
    return make_op("round_ste", std::move(out), {a}, [a](Tape& t, int self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.grad(self);
      Tensor& ga = t.grad_buf(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
  }

  // ---- reductions ----------------------------------------------------------

  int sum(int a) {
    const Tensor& va = val(a);
    S acc = 0;
    for (int64_t i = 0; i < va.numel(); ++i) acc += va[i];
    return make_op("sum", Tensor::scalar(acc), {a}, [a](Tape& t, int self) {
      if (!t.requires_grad(a)) return;
      S g = t.grad(self)[0];
      Tensor& ga = t.grad_buf(a);
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
  }

  int mean(int a) {
    const Tensor& va = val(a);
    require(va.numel() > 0, "mean: empty tensor", va, va);
    S acc = 0;
    for (int64_t i = 0; i < va.numel(); ++i) acc += va[i];
    S inv = S(1) / static_cast<S>(va.numel());
    return make_op("mean", Tensor::scalar(acc * inv), {a}, [a, inv](Tape& t, int self) {
      if (!t.requires_grad(a)) return;
      S g = t.grad(self)[0] * inv;
      Tensor& ga = t.grad_buf(a);
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    });
  }

  /// mean((a-b)^2); the reduction convention for every squared-error loss.
  int mean_sq_diff(int a, int b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    require(va.same_shape(vb), "mean_sq_diff: shape mismatch ", va, vb);
    require(va.numel() > 0, "mean_sq_diff: empty tensor", va, vb);
    S acc = 0;
    for (int64_t i = 0; i < va.numel(); ++i) {
      S d = va[i] - vb[i];
      acc += d * d;
    }
    S inv = S(1) / static_cast<S>(va.numel());
    return make_op("mean_sq_diff", Tensor::scalar(acc * inv), {a, b}, [a, b, inv](Tape& t, int self) {
      S g = t.grad(self)[0] * S(2) * inv;
      const Tensor& va2 = t.val(a);
      const Tensor& vb2 = t.val(b);
      if (t.requires_grad(a)) {
        Tensor& ga = t.grad_buf(a);
        for (int64_t i = 0; i < va2.numel(); ++i) ga[i] += g * (va2[i] - vb2[i]);
      }
      if (t.requires_grad(b)) {
        Tensor& gb = t.grad_buf(b);
        for (int64_t i = 0; i < va2.numel(); ++i) gb[i] -= g * (va2[i] - vb2[i]);
      }
    });
  }

  // ---- structure ----------------------------------------------------------

  int concat_channels(int a, int b) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    require(va.rank() == 4 && vb.rank() == 4, "concat_channels: rank 4 required ", va, vb);
    require(va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2) && va.dim(3) == vb.dim(3),
            "concat_channels: N/H/W mismatch ", va, vb);
    int N = va.dim(0), Ca = va.dim(1), Cb = vb.dim(1), H = va.dim(2), W = va.dim(3);
    Tensor out({N, Ca + Cb, H, W});
    int64_t plane = int64_t(H) * W;
    for (int n = 0; n < N; ++n) {
      std::copy(va.data() + n * Ca * plane, va.data() + (n + 1) * Ca * plane,
                out.data() + n * (Ca + Cb) * plane);
      std::copy(vb.data() + n * Cb * plane, vb.data() + (n + 1) * Cb * plane,
                out.data() + n * (Ca + Cb) * plane + Ca * plane);
    }
    return make_op("concat_channels", std::move(out), {a, b}, [a, b, N, Ca, Cb, plane](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      if (t.requires_grad(a)) {
        Tensor& ga = t.grad_buf(a);
        for (int n = 0; n < N; ++n)
          for (int64_t i = 0; i < Ca * plane; ++i) ga[n * Ca * plane + i] += g[n * (Ca + Cb) * plane + i];
      }
      if (t.requires_grad(b)) {
        Tensor& gb = t.grad_buf(b);
        for (int n = 0; n < N; ++n)
          for (int64_t i = 0; i < Cb * plane; ++i)
            gb[n * Cb * plane + i] += g[n * (Ca + Cb) * plane + Ca * plane + i];
      }
    });
  }

  int upsample_nearest_2x(int a) {
    const Tensor& va = val(a);
    require(va.rank() == 4, "upsample_nearest_2x: rank 4 required ", va, va);
    int N = va.dim(0), C = va.dim(1), H = va.dim(2), W = va.dim(3);
    Tensor out({N, C, 2 * H, 2 * W});
    for (int nc = 0; nc < N * C; ++nc) {
      const S* src = va.data() + int64_t(nc) * H * W;
      S* dst = out.data() + int64_t(nc) * 4 * H * W;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          S v = src[y * W + x];
          S* d = dst + (2 * y) * 2 * W + 2 * x;
          d[0] = v;
          d[1] = v;
          d[2 * W] = v;
          d[2 * W + 1] = v;
        }
    }
    return make_op("upsample_nearest_2x", std::move(out), {a}, [a, N, C, H, W](Tape& t, int self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.grad(self);
      Tensor& ga = t.grad_buf(a);
      for (int nc = 0; nc < N * C; ++nc) {
        const S* gs = g.data() + int64_t(nc) * 4 * H * W;
        S* gd = ga.data() + int64_t(nc) * H * W;
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            const S* s = gs + (2 * y) * 2 * W + 2 * x;
            gd[y * W + x] += s[0] + s[1] + s[2 * W] + s[2 * W + 1];
          }
      }
    });
  }

  int avgpool_2x(int a) {
    const Tensor& va = val(a);
    require(va.rank() == 4, "avgpool_2x: rank 4 required ", va, va);
    int N = va.dim(0), C = va.dim(1), H = va.dim(2), W = va.dim(3);
    require(H % 2 == 0 && W % 2 == 0, "avgpool_2x: odd spatial dims ", va, va);
    int Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo});
    for (int nc = 0; nc < N * C; ++nc) {
      const S* src = va.data() + int64_t(nc) * H * W;
      S* dst = out.data() + int64_t(nc) * Ho * Wo;
      for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
          const S* s = src + (2 * y) * W + 2 * x;
          dst[y * Wo + x] = (s[0] + s[1] + s[W] + s[W + 1]) * S(0.25);
        }
    }
    return make_op("avgpool_2x", std::move(out), {a}, [a, N, C, H, W, Ho, Wo](Tape& t, int self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.grad(self);
      Tensor& ga = t.grad_buf(a);
      for (int nc = 0; nc < N * C; ++nc) {
        const S* gs = g.data() + int64_t(nc) * Ho * Wo;
        S* gd = ga.data() + int64_t(nc) * H * W;
        for (int y = 0; y < Ho; ++y)
          for (int x = 0; x < Wo; ++x) {
            S q = gs[y * Wo + x] * S(0.25);
            S* d = gd + (2 * y) * W + 2 * x;
            d[0] += q;
            d[1] += q;
            d[W] += q;
            d[W + 1] += q;
          }
      }
    });
  }

  /// [N,C,H,W] -> [N,C] mean over the spatial plane.
  int global_avg_pool(int a) {
    const Tensor& va = val(a);
    require(va.rank() == 4, "global_avg_pool: rank 4 required ", va, va);
    int N = va.dim(0), C = va.dim(1), H = va.dim(2), W = va.dim(3);
    Tensor out({N, C});
    S inv = S(1) / static_cast<S>(int64_t(H) * W);
    for (int nc = 0; nc < N * C; ++nc) {
      const S* src = va.data() + int64_t(nc) * H * W;
      S acc = 0;
      for (int64_t i = 0; i < int64_t(H) * W; ++i) acc += src[i];
      out[nc] = acc * inv;
    }
    return make_op("global_avg_pool", std::move(out), {a}, [a, N, C, H, W, inv](Tape& t, int self) {
      if (!t.requires_grad(a)) return;
      const Tensor& g = t.grad(self);
      Tensor& ga = t.grad_buf(a);
      for (int nc = 0; nc < N * C; ++nc) {
        S q = g[nc] * inv;
        S* gd = ga.data() + int64_t(nc) * H * W;
        for (int64_t i = 0; i < int64_t(H) * W; ++i) gd[i] += q;
      }
    });
  }

  /// x[N,C,H,W] + v[N,C] broadcast over the plane (timestep-embedding
  /// injection and similar per-sample channel offsets).
  int add_sample_channel_bias(int a, int v) {
    const Tensor& va = val(a);
    const Tensor& vv = val(v);
    require(va.rank() == 4 && vv.rank() == 2, "add_sample_channel_bias: bad ranks ", va, vv);
    require(va.dim(0) == vv.dim(0) && va.dim(1) == vv.dim(1), "add_sample_channel_bias: N/C mismatch ",
            va, vv);
    int N = va.dim(0), C = va.dim(1), H = va.dim(2), W = va.dim(3);
    Tensor out(va.shape());
    for (int nc = 0; nc < N * C; ++nc) {
      const S* src = va.data() + int64_t(nc) * H * W;
      S* dst = out.data() + int64_t(nc) * H * W;
      S b = vv[nc];
      for (int64_t i = 0; i < int64_t(H) * W; ++i) dst[i] = src[i] + b;
    }
    return make_op("add_sample_channel_bias", std::move(out), {a, v}, [a, v, N, C, H, W](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      if (t.requires_grad(a)) {
        Tensor& ga = t.grad_buf(a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (t.requires_grad(v)) {
        Tensor& gv = t.grad_buf(v);
        for (int nc = 0; nc < N * C; ++nc) {
          const S* gs = g.data() + int64_t(nc) * H * W;
          S acc = 0;
          for (int64_t i = 0; i < int64_t(H) * W; ++i) acc += gs[i];
          gv[nc] += acc;
        }
      }
    });
  }

  // ---- learnable layers -----------------------------------------------------

  int conv2d(int x, int w, int b, int stride, int padding) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    const Tensor& vb = val(b);
    require(vx.rank() == 4 && vw.rank() == 4, "conv2d: rank 4 input/weight required ", vx, vw);
    require(vx.dim(1) == vw.dim(1), "conv2d: channel mismatch ", vx, vw);
    require(vb.rank() == 1 && vb.dim(0) == vw.dim(0), "conv2d: bias shape mismatch ", vb, vw);
    require(stride >= 1 && padding >= 0, "conv2d: bad stride/padding ", vx, vw);
    int N = vx.dim(0), Ci = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
    int Co = vw.dim(0), K = vw.dim(2);
    require(vw.dim(2) == vw.dim(3), "conv2d: square kernel required ", vw, vw);
    int num = H + 2 * padding - K;
    require(num >= 0 && num % stride == 0, "conv2d: non-integer output height ", vx, vw);
    int numw = W + 2 * padding - K;
    require(numw >= 0 && numw % stride == 0, "conv2d: non-integer output width ", vx, vw);
    int Ho = num / stride + 1, Wo = numw / stride + 1;

    Tensor out({N, Co, Ho, Wo});
    conv_forward(vx, vw, vb, out, N, Ci, H, W, Co, K, Ho, Wo, stride, padding);

    int s = stride, p = padding;
    return make_op("conv2d", std::move(out), {x, w, b},
                   [x, w, b, N, Ci, H, W, Co, K, Ho, Wo, s, p](Tape& t, int self) {
                     const Tensor& g = t.grad(self);
                     const Tensor& vx2 = t.val(x);
                     const Tensor& vw2 = t.val(w);
                     if (t.requires_grad(x))
                       conv_backward_input(t.grad_buf(x), vw2, g, N, Ci, H, W, Co, K, Ho, Wo, s, p);
                     if (t.requires_grad(w))
                       conv_backward_weight(t.grad_buf(w), vx2, g, N, Ci, H, W, Co, K, Ho, Wo, s, p);
                     if (t.requires_grad(b)) {
                       Tensor& gb = t.grad_buf(b);
                       for (int n = 0; n < N; ++n)
                         for (int co = 0; co < Co; ++co) {
                           const S* gs = g.data() + (int64_t(n) * Co + co) * Ho * Wo;
                           S acc = 0;
                           for (int64_t i = 0; i < int64_t(Ho) * Wo; ++i) acc += gs[i];
                           gb[co] += acc;
                         }
                     }
                   });
  }

  /// x[N,I] * w[O,I]^T + b[O] -> [N,O]
  int linear(int x, int w, int b) {
    const Tensor& vx = val(x);
    const Tensor& vw = val(w);
    const Tensor& vb = val(b);
    require(vx.rank() == 2 && vw.rank() == 2, "linear: rank 2 required ", vx, vw);
    require(vx.dim(1) == vw.dim(1), "linear: inner dim mismatch ", vx, vw);
    require(vb.rank() == 1 && vb.dim(0) == vw.dim(0), "linear: bias shape mismatch ", vb, vw);
    int N = vx.dim(0), I = vx.dim(1), O = vw.dim(0);
    Tensor out({N, O});
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) {
        const S* xr = vx.data() + int64_t(n) * I;
        const S* wr = vw.data() + int64_t(o) * I;
        S acc = vb[o];
        for (int i = 0; i < I; ++i) acc += xr[i] * wr[i];
        out[int64_t(n) * O + o] = acc;
      }
    return make_op("linear", std::move(out), {x, w, b}, [x, w, b, N, I, O](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      const Tensor& vx2 = t.val(x);
      const Tensor& vw2 = t.val(w);
      if (t.requires_grad(x)) {
        Tensor& gx = t.grad_buf(x);
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < O; ++o) {
            S gv = g[int64_t(n) * O + o];
            const S* wr = vw2.data() + int64_t(o) * I;
            S* gxr = gx.data() + int64_t(n) * I;
            for (int i = 0; i < I; ++i) gxr[i] += gv * wr[i];
          }
      }
      if (t.requires_grad(w)) {
        Tensor& gw = t.grad_buf(w);
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < O; ++o) {
            S gv = g[int64_t(n) * O + o];
            const S* xr = vx2.data() + int64_t(n) * I;
            S* gwr = gw.data() + int64_t(o) * I;
            for (int i = 0; i < I; ++i) gwr[i] += gv * xr[i];
          }
      }
      if (t.requires_grad(b)) {
        Tensor& gb = t.grad_buf(b);
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < O; ++o) gb[o] += g[int64_t(n) * O + o];
      }
    });
  }

  /// Group normalization over [N,C,H,W]; gamma/beta are [C]. Per-group mean 0
  /// and variance 1 before the affine, with a fixed 1e-5 stabilizer.
  int group_norm(int x, int groups, int gamma, int beta) {
    const Tensor& vx = val(x);
    const Tensor& vg = val(gamma);
    const Tensor& vbt = val(beta);
    require(vx.rank() == 4, "group_norm: rank 4 required ", vx, vx);
    int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
    require(groups >= 1 && C % groups == 0, "group_norm: channels not divisible by groups ", vx, vx);
    require(vg.rank() == 1 && vg.dim(0) == C && vbt.rank() == 1 && vbt.dim(0) == C,
            "group_norm: affine shape mismatch ", vg, vbt);
    int Cg = C / groups;
    int64_t gs_sz = int64_t(Cg) * H * W;
    const S eps = S(1e-5);

    auto stats = std::make_shared<std::vector<S>>();  // mu, inv_std interleaved per (n, group)
    stats->resize(static_cast<size_t>(2 * N * groups));
    Tensor out(vx.shape());
    for (int n = 0; n < N; ++n)
      for (int g = 0; g < groups; ++g) {
        const S* src = vx.data() + (int64_t(n) * C + int64_t(g) * Cg) * H * W;
        S mu = 0;
        for (int64_t i = 0; i < gs_sz; ++i) mu += src[i];
        mu /= static_cast<S>(gs_sz);
        S var = 0;
        for (int64_t i = 0; i < gs_sz; ++i) {
          S d = src[i] - mu;
          var += d * d;
        }
        var /= static_cast<S>(gs_sz);
        S inv_std = S(1) / std::sqrt(var + eps);
        (*stats)[static_cast<size_t>(2 * (n * groups + g))] = mu;
        (*stats)[static_cast<size_t>(2 * (n * groups + g) + 1)] = inv_std;
        for (int cc = 0; cc < Cg; ++cc) {
          int c = g * Cg + cc;
          const S* s2 = vx.data() + (int64_t(n) * C + c) * H * W;
          S* d2 = out.data() + (int64_t(n) * C + c) * H * W;
          S a = vg[c] * inv_std;
          S bb = vbt[c] - vg[c] * inv_std * mu;
          for (int64_t i = 0; i < int64_t(H) * W; ++i) d2[i] = a * s2[i] + bb;
        }
      }

    return make_op(
        "group_norm", std::move(out), {x, gamma, beta},
        [x, gamma, beta, N, C, H, W, groups, Cg, gs_sz, stats](Tape& t, int self) {
          const Tensor& g = t.grad(self);
          const Tensor& vx2 = t.val(x);
          const Tensor& vg2 = t.val(gamma);
          int64_t plane = int64_t(H) * W;
          bool need_x = t.requires_grad(x);
          bool need_g = t.requires_grad(gamma);
          bool need_b = t.requires_grad(beta);
          for (int n = 0; n < N; ++n)
            for (int gi = 0; gi < groups; ++gi) {
              S mu = (*stats)[static_cast<size_t>(2 * (n * groups + gi))];
              S inv_std = (*stats)[static_cast<size_t>(2 * (n * groups + gi) + 1)];
              // dxhat = g*gamma; dx = inv_std*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
              S s1 = 0, s2 = 0;
              if (need_x) {
                for (int cc = 0; cc < Cg; ++cc) {
                  int c = gi * Cg + cc;
                  const S* xs = vx2.data() + (int64_t(n) * C + c) * plane;
                  const S* gsv = g.data() + (int64_t(n) * C + c) * plane;
                  for (int64_t i = 0; i < plane; ++i) {
                    S xhat = (xs[i] - mu) * inv_std;
                    S dxh = gsv[i] * vg2[c];
                    s1 += dxh;
                    s2 += dxh * xhat;
                  }
                }
                s1 /= static_cast<S>(gs_sz);
                s2 /= static_cast<S>(gs_sz);
              }
              for (int cc = 0; cc < Cg; ++cc) {
                int c = gi * Cg + cc;
                const S* xs = vx2.data() + (int64_t(n) * C + c) * plane;
                const S* gsv = g.data() + (int64_t(n) * C + c) * plane;
                if (need_x) {
                  S* gx = t.grad_buf(x).data() + (int64_t(n) * C + c) * plane;
                  for (int64_t i = 0; i < plane; ++i) {
                    S xhat = (xs[i] - mu) * inv_std;
                    S dxh = gsv[i] * vg2[c];
                    gx[i] += inv_std * (dxh - s1 - xhat * s2);
                  }
                }
                if (need_g) {
                  S acc = 0;
                  for (int64_t i = 0; i < plane; ++i) acc += gsv[i] * (xs[i] - mu) * inv_std;
                  t.grad_buf(gamma)[c] += acc;
                }
                if (need_b) {
                  S acc = 0;
                  for (int64_t i = 0; i < plane; ++i) acc += gsv[i];
                  t.grad_buf(beta)[c] += acc;
                }
              }
            }
        });
  }

  // ---- factorized entropy model -----------------------------------------------

  /// Total code length in bits of `values` under a per-channel logistic
  /// mixture prior, normalized over the alphabet [-L-0.5, L+0.5].
  /// values: [N,C,H,W]; weights_logit/means/log_scales: [C,K].
  /// p(v) = (F(v+0.5) - F(v-0.5)) / (F(L+0.5) - F(-L-0.5)) with
  /// F(u) = sum_k softmax(w)_k * sigmoid((u - mu_k)/s_k), s_k = exp(ls_k).
  /// Differentiable in values and all three parameter tensors.
  int rate_bits(int values, int weights_logit, int means, int log_scales, int bound) {
    const Tensor& vv = val(values);
    const Tensor& vl = val(weights_logit);
    const Tensor& vm = val(means);
    const Tensor& vs = val(log_scales);
    require(vv.rank() == 4, "rate_bits: values rank 4 required ", vv, vv);
    require(vl.rank() == 2 && vl.same_shape(vm) && vl.same_shape(vs),
            "rate_bits: parameter shape mismatch ", vl, vm);
    int C = vv.dim(1), K = vl.dim(1);
    require(vl.dim(0) == C, "rate_bits: channel mismatch ", vv, vl);
    const double kLn2 = 0.6931471805599453;
    const double kFloor = 1e-12;
    S hi_edge = static_cast<S>(bound) + S(0.5);

    // Per-channel mixture snapshot and support normalizer.
    std::vector<double> wmix(static_cast<size_t>(C * K)), mu(static_cast<size_t>(C * K)),
        sc(static_cast<size_t>(C * K)), zc(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
      double mx = -1e300;
      for (int k = 0; k < K; ++k) mx = std::max(mx, double(vl[int64_t(c) * K + k]));
      double tot = 0;
      for (int k = 0; k < K; ++k) {
        double e = std::exp(double(vl[int64_t(c) * K + k]) - mx);
        wmix[static_cast<size_t>(c * K + k)] = e;
        tot += e;
      }
      for (int k = 0; k < K; ++k) wmix[static_cast<size_t>(c * K + k)] /= tot;
      for (int k = 0; k < K; ++k) {
        mu[static_cast<size_t>(c * K + k)] = double(vm[int64_t(c) * K + k]);
        sc[static_cast<size_t>(c * K + k)] = std::exp(double(vs[int64_t(c) * K + k]));
      }
      zc[static_cast<size_t>(c)] =
          mix_cdf(&wmix[size_t(c) * K], &mu[size_t(c) * K], &sc[size_t(c) * K], K, double(hi_edge)) -
          mix_cdf(&wmix[size_t(c) * K], &mu[size_t(c) * K], &sc[size_t(c) * K], K, -double(hi_edge));
      require(zc[static_cast<size_t>(c)] > 0, "rate_bits: degenerate support mass ", vl, vm);
    }

    int N = vv.dim(0), H = vv.dim(2), W = vv.dim(3);
    int64_t plane = int64_t(H) * W;
    double total_bits = 0;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const S* src = vv.data() + (int64_t(n) * C + c) * plane;
        const double* wk = &wmix[size_t(c) * K];
        const double* mk = &mu[size_t(c) * K];
        const double* sk = &sc[size_t(c) * K];
        double z = zc[static_cast<size_t>(c)];
        for (int64_t i = 0; i < plane; ++i) {
          double v = double(src[i]);
          double p = (mix_cdf(wk, mk, sk, K, v + 0.5) - mix_cdf(wk, mk, sk, K, v - 0.5)) / z;
          p = std::max(p, kFloor);
          total_bits -= std::log(p) / kLn2;
        }
      }

    auto snap = std::make_shared<std::vector<double>>();
    snap->insert(snap->end(), wmix.begin(), wmix.end());
    snap->insert(snap->end(), mu.begin(), mu.end());
    snap->insert(snap->end(), sc.begin(), sc.end());
    snap->insert(snap->end(), zc.begin(), zc.end());

    return make_op(
        "rate_bits", Tensor::scalar(static_cast<S>(total_bits)),
        {values, weights_logit, means, log_scales},
        [values, weights_logit, means, log_scales, C, K, N, plane, hi_edge, snap](Tape& t, int self) {
          t.rate_bits_backward(self, values, weights_logit, means, log_scales, C, K, N, plane,
                               double(hi_edge), *snap);
        });
  }

  // ---- engine ----------------------------------------------------------------

  /// Reverse-mode sweep from a recorded scalar. Every trainable leaf
  /// reachable from the loss receives its gradient; each grad tensor is
  /// finiteness-checked as it becomes final.
  void backward(int loss) {
    check_id(loss);
    if (nodes_.empty()) throw std::logic_error("tape: backward without recorded graph");
    const Tensor& lv = val(loss);
    if (lv.numel() != 1) throw std::logic_error("tape: backward on non-scalar of shape " + shape_str(lv.shape()));
    grad_buf(loss)[0] = S(1);
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.requires_grad || !n.backward_fn) continue;
      if (!has_grad(id)) continue;  // not reached from the loss
      if (!grads_[static_cast<size_t>(id)].all_finite())
        throw NonFiniteError(std::string("non-finite gradient flowing into op '") + n.op + "'");
      n.backward_fn(*this, id);
    }
  }

  /// Gradient accumulation buffer, zero-initialized on first touch.
  Tensor& grad_buf(int id) {
    check_id(id);
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    Tensor& g = grads_[static_cast<size_t>(id)];
    if (g.empty() && val(id).numel() > 0) g = Tensor(val(id).shape());
    return g;
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    bool requires_grad = false;
    const char* op = "leaf";
    std::function<void(Tape&, int)> backward_fn;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;

  int check_id(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
      throw std::logic_error("tape: bad node id " + std::to_string(id));
    return id;
  }

  const Tensor& resolve(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.external ? *n.external : n.owned;
  }

  int push(Node n, bool check) {
    nodes_.push_back(std::move(n));
    int id = static_cast<int>(nodes_.size()) - 1;
    if (check) {
      const Tensor& v = resolve(id);
      if (!v.all_finite())
        throw NonFiniteError(std::string("non-finite value produced by op '") + nodes_.back().op + "'");
    }
    return id;
  }

  int make_op(const char* op, Tensor out, std::initializer_list<int> parents,
              std::function<void(Tape&, int)> fn) {
    bool req = false;
    for (int p : parents) req = req || requires_grad(p);
    Node n;
    n.owned = std::move(out);
    n.requires_grad = req;
    n.op = op;
    if (req) n.backward_fn = std::move(fn);
    return push(std::move(n), true);
  }

  template <class F>
  int binary_ew(const char* op, int a, int b, F f, S da, S db) {
    const Tensor& va = val(a);
    const Tensor& vb = val(b);
    require(va.same_shape(vb), std::string(op) + ": shape mismatch ", va, vb);
    Tensor out(va.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = f(va[i], vb[i]);
    return make_op(op, std::move(out), {a, b}, [a, b, da, db](Tape& t, int self) {
      const Tensor& g = t.grad(self);
      if (t.requires_grad(a)) {
        Tensor& ga = t.grad_buf(a);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += da * g[i];
      }
      if (t.requires_grad(b)) {
        Tensor& gb = t.grad_buf(b);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] += db * g[i];
      }
    });
  }

  static void require(bool ok, const std::string& msg, const Tensor& a, const Tensor& b) {
    if (!ok)
      throw std::invalid_argument("tape: " + msg + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }

  static double mix_cdf(const double* w, const double* m, const double* s, int K, double u) {
    double acc = 0;
    for (int k = 0; k < K; ++k) acc += w[k] * detail::stable_sigmoid((u - m[k]) / s[k]);
    return acc;
  }

  // One output row of a same-size 3x3 stencil: out[ox] += sum of the nine
  // weighted taps, rows above/below may be absent at the image border.
  static void stencil3_row(S* out, const S* r0, const S* r1, const S* r2, const S* w9, int W) {
    const S w00 = w9[0], w01 = w9[1], w02 = w9[2];
    const S w10 = w9[3], w11 = w9[4], w12 = w9[5];
    const S w20 = w9[6], w21 = w9[7], w22 = w9[8];
    if (r0 && r2) {
      for (int ox = 1; ox < W - 1; ++ox)
        out[ox] += w00 * r0[ox - 1] + w01 * r0[ox] + w02 * r0[ox + 1] + w10 * r1[ox - 1] +
                   w11 * r1[ox] + w12 * r1[ox + 1] + w20 * r2[ox - 1] + w21 * r2[ox] +
                   w22 * r2[ox + 1];
    } else if (r0) {
      for (int ox = 1; ox < W - 1; ++ox)
        out[ox] += w00 * r0[ox - 1] + w01 * r0[ox] + w02 * r0[ox + 1] + w10 * r1[ox - 1] +
                   w11 * r1[ox] + w12 * r1[ox + 1];
    } else if (r2) {
      for (int ox = 1; ox < W - 1; ++ox)
        out[ox] += w10 * r1[ox - 1] + w11 * r1[ox] + w12 * r1[ox + 1] + w20 * r2[ox - 1] +
                   w21 * r2[ox] + w22 * r2[ox + 1];
    } else {
      for (int ox = 1; ox < W - 1; ++ox)
        out[ox] += w10 * r1[ox - 1] + w11 * r1[ox] + w12 * r1[ox + 1];
    }
    // border columns, guarded taps
    for (int ox : {0, W - 1}) {
      if (W == 1 && ox != 0) break;
      S acc = 0;
      if (r0) {
        if (ox > 0) acc += w00 * r0[ox - 1];
        acc += w01 * r0[ox];
        if (ox + 1 < W) acc += w02 * r0[ox + 1];
      }
      if (ox > 0) acc += w10 * r1[ox - 1];
      acc += w11 * r1[ox];
      if (ox + 1 < W) acc += w12 * r1[ox + 1];
      if (r2) {
        if (ox > 0) acc += w20 * r2[ox - 1];
        acc += w21 * r2[ox];
        if (ox + 1 < W) acc += w22 * r2[ox + 1];
      }
      out[ox] += acc;
      if (W == 1) break;
    }
  }

  static void conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& out, int N,
                           int Ci, int H, int W, int Co, int K, int Ho, int Wo, int s, int p) {
    const bool fast3 = (K == 3 && s == 1 && p == 1);
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co) {
        S* op_ = out.data() + (int64_t(n) * Co + co) * Ho * Wo;
        S bias = b[co];
        for (int64_t i = 0; i < int64_t(Ho) * Wo; ++i) op_[i] = bias;
        for (int ci = 0; ci < Ci; ++ci) {
          const S* xp = x.data() + (int64_t(n) * Ci + ci) * H * W;
          const S* wp = w.data() + (int64_t(co) * Ci + ci) * K * K;
          if (fast3) {
            for (int oy = 0; oy < Ho; ++oy) {
              const S* r0 = oy > 0 ? xp + int64_t(oy - 1) * W : nullptr;
              const S* r1 = xp + int64_t(oy) * W;
              const S* r2 = oy + 1 < H ? xp + int64_t(oy + 1) * W : nullptr;
              stencil3_row(op_ + int64_t(oy) * Wo, r0, r1, r2, wp, W);
            }
            continue;
          }
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              S wv = wp[ky * K + kx];
              if (wv == S(0)) continue;
              for (int oy = 0; oy < Ho; ++oy) {
                int iy = oy * s + ky - p;
                if (iy < 0 || iy >= H) continue;
                const S* xrow = xp + int64_t(iy) * W;
                S* orow = op_ + int64_t(oy) * Wo;
                if (s == 1) {
                  int ox_lo = std::max(0, p - kx);
                  int ox_hi = std::min(Wo, W - kx + p);
                  const S* xr = xrow + kx - p;
                  for (int ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * xr[ox];
                } else {
                  for (int ox = 0; ox < Wo; ++ox) {
                    int ix = ox * s + kx - p;
                    if (ix >= 0 && ix < W) orow[ox] += wv * xrow[ix];
                  }
                }
              }
            }
        }
      }
  }

  static void conv_backward_input(Tensor& gx, const Tensor& w, const Tensor& g, int N, int Ci, int H,
                                  int W, int Co, int K, int Ho, int Wo, int s, int p) {
    const bool fast3 = (K == 3 && s == 1 && p == 1);
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co) {
        const S* gp = g.data() + (int64_t(n) * Co + co) * Ho * Wo;
        for (int ci = 0; ci < Ci; ++ci) {
          S* gxp = gx.data() + (int64_t(n) * Ci + ci) * H * W;
          const S* wp = w.data() + (int64_t(co) * Ci + ci) * K * K;
          if (fast3) {
            // dx is the same stencil with the kernel rotated 180 degrees
            S wf[9] = {wp[8], wp[7], wp[6], wp[5], wp[4], wp[3], wp[2], wp[1], wp[0]};
            for (int iy = 0; iy < H; ++iy) {
              const S* r0 = iy > 0 ? gp + int64_t(iy - 1) * Wo : nullptr;
              const S* r1 = gp + int64_t(iy) * Wo;
              const S* r2 = iy + 1 < Ho ? gp + int64_t(iy + 1) * Wo : nullptr;
              stencil3_row(gxp + int64_t(iy) * W, r0, r1, r2, wf, W);
            }
            continue;
          }
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              S wv = wp[ky * K + kx];
              if (wv == S(0)) continue;
              for (int oy = 0; oy < Ho; ++oy) {
                int iy = oy * s + ky - p;
                if (iy < 0 || iy >= H) continue;
                const S* grow = gp + int64_t(oy) * Wo;
                S* gxrow = gxp + int64_t(iy) * W;
                if (s == 1) {
                  int ox_lo = std::max(0, p - kx);
                  int ox_hi = std::min(Wo, W - kx + p);
                  S* gxr = gxrow + kx - p;
                  for (int ox = ox_lo; ox < ox_hi; ++ox) gxr[ox] += wv * grow[ox];
                } else {
                  for (int ox = 0; ox < Wo; ++ox) {
                    int ix = ox * s + kx - p;
                    if (ix >= 0 && ix < W) gxrow[ix] += wv * grow[ox];
                  }
                }
              }
            }
        }
      }
  }

  static void conv_backward_weight(Tensor& gw, const Tensor& x, const Tensor& g, int N, int Ci, int H,
                                   int W, int Co, int K, int Ho, int Wo, int s, int p) {
    const bool fast3 = (K == 3 && s == 1 && p == 1);
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Co; ++co) {
        const S* gp = g.data() + (int64_t(n) * Co + co) * Ho * Wo;
        for (int ci = 0; ci < Ci; ++ci) {
          const S* xp = x.data() + (int64_t(n) * Ci + ci) * H * W;
          S* gwp = gw.data() + (int64_t(co) * Ci + ci) * K * K;
          if (fast3) {
            // nine running dot products, one pass over the gradient plane
            S a00 = 0, a01 = 0, a02 = 0, a10 = 0, a11 = 0, a12 = 0, a20 = 0, a21 = 0, a22 = 0;
            for (int oy = 0; oy < Ho; ++oy) {
              const S* grow = gp + int64_t(oy) * Wo;
              const S* r0 = oy > 0 ? xp + int64_t(oy - 1) * W : nullptr;
              const S* r1 = xp + int64_t(oy) * W;
              const S* r2 = oy + 1 < H ? xp + int64_t(oy + 1) * W : nullptr;
              for (int ox = 1; ox < W - 1; ++ox) {
                S gv = grow[ox];
                if (r0) {
                  a00 += gv * r0[ox - 1];
                  a01 += gv * r0[ox];
                  a02 += gv * r0[ox + 1];
                }
                a10 += gv * r1[ox - 1];
                a11 += gv * r1[ox];
                a12 += gv * r1[ox + 1];
                if (r2) {
                  a20 += gv * r2[ox - 1];
                  a21 += gv * r2[ox];
                  a22 += gv * r2[ox + 1];
                }
              }
              for (int ox : {0, W - 1}) {
                if (W == 1 && ox != 0) break;
                S gv = grow[ox];
                if (r0) {
                  if (ox > 0) a00 += gv * r0[ox - 1];
                  a01 += gv * r0[ox];
                  if (ox + 1 < W) a02 += gv * r0[ox + 1];
                }
                if (ox > 0) a10 += gv * r1[ox - 1];
                a11 += gv * r1[ox];
                if (ox + 1 < W) a12 += gv * r1[ox + 1];
                if (r2) {
                  if (ox > 0) a20 += gv * r2[ox - 1];
                  a21 += gv * r2[ox];
                  if (ox + 1 < W) a22 += gv * r2[ox + 1];
                }
                if (W == 1) break;
              }
            }
            gwp[0] += a00;
            gwp[1] += a01;
            gwp[2] += a02;
            gwp[3] += a10;
            gwp[4] += a11;
            gwp[5] += a12;
            gwp[6] += a20;
            gwp[7] += a21;
            gwp[8] += a22;
            continue;
          }
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              S acc = 0;
              for (int oy = 0; oy < Ho; ++oy) {
                int iy = oy * s + ky - p;
                if (iy < 0 || iy >= H) continue;
                const S* grow = gp + int64_t(oy) * Wo;
                const S* xrow = xp + int64_t(iy) * W;
                if (s == 1) {
                  int ox_lo = std::max(0, p - kx);
                  int ox_hi = std::min(Wo, W - kx + p);
                  const S* xr = xrow + kx - p;
                  // 4-lane accumulation; fixed order keeps results reproducible
                  S a0 = 0, a1 = 0, a2 = 0, a3 = 0;
                  int ox = ox_lo;
                  for (; ox + 4 <= ox_hi; ox += 4) {
                    a0 += grow[ox] * xr[ox];
                    a1 += grow[ox + 1] * xr[ox + 1];
                    a2 += grow[ox + 2] * xr[ox + 2];
                    a3 += grow[ox + 3] * xr[ox + 3];
                  }
                  for (; ox < ox_hi; ++ox) a0 += grow[ox] * xr[ox];
                  acc += (a0 + a1) + (a2 + a3);
                } else {
                  for (int ox = 0; ox < Wo; ++ox) {
                    int ix = ox * s + kx - p;
                    if (ix >= 0 && ix < W) acc += grow[ox] * xrow[ix];
                  }
                }
              }
              gwp[ky * K + kx] += acc;
            }
        }
      }
  }

  void rate_bits_backward(int self, int values, int weights_logit, int means, int log_scales, int C,
                          int K, int N, int64_t plane, double hi_edge,
                          const std::vector<double>& snap) {
    const double kLn2 = 0.6931471805599453;
    const double kFloor = 1e-12;
    double gout = double(grad(self)[0]);
    const double* wmix = snap.data();
    const double* mu = snap.data() + size_t(C) * K;
    const double* sc = snap.data() + 2 * size_t(C) * K;
    const double* zc = snap.data() + 3 * size_t(C) * K;
    const Tensor& vv = val(values);

    bool need_v = requires_grad(values);
    bool need_w = requires_grad(weights_logit);
    bool need_m = requires_grad(means);
    bool need_s = requires_grad(log_scales);

    // d bits / d ln p = -gout/ln2; d ln p = dΔ/Δ - dZ/Z.
    std::vector<double> dS_dw(static_cast<size_t>(K)), dS_dm(static_cast<size_t>(K)),
        dS_ds(static_cast<size_t>(K));
    std::vector<double> dZ_dw(static_cast<size_t>(C * K), 0.0), dZ_dm(static_cast<size_t>(C * K), 0.0),
        dZ_ds(static_cast<size_t>(C * K), 0.0);
    std::vector<double> acc_w(static_cast<size_t>(C * K), 0.0), acc_m(static_cast<size_t>(C * K), 0.0),
        acc_s(static_cast<size_t>(C * K), 0.0);
    std::vector<double> n_unclamped(static_cast<size_t>(C), 0.0);

    if (need_w || need_m || need_s) {
      for (int c = 0; c < C; ++c)
        for (int k = 0; k < K; ++k) {
          double w = wmix[size_t(c) * K + k], m = mu[size_t(c) * K + k], s = sc[size_t(c) * K + k];
          double zp = (hi_edge - m) / s, zn = (-hi_edge - m) / s;
          double sp = detail::stable_sigmoid(zp), sn = detail::stable_sigmoid(zn);
          double dp = sp * (1 - sp), dn = sn * (1 - sn);
          dZ_dw[size_t(c) * K + k] = sp - sn;  // w.r.t. mixture weight (pre-softmax chained later)
          dZ_dm[size_t(c) * K + k] = -w * (dp - dn) / s;
          dZ_ds[size_t(c) * K + k] = -w * (dp * zp - dn * zn);
        }
    }

    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const S* src = vv.data() + (int64_t(n) * C + c) * plane;
        const double* wk = wmix + size_t(c) * K;
        const double* mk = mu + size_t(c) * K;
        const double* sk = sc + size_t(c) * K;
        double z = zc[c];
        S* gv = need_v ? (grad_buf(values).data() + (int64_t(n) * C + c) * plane) : nullptr;
        for (int64_t i = 0; i < plane; ++i) {
          double v = double(src[i]);
          double delta = 0, ddelta_dv = 0;
          for (int k = 0; k < K; ++k) {
            double zp = (v + 0.5 - mk[k]) / sk[k], zn = (v - 0.5 - mk[k]) / sk[k];
            double sp = detail::stable_sigmoid(zp), sn = detail::stable_sigmoid(zn);
            dS_dw[static_cast<size_t>(k)] = sp - sn;
            double dp = sp * (1 - sp), dn = sn * (1 - sn);
            dS_dm[static_cast<size_t>(k)] = -wk[k] * (dp - dn) / sk[k];
            dS_ds[static_cast<size_t>(k)] = -wk[k] * (dp * zp - dn * zn);
            delta += wk[k] * (sp - sn);
            ddelta_dv += wk[k] * (dp - dn) / sk[k];
          }
          if (delta / z <= kFloor) continue;  // clamped in forward: no gradient
          double f = -gout / kLn2;
          if (need_v) gv[i] += static_cast<S>(f * ddelta_dv / delta);
          if (need_w || need_m || need_s) {
            n_unclamped[static_cast<size_t>(c)] += 1.0;
            for (int k = 0; k < K; ++k) {
              acc_w[size_t(c) * K + k] += dS_dw[static_cast<size_t>(k)] / delta;
              acc_m[size_t(c) * K + k] += dS_dm[static_cast<size_t>(k)] / delta;
              acc_s[size_t(c) * K + k] += dS_ds[static_cast<size_t>(k)] / delta;
            }
          }
        }
      }

    if (!(need_w || need_m || need_s)) return;
    double f = -gout / kLn2;
    for (int c = 0; c < C; ++c) {
      double cnt = n_unclamped[static_cast<size_t>(c)];
      double z = zc[c];
      // Softmax chain for the weight logits: dL/dlogit_j = sum_k dL/dw_k * w_k (δ_kj - w_j).
      std::vector<double> dL_dwk(static_cast<size_t>(K), 0.0);
      for (int k = 0; k < K; ++k) {
        size_t idx = size_t(c) * K + k;
        if (need_m) grad_buf(means)[int64_t(c) * K + k] += static_cast<S>(f * (acc_m[idx] - cnt * dZ_dm[idx] / z));
        if (need_s)
          grad_buf(log_scales)[int64_t(c) * K + k] += static_cast<S>(f * (acc_s[idx] - cnt * dZ_ds[idx] / z));
        dL_dwk[static_cast<size_t>(k)] = f * (acc_w[idx] - cnt * dZ_dw[idx] / z);
      }
      if (need_w) {
        for (int j = 0; j < K; ++j) {
          double acc = 0;
          for (int k = 0; k < K; ++k) {
            double wkk = wmix[size_t(c) * K + k];
            double wj = wmix[size_t(c) * K + j];
            acc += dL_dwk[static_cast<size_t>(k)] * wkk * ((k == j ? 1.0 : 0.0) - wj);
          }
          grad_buf(weights_logit)[int64_t(c) * K + j] += static_cast<S>(acc);
        }
      }
    }
  }
};

}  // namespace osdiff
