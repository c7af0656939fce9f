// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "osdiff/params.hpp"
#include "osdiff/rng.hpp"
#include "osdiff/serialize.hpp"
#include "osdiff/tape.hpp"
#include "test_util.hpp"

using namespace osdiff;

TEST_CASE("tensor shape/data length invariant") {
  CHECK_THROWS_AS(TensorT<float>({2, 3}, std::vector<float>{1, 2, 3}), std::invalid_argument);
  TensorT<float> t({2, 3});
  CHECK(t.numel() == 6);
}

TEST_CASE("rng: identical seed gives identical sequence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42), d(43);
  CHECK(c.next_u64() != d.next_u64());
}

TEST_CASE("rng: normal moments are sane") {
  Rng r(7);
  double sum = 0, sum2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double v = r.normal();
    sum += v;
    sum2 += v * v;
  }
  CHECK(std::fabs(sum / n) < 0.02);
  CHECK(std::fabs(sum2 / n - 1.0) < 0.02);
}

TEST_CASE("conv2d: identity kernel reproduces the input") {
  Tape<float> t;
  int x = t.leaf(TensorT<float>({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  int w = t.leaf(TensorT<float>({1, 1, 1, 1}, {1.0f}));
  int b = t.leaf(TensorT<float>({1}, std::vector<float>{0.0f}));
  int y = t.conv2d(x, w, b, 1, 0);
  for (int i = 0; i < 9; ++i) CHECK(t.val(y)[i] == doctest::Approx(t.val(x)[i]));
}

TEST_CASE("conv2d: all-ones 2x2 kernel sums the window") {
  Tape<float> t;
  int x = t.leaf(TensorT<float>({1, 1, 2, 2}, {1, 2, 3, 4}));
  int w = t.leaf(TensorT<float>({1, 1, 2, 2}, {1, 1, 1, 1}));
  int b = t.leaf(TensorT<float>({1}, std::vector<float>{0.0f}));
  int y = t.conv2d(x, w, b, 1, 0);
  CHECK(t.val(y).numel() == 1);
  CHECK(t.val(y)[0] == doctest::Approx(10.0f));
}

TEST_CASE("conv2d: non-integer output dims rejected") {
  Tape<float> t;
  int x = t.leaf(TensorT<float>({1, 1, 5, 5}));
  int w = t.leaf(TensorT<float>({1, 1, 2, 2}));
  int b = t.leaf(TensorT<float>({1}));
  CHECK_THROWS_AS(t.conv2d(x, w, b, 2, 0), std::invalid_argument);
}

TEST_CASE("layer suite point values") {
  Tape<float> t;
  int z = t.leaf(TensorT<float>({1}, std::vector<float>{0.0f}));
  CHECK(t.val(t.silu(z))[0] == doctest::Approx(0.0f));
  CHECK(t.val(t.sigmoid(z))[0] == doctest::Approx(0.5f));
}

TEST_CASE("group_norm: constant input is all zeros before affine") {
  Tape<float> t;
  int x = t.leaf(TensorT<float>({1, 4, 3, 3}, 2.5f));
  int gamma = t.leaf(TensorT<float>({4}, 1.0f));
  int beta = t.leaf(TensorT<float>({4}, 0.0f));
  int y = t.group_norm(x, 2, gamma, beta);
  for (int64_t i = 0; i < t.val(y).numel(); ++i) CHECK(t.val(y)[i] == doctest::Approx(0.0f));
}

TEST_CASE("group_norm: normalized statistics within 1e-5") {
  Tape<float> t;
  Rng r(3);
  TensorT<float> xv({2, 8, 4, 4});
  r.fill_normal(xv, 1.0, 3.0);
  int x = t.leaf(xv);
  int gamma = t.leaf(TensorT<float>({8}, 1.0f));
  int beta = t.leaf(TensorT<float>({8}, 0.0f));
  int y = t.group_norm(x, 2, gamma, beta);
  const auto& out = t.val(y);
  // each (n, group) slab: mean 0 var 1
  for (int n = 0; n < 2; ++n)
    for (int g = 0; g < 2; ++g) {
      double mean = 0, var = 0;
      for (int c = 4 * g; c < 4 * (g + 1); ++c)
        for (int i = 0; i < 16; ++i) mean += out[((n * 8 + c) * 16) + i];
      mean /= 64;
      for (int c = 4 * g; c < 4 * (g + 1); ++c)
        for (int i = 0; i < 16; ++i) {
          double d = out[((n * 8 + c) * 16) + i] - mean;
          var += d * d;
        }
      var /= 64;
      CHECK(std::fabs(mean) < 1e-5);
      CHECK(std::fabs(var - 1.0) < 1e-3);
    }
}

TEST_CASE("group_norm: channels must divide by groups") {
  Tape<float> t;
  int x = t.leaf(TensorT<float>({1, 6, 2, 2}));
  int gamma = t.leaf(TensorT<float>({6}, 1.0f));
  int beta = t.leaf(TensorT<float>({6}));
  CHECK_THROWS_AS(t.group_norm(x, 4, gamma, beta), std::invalid_argument);
}

TEST_CASE("backward: sum gives all-ones gradient") {
  Tape<float> t;
  int p = t.leaf(TensorT<float>({3}, {1, 2, 3}), true);
  t.backward(t.sum(p));
  for (int i = 0; i < 3; ++i) CHECK(t.grad(p)[i] == doctest::Approx(1.0f));
}

TEST_CASE("backward: sum of squares gives 2p") {
  Tape<float> t;
  int p = t.leaf(TensorT<float>({2}, {1, 2}), true);
  t.backward(t.sum(t.mul(p, p)));
  CHECK(t.grad(p)[0] == doctest::Approx(2.0f));
  CHECK(t.grad(p)[1] == doctest::Approx(4.0f));
}

TEST_CASE("backward: errors on non-scalar and on empty tape") {
  Tape<float> t;
  CHECK_THROWS_AS(t.backward(0), std::logic_error);  // empty tape / bad id
  int p = t.leaf(TensorT<float>({3}, {1, 2, 3}), true);
  CHECK_THROWS_AS(t.backward(p), std::logic_error);  // non-scalar
}

TEST_CASE("round_ste: half-to-even forward, identity backward") {
  Tape<float> t;
  int x = t.leaf(TensorT<float>({5}, {0.4f, 0.6f, 2.5f, -2.5f, 40.0f}), true);
  int y = t.round_ste(x, 31.0f);
  CHECK(t.val(y)[0] == 0.0f);
  CHECK(t.val(y)[1] == 1.0f);
  CHECK(t.val(y)[2] == 2.0f);   // ties to even
  CHECK(t.val(y)[3] == -2.0f);
  CHECK(t.val(y)[4] == 31.0f);  // clamped to the alphabet bound
  t.backward(t.sum(y));
  for (int i = 0; i < 5; ++i) CHECK(t.grad(x)[i] == doctest::Approx(1.0f));
}

TEST_CASE("nan guard: non-finite forward output aborts with the op name") {
  Tape<float> t;
  int x = t.leaf(TensorT<float>({1}, std::vector<float>{0.0f}), true);
  CHECK_THROWS_WITH_AS(t.log(x), doctest::Contains("log"), NonFiniteError);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamStoreT<float> ps;
  auto& v = ps.create("p", {3});
  v[0] = 1;
  v[1] = 2;
  v[2] = 3;
  ps.mark_grads_populated();
  ps.adam_step(1e-2);
  CHECK(v[0] == 1.0f);
  CHECK(v[1] == 2.0f);
  CHECK(v[2] == 3.0f);
}

TEST_CASE("adam: first step from zero moments approximates -lr * sign(g)") {
  ParamStoreT<float> ps;
  auto& v = ps.create("p", {1});
  v[0] = 0.5f;
  ps.grad("p")[0] = 3.7f;
  ps.mark_grads_populated();
  ps.adam_step(1e-2);
  // mhat = g, vhat = g^2 -> update = lr * g / (|g| + eps) ~= lr
  CHECK(v[0] == doctest::Approx(0.5f - 1e-2f).epsilon(1e-4));
}

TEST_CASE("adam: frozen parameter with nonzero gradient is untouched") {
  ParamStoreT<float> ps;
  auto& v = ps.create("p", {1});
  v[0] = 1.0f;
  ps.entry("p").trainable = false;
  ps.grad("p")[0] = 100.0f;
  ps.mark_grads_populated();
  ps.adam_step(1e-2);
  CHECK(v[0] == 1.0f);
}

TEST_CASE("adam: step before any backward is an error") {
  ParamStoreT<float> ps;
  ps.create("p", {1});
  CHECK_THROWS_AS(ps.adam_step(1e-2), std::logic_error);
}

TEST_CASE("param store: duplicate names rejected, freeze by prefix works") {
  ParamStoreT<float> ps;
  ps.create("a.x", {1});
  CHECK_THROWS_AS(ps.create("a.x", {2}), std::invalid_argument);
  ps.create("a.y", {1});
  ps.create("b.z", {1});
  ps.freeze_prefix("a.");
  CHECK_FALSE(ps.entry("a.x").trainable);
  CHECK_FALSE(ps.entry("a.y").trainable);
  CHECK(ps.entry("b.z").trainable);
}

// ---- per-layer finite-difference audits (double precision) --------------------

namespace {

using test::fd_check;

// Generic harness: creates params, builds a scalar through `wire`, checks
// every parameter entry against central differences.
template <class Wire>
void layer_fd_case(const std::vector<std::pair<std::string, Shape>>& params, Wire wire,
                   double tol = 1e-3) {
  ParamStoreT<double> ps;
  Rng r(99);
  for (const auto& [name, shape] : params) {
    auto& v = ps.create(name, shape);
    r.fill_normal(v, 0.0, 0.5);
  }
  auto build = [&](ParamStoreT<double>& store, bool want) -> double {
    Tape<double> t;
    ParamBind<double> pb(t, store);
    int loss = wire(t, pb);
    if (want) {
      store.zero_grad();
      t.backward(loss);
      pb.flush_grads();
    }
    return t.val(loss)[0];
  };
  std::vector<std::string> names;
  for (const auto& [name, shape] : params) names.push_back(name);
  auto rep = fd_check(ps, names, build);
  CAPTURE(rep.worst_param);
  CAPTURE(rep.worst_index);
  CHECK(rep.max_rel_err < tol);
}

TensorT<double> fixed_input(const Shape& s, uint64_t seed, double scale = 1.0) {
  TensorT<double> t(s);
  Rng r(seed);
  r.fill_normal(t, 0.0, scale);
  return t;
}

}  // namespace

TEST_CASE("fd: conv2d gradients (input, weight, bias)") {
  layer_fd_case({{"x", {1, 2, 4, 4}}, {"w", {3, 2, 3, 3}}, {"b", {3}}}, [](Tape<double>& t, ParamBind<double>& pb) {
    int y = t.conv2d(pb.node("x"), pb.node("w"), pb.node("b"), 1, 1);
    return t.mean(t.mul(y, y));
  });
}

TEST_CASE("fd: strided conv2d gradients") {
  layer_fd_case({{"x", {1, 2, 5, 5}}, {"w", {2, 2, 3, 3}}, {"b", {2}}}, [](Tape<double>& t, ParamBind<double>& pb) {
    int y = t.conv2d(pb.node("x"), pb.node("w"), pb.node("b"), 2, 1);
    return t.mean(t.mul(y, y));
  });
}

TEST_CASE("fd: linear gradients") {
  layer_fd_case({{"x", {3, 4}}, {"w", {2, 4}}, {"b", {2}}}, [](Tape<double>& t, ParamBind<double>& pb) {
    int y = t.linear(pb.node("x"), pb.node("w"), pb.node("b"));
    return t.mean(t.mul(y, y));
  });
}

TEST_CASE("fd: group_norm gradients") {
  layer_fd_case({{"x", {2, 4, 3, 3}}, {"g", {4}}, {"b", {4}}}, [](Tape<double>& t, ParamBind<double>& pb) {
    int y = t.group_norm(pb.node("x"), 2, pb.node("g"), pb.node("b"));
    int k = t.constant(fixed_input({2, 4, 3, 3}, 5));
    return t.mean(t.mul(y, k));
  });
}

TEST_CASE("fd: activations, pools, structure ops") {
  layer_fd_case({{"x", {1, 2, 4, 4}}, {"y", {1, 2, 4, 4}}}, [](Tape<double>& t, ParamBind<double>& pb) {
    int a = t.silu(pb.node("x"));
    int b = t.sigmoid(pb.node("y"));
    int c = t.concat_channels(a, b);
    int up = t.upsample_nearest_2x(c);
    int down = t.avgpool_2x(up);
    int pooled = t.global_avg_pool(down);
    int k = t.constant(fixed_input({1, 4}, 6));
    return t.sum(t.mul(pooled, k));
  });
}

TEST_CASE("fd: affine, bias broadcast, clamp, log, mean_sq_diff") {
  layer_fd_case({{"x", {2, 3, 2, 2}}, {"v", {2, 3}}}, [](Tape<double>& t, ParamBind<double>& pb) {
    int h = t.add_sample_channel_bias(pb.node("x"), pb.node("v"));
    int a = t.affine(h, pb.node("x"), 0.7, 0.3);
    int s = t.sigmoid(a);
    int c = t.clamp(s, 1e-6, 1.0 - 1e-6);
    int lg = t.log(c);
    int target = t.constant(fixed_input({2, 3, 2, 2}, 8, 0.2));
    return t.mean_sq_diff(lg, target);
  });
}

TEST_CASE("fd: rate_bits gradients in values and all mixture parameters") {
  ParamStoreT<double> ps;
  Rng r(123);
  auto& values = ps.create("v", {1, 3, 4, 4});
  r.fill_normal(values, 0.0, 3.0);
  auto& logits = ps.create("wl", {3, 2});
  r.fill_normal(logits, 0.0, 0.3);
  auto& means = ps.create("mu", {3, 2});
  r.fill_normal(means, 0.0, 1.0);
  auto& scales = ps.create("ls", {3, 2});
  r.fill_normal(scales, 0.3, 0.2);
  auto build = [&](ParamStoreT<double>& store, bool want) -> double {
    Tape<double> t;
    ParamBind<double> pb(t, store);
    int bits = t.rate_bits(pb.node("v"), pb.node("wl"), pb.node("mu"), pb.node("ls"), 15);
    if (want) {
      store.zero_grad();
      t.backward(bits);
      pb.flush_grads();
    }
    return t.val(bits)[0];
  };
  auto rep = fd_check(ps, {"v", "wl", "mu", "ls"}, build);
  CAPTURE(rep.worst_param);
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("unreachable parameters keep zero gradients") {
  ParamStoreT<float> ps;
  ps.create("used", {2});
  ps.create("unused", {2});
  Tape<float> t;
  ParamBind<float> pb(t, ps);
  int loss = t.sum(t.mul(pb.node("used"), pb.node("used")));
  ps.zero_grad();
  t.backward(loss);
  pb.flush_grads();
  CHECK(ps.grad("unused")[0] == 0.0f);
  CHECK(ps.grad("unused")[1] == 0.0f);
}

TEST_CASE("model file: roundtrip preserves names, shapes, values") {
  ParamStoreT<float> ps;
  Rng r(5);
  auto& a = ps.create("alpha", {2, 3});
  r.fill_normal(a);
  auto& b = ps.create("beta.gamma", {4});
  r.fill_normal(b);
  std::vector<uint8_t> bytes = serialize_store(ps);
  auto parsed = parse_model_bytes(bytes);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed.at("alpha").shape == Shape{2, 3});
  for (int i = 0; i < 6; ++i) CHECK(parsed.at("alpha").data[size_t(i)] == a[i]);
  for (int i = 0; i < 4; ++i) CHECK(parsed.at("beta.gamma").data[size_t(i)] == b[i]);
}

TEST_CASE("model file: corrupt inputs raise structured errors") {
  ParamStoreT<float> ps;
  ps.create("x", {2});
  std::vector<uint8_t> bytes = serialize_store(ps);
  CHECK_THROWS_AS(parse_model_bytes({bytes.begin(), bytes.begin() + 3}), ModelFileError);
  std::vector<uint8_t> bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(parse_model_bytes(bad), ModelFileError);
  std::vector<uint8_t> truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(parse_model_bytes(truncated), ModelFileError);
}
