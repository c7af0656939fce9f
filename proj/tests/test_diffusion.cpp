// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "osdiff/diffusion.hpp"

using namespace osdiff;

TEST_CASE("schedule: single step product") {
  NoiseSchedule s = make_schedule(1, 0.1, 0.1);
  CHECK(s.alpha_bar_at(0) == doctest::Approx(1.0));
  CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9));
}

TEST_CASE("schedule: default ramp ends nearly at pure noise") {
  NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  CHECK(s.alpha_bar_at(1000) < 1e-4);
  CHECK(s.alpha_bar_at(1000) > kAlphaBarFloor);
}

TEST_CASE("schedule: alpha_bar strictly decreasing, identities hold exactly") {
  NoiseSchedule s = make_schedule(50, 5e-3, 0.3);
  double prod = 1.0;
  for (int t = 1; t <= 50; ++t) {
    CHECK(s.beta_at(t) > 0.0);
    CHECK(s.beta_at(t) < 1.0);
    CHECK(s.alpha_at(t) == 1.0 - s.beta_at(t));
    prod *= s.alpha_at(t);
    CHECK(s.alpha_bar_at(t) == doctest::Approx(prod).epsilon(1e-12));
    CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
  }
}

TEST_CASE("schedule: endpoint validation") {
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(10, 0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(make_schedule(0, 0.1, 0.1), std::invalid_argument);
}

TEST_CASE("forward_diffuse: zero noise scales by sqrt(alpha_bar)") {
  NoiseSchedule s = make_schedule(10, 0.05, 0.05);
  TensorT<float> y0({1, 1, 2, 2}, 2.0f);
  TensorT<float> eps({1, 1, 2, 2}, 0.0f);
  auto y = forward_diffuse(y0, 4, eps, s);
  float expect = 2.0f * float(std::sqrt(s.alpha_bar_at(4)));
  for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(expect));
}

TEST_CASE("forward_diffuse: direct formula value at alpha_bar = 0.25") {
  // construct a schedule whose first step has alpha_bar exactly 0.25
  NoiseSchedule s = make_schedule(1, 0.75, 0.75);
  TensorT<float> y0({1}, std::vector<float>{1.0f});
  TensorT<float> eps({1}, std::vector<float>{1.0f});
  auto y = forward_diffuse(y0, 1, eps, s);
  CHECK(y[0] == doctest::Approx(0.5 + std::sqrt(0.75)).epsilon(1e-6));
}

TEST_CASE("forward_diffuse: monte-carlo marginal statistics") {
  NoiseSchedule s = make_schedule(100, 1e-3, 0.05);
  int t = 60;
  double ab = s.alpha_bar_at(t);
  Rng rng(2025);
  const int n = 10000;
  double y0v = 1.7;
  TensorT<double> y0({1}, std::vector<double>{y0v});
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    TensorT<double> eps({1});
    rng.fill_normal(eps);
    auto y = forward_diffuse(y0, t, eps, s);
    sum += y[0];
    sum2 += y[0] * y[0];
  }
  double mean = sum / n;
  double var = sum2 / n - mean * mean;
  double expect_mean = std::sqrt(ab) * y0v;
  double expect_var = 1.0 - ab;
  double se = std::sqrt(expect_var / n);
  CHECK(std::fabs(mean - expect_mean) < 4 * se);          // within 4 sigma
  CHECK(std::fabs(var - expect_var) < 0.05 * expect_var);  // within 5%
}

TEST_CASE("reverse_step: t=1 with the true noise returns y0 exactly") {
  NoiseSchedule s = make_schedule(10, 0.02, 0.2);
  Rng rng(7);
  TensorT<float> y0({1, 1, 2, 2});
  rng.fill_normal(y0);
  TensorT<float> eps({1, 1, 2, 2});
  rng.fill_normal(eps);
  auto y1 = forward_diffuse(y0, 1, eps, s);
  Rng step_rng(99);
  auto back = reverse_step(y1, eps, 1, s, step_rng);
  for (int i = 0; i < 4; ++i) CHECK(back[i] == doctest::Approx(y0[i]).epsilon(1e-5));
}

TEST_CASE("reverse_step: t=1 is deterministic (variance exactly zero)") {
  NoiseSchedule s = make_schedule(10, 0.02, 0.2);
  TensorT<float> y({1}, std::vector<float>{0.7f});
  TensorT<float> eh({1}, std::vector<float>{0.1f});
  Rng r1(1), r2(2);
  auto a = reverse_step(y, eh, 1, s, r1);
  auto b = reverse_step(y, eh, 1, s, r2);
  CHECK(a[0] == b[0]);
  CHECK(r1.next_u64() == Rng(1).next_u64());  // no draw consumed
}

TEST_CASE("reverse_step: zero eps_hat reduces to y_t/sqrt(alpha_t) plus noise") {
  NoiseSchedule s = make_schedule(10, 0.05, 0.1);
  int t = 5;
  TensorT<double> y({1}, std::vector<double>{1.0});
  TensorT<double> eh({1}, std::vector<double>{0.0});
  Rng ra(3);
  auto out = reverse_step(y, eh, t, s, ra);
  // reproduce the noise term with the same stream
  Rng rb(3);
  double var = (1.0 - s.alpha_bar_at(t - 1)) / (1.0 - s.alpha_bar_at(t)) * s.beta_at(t);
  double expect = 1.0 / std::sqrt(s.alpha_at(t)) + std::sqrt(var) * rb.normal();
  CHECK(out[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(reverse_step(y, eh, 0, s, ra), std::invalid_argument);
}

TEST_CASE("reverse_step: full chain with the oracle noise lands on y0") {
  NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  double y0 = 0.85;
  Rng rng(31);
  // start from the fully noised sample
  TensorT<double> eps0({1});
  rng.fill_normal(eps0);
  TensorT<double> y({1});
  y[0] = std::sqrt(s.alpha_bar_at(1000)) * y0 + std::sqrt(1.0 - s.alpha_bar_at(1000)) * eps0[0];
  for (int t = 1000; t >= 1; --t) {
    double ab = s.alpha_bar_at(t);
    TensorT<double> eps_hat({1});
    eps_hat[0] = (y[0] - std::sqrt(ab) * y0) / std::sqrt(1.0 - ab);  // analytically correct noise
    y = reverse_step(y, eps_hat, t, s, rng);
  }
  CHECK(std::fabs(y[0] - y0) < 1e-4);
}

TEST_CASE("one_step_sample: exact inverse of forward_diffuse") {
  NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  Rng rng(17);
  TensorT<float> y0({1, 4, 3, 3});
  rng.fill_normal(y0);
  for (int t : {1, 250, 600, 999}) {
    TensorT<float> eps({1, 4, 3, 3});
    rng.fill_normal(eps);
    auto yt = forward_diffuse(y0, t, eps, s);
    auto rec = one_step_sample(yt, eps, t, s);
    for (int64_t i = 0; i < rec.numel(); ++i) CHECK(std::fabs(rec[i] - y0[i]) < 1e-4f);
  }
}

TEST_CASE("one_step_sample: worked value at alpha_bar = 0.25") {
  NoiseSchedule s = make_schedule(1, 0.75, 0.75);
  TensorT<double> yt({1}, std::vector<double>{0.5 + std::sqrt(0.75)});
  TensorT<double> eh({1}, std::vector<double>{1.0});
  auto y0 = one_step_sample(yt, eh, 1, s);
  CHECK(y0[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("one_step_sample: floor guard rejects unusable timesteps") {
  // beta close to 1 collapses alpha_bar under the floor almost immediately
  NoiseSchedule s = make_schedule(20, 0.9, 0.99);
  TensorT<float> y({1}, std::vector<float>{1.0f});
  TensorT<float> eh({1}, std::vector<float>{0.0f});
  CHECK_THROWS_AS(one_step_sample(y, eh, 20, s), std::invalid_argument);
}

TEST_CASE("noise_prediction_loss: zero at equality, one for unit offset, matches reference") {
  TensorT<float> a({2, 2}, 0.0f);
  TensorT<float> b({2, 2}, 1.0f);
  CHECK(noise_prediction_loss(a, a) == doctest::Approx(0.0));
  CHECK(noise_prediction_loss(a, b) == doctest::Approx(1.0));
  Rng rng(5);
  TensorT<float> x({3, 5}), y({3, 5});
  rng.fill_normal(x);
  rng.fill_normal(y);
  double ref = 0;  // independent two-line recomputation
  for (int i = 0; i < 15; ++i) ref += (double(x[i]) - double(y[i])) * (double(x[i]) - double(y[i]));
  ref /= 15.0;
  CHECK(noise_prediction_loss(x, y) == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("sub_schedule: N=1 collapses to the one-step inversion at t_max") {
  NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  NoiseSchedule sub = sub_schedule(s, 1, 400);
  CHECK(sub.T == 1);
  CHECK(sub.alpha_bar_at(1) == doctest::Approx(s.alpha_bar_at(400)));
  // reverse_step at k=1 on the derived schedule == one_step_sample at t=400
  Rng rng(8);
  TensorT<double> y({1}), eh({1});
  rng.fill_normal(y);
  rng.fill_normal(eh);
  Rng nr(9);
  auto a = reverse_step(y, eh, 1, sub, nr);
  auto b = one_step_sample(y, eh, 400, s);
  CHECK(a[0] == doctest::Approx(b[0]).epsilon(1e-12));
}

TEST_CASE("sub_schedule: evenly spaced, bounds enforced") {
  NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  auto taus = sub_schedule_timesteps(4, 1000);
  CHECK(taus == std::vector<int>{250, 500, 750, 1000});
  CHECK_THROWS_AS(sub_schedule(s, 1001, 1000), std::invalid_argument);
  CHECK_THROWS_AS(sub_schedule_timesteps(0, 10), std::invalid_argument);
}
