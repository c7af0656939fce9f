// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "osdiff/rng.hpp"
#include "osdiff/tape.hpp"
#include "osdiff/tensor.hpp"

namespace osdiff {

/// Optimizer phase a parameter belongs to. Generator and discriminator
/// parameters are updated on alternating steps and must never cross.
enum class ParamGroup : uint8_t { kGenerator = 0, kDiscriminator = 1 };

template <class S>
struct ParamEntry {
  TensorT<S> value;
  TensorT<S> grad;
  TensorT<S> adam_m;
  TensorT<S> adam_v;
  int64_t adam_t = 0;
  bool trainable = true;
  ParamGroup group = ParamGroup::kGenerator;
};

/// Named parameter tensors with accumulated gradients and Adam state.
/// Iteration order is the lexicographic name order, which also fixes the
/// serialization layout.
template <class S>
class ParamStoreT {
 public:
  using Tensor = TensorT<S>;

  Tensor& create(const std::string& name, const Shape& shape,
                 ParamGroup group = ParamGroup::kGenerator) {
    if (items_.count(name)) throw std::invalid_argument("param store: duplicate name " + name);
    ParamEntry<S> e;
    e.value = Tensor(shape);
    e.grad = Tensor(shape);
    e.adam_m = Tensor(shape);
    e.adam_v = Tensor(shape);
    e.group = group;
    auto it = items_.emplace(name, std::move(e)).first;
    return it->second.value;
  }

  bool contains(const std::string& name) const { return items_.count(name) != 0; }

  ParamEntry<S>& entry(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw std::out_of_range("param store: unknown name " + name);
    return it->second;
  }
  const ParamEntry<S>& entry(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw std::out_of_range("param store: unknown name " + name);
    return it->second;
  }

  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& grad(const std::string& name) { return entry(name).grad; }

  size_t size() const { return items_.size(); }

  template <class F>
  void for_each(F f) {
    for (auto& [name, e] : items_) f(name, e);
  }
  template <class F>
  void for_each(F f) const {
    for (const auto& [name, e] : items_) f(name, e);
  }

  /// Marks every parameter whose name starts with `prefix` as frozen.
  void freeze_prefix(const std::string& prefix) {
    for (auto& [name, e] : items_)
      if (name.rfind(prefix, 0) == 0) e.trainable = false;
  }

  void zero_grad() {
    for (auto& [name, e] : items_) e.grad.fill(S(0));
    grads_populated_ = false;
  }

  void mark_grads_populated() { grads_populated_ = true; }
  bool grads_populated() const { return grads_populated_; }

  /// Standard Adam with bias correction. Frozen parameters and parameters
  /// rejected by `want` are untouched; their moment state does not advance.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                 const std::function<bool(const std::string&, const ParamEntry<S>&)>& want = {}) {
    if (!grads_populated_)
      throw std::logic_error("param store: adam_step before any backward populated gradients");
    for (auto& [name, e] : items_) {
      if (!e.trainable) continue;
      if (want && !want(name, e)) continue;
      e.adam_t += 1;
      double bc1 = 1.0 - std::pow(beta1, double(e.adam_t));
      double bc2 = 1.0 - std::pow(beta2, double(e.adam_t));
      for (int64_t i = 0; i < e.value.numel(); ++i) {
        double g = double(e.grad[i]);
        double m = beta1 * double(e.adam_m[i]) + (1.0 - beta1) * g;
        double v = beta2 * double(e.adam_v[i]) + (1.0 - beta2) * g * g;
        e.adam_m[i] = static_cast<S>(m);
        e.adam_v[i] = static_cast<S>(v);
        double mhat = m / bc1;
        double vhat = v / bc2;
        e.value[i] = static_cast<S>(double(e.value[i]) - lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

  void adam_step_group(ParamGroup group, double lr, double beta1 = 0.9, double beta2 = 0.999,
                       double eps = 1e-8) {
    adam_step(lr, beta1, beta2, eps,
              [group](const std::string&, const ParamEntry<S>& e) { return e.group == group; });
  }

  /// FNV-1a over the value bytes of parameters selected by `pred`; used by
  /// the freeze-contract tests.
  uint64_t checksum(const std::function<bool(const std::string&, const ParamEntry<S>&)>& pred = {}) const {
    uint64_t h = 0xCBF29CE484222325ull;
    for (const auto& [name, e] : items_) {
      if (pred && !pred(name, e)) continue;
      for (char c : name) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001B3ull;
      }
      const auto* bytes = reinterpret_cast<const uint8_t*>(e.value.data());
      for (size_t i = 0; i < size_t(e.value.numel()) * sizeof(S); ++i) {
        h ^= bytes[i];
        h *= 0x100000001B3ull;
      }
    }
    return h;
  }

  template <class T>
  ParamStoreT<T> cast() const {
    ParamStoreT<T> out;
    for (const auto& [name, e] : items_) {
      auto& v = out.create(name, e.value.shape(), e.group);
      v = e.value.template cast<T>();
      out.entry(name).trainable = e.trainable;
    }
    return out;
  }

 private:
  std::map<std::string, ParamEntry<S>> items_;
  bool grads_populated_ = false;
};

/// Leases store parameters onto a tape on demand and routes tape gradients
/// back into the store after backward(). In inference mode (or under a
/// lease filter) parameters join the tape without gradient tracking;
/// activation gradients still flow through them.
template <class S>
class ParamBind {
 public:
  ParamBind(Tape<S>& tape, ParamStoreT<S>& store, bool inference = false)
      : tape_(&tape), store_(&store), inference_(inference) {}

  /// Restricts gradient tracking to parameters accepted by `f` (e.g. one
  /// optimizer group during its phase of the alternating loop).
  void set_lease_filter(std::function<bool(const std::string&, const ParamEntry<S>&)> f) {
    lease_filter_ = std::move(f);
  }

  int node(const std::string& name) {
    auto it = nodes_.find(name);
    if (it != nodes_.end()) return it->second;
    ParamEntry<S>& e = store_->entry(name);
    bool track = e.trainable && !inference_ && (!lease_filter_ || lease_filter_(name, e));
    int id = tape_->param(&e.value, track);
    nodes_.emplace(name, id);
    return id;
  }

  /// Accumulates every reached tape gradient into the store. Unreached
  /// trainable parameters keep whatever the store already holds (zeros
  /// after zero_grad), satisfying the "unreachable parameters hold zero"
  /// contract.
  void flush_grads() {
    for (const auto& [name, id] : nodes_) {
      if (!tape_->has_grad(id)) continue;
      const TensorT<S>& g = tape_->grad(id);
      TensorT<S>& dst = store_->grad(name);
      for (int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
    }
    store_->mark_grads_populated();
  }

  Tape<S>& tape() { return *tape_; }
  ParamStoreT<S>& store() { return *store_; }

 private:
  Tape<S>* tape_;
  ParamStoreT<S>* store_;
  bool inference_ = false;
  std::function<bool(const std::string&, const ParamEntry<S>&)> lease_filter_;
  std::unordered_map<std::string, int> nodes_;
};

/// Kaiming-normal initialization for conv/linear weights.
template <class S>
void init_kaiming(TensorT<S>& w, int fan_in, Rng& rng) {
  double std = std::sqrt(2.0 / double(fan_in));
  rng.fill_normal(w, 0.0, std);
}

}  // namespace osdiff
