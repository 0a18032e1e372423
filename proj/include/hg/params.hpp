#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "hg/error.hpp"
#include "hg/rng.hpp"
#include "hg/tensor.hpp"

namespace hg {

/// Named parameter tensors with paired Adam state. std::map keeps the
/// iteration order deterministic.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> t) {
    if (params_.count(name)) {
      throw ContractError("param store: duplicate name '" + name + "'");
    }
    t.set_requires_grad(true);
    auto [it, ok] = params_.emplace(name, std::move(t));
    return it->second;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) {
      throw ContractError("param store: unknown name '" + name + "'");
    }
    return it->second;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
      throw ContractError("param store: unknown name '" + name + "'");
    }
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, v] : params_) out.push_back(k);
    return out;
  }

  std::size_t size() const { return params_.size(); }

  void zero_grads() {
    for (auto& [k, v] : params_) v.zero_grad();
  }

  /// FNV-1a over the raw parameter bytes, in name order.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* bytes = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    };
    for (const auto& [k, v] : params_) {
      mix(k.data(), k.size());
      mix(v.data->data(), v.data->size() * sizeof(T));
    }
    return h;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor<T>> params_;
};

/// Uniform Glorot initialization, biases zero.
template <typename T>
Tensor<T> glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> vals(fan_in * fan_out);
  for (auto& v : vals) v = static_cast<T>(rng.uniform(-a, a));
  return Tensor<T>::from({fan_in, fan_out}, std::move(vals));
}

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied directly to weights
};

/// Adam with bias correction and decoupled weight decay. Steps with any
/// non-finite gradient entry are skipped and counted.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamHyper hyper = {}) : hyper_(hyper) {}

  /// Updates parameters accepted by `trainable` (all, by default) from
  /// their grad slots.
  void step(ParamStore<T>& store,
            const std::function<bool(const std::string&)>& trainable = {}) {
    bool finite = true;
    for (auto& [name, p] : store) {
      if (trainable && !trainable(name)) continue;
      for (T g : *p.grad) {
        if (!std::isfinite(static_cast<double>(g))) {
          finite = false;
          break;
        }
      }
      if (!finite) break;
    }
    if (!finite) {
      ++skipped_;
      return;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, t_);
    const double bc2 = 1.0 - std::pow(hyper_.beta2, t_);
    for (auto& [name, p] : store) {
      if (trainable && !trainable(name)) continue;
      auto& m = state_m_[name];
      auto& v = state_v_[name];
      if (m.size() != p.numel()) m.assign(p.numel(), 0.0);
      if (v.size() != p.numel()) v.assign(p.numel(), 0.0);
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double g = static_cast<double>((*p.grad)[i]);
        m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * g;
        v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        double x = static_cast<double>((*p.data)[i]);
        if (hyper_.weight_decay > 0.0) {
          x -= hyper_.lr * hyper_.weight_decay * x;
        }
        x -= hyper_.lr * mhat / (std::sqrt(vhat) + hyper_.eps);
        (*p.data)[i] = static_cast<T>(x);
      }
    }
  }

  std::size_t skipped_steps() const { return skipped_; }
  std::size_t steps() const { return t_; }
  const AdamHyper& hyper() const { return hyper_; }

 private:
  AdamHyper hyper_;
  std::map<std::string, std::vector<double>> state_m_;
  std::map<std::string, std::vector<double>> state_v_;
  std::size_t t_ = 0;
  std::size_t skipped_ = 0;
};

}  // namespace hg
