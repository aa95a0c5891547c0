#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cycledepth/tensor.hpp"

namespace cycledepth {

struct OptimizerConfig {
  double learning_rate = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 2e-5;

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("optimizer: learning_rate must be > 0");
    if (beta1 < 0 || beta1 >= 1) throw ConfigError("optimizer: beta1 must be in [0, 1)");
    if (beta2 < 0 || beta2 >= 1) throw ConfigError("optimizer: beta2 must be in [0, 1)");
    if (epsilon <= 0) throw ConfigError("optimizer: epsilon must be > 0");
    if (weight_decay < 0) throw ConfigError("optimizer: weight_decay must be >= 0");
  }
};

// A named trainable tensor with its Adam state.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::vector<T> adam_m;
  std::vector<T> adam_v;
  i64 adam_t = 0;

  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {}

  i64 numel() const { return value.numel(); }
};

// One Adam step with decoupled weight decay. Parameters whose gradient buffer
// was never populated are skipped; their names are returned for reporting.
// Gradients of updated parameters are cleared afterwards.
template <typename T>
std::vector<std::string> adam_step(std::span<const std::shared_ptr<Parameter<T>>> params,
                                   const OptimizerConfig& cfg) {
  cfg.validate();
  std::vector<std::string> skipped;
  for (const auto& p : params) {
    auto node = p->value.node();
    if (node->grad.empty()) {
      skipped.push_back(p->name);
      continue;
    }
    const size_t sz = node->data.size();
    if (p->adam_m.size() != sz) p->adam_m.assign(sz, T(0));
    if (p->adam_v.size() != sz) p->adam_v.assign(sz, T(0));
    p->adam_t += 1;

    const T lr = static_cast<T>(cfg.learning_rate);
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const T eps = static_cast<T>(cfg.epsilon);
    const T wd = static_cast<T>(cfg.weight_decay);
    const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(p->adam_t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(p->adam_t)));

    T* theta = node->data.data();
    T* g = node->grad.data();
    T* m = p->adam_m.data();
    T* v = p->adam_v.data();
    for (size_t i = 0; i < sz; ++i) {
      if (wd != T(0)) theta[i] -= lr * wd * theta[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      g[i] = T(0);
    }
  }
  return skipped;
}

template <typename T>
std::vector<std::string> adam_step(const std::vector<std::shared_ptr<Parameter<T>>>& params,
                                   const OptimizerConfig& cfg) {
  return adam_step(std::span<const std::shared_ptr<Parameter<T>>>(params.data(), params.size()),
                   cfg);
}

}  // namespace cycledepth
