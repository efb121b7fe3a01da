//
// Copyright 2026 The meterlink Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "meterlink/nk/tensor.hpp"

namespace meterlink::nk {

struct OptimizerConfig {
  double learning_rate = 0.001;
  double weight_decay = 0.01;
  double lr_floor = 1e-5;
  double lr_decay_factor = 0.5;
  int patience = 10;
  int max_epochs = 300;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
    if (!(lr_floor > 0.0) || !(lr_floor < learning_rate)) throw ConfigError("lr_floor must be positive and below learning_rate");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) throw ConfigError("lr_decay_factor must lie in (0, 1)");
    if (patience < 1) throw ConfigError("patience must be positive");
    if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  }
};

struct AdamWState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

// One AdamW update with learning rate `lr`. Weight decay is decoupled:
// theta <- theta - lr * alpha * theta, then the bias-corrected Adam step.
// Parameters without a gradient buffer are treated as having zero gradient.
inline void adamw_step(std::vector<Tensor>& params, AdamWState& state, const OptimizerConfig& cfg, double lr) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0);
      state.v[i].assign(params[i].numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adamw_step: optimizer state does not match parameter list");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.numel()) throw ShapeError("adamw_step: moment shape mismatch");
    const bool has = p.has_grad();
    auto g = p.grad();
    if (has && g.size() != p.numel()) throw ShapeError("adamw_step: gradient shape mismatch");
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const double gj = has ? g[j] : 0.0;
      p[j] -= lr * cfg.weight_decay * p[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

inline void adamw_step(std::vector<Tensor>& params, AdamWState& state, const OptimizerConfig& cfg) {
  adamw_step(params, state, cfg, cfg.learning_rate);
}

// Reduces the learning rate by `lr_decay_factor` after `patience` epochs
// without improvement of the monitored metric (higher is better).
class PlateauSchedule {
 public:
  explicit PlateauSchedule(const OptimizerConfig& cfg) : cfg_(cfg), lr_(cfg.learning_rate) {}

  // Returns true when the metric improved on the best value so far.
  bool observe(double metric) {
    if (metric > best_) {
      best_ = metric;
      stale_ = 0;
      return true;
    }
    if (++stale_ >= cfg_.patience) {
      lr_ *= cfg_.lr_decay_factor;
      stale_ = 0;
    }
    return false;
  }

  double learning_rate() const { return lr_; }
  bool exhausted() const { return lr_ < cfg_.lr_floor; }
  double best() const { return best_; }

 private:
  OptimizerConfig cfg_;
  double lr_;
  double best_ = -1.0;
  int stale_ = 0;
};

}  // namespace meterlink::nk
