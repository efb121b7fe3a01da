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

// Randomized gradient-check cases, one per differentiable primitive. Shared
// by the unit tests and the acceptance run.

#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "meterlink/nk/gradcheck.hpp"
#include "meterlink/nk/ops.hpp"

namespace meterlink::testing {

struct PrimitiveCase {
  std::string name;
  std::function<std::vector<nk::Tensor>(std::mt19937_64&)> sample;
  std::function<nk::Tensor(const std::vector<nk::Tensor>&)> f;
};

inline nk::Tensor random_tensor(nk::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> unif(lo, hi);
  nk::Tensor t(std::move(shape));
  for (double& v : t.data()) v = unif(rng);
  return t;
}

// Scalar probe sum_i w_i * out_i with fixed pseudo-random weights, so that
// every output coordinate contributes a distinct gradient.
inline nk::Tensor weighted_sum(const nk::Tensor& out, std::uint64_t seed = 12345) {
  std::mt19937_64 rng(seed);
  nk::Tensor w = random_tensor(out.shape(), rng);
  return nk::sum(nk::mul(out, w));
}

inline std::vector<PrimitiveCase> primitive_cases() {
  using nk::Tensor;
  std::vector<PrimitiveCase> cases;
  auto add = [&](std::string name, auto sample, auto f) { cases.push_back({std::move(name), sample, f}); };

  add("matmul", [](auto& r) { return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; },
      [](const auto& x) { return weighted_sum(nk::matmul(x[0], x[1])); });
  add("linear", [](auto& r) { return std::vector<Tensor>{random_tensor({3, 4}, r), random_tensor({4, 5}, r), random_tensor({5}, r)}; },
      [](const auto& x) { return weighted_sum(nk::linear(x[0], x[1], x[2])); });
  add("bmm", [](auto& r) { return std::vector<Tensor>{random_tensor({2, 3, 4}, r), random_tensor({2, 4, 2}, r)}; },
      [](const auto& x) { return weighted_sum(nk::bmm(x[0], x[1])); });
  add("bmm_transposed", [](auto& r) { return std::vector<Tensor>{random_tensor({2, 3, 4}, r), random_tensor({2, 5, 4}, r)}; },
      [](const auto& x) { return weighted_sum(nk::bmm(x[0], x[1], true)); });
  add("axpby", [](auto& r) { return std::vector<Tensor>{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; },
      [](const auto& x) { return weighted_sum(nk::axpby(x[0], 0.7, x[1], -1.3)); });
  add("mul", [](auto& r) { return std::vector<Tensor>{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; },
      [](const auto& x) { return weighted_sum(nk::mul(x[0], x[1])); });
  add("affine", [](auto& r) { return std::vector<Tensor>{random_tensor({5}, r)}; },
      [](const auto& x) { return weighted_sum(nk::affine(x[0], -2.5, 0.3)); });
  add("add_broadcast", [](auto& r) { return std::vector<Tensor>{random_tensor({3, 2, 4}, r), random_tensor({2, 4}, r)}; },
      [](const auto& x) { return weighted_sum(nk::add_broadcast(x[0], x[1])); });
  add("relu", [](auto& r) { return std::vector<Tensor>{random_tensor({12}, r)}; },
      [](const auto& x) { return weighted_sum(nk::relu(x[0])); });
  add("leaky_relu", [](auto& r) { return std::vector<Tensor>{random_tensor({12}, r)}; },
      [](const auto& x) { return weighted_sum(nk::leaky_relu(x[0])); });
  add("tanh", [](auto& r) { return std::vector<Tensor>{random_tensor({12}, r, -2, 2)}; },
      [](const auto& x) { return weighted_sum(nk::tanh(x[0])); });
  add("sigmoid", [](auto& r) { return std::vector<Tensor>{random_tensor({12}, r, -3, 3)}; },
      [](const auto& x) { return weighted_sum(nk::sigmoid(x[0])); });
  add("sum", [](auto& r) { return std::vector<Tensor>{random_tensor({3, 3}, r)}; },
      [](const auto& x) { return nk::sum(x[0]); });
  add("mean", [](auto& r) { return std::vector<Tensor>{random_tensor({3, 3}, r)}; },
      [](const auto& x) { return nk::mean(x[0]); });
  add("sum_dim", [](auto& r) { return std::vector<Tensor>{random_tensor({2, 3, 4}, r)}; },
      [](const auto& x) { return weighted_sum(nk::sum_dim(x[0], 1)); });
  add("reshape", [](auto& r) { return std::vector<Tensor>{random_tensor({2, 6}, r)}; },
      [](const auto& x) { return weighted_sum(nk::reshape(x[0], {3, 4})); });
  add("permute", [](auto& r) { return std::vector<Tensor>{random_tensor({2, 3, 4}, r)}; },
      [](const auto& x) { return weighted_sum(nk::permute(x[0], {2, 0, 1})); });
  add("slice", [](auto& r) { return std::vector<Tensor>{random_tensor({3, 5, 2}, r)}; },
      [](const auto& x) { return weighted_sum(nk::slice(x[0], 1, 1, 3)); });
  add("concat", [](auto& r) { return std::vector<Tensor>{random_tensor({2, 3}, r), random_tensor({2, 1}, r)}; },
      [](const auto& x) { return weighted_sum(nk::concat({x[0], x[1]}, 1)); });
  add("index_rows", [](auto& r) { return std::vector<Tensor>{random_tensor({4, 3}, r)}; },
      [](const auto& x) { return weighted_sum(nk::index_rows(x[0], {2, 0, 2, 3})); });
  add("softmax", [](auto& r) { return std::vector<Tensor>{random_tensor({3, 5}, r, -2, 2)}; },
      [](const auto& x) { return weighted_sum(nk::softmax(x[0])); });
  add("layernorm", [](auto& r) { return std::vector<Tensor>{random_tensor({3, 6}, r), random_tensor({6}, r, 0.5, 1.5), random_tensor({6}, r)}; },
      [](const auto& x) { return weighted_sum(nk::layernorm(x[0], x[1], x[2])); });
  add("row_norms", [](auto& r) { return std::vector<Tensor>{random_tensor({3, 4}, r)}; },
      [](const auto& x) { return weighted_sum(nk::row_norms(x[0])); });
  add("l2_normalize_rows", [](auto& r) { return std::vector<Tensor>{random_tensor({3, 4}, r)}; },
      [](const auto& x) { return weighted_sum(nk::l2_normalize_rows(x[0])); });
  add("conv1d", [](auto& r) { return std::vector<Tensor>{random_tensor({2, 3, 9}, r), random_tensor({4, 3, 3}, r), random_tensor({4}, r)}; },
      [](const auto& x) { return weighted_sum(nk::conv1d(x[0], x[1], x[2], 0)); });
  add("conv1d_causal_dilated", [](auto& r) { return std::vector<Tensor>{random_tensor({2, 2, 7}, r), random_tensor({3, 2, 3}, r), random_tensor({3}, r)}; },
      [](const auto& x) { return weighted_sum(nk::conv1d(x[0], x[1], x[2], 4, 2)); });
  add("maxpool1d", [](auto& r) { return std::vector<Tensor>{random_tensor({2, 3, 9}, r)}; },
      [](const auto& x) { return weighted_sum(nk::maxpool1d(x[0], 2)); });
  add("batchnorm_train", [](auto& r) { return std::vector<Tensor>{random_tensor({4, 2, 5}, r), random_tensor({2}, r, 0.5, 1.5), random_tensor({2}, r)}; },
      [](const auto& x) {
        nk::BatchNormState st(2);
        return weighted_sum(nk::batchnorm1d(x[0], x[1], x[2], st, nk::Mode::train));
      });
  add("batchnorm_eval", [](auto& r) { return std::vector<Tensor>{random_tensor({4, 2, 5}, r), random_tensor({2}, r, 0.5, 1.5), random_tensor({2}, r)}; },
      [](const auto& x) {
        nk::BatchNormState st(2);
        st.running_mean[0] = 0.3;
        st.running_var[1] = 2.0;
        return weighted_sum(nk::batchnorm1d(x[0], x[1], x[2], st, nk::Mode::eval));
      });
  add("weight_norm", [](auto& r) { return std::vector<Tensor>{random_tensor({3, 2, 2}, r), random_tensor({3}, r, 0.5, 1.5)}; },
      [](const auto& x) { return weighted_sum(nk::weight_norm(x[0], x[1])); });
  return cases;
}

}  // namespace meterlink::testing
