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

// Central finite-difference verification of tape gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "meterlink/nk/tensor.hpp"

namespace meterlink::nk {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Denominator floor of the relative error, so that coordinates whose true
  // gradient is (near) zero are compared in absolute terms.
  double floor = 1e-3;
  // Coordinates probed per input tensor; 0 probes all of them.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  // A mismatch explained by a derivative jump inside [x - eps, x + eps]:
  // the input sits on a nondifferentiable point and should be resampled.
  bool kink = false;
  bool passed = false;
};

inline double relative_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Compares the tape gradient of the scalar f() with respect to every tensor
// in `inputs` against central differences. f must read the inputs by
// reference (they are perturbed in place and restored).
inline GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                  const GradCheckOptions& opt = {}) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = f();
    tape.backward(out);
  }
  for (auto& x : inputs) {
    if (x.has_grad())
      analytic.emplace_back(x.grad().begin(), x.grad().end());
    else
      analytic.emplace_back(x.numel(), 0.0);
  }

  auto eval = [&]() {
    NoGradScope off;
    return f().item();
  };

  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  bool mismatch = false;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = inputs[k];
    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (opt.max_coords && coords.size() > opt.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords);
    }
    for (std::size_t j : coords) {
      const double x0 = x[j];
      const double f0 = eval();
      x[j] = x0 + opt.eps;
      const double fp = eval();
      x[j] = x0 - opt.eps;
      const double fm = eval();
      x[j] = x0;
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double err = relative_error(numeric, analytic[k][j], opt.floor);
      ++report.coords_checked;
      if (err > opt.tol) {
        const double right = (fp - f0) / opt.eps;
        const double left = (f0 - fm) / opt.eps;
        if (std::abs(right - left) > 0.5 * std::abs(numeric - analytic[k][j])) {
          report.kink = true;
          continue;
        }
        mismatch = true;
      }
      report.max_rel_error = std::max(report.max_rel_error, err);
    }
  }
  for (auto& x : inputs) x.zero_grad();
  report.passed = !mismatch && !report.kink && report.max_rel_error < opt.tol;
  return report;
}

// Draws inputs from `sample` until a draw avoids every kink (up to
// `attempts` draws) and checks it.
inline GradCheckReport grad_check_resampling(const std::function<std::vector<Tensor>(std::mt19937_64&)>& sample,
                                             const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                             std::mt19937_64& rng, const GradCheckOptions& opt = {},
                                             int attempts = 20) {
  GradCheckReport report;
  for (int a = 0; a < attempts; ++a) {
    std::vector<Tensor> inputs = sample(rng);
    report = grad_check([&]() { return f(inputs); }, inputs, opt);
    if (!report.kink) return report;
  }
  return report;
}

}  // namespace meterlink::nk
