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

// Two-stage hyperparameter search over an auxiliary dataset of M weeks.
// Stage 1 trains every grid point on weeks [0, M-4) with validation weeks
// (M-4, M-3) and scores it by rank-1 on weeks (M-2, M-1). Stage 2 retrains
// the winner from scratch on weeks [0, M-2) with validation (M-2, M-1).
// With M = 4 there is no spare week: every point trains on weeks [0, 3)
// with validation (2, 3) and the best-validated run is kept as is.

#pragma once

#include <future>
#include <vector>

#include "meterlink/train/trainer.hpp"

namespace meterlink::train {

struct GridSpec {
  std::vector<double> learning_rates{0.001, 0.005};
  std::vector<double> weight_decays{0.01, 0.005};
  std::vector<std::size_t> layers;  // empty: the architecture's search range
  std::vector<std::size_t> lags{4, 5, 6, 7};

  void validate() const {
    if (learning_rates.empty() || weight_decays.empty() || lags.empty()) throw ConfigError("grid axes must be nonempty");
  }
};

struct GridPoint {
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  std::size_t layers = 0;
  std::size_t lag = 0;
};

// Enumerates eta x alpha x L x l in that nesting order.
inline std::vector<GridPoint> enumerate_grid(const GridSpec& grid, embed::EmbedderKind kind) {
  grid.validate();
  const auto layers = grid.layers.empty() ? embed::layer_choices(kind) : grid.layers;
  std::vector<GridPoint> pts;
  for (double lr : grid.learning_rates)
    for (double wd : grid.weight_decays)
      for (std::size_t L : layers)
        for (std::size_t lag : grid.lags) pts.push_back({lr, wd, L, lag});
  return pts;
}

struct GridEntry {
  GridPoint point;
  std::vector<EpochLog> history;
  double score = -1.0;  // stage-1 rank-1 on the held-out pair; -1 if diverged
  bool diverged = false;
  std::string error;
};

struct GridResult {
  std::vector<GridEntry> entries;
  std::size_t best = 0;
  embed::EmbedderConfig model_config;
  TrainConfig train_config;
  TrainResult final_run;
};

// Index of the highest score; the first point wins ties.
inline std::size_t select_best(const std::vector<GridEntry>& entries) {
  if (entries.empty()) throw PreconditionError("empty grid");
  std::size_t best = 0;
  for (std::size_t i = 1; i < entries.size(); ++i)
    if (entries[i].score > entries[best].score) best = i;
  return best;
}

inline TrainConfig with_point(TrainConfig cfg, const GridPoint& p) {
  cfg.optimizer.learning_rate = p.learning_rate;
  cfg.optimizer.weight_decay = p.weight_decay;
  cfg.lag = p.lag;
  return cfg;
}

// `base` supplies batch size, margin, optimizer limits and seed; its week
// fields are overwritten by the protocol. Grid points run on up to
// `workers` threads, each with its own model and RNG streams.
inline GridResult grid_search(const embed::EmbedderConfig& base_model, const GridSpec& grid, const Dataset& aux,
                              std::size_t M, const TrainConfig& base, std::size_t workers = 1) {
  const std::size_t weeks = aux.grid().slots / kHoursPerWeek;
  if (M > weeks) throw DataError("auxiliary data holds fewer than M weeks");
  if (M != 4 && M < 6) throw DataError("grid search needs M >= 6 auxiliary weeks (or exactly 4)");
  const auto points = enumerate_grid(grid, base_model.kind);

  TrainConfig stage1 = base;
  if (M == 4) {
    stage1.train_weeks = {0, 3};
    stage1.validation_reference = 2;
    stage1.validation_target = 3;
    stage1.allow_validation_overlap = true;
  } else {
    stage1.train_weeks = {0, M - 4};
    stage1.validation_reference = M - 4;
    stage1.validation_target = M - 3;
  }
  const Dataset score_ref = M == 4 ? Dataset() : slice_weeks(aux, M - 2, 1);
  const Dataset score_tgt = M == 4 ? Dataset() : slice_weeks(aux, M - 1, 1);

  GridResult out;
  out.entries.resize(points.size());
  std::vector<TrainResult> runs(points.size());
  auto run_point = [&](std::size_t i) {
    GridEntry& e = out.entries[i];
    e.point = points[i];
    embed::EmbedderConfig mc = base_model;
    mc.layers = points[i].layers;
    try {
      runs[i] = train(mc, aux, with_point(stage1, points[i]));
      e.history = runs[i].history;
      e.score = M == 4 ? runs[i].best_val_rank1 : validate_rank1(runs[i].model, score_ref, score_tgt);
    } catch (const NumericalError& err) {
      e.diverged = true;
      e.score = -1.0;
      e.error = err.what();
    }
  };
  workers = std::max<std::size_t>(1, workers);
  for (std::size_t begin = 0; begin < points.size(); begin += workers) {
    std::vector<std::future<void>> jobs;
    for (std::size_t i = begin; i < std::min(points.size(), begin + workers); ++i)
      jobs.push_back(std::async(workers == 1 ? std::launch::deferred : std::launch::async, run_point, i));
    for (auto& j : jobs) j.get();
  }

  out.best = select_best(out.entries);
  if (out.entries[out.best].diverged) throw NumericalError("every grid point diverged");
  out.model_config = base_model;
  out.model_config.layers = points[out.best].layers;
  if (M == 4) {
    out.train_config = with_point(stage1, points[out.best]);
    out.final_run = std::move(runs[out.best]);
  } else {
    TrainConfig stage2 = with_point(base, points[out.best]);
    stage2.train_weeks = {0, M - 2};
    stage2.validation_reference = M - 2;
    stage2.validation_target = M - 1;
    out.train_config = stage2;
    out.final_run = train(out.model_config, aux, stage2);
  }
  return out;
}

}  // namespace meterlink::train
