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

// Triplet-loss training of an embedder on an auxiliary dataset: windowed
// triplet sampling with a day lag, in-batch hard negative mining, AdamW with
// plateau learning-rate decay, and early stopping on validation rank-1.
// Week indices are 0-based throughout.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "meterlink/attack/match.hpp"
#include "meterlink/core/error.hpp"
#include "meterlink/core/io.hpp"
#include "meterlink/core/record.hpp"
#include "meterlink/core/transforms.hpp"
#include "meterlink/embed/embedder.hpp"
#include "meterlink/nk/optim.hpp"

namespace meterlink::train {

struct WeekRange {
  std::size_t first = 0;
  std::size_t count = 0;

  std::size_t end() const { return first + count; }
  bool contains(std::size_t w) const { return w >= first && w < end(); }
};

struct TrainConfig {
  std::size_t batch_size = 64;
  double margin = 1.0;
  std::size_t lag = 7;  // days
  nk::OptimizerConfig optimizer;
  std::uint64_t seed = 1;
  WeekRange train_weeks;
  std::size_t validation_reference = 0;
  std::size_t validation_target = 1;
  // Permits validation weeks inside the sampling range (only used by the
  // four-week auxiliary protocol, which has no week to spare).
  bool allow_validation_overlap = false;

  void validate(std::size_t available_weeks) const {
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (!(margin > 0.0)) throw ConfigError("margin must be positive");
    if (lag < 1) throw ConfigError("lag must be at least one day");
    optimizer.validate();
    if (train_weeks.count < 2) throw ConfigError("triplet sampling needs at least two weeks");
    if (train_weeks.end() > available_weeks) throw ConfigError("training weeks exceed the auxiliary data");
    if (validation_reference >= available_weeks || validation_target >= available_weeks)
      throw ConfigError("validation weeks exceed the auxiliary data");
    if (validation_reference == validation_target) throw ConfigError("validation weeks must differ");
    if (!allow_validation_overlap &&
        (train_weeks.contains(validation_reference) || train_weeks.contains(validation_target)))
      throw ConfigError("validation weeks overlap the triplet-sampling weeks");
  }
};

// ---------------------------------------------------------------------------
// Triplet loss

// max(0, d(a, p) - d(a, n) + margin) with Euclidean d.
inline double triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                           double margin) {
  if (a.size() != p.size() || a.size() != n.size()) throw ShapeError("triplet_loss: dimension mismatch");
  return std::max(0.0, attack::euclidean(a, p) - attack::euclidean(a, n) + margin);
}

// Per-triplet hinge losses over rows of E [rows x dim]; triplet t uses rows
// (anchor[t], positive[t], negative[t]). The subgradient at the hinge point
// and of a zero distance is taken as zero.
inline nk::Tensor triplet_losses(const nk::Tensor& E, const std::vector<std::size_t>& anchor,
                                 const std::vector<std::size_t>& positive, const std::vector<std::size_t>& negative,
                                 double margin) {
  nk::detail::expect_rank(E, 2, "triplet_losses");
  const std::size_t T = anchor.size(), dim = E.dim(1);
  if (positive.size() != T || negative.size() != T) throw ShapeError("triplet_losses: index lists differ in length");
  nk::Tensor out(nk::Shape{T});
  std::vector<double> dap(T), dan(T);
  auto dist = [&](std::size_t i, std::size_t j) {
    return attack::euclidean(E.data().subspan(i * dim, dim), E.data().subspan(j * dim, dim));
  };
  for (std::size_t t = 0; t < T; ++t) {
    dap[t] = dist(anchor[t], positive[t]);
    dan[t] = dist(anchor[t], negative[t]);
    out[t] = std::max(0.0, dap[t] - dan[t] + margin);
  }
  if (nk::Tape* tape = nk::detail::track(out, {&E})) {
    tape->record([E, out, anchor, positive, negative, dap = std::move(dap), dan = std::move(dan), dim]() mutable {
      if (!out.has_grad()) return;
      auto& gE = E.grad_mut();
      const auto e = E.data();
      for (std::size_t t = 0; t < out.numel(); ++t) {
        if (!(out[t] > 0.0)) continue;
        const double g = out.grad()[t];
        const std::size_t a = anchor[t], p = positive[t], n = negative[t];
        for (std::size_t j = 0; j < dim; ++j) {
          // d d(a,p) / da = (a - p) / d(a,p); the negative term enters with a minus sign.
          const double up = dap[t] > 0.0 ? (e[a * dim + j] - e[p * dim + j]) / dap[t] : 0.0;
          const double un = dan[t] > 0.0 ? (e[a * dim + j] - e[n * dim + j]) / dan[t] : 0.0;
          gE[a * dim + j] += g * (up - un);
          gE[p * dim + j] -= g * up;
          gE[n * dim + j] += g * un;
        }
      }
    });
  }
  return out;
}

// Row of the embedding closest to row `anchor` among rows of other users;
// exact ties go to the lowest row.
inline std::size_t hard_negative_index(std::span<const double> embeddings, std::size_t dim,
                                       const std::vector<std::size_t>& users, std::size_t anchor) {
  if (embeddings.size() != users.size() * dim) throw ShapeError("hard_negative: embedding/user count mismatch");
  const auto a = embeddings.subspan(anchor * dim, dim);
  std::size_t best = users.size();
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (users[i] == users[anchor]) continue;
    const double d = attack::euclidean(a, embeddings.subspan(i * dim, dim));
    if (best == users.size() || d < best_d) {
      best = i;
      best_d = d;
    }
  }
  if (best == users.size()) throw PreconditionError("hard_negative: batch holds no other user");
  return best;
}

struct LabeledEmbedding {
  std::string user;
  std::vector<double> embedding;
};

inline std::vector<double> hard_negative(const std::vector<LabeledEmbedding>& batch, const LabeledEmbedding& anchor) {
  const LabeledEmbedding* best = nullptr;
  double best_d = 0.0;
  for (const auto& c : batch) {
    if (c.user == anchor.user) continue;
    const double d = attack::euclidean(anchor.embedding, c.embedding);
    if (!best || d < best_d) {
      best = &c;
      best_d = d;
    }
  }
  if (!best) throw PreconditionError("hard_negative: batch holds no other user");
  return best->embedding;
}

// ---------------------------------------------------------------------------
// Triplet sampling

struct TripletBatch {
  std::size_t day = 0;          // anchor window start
  std::size_t minus_day = 0;    // (day - lag) mod days
  std::size_t plus_day = 0;     // (day + lag) mod days
  std::vector<std::string> users;
  std::vector<std::vector<double>> anchors, positives_minus, positives_plus;  // daily rows
};

inline std::size_t wrap_day(std::ptrdiff_t d, std::size_t days) {
  const auto n = static_cast<std::ptrdiff_t>(days);
  return static_cast<std::size_t>(((d % n) + n) % n);
}

// `aux` holds only the sampling weeks. One start day d is drawn per batch;
// the positives are the windows starting at d - lag and d + lag, modulo
// the number of days.
inline TripletBatch sample_triplet_batch(const Dataset& aux, const std::vector<std::string>& users,
                                         std::mt19937_64& rng, std::size_t lag) {
  if (users.size() > aux.size()) throw PreconditionError("triplet batch larger than the user set");
  if (users.empty()) throw PreconditionError("empty triplet batch");
  const std::size_t days = aux.grid().slots / kHoursPerDay;
  if (days < 2 * kDaysPerWeek) throw DataError("triplet sampling needs at least two weeks of days");
  TripletBatch b;
  b.day = std::uniform_int_distribution<std::size_t>(0, days - 1)(rng);
  b.minus_day = wrap_day(static_cast<std::ptrdiff_t>(b.day) - static_cast<std::ptrdiff_t>(lag), days);
  b.plus_day = wrap_day(static_cast<std::ptrdiff_t>(b.day + lag), days);
  b.users = users;
  for (const auto& u : users) {
    const MeterRecord& rec = aux.at(u);
    b.anchors.push_back(embed::window_rows(rec, b.day));
    b.positives_minus.push_back(embed::window_rows(rec, b.minus_day));
    b.positives_plus.push_back(embed::window_rows(rec, b.plus_day));
  }
  return b;
}

// Mean triplet loss of one batch: rows [anchors | minus | plus], two
// triplets per anchor sharing the anchor's hard negative.
inline nk::Tensor batch_objective(const embed::Embedder& model, const TripletBatch& batch, double margin,
                                  nk::Mode mode = nk::Mode::train) {
  const std::size_t b = batch.users.size();
  std::vector<std::vector<double>> blocks;
  blocks.reserve(3 * b);
  for (const auto* part : {&batch.anchors, &batch.positives_minus, &batch.positives_plus})
    blocks.insert(blocks.end(), part->begin(), part->end());
  const nk::Tensor E = model.forward(embed::stack_inputs(blocks, model.config().utilities), mode);
  std::vector<std::size_t> users(3 * b);
  for (std::size_t i = 0; i < 3 * b; ++i) users[i] = i % b;
  std::vector<std::size_t> anchor, positive, negative;
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t n = hard_negative_index(E.data(), E.dim(1), users, i);
    for (std::size_t p : {b + i, 2 * b + i}) {
      anchor.push_back(i);
      positive.push_back(p);
      negative.push_back(n);
    }
  }
  return nk::mean(triplet_losses(E, anchor, positive, negative, margin));
}

// ---------------------------------------------------------------------------
// Validation

// Rank-1 identification with `reference` as the indexed week and `target`
// as the queries, on the same pseudonyms.
inline double validate_rank1(const embed::Embedder& model, const Dataset& reference, const Dataset& target) {
  if (reference.pseudonyms() != target.pseudonyms()) throw DataError("validation weeks cover different users");
  const auto index = attack::build_index(model, reference);
  const auto names = target.pseudonyms();
  const auto emb = model.embed(attack::record_pointers(target));
  const auto results = attack::match_all(index, names, emb, [](const std::string& s) { return s; });
  return attack::identification_within_rank(results, 1);
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_rank1 = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  embed::Embedder model;  // parameters of the best validation epoch
  std::vector<EpochLog> history;
  int best_epoch = 0;
  double best_val_rank1 = -1.0;
};

inline std::string history_csv(const std::vector<EpochLog>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,val_rank1,learning_rate\n";
  for (const auto& h : history)
    out << h.epoch << ',' << io::format_double(h.train_loss) << ',' << io::format_double(h.val_rank1) << ','
        << io::format_double(h.learning_rate) << '\n';
  return out.str();
}

// User batches of one epoch. A trailing single user cannot be mined for
// negatives (and gives batchnorm a batch of one), so it joins the previous
// batch.
inline std::vector<std::vector<std::string>> epoch_batches(std::vector<std::string> users, std::size_t B,
                                                           std::mt19937_64& rng) {
  std::shuffle(users.begin(), users.end(), rng);
  std::vector<std::vector<std::string>> batches;
  for (std::size_t i = 0; i < users.size(); i += B)
    batches.emplace_back(users.begin() + i, users.begin() + std::min(users.size(), i + B));
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

using EpochCallback = std::function<void(const EpochLog&)>;

// aux: preprocessed, unit-scaled auxiliary dataset covering all weeks that
// cfg refers to.
inline TrainResult train(const embed::EmbedderConfig& model_cfg, const Dataset& aux, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  const std::size_t weeks = aux.grid().slots / kHoursPerWeek;
  cfg.validate(weeks);
  if (aux.size() < 2) throw DataError("training needs at least two users");
  if (aux.grid().utilities != model_cfg.utilities) throw ConfigError("model utility count does not match the data");

  const Dataset sampling = slice_weeks(aux, cfg.train_weeks.first, cfg.train_weeks.count);
  const Dataset val_ref = slice_weeks(aux, cfg.validation_reference, 1);
  const Dataset val_tgt = slice_weeks(aux, cfg.validation_target, 1);
  const std::vector<std::string> users = aux.pseudonyms();

  std::seed_seq init_seq{cfg.seed, std::uint64_t{0x1a17}};
  std::seed_seq batch_seq{cfg.seed, std::uint64_t{0xba7c}};
  std::mt19937_64 init_rng(init_seq), rng(batch_seq);
  embed::Embedder model(model_cfg, init_rng());

  TrainResult result;
  nk::AdamWState opt;
  nk::PlateauSchedule schedule(cfg.optimizer);
  for (int epoch = 1; epoch <= cfg.optimizer.max_epochs; ++epoch) {
    const double lr = schedule.learning_rate();
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (const auto& batch_users : epoch_batches(users, cfg.batch_size, rng)) {
      const TripletBatch batch = sample_triplet_batch(sampling, batch_users, rng, cfg.lag);
      nk::Tape tape;
      nk::Tensor loss;
      {
        nk::TapeScope scope(tape);
        loss = batch_objective(model, batch, cfg.margin);
      }
      if (!std::isfinite(loss.item()))
        throw NumericalError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(n_batches + 1) + " (learning rate " + io::format_double(lr) + ")");
      tape.backward(loss);
      nk::adamw_step(model.parameters(), opt, cfg.optimizer, lr);
      for (const auto& p : model.parameters()) {
        p.zero_grad();
        for (double v : p.data())
          if (!std::isfinite(v))
            throw NumericalError("training diverged: non-finite parameters at epoch " + std::to_string(epoch));
      }
      loss_sum += loss.item();
      ++n_batches;
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(n_batches);
    log.learning_rate = lr;
    try {
      log.val_rank1 = validate_rank1(model, val_ref, val_tgt);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string("training diverged during validation at epoch ") + std::to_string(epoch) +
                           ": " + e.what());
    }
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
    if (schedule.observe(log.val_rank1)) {
      result.model = model.clone();
      result.best_epoch = epoch;
      result.best_val_rank1 = log.val_rank1;
    }
    if (schedule.exhausted()) break;
  }
  return result;
}

}  // namespace meterlink::train
