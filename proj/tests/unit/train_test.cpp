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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "embedder_cases.hpp"
#include "primitive_cases.hpp"
#include "meterlink/attack/experiment.hpp"
#include "meterlink/synth/synthgen.hpp"
#include "meterlink/train/grid.hpp"
#include "meterlink/train/trainer.hpp"
#include "test_util.hpp"

namespace meterlink::train {
namespace {

using embed::EmbedderConfig;
using embed::EmbedderKind;

// Unit-scaled synthetic data.
Dataset scaled_synth(std::size_t n, std::size_t weeks, double noise, std::uint64_t seed = 3) {
  synth::SynthConfig sc;
  sc.n_households = n;
  sc.n_weeks = weeks;
  sc.week_noise = noise;
  sc.vacation_prob = 0.0;
  sc.seasonal_amplitude = 0.0;
  sc.seed = seed;
  const Dataset raw = synth::generate(sc).data;
  const auto parts = split_weeks(raw);
  return apply_unit_scaling(raw, fit_scaling(std::span<const Dataset>(parts)));
}

TrainConfig small_config(std::size_t train_weeks, int epochs) {
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.train_weeks = {0, train_weeks};
  cfg.validation_reference = train_weeks;
  cfg.validation_target = train_weeks + 1;
  cfg.optimizer.max_epochs = epochs;
  return cfg;
}

// --- triplet loss ------------------------------------------------------------

TEST(TripletLoss, DegenerateTripleGivesMargin) {
  const std::vector<double> a{0.3, -0.2};
  EXPECT_DOUBLE_EQ(triplet_loss(a, a, a, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(triplet_loss(a, a, a, 0.25), 0.25);
}

TEST(TripletLoss, WorkedExamples) {
  EXPECT_DOUBLE_EQ(triplet_loss(std::vector<double>{0, 0}, std::vector<double>{1, 0}, std::vector<double>{3, 0}, 1.0),
                   0.0);
  EXPECT_DOUBLE_EQ(triplet_loss(std::vector<double>{0, 0}, std::vector<double>{0, 0}, std::vector<double>{0.5, 0}, 1.0),
                   0.5);
  EXPECT_THROW(triplet_loss(std::vector<double>{0}, std::vector<double>{0, 1}, std::vector<double>{0}, 1.0), ShapeError);
}

TEST(TripletLoss, BoundedForUnitEmbeddings) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto unit = [&] {
    std::vector<double> v(32);
    double s = 0.0;
    for (double& x : v) {
      x = normal(rng);
      s += x * x;
    }
    for (double& x : v) x /= std::sqrt(s);
    return v;
  };
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = unit(), p = unit(), n = unit();
    const double loss = triplet_loss(a, p, n, 1.0);
    EXPECT_GE(loss, 0.0);
    EXPECT_LE(loss, 1.0 + attack::euclidean(a, p) + 1e-12);
  }
}

TEST(TripletLoss, TensorFormMatchesScalarForm) {
  std::mt19937_64 rng(5);
  nk::Tensor E = testing::random_tensor({5, 3}, rng);
  const std::vector<std::size_t> a{0, 1, 2}, p{3, 4, 0}, n{4, 0, 1};
  const nk::Tensor out = triplet_losses(E, a, p, n, 0.7);
  auto row = [&](std::size_t i) { return std::vector<double>(E.data().begin() + 3 * i, E.data().begin() + 3 * i + 3); };
  for (std::size_t t = 0; t < 3; ++t) EXPECT_DOUBLE_EQ(out[t], triplet_loss(row(a[t]), row(p[t]), row(n[t]), 0.7));
}

TEST(TripletLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const std::vector<std::size_t> a{0, 1, 2, 0}, p{3, 4, 5, 4}, n{1, 2, 0, 5};
  auto sample = [](std::mt19937_64& r) { return std::vector<nk::Tensor>{testing::random_tensor({6, 4}, r)}; };
  auto f = [&](const std::vector<nk::Tensor>& x) { return nk::mean(triplet_losses(x[0], a, p, n, 1.0)); };
  for (int trial = 0; trial < 20; ++trial) {
    const auto report = nk::grad_check_resampling(sample, f, rng, {.tol = 1e-6});
    EXPECT_TRUE(report.passed) << "max rel error " << report.max_rel_error;
  }
}

TEST(TripletLoss, ZeroGradientWhenHingeInactive) {
  nk::Tensor E(nk::Shape{3, 1}, {0.0, 0.1, 5.0});
  E.set_requires_grad(true);
  nk::Tape tape;
  nk::Tensor loss;
  {
    nk::TapeScope scope(tape);
    loss = nk::sum(triplet_losses(E, {0}, {1}, {2}, 1.0));
  }
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(loss.item(), 0.0);
  for (double g : E.grad()) EXPECT_EQ(g, 0.0);
}

// --- hard negatives ----------------------------------------------------------

TEST(HardNegative, PicksClosestOtherUser) {
  const LabeledEmbedding anchor{"a", {0.0, 0.0}};
  const std::vector<LabeledEmbedding> batch{
      {"a", {0.01, 0.0}}, {"b", {0.7, 0.0}}, {"c", {0.0, 0.2}}, {"a", {0.0, 0.05}}};
  EXPECT_EQ(hard_negative(batch, anchor), (std::vector<double>{0.0, 0.2}));
}

TEST(HardNegative, TieGoesToLowestIndex) {
  const std::vector<double> emb{0, 0, 1, 0, 0, 1, -1, 0};
  const std::vector<std::size_t> users{0, 1, 2, 3};
  EXPECT_EQ(hard_negative_index(emb, 2, users, 0), 1u);
  const LabeledEmbedding anchor{"a", {0, 0}};
  const std::vector<LabeledEmbedding> batch{{"b", {1, 0}}, {"c", {0, 1}}};
  EXPECT_EQ(hard_negative(batch, anchor), (std::vector<double>{1, 0}));
}

TEST(HardNegative, OnlyAnchorUserThrows) {
  const LabeledEmbedding anchor{"a", {0.0}};
  EXPECT_THROW(hard_negative({{"a", {1.0}}}, anchor), PreconditionError);
  EXPECT_THROW(hard_negative_index(std::vector<double>{0, 1}, 1, {7, 7}, 0), PreconditionError);
}

TEST(HardNegative, NeverSameUserAndMatchesExhaustiveScan) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> user(0, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rows = 12, dim = 3;
    nk::Tensor E = testing::random_tensor({rows, dim}, rng);
    std::vector<std::size_t> users(rows);
    for (auto& u : users) u = user(rng);
    users[1] = users[0] + 1;  // at least one other user
    for (std::size_t anchor = 0; anchor < rows; ++anchor) {
      const std::size_t n = hard_negative_index(E.data(), dim, users, anchor);
      EXPECT_NE(users[n], users[anchor]);
      for (std::size_t i = 0; i < rows; ++i) {
        if (users[i] == users[anchor]) continue;
        double di = 0.0, dn = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          di += std::pow(E[anchor * dim + j] - E[i * dim + j], 2);
          dn += std::pow(E[anchor * dim + j] - E[n * dim + j], 2);
        }
        EXPECT_TRUE(dn < di || (dn == di && n <= i));
      }
    }
  }
}

// --- triplet sampling -----------------------------------------------------------

// Records whose every value encodes its absolute day, so the day a window
// row came from can be read back.
Dataset day_coded(std::size_t users, std::size_t weeks) {
  const auto grid = testing::weekly_grid(weeks);
  const std::size_t days = weeks * kDaysPerWeek;
  Dataset ds(grid);
  for (std::size_t u = 0; u < users; ++u) {
    MeterRecord r("p" + std::to_string(u), grid);
    for (std::size_t t = 0; t < grid.slots; ++t)
      r.values[t] = static_cast<double>(t / kHoursPerDay) / static_cast<double>(days);
    ds.insert(std::move(r));
  }
  return ds;
}

std::vector<std::size_t> window_days(const std::vector<double>& rows, std::size_t days) {
  std::vector<std::size_t> out;
  for (std::size_t d = 0; d < kDaysPerWeek; ++d)
    out.push_back(static_cast<std::size_t>(std::lround(rows[d * kHoursPerDay] * static_cast<double>(days))));
  return out;
}

std::size_t shared_days(const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
  const std::set<std::size_t> a(x.begin(), x.end());
  return static_cast<std::size_t>(std::count_if(y.begin(), y.end(), [&](std::size_t d) { return a.count(d) > 0; }));
}

TEST(TripletSampling, WindowsFollowTheLag) {
  const Dataset aux = day_coded(4, 3);
  const std::size_t days = 21;
  std::mt19937_64 rng(9);
  for (std::size_t lag : {4u, 7u}) {
    for (int trial = 0; trial < 50; ++trial) {
      const TripletBatch b = sample_triplet_batch(aux, {"p0", "p2"}, rng, lag);
      ASSERT_EQ(b.anchors.size(), 2u);
      const auto anchor = window_days(b.anchors[0], days);
      const auto minus = window_days(b.positives_minus[0], days);
      const auto plus = window_days(b.positives_plus[0], days);
      for (std::size_t d = 0; d < kDaysPerWeek; ++d) {
        EXPECT_EQ(anchor[d], (b.day + d) % days);
        EXPECT_EQ(minus[d], (b.day + days - lag + d) % days);
        EXPECT_EQ(plus[d], (b.day + lag + d) % days);
      }
      EXPECT_EQ(shared_days(anchor, minus), kDaysPerWeek - lag);
      EXPECT_EQ(shared_days(anchor, plus), kDaysPerWeek - lag);
    }
  }
}

TEST(TripletSampling, WindowsWrapAroundTheDataset) {
  const Dataset aux = day_coded(2, 2);
  std::mt19937_64 rng(10);
  bool saw_wrap = false;
  for (int trial = 0; trial < 200 && !saw_wrap; ++trial) {
    const TripletBatch b = sample_triplet_batch(aux, {"p0", "p1"}, rng, 7);
    if (b.day < 8) continue;
    saw_wrap = true;
    const auto anchor = window_days(b.anchors[1], 14);
    // A window starting in the second week ends in the first.
    EXPECT_EQ(anchor.back(), (b.day + 6) % 14);
    EXPECT_LT(anchor.back(), b.day);
    EXPECT_EQ(b.plus_day, (b.day + 7) % 14);
  }
  EXPECT_TRUE(saw_wrap);
}

TEST(TripletSampling, RejectsBadRequests) {
  const Dataset aux = day_coded(2, 2);
  std::mt19937_64 rng(11);
  EXPECT_THROW(sample_triplet_batch(aux, {"p0", "p1", "p2"}, rng, 7), PreconditionError);
  EXPECT_THROW(sample_triplet_batch(day_coded(2, 1), {"p0", "p1"}, rng, 7), DataError);
}

TEST(TripletSampling, DayIsUniform) {
  const Dataset aux = day_coded(2, 2);
  std::mt19937_64 rng(12);
  std::vector<int> counts(14, 0);
  for (int i = 0; i < 14000; ++i) ++counts[sample_triplet_batch(aux, {"p0", "p1"}, rng, 7).day];
  // 1000 expected per day, binomial sd about 30.
  for (int c : counts) EXPECT_NEAR(c, 1000, 150);
}

TEST(BatchObjective, TwoTripletsPerAnchorWithSharedNegative) {
  std::mt19937_64 rng(13);
  const embed::Embedder model(EmbedderConfig::defaults(EmbedderKind::mlp, 1), 1);
  const TripletBatch batch = testing::random_triplet_batch(4, 1, rng);
  // Oracle: embed the rows one by one and average the hinge terms.
  std::vector<std::vector<double>> blocks;
  for (const auto* part : {&batch.anchors, &batch.positives_minus, &batch.positives_plus})
    blocks.insert(blocks.end(), part->begin(), part->end());
  std::vector<std::vector<double>> emb;
  for (const auto& blk : blocks) {
    const nk::Tensor e = model.forward(embed::stack_inputs({blk}, 1), nk::Mode::eval);
    emb.emplace_back(e.data().begin(), e.data().end());
  }
  double total = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    std::size_t neg = 12;
    double best = 1e300;
    for (std::size_t j = 0; j < 12; ++j) {
      if (j % 4 == i) continue;
      const double d = attack::euclidean(emb[i], emb[j]);
      if (d < best) best = d, neg = j;
    }
    total += triplet_loss(emb[i], emb[4 + i], emb[neg], 1.0) + triplet_loss(emb[i], emb[8 + i], emb[neg], 1.0);
  }
  const double loss = batch_objective(model, batch, 1.0, nk::Mode::eval).item();
  EXPECT_NEAR(loss, total / 8.0, 1e-12);
}

TEST(BatchObjective, FullEmbedderGradientsMatchFiniteDifferences) {
  for (auto kind : embed::all_kinds()) {
    for (std::uint64_t trial = 0; trial < 2; ++trial) {
      const auto report = testing::embedder_triplet_check(kind, 100 + trial);
      EXPECT_TRUE(report.passed) << embed::to_string(kind) << " trial " << trial << " max rel error "
                                 << report.max_rel_error << (report.kink ? " (kink)" : "");
    }
  }
}

// --- batching ------------------------------------------------------------------

TEST(EpochBatches, CoverEveryUserOnceWithoutSingletons) {
  std::mt19937_64 rng(14);
  for (std::size_t n : {2u, 9u, 17u, 64u, 65u}) {
    std::vector<std::string> users;
    for (std::size_t i = 0; i < n; ++i) users.push_back("u" + std::to_string(i));
    const auto batches = epoch_batches(users, 8, rng);
    std::multiset<std::string> seen;
    for (const auto& b : batches) {
      EXPECT_GE(b.size(), 2u);
      EXPECT_LE(b.size(), 9u);
      seen.insert(b.begin(), b.end());
    }
    EXPECT_EQ(seen, std::multiset<std::string>(users.begin(), users.end()));
  }
}

// --- validation ----------------------------------------------------------------

TEST(ValidateRank1, IdenticalWeeksGiveOne) {
  const Dataset week = slice_weeks(scaled_synth(15, 1, 0.3), 0, 1);
  const embed::Embedder model(EmbedderConfig::defaults(EmbedderKind::gru, 1), 2);
  EXPECT_DOUBLE_EQ(validate_rank1(model, week, week), 1.0);
}

TEST(ValidateRank1, UserMismatchThrows) {
  const Dataset aux = scaled_synth(6, 2, 0.3);
  Dataset ref = slice_weeks(aux, 0, 1);
  const Dataset tgt = slice_weeks(attack::select_users(aux, {"u00000", "u00001"}), 1, 1);
  const embed::Embedder model(EmbedderConfig::defaults(EmbedderKind::mlp, 1), 2);
  EXPECT_THROW(validate_rank1(model, ref, tgt), DataError);
}

TEST(ValidateRank1, MatchesBruteForceEnumeration) {
  std::mt19937_64 rng(15);
  const embed::Embedder model(EmbedderConfig::defaults(EmbedderKind::mlp, 1), 3);
  for (int trial = 0; trial < 10; ++trial) {
    const Dataset ref = testing::random_dataset(3, testing::weekly_grid(), rng);
    Dataset tgt(ref.grid());
    // Targets mix each reference week with noise so some matches fail.
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (const auto& [id, r] : ref) {
      MeterRecord t = r;
      for (double& v : t.values) v = 0.5 * v + 0.5 * unif(rng);
      tgt.insert(std::move(t));
    }
    int hits = 0;
    for (const auto& [id, t] : tgt) {
      const auto e = model.embed_one(t);
      std::string best;
      double best_d = 1e300;
      for (const auto& [rid, r] : ref) {
        const double d = attack::euclidean(model.embed_one(r), e);
        if (d < best_d) best_d = d, best = rid;
      }
      hits += best == id;
    }
    EXPECT_DOUBLE_EQ(validate_rank1(model, ref, tgt), hits / 3.0);
  }
}

TEST(ValidateRank1, RandomEmbedderIsNearChance) {
  std::mt19937_64 rng(16);
  double total = 0.0;
  const int trials = 60;
  for (int trial = 0; trial < trials; ++trial) {
    const embed::Embedder model(EmbedderConfig::defaults(EmbedderKind::mlp, 1), 100 + trial);
    const Dataset ref = testing::random_dataset(10, testing::weekly_grid(), rng);
    const Dataset tgt = testing::random_dataset(10, testing::weekly_grid(), rng);
    total += validate_rank1(model, ref, tgt);
  }
  // Mean of 600 Bernoulli(0.1) draws: standard error about 0.012.
  EXPECT_NEAR(total / trials, 0.1, 0.05);
}

// --- training ------------------------------------------------------------------

TEST(Train, NoiselessDataReachesPerfectValidation) {
  const Dataset aux = scaled_synth(20, 4, 0.0);
  for (auto kind : {EmbedderKind::mlp, EmbedderKind::cnn_lstm}) {
    auto cfg = small_config(2, 50);
    const auto res = train(EmbedderConfig::defaults(kind, 1), aux, cfg);
    EXPECT_DOUBLE_EQ(res.best_val_rank1, 1.0) << embed::to_string(kind);
    EXPECT_LE(res.best_epoch, 50);
  }
}

TEST(Train, SeededRunsAreIdentical) {
  const Dataset aux = scaled_synth(16, 4, 0.4);
  const auto cfg = small_config(2, 4);
  const auto a = train(EmbedderConfig::defaults(EmbedderKind::gru, 1), aux, cfg);
  const auto b = train(EmbedderConfig::defaults(EmbedderKind::gru, 1), aux, cfg);
  EXPECT_EQ(history_csv(a.history), history_csv(b.history));
  EXPECT_EQ(a.model.to_checkpoint().arrays, b.model.to_checkpoint().arrays);
}

TEST(Train, LearningRateHalvesAtPatienceExpiry) {
  // Noiseless data scores 1.0 from the first epoch, so every later epoch is
  // stale: with patience 2 the rate halves after epochs 3, 5 and 7, and the
  // run stops once it falls below the floor.
  const Dataset aux = scaled_synth(12, 4, 0.0);
  auto cfg = small_config(2, 100);
  cfg.optimizer.learning_rate = 0.004;
  cfg.optimizer.lr_floor = 0.001;
  cfg.optimizer.patience = 2;
  const auto res = train(EmbedderConfig::defaults(EmbedderKind::mlp, 1), aux, cfg);
  ASSERT_EQ(res.history.size(), 7u);
  const std::vector<double> expected{0.004, 0.004, 0.004, 0.002, 0.002, 0.001, 0.001};
  for (std::size_t i = 0; i < 7; ++i) EXPECT_DOUBLE_EQ(res.history[i].learning_rate, expected[i]);
  EXPECT_EQ(res.best_epoch, 1);
}

TEST(Train, LearningRateTraceReplaysFromHistory) {
  const Dataset aux = scaled_synth(16, 5, 0.5);
  auto cfg = small_config(3, 12);
  cfg.optimizer.patience = 2;
  const auto res = train(EmbedderConfig::defaults(EmbedderKind::mlp, 1), aux, cfg);
  double lr = cfg.optimizer.learning_rate, best = -1.0;
  int stale = 0;
  for (const auto& h : res.history) {
    EXPECT_DOUBLE_EQ(h.learning_rate, lr);
    if (h.val_rank1 > best) {
      best = h.val_rank1;
      stale = 0;
    } else if (++stale == cfg.optimizer.patience) {
      lr *= 0.5;
      stale = 0;
    }
  }
  for (std::size_t i = 1; i < res.history.size(); ++i)
    EXPECT_LE(res.history[i].learning_rate, res.history[i - 1].learning_rate);
}

TEST(Train, BestEpochModelAchievesMaximumLoggedValidation) {
  const Dataset aux = scaled_synth(16, 5, 0.5);
  const auto cfg = small_config(3, 6);
  const auto res = train(EmbedderConfig::defaults(EmbedderKind::mlp, 1), aux, cfg);
  double max_val = -1.0;
  for (const auto& h : res.history) max_val = std::max(max_val, h.val_rank1);
  EXPECT_DOUBLE_EQ(res.best_val_rank1, max_val);
  EXPECT_DOUBLE_EQ(res.history[static_cast<std::size_t>(res.best_epoch - 1)].val_rank1, max_val);
  EXPECT_DOUBLE_EQ(validate_rank1(res.model, slice_weeks(aux, 3, 1), slice_weeks(aux, 4, 1)), max_val);
}

TEST(Train, DivergenceAbortsWithDiagnostic) {
  const Dataset aux = scaled_synth(8, 4, 0.3);
  auto cfg = small_config(2, 3);
  cfg.optimizer.learning_rate = 1e300;
  try {
    train(EmbedderConfig::defaults(EmbedderKind::mlp, 1), aux, cfg);
    FAIL() << "expected divergence";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
  }
}

TEST(Train, ConfigValidation) {
  const Dataset aux = scaled_synth(4, 4, 0.3);
  const auto model = EmbedderConfig::defaults(EmbedderKind::mlp, 1);
  auto cfg = small_config(2, 1);
  cfg.validation_reference = 1;  // inside the sampling weeks
  EXPECT_THROW(train(model, aux, cfg), ConfigError);
  cfg = small_config(3, 1);  // validation target beyond the data
  EXPECT_THROW(train(model, aux, cfg), ConfigError);
  cfg = small_config(2, 1);
  cfg.train_weeks = {0, 1};
  EXPECT_THROW(train(model, aux, cfg), ConfigError);
  cfg = small_config(2, 1);
  cfg.batch_size = 1;
  EXPECT_THROW(train(model, aux, cfg), ConfigError);
  EXPECT_THROW(train(EmbedderConfig::defaults(EmbedderKind::mlp, 2), aux, small_config(2, 1)), ConfigError);
}

TEST(Train, HistoryCsvLayout) {
  const std::vector<EpochLog> h{{1, 0.5, 0.25, 0.001}, {2, 0.375, 0.5, 0.0005}};
  EXPECT_EQ(history_csv(h), "epoch,train_loss,val_rank1,learning_rate\n1,0.5,0.25,0.001\n2,0.375,0.5,5e-04\n");
}

// --- grid search -----------------------------------------------------------------

TEST(Grid, EnumerationOrderAndSize) {
  GridSpec g;
  EXPECT_EQ(enumerate_grid(g, EmbedderKind::lstm).size(), 2u * 2u * 2u * 4u);
  EXPECT_EQ(enumerate_grid(g, EmbedderKind::mlp).size(), 2u * 2u * 1u * 4u);
  const auto pts = enumerate_grid(g, EmbedderKind::cnn_lstm);
  EXPECT_EQ(pts.front().lag, 4u);
  EXPECT_EQ(pts[1].lag, 5u);
  EXPECT_EQ(pts[4].layers, 2u);
  EXPECT_DOUBLE_EQ(pts.back().learning_rate, 0.005);
  EXPECT_DOUBLE_EQ(pts.back().weight_decay, 0.005);
  g.lags.clear();
  EXPECT_THROW(enumerate_grid(g, EmbedderKind::mlp), ConfigError);
}

TEST(Grid, SelectBestPrefersFirstOnTies) {
  std::vector<GridEntry> e(3);
  e[0].score = 0.4;
  e[1].score = 0.6;
  e[2].score = 0.6;
  EXPECT_EQ(select_best(e), 1u);
  EXPECT_THROW(select_best({}), PreconditionError);
}

GridSpec one_point() {
  GridSpec g;
  g.learning_rates = {0.001};
  g.weight_decays = {0.01};
  g.layers = {3};
  g.lags = {7};
  return g;
}

TEST(Grid, SinglePointStillRetrainsOnStageTwoWeeks) {
  const Dataset aux = scaled_synth(10, 6, 0.3);
  TrainConfig base;
  base.batch_size = 8;
  base.optimizer.max_epochs = 2;
  const auto res = grid_search(EmbedderConfig::defaults(EmbedderKind::mlp, 1), one_point(), aux, 6, base);
  ASSERT_EQ(res.entries.size(), 1u);
  EXPECT_EQ(res.best, 0u);
  EXPECT_EQ(res.train_config.train_weeks.first, 0u);
  EXPECT_EQ(res.train_config.train_weeks.count, 4u);
  EXPECT_EQ(res.train_config.validation_reference, 4u);
  EXPECT_EQ(res.train_config.validation_target, 5u);
  // Stage 2 is a fresh run: identical to training the winner directly.
  const auto direct = train(res.model_config, aux, res.train_config);
  EXPECT_EQ(history_csv(direct.history), history_csv(res.final_run.history));
}

TEST(Grid, BrokenLearningRateLoses) {
  const Dataset aux = scaled_synth(10, 6, 0.3);
  GridSpec g = one_point();
  g.learning_rates = {1e300, 0.001};
  TrainConfig base;
  base.batch_size = 8;
  base.optimizer.max_epochs = 2;
  const auto res = grid_search(EmbedderConfig::defaults(EmbedderKind::mlp, 1), g, aux, 6, base);
  EXPECT_TRUE(res.entries[0].diverged);
  EXPECT_DOUBLE_EQ(res.entries[0].score, -1.0);
  EXPECT_FALSE(res.entries[0].error.empty());
  EXPECT_EQ(res.best, 1u);
  EXPECT_DOUBLE_EQ(res.train_config.optimizer.learning_rate, 0.001);
}

TEST(Grid, SelectionReplaysFromIndependentRescoring) {
  const Dataset aux = scaled_synth(12, 7, 0.5);
  GridSpec g = one_point();
  g.learning_rates = {0.001, 0.005};
  g.lags = {4, 7};
  TrainConfig base;
  base.batch_size = 6;
  base.optimizer.max_epochs = 3;
  const auto model = EmbedderConfig::defaults(EmbedderKind::mlp, 1);
  const auto res = grid_search(model, g, aux, 7, base, 2);
  ASSERT_EQ(res.entries.size(), 4u);
  std::size_t best = 0;
  std::vector<double> scores;
  for (std::size_t i = 0; i < res.entries.size(); ++i) {
    const auto& e = res.entries[i];
    TrainConfig cfg = base;
    cfg.optimizer.learning_rate = e.point.learning_rate;
    cfg.optimizer.weight_decay = e.point.weight_decay;
    cfg.lag = e.point.lag;
    cfg.train_weeks = {0, 3};
    cfg.validation_reference = 3;
    cfg.validation_target = 4;
    const auto run = train(model, aux, cfg);
    EXPECT_EQ(history_csv(run.history), history_csv(e.history));
    scores.push_back(validate_rank1(run.model, slice_weeks(aux, 5, 1), slice_weeks(aux, 6, 1)));
    EXPECT_DOUBLE_EQ(scores.back(), e.score);
    if (scores.back() > scores[best]) best = i;
  }
  EXPECT_EQ(res.best, best);
}

TEST(Grid, FourWeekProtocolKeepsBestValidatedRun) {
  const Dataset aux = scaled_synth(10, 4, 0.3);
  TrainConfig base;
  base.batch_size = 8;
  base.optimizer.max_epochs = 2;
  const auto res = grid_search(EmbedderConfig::defaults(EmbedderKind::mlp, 1), one_point(), aux, 4, base);
  EXPECT_EQ(res.train_config.train_weeks.count, 3u);
  EXPECT_EQ(res.train_config.validation_reference, 2u);
  EXPECT_EQ(res.train_config.validation_target, 3u);
  EXPECT_DOUBLE_EQ(res.entries[0].score, res.final_run.best_val_rank1);
  EXPECT_EQ(history_csv(res.entries[0].history), history_csv(res.final_run.history));
}

TEST(Grid, InsufficientWeeksThrow) {
  const Dataset aux = scaled_synth(6, 6, 0.3);
  TrainConfig base;
  EXPECT_THROW(grid_search(EmbedderConfig::defaults(EmbedderKind::mlp, 1), one_point(), aux, 5, base), DataError);
  EXPECT_THROW(grid_search(EmbedderConfig::defaults(EmbedderKind::mlp, 1), one_point(), aux, 8, base), DataError);
}

}  // namespace
}  // namespace meterlink::train
