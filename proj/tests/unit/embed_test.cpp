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

#include <cmath>
#include <random>

#include "meterlink/embed/embedder.hpp"
#include "meterlink/embed/input.hpp"
#include "test_util.hpp"

namespace meterlink {
namespace {

using embed::Embedder;
using embed::EmbedderConfig;
using embed::EmbedderKind;
using nk::Tensor;

Tensor random_input(std::size_t B, std::size_t D, std::size_t F, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor x(nk::Shape{B, D, kHoursPerDay * F});
  for (double& v : x.data()) v = u(rng);
  return x;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// ---- input shaping ----

TEST(DailySequence, SingleUtilityRowsAreConsecutiveSlots) {
  std::mt19937_64 rng(1);
  const Dataset ds = testing::random_dataset(1, testing::weekly_grid(), rng);
  const MeterRecord& rec = ds.begin()->second;
  const auto in = embed::to_daily_sequence(rec);
  ASSERT_EQ(in.rows.size(), 168u);
  for (std::size_t d = 0; d < 7; ++d)
    for (std::size_t h = 0; h < 24; ++h) EXPECT_EQ(in.rows[d * 24 + h], rec.at(24 * d + h, 0));
}

TEST(DailySequence, TwoUtilitiesGiveContiguousBlocks) {
  std::mt19937_64 rng(2);
  const Dataset ds = testing::random_dataset(1, testing::weekly_grid(1, 2), rng);
  const MeterRecord& rec = ds.begin()->second;
  const auto in = embed::to_daily_sequence(rec);
  EXPECT_EQ(in.row_width(), 48u);
  EXPECT_EQ(in.days * in.slots_per_day * in.utilities, 168u * 2);
  for (std::size_t d = 0; d < 7; ++d)
    for (std::size_t f = 0; f < 2; ++f)
      for (std::size_t h = 0; h < 24; ++h) EXPECT_EQ(in.rows[d * 48 + f * 24 + h], rec.at(24 * d + h, f));
  const auto map = in.day_map(3);
  EXPECT_EQ(map[24 + 5], rec.at(3 * 24 + 5, 1));
}

TEST(DailySequence, RoundTripRestoresRecord) {
  std::mt19937_64 rng(3);
  for (std::size_t F : {1u, 2u, 3u}) {
    const Dataset ds = testing::random_dataset(1, testing::weekly_grid(1, F), rng);
    const MeterRecord& rec = ds.begin()->second;
    const auto in = embed::to_daily_sequence(rec);
    std::vector<double> a = in.rows, b = rec.values;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    const MeterRecord back = embed::from_daily_sequence(in, rec.pseudonym, rec.grid.start);
    EXPECT_EQ(back.values, rec.values);
    EXPECT_EQ(back.grid, rec.grid);
  }
}

TEST(DailySequence, RejectsWrongLength) {
  std::mt19937_64 rng(4);
  const Dataset ds = testing::random_dataset(1, testing::weekly_grid(2), rng);
  EXPECT_THROW(embed::to_daily_sequence(ds.begin()->second), DataError);
}

TEST(DailySequence, WindowWrapsAroundRecordEnd) {
  std::mt19937_64 rng(5);
  const Dataset ds = testing::random_dataset(1, testing::weekly_grid(2), rng);
  const MeterRecord& rec = ds.begin()->second;
  const auto rows = embed::window_rows(rec, 10);
  // Days 10..13 then wrap to 0..2.
  for (std::size_t d = 0; d < 7; ++d) {
    const std::size_t day = (10 + d) % 14;
    for (std::size_t h = 0; h < 24; ++h) EXPECT_EQ(rows[d * 24 + h], rec.at(day * 24 + h, 0));
  }
}

TEST(DailySequence, BatchRejectsUnscaledAndNaN) {
  std::vector<std::vector<double>> blocks{std::vector<double>(168, 0.5)};
  blocks[0][7] = 1.5;
  EXPECT_THROW(embed::stack_inputs(blocks, 1), DataError);
  blocks[0][7] = std::nan("");
  EXPECT_THROW(embed::stack_inputs(blocks, 1), DataError);
  blocks[0][7] = 0.25;
  EXPECT_EQ(embed::stack_inputs(blocks, 1).shape(), (nk::Shape{1, 7, 24}));
}

// ---- configuration and parameter counts ----

TEST(EmbedderConfig, RejectsLayerCountsOutsideSearchRange) {
  auto c = EmbedderConfig::defaults(EmbedderKind::gru);
  c.layers = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = EmbedderConfig::defaults(EmbedderKind::cnn_lstm);
  c.layers = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = EmbedderConfig::defaults(EmbedderKind::mlp);
  c.n_out = 16;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(embed::parse_kind("rnn"), ConfigError);
  for (EmbedderKind k : embed::all_kinds()) EXPECT_EQ(embed::parse_kind(embed::to_string(k)), k);
}

TEST(EmbedderConfig, OnlyTransformerIsUnnormalizedByDefault) {
  for (EmbedderKind k : embed::all_kinds())
    EXPECT_EQ(EmbedderConfig::defaults(k).normalize, k != EmbedderKind::transformer);
}

TEST(ParamCount, MlpClosedForm) {
  const Embedder e(EmbedderConfig::defaults(EmbedderKind::mlp), 1);
  EXPECT_EQ(e.param_count(), (168u * 128 + 128) + (128u * 64 + 64) + (64u * 32 + 32));
  const Embedder e2(EmbedderConfig::defaults(EmbedderKind::mlp, 2), 1);
  EXPECT_EQ(e2.param_count(), (336u * 128 + 128) + (128u * 64 + 64) + (64u * 32 + 32));
}

TEST(ParamCount, RecurrentClosedForm) {
  // Per layer: gates * (in*H + H*H + 2H).
  auto layer = [](std::size_t gates, std::size_t in) { return gates * (in * 32 + 32 * 32 + 2 * 32); };
  auto c = EmbedderConfig::defaults(EmbedderKind::gru);
  EXPECT_EQ(Embedder(c, 1).param_count(), layer(3, 24) + layer(3, 32));
  c.layers = 3;
  EXPECT_EQ(Embedder(c, 1).param_count(), layer(3, 24) + 2 * layer(3, 32));
  c = EmbedderConfig::defaults(EmbedderKind::lstm);
  EXPECT_EQ(Embedder(c, 1).param_count(), layer(4, 24) + layer(4, 32));
}

TEST(ParamCount, PublishedMagnitudes) {
  auto within = [](std::size_t n, double target) { return std::abs(static_cast<double>(n) - target) <= 0.25 * target; };
  EXPECT_TRUE(within(Embedder(EmbedderConfig::defaults(EmbedderKind::gru), 1).param_count(), 12000));
  EXPECT_TRUE(within(Embedder(EmbedderConfig::defaults(EmbedderKind::cnn_lstm), 1).param_count(), 23000));
  auto t = EmbedderConfig::defaults(EmbedderKind::transformer);
  for (std::size_t L : {2u, 3u}) {
    t.layers = L;
    EXPECT_TRUE(within(Embedder(t, 1).param_count(), 100000)) << L;
  }
  // Exact CNN-LSTM breakdown: conv 16x1x3, bn, conv 32x16x4, bn, LSTM 128->32.
  EXPECT_EQ(Embedder(EmbedderConfig::defaults(EmbedderKind::cnn_lstm), 1).param_count(),
            (48u + 16) + 32 + (2048u + 32) + 64 + 4 * (128 * 32 + 32 * 32 + 64));
}

// ---- generic contracts ----

class AllKinds : public ::testing::TestWithParam<EmbedderKind> {};

TEST_P(AllKinds, ShapeNormAndDeterminism) {
  for (std::size_t F : {1u, 2u}) {
    auto cfg = EmbedderConfig::defaults(GetParam(), F);
    for (std::size_t L : embed::layer_choices(GetParam())) {
      cfg.layers = L;
      const Embedder e(cfg, 7);
      std::mt19937_64 rng(11);
      const Tensor x = random_input(3, 7, F, rng);
      const Tensor y = e.forward(x);
      ASSERT_EQ(y.shape(), (nk::Shape{3, 32}));
      for (std::size_t b = 0; b < 3; ++b) {
        const auto row = y.data().subspan(b * 32, 32);
        for (double v : row) EXPECT_TRUE(std::isfinite(v));
        if (cfg.normalize) {
          EXPECT_NEAR(norm(row), 1.0, 1e-9);
        }
      }
      EXPECT_EQ(e.forward(x).storage(), y.storage());
      EXPECT_EQ(Embedder(cfg, 7).forward(x).storage(), y.storage());
      EXPECT_NE(Embedder(cfg, 8).forward(x).storage(), y.storage());
    }
  }
}

TEST_P(AllKinds, CheckpointRoundTripIsBitExact) {
  auto cfg = EmbedderConfig::defaults(GetParam());
  const Embedder e(cfg, 3);
  std::mt19937_64 rng(4);
  const Tensor x = random_input(4, 7, 1, rng);
  if (cfg.kind == EmbedderKind::cnn_lstm) e.forward(x, nk::Mode::train);  // move running statistics
  const auto ck = nk::deserialize(nk::serialize(e.to_checkpoint()));
  const Embedder back = Embedder::from_checkpoint(ck);
  EXPECT_EQ(back.config().kind, cfg.kind);
  EXPECT_EQ(back.param_count(), e.param_count());
  EXPECT_EQ(back.forward(x).storage(), e.forward(x).storage());
}

TEST_P(AllKinds, EmbedRecordsMatchesForward) {
  std::mt19937_64 rng(5);
  const Dataset ds = testing::random_dataset(5, testing::weekly_grid(), rng);
  std::vector<const MeterRecord*> recs;
  for (const auto& [name, r] : ds) recs.push_back(&r);
  const Embedder e(EmbedderConfig::defaults(GetParam()), 9);
  const auto out = e.embed(recs, 2);
  const Tensor y = e.forward(embed::weekly_batch(recs));
  ASSERT_EQ(out.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(out[i][j], y[i * 32 + j]);
  EXPECT_EQ(e.embed_one(*recs[3]), out[3]);
}

INSTANTIATE_TEST_SUITE_P(Embedders, AllKinds, ::testing::ValuesIn(embed::all_kinds()),
                         [](const auto& info) { return embed::to_string(info.param); });

// ---- architecture-specific oracles ----

std::vector<double> dense(const std::vector<double>& x, const Tensor& W, const Tensor& b) {
  const std::size_t in = W.dim(0), out = W.dim(1);
  std::vector<double> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = b[o];
    for (std::size_t i = 0; i < in; ++i) s += x[i] * W[i * out + o];
    y[o] = s;
  }
  return y;
}

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

TEST(Mlp, ZeroParametersSurfaceNormalizationError) {
  Embedder e(EmbedderConfig::defaults(EmbedderKind::mlp), 1);
  for (auto& p : e.parameters()) std::fill(p.storage().begin(), p.storage().end(), 0.0);
  std::mt19937_64 rng(1);
  EXPECT_THROW(e.forward(random_input(1, 7, 1, rng)), NumericalError);
}

TEST(Mlp, MatchesHandMatrixAlgebra) {
  const Embedder e(EmbedderConfig::defaults(EmbedderKind::mlp), 21);
  std::mt19937_64 rng(2);
  const Tensor x = random_input(1, 7, 1, rng);
  std::vector<double> h(x.data().begin(), x.data().end());
  auto relu = [](std::vector<double> v) {
    for (double& a : v) a = std::max(a, 0.0);
    return v;
  };
  h = relu(dense(h, e.param("fc1.weight"), e.param("fc1.bias")));
  h = relu(dense(h, e.param("fc2.weight"), e.param("fc2.bias")));
  h = dense(h, e.param("fc3.weight"), e.param("fc3.bias"));
  const double n = norm(h);
  const Tensor y = e.forward(x);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(y[j], h[j] / n, 1e-12);
}

TEST(Recurrent, SingleDayEmbeddingIsNormalizedFirstOutput) {
  for (EmbedderKind k : {EmbedderKind::lstm, EmbedderKind::gru}) {
    const Embedder e(EmbedderConfig::defaults(k), 5);
    std::mt19937_64 rng(6);
    const Tensor x = random_input(2, 1, 1, rng);
    embed::ForwardTrace tr;
    const Tensor y = e.forward(x, nk::Mode::eval, &tr);
    ASSERT_EQ(tr.day_outputs.shape(), (nk::Shape{2, 1, 32}));
    const auto first = nk::l2_normalize(tr.day_outputs.data().subspan(0, 32));
    for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(y[j], first[j], 1e-12);
  }
}

TEST(Recurrent, DayOrderMatters) {
  for (EmbedderKind k : {EmbedderKind::lstm, EmbedderKind::gru, EmbedderKind::cnn_lstm}) {
    const Embedder e(EmbedderConfig::defaults(k), 12);
    std::mt19937_64 rng(13);
    bool found = false;
    for (int trial = 0; trial < 10 && !found; ++trial) {
      const Tensor x = random_input(1, 7, 1, rng);
      Tensor swapped = x.clone();
      for (std::size_t h = 0; h < 24; ++h) std::swap(swapped[0 * 24 + h], swapped[5 * 24 + h]);
      const Tensor a = e.forward(x), b = e.forward(swapped);
      double diff = 0.0;
      for (std::size_t j = 0; j < 32; ++j) diff = std::max(diff, std::abs(a[j] - b[j]));
      found = diff > 1e-6;
    }
    EXPECT_TRUE(found) << embed::to_string(k);
  }
}

TEST(Recurrent, OneStepCellsMatchGateEquations) {
  std::mt19937_64 rng(7);
  const Tensor x = random_input(1, 1, 1, rng);
  const std::vector<double> xv(x.data().begin(), x.data().end());
  const std::size_t H = 32;
  {
    const Embedder e(EmbedderConfig::defaults(EmbedderKind::lstm), 8);
    embed::ForwardTrace tr;
    e.forward(x, nk::Mode::eval, &tr);
    // First layer, h0 = c0 = 0: gates = W_ih x + b_ih + b_hh.
    auto g = dense(xv, e.param("rnn0.w_ih"), e.param("rnn0.b_ih"));
    for (std::size_t j = 0; j < 4 * H; ++j) g[j] += e.param("rnn0.b_hh")[j];
    std::vector<double> h1(H);
    for (std::size_t j = 0; j < H; ++j) {
      const double c = sigm(g[j]) * std::tanh(g[2 * H + j]);
      h1[j] = sigm(g[3 * H + j]) * std::tanh(c);
    }
    auto g2 = dense(h1, e.param("rnn1.w_ih"), e.param("rnn1.b_ih"));
    for (std::size_t j = 0; j < 4 * H; ++j) g2[j] += e.param("rnn1.b_hh")[j];
    for (std::size_t j = 0; j < H; ++j) {
      const double c = sigm(g2[j]) * std::tanh(g2[2 * H + j]);
      EXPECT_NEAR(tr.day_outputs[j], sigm(g2[3 * H + j]) * std::tanh(c), 1e-12);
    }
  }
  {
    const Embedder e(EmbedderConfig::defaults(EmbedderKind::gru), 9);
    embed::ForwardTrace tr;
    e.forward(x, nk::Mode::eval, &tr);
    auto cell = [&](const std::vector<double>& in, const std::string& p) {
      const auto gi = dense(in, e.param(p + ".w_ih"), e.param(p + ".b_ih"));
      const Tensor& bh = e.param(p + ".b_hh");  // W_hh h0 = 0
      std::vector<double> h(H);
      for (std::size_t j = 0; j < H; ++j) {
        const double r = sigm(gi[j] + bh[j]);
        const double z = sigm(gi[H + j] + bh[H + j]);
        const double n = std::tanh(gi[2 * H + j] + r * bh[2 * H + j]);
        h[j] = (1 - z) * n;
      }
      return h;
    };
    const auto h2 = cell(cell(xv, "rnn0"), "rnn1");
    for (std::size_t j = 0; j < H; ++j) EXPECT_NEAR(tr.day_outputs[j], h2[j], 1e-12);
  }
}

TEST(CnnLstm, DailyFeatureChain) {
  // 24 -k3-> 22 -pool-> 11 -k4-> 8 -pool-> 4, times 32 channels.
  std::size_t len = 24;
  len = len - 3 + 1;
  EXPECT_EQ(len, 22u);
  len /= 2;
  EXPECT_EQ(len, 11u);
  len = len - 4 + 1;
  EXPECT_EQ(len, 8u);
  len /= 2;
  EXPECT_EQ(len, 4u);
  for (std::size_t F : {1u, 2u}) {
    const Embedder e(EmbedderConfig::defaults(EmbedderKind::cnn_lstm, F), 1);
    EXPECT_EQ(e.param("stage0.lstm.w_ih").dim(0), 32 * len);
    EXPECT_EQ(e.param("stage0.conv1.weight").shape(), (nk::Shape{16, F, 3}));
  }
}

TEST(CnnLstm, TrainModeUpdatesRunningStatisticsOnly) {
  const Embedder e(EmbedderConfig::defaults(EmbedderKind::cnn_lstm), 2);
  std::mt19937_64 rng(3);
  const Tensor x = random_input(4, 7, 1, rng);
  const Tensor before = e.forward(x);
  e.forward(x, nk::Mode::train);
  const Tensor after = e.forward(x);
  EXPECT_NE(before.storage(), after.storage());
  EXPECT_EQ(e.forward(x).storage(), after.storage());
}

TEST(Tcn, ChannelCountFollowsUtilities) {
  EXPECT_EQ(Embedder(EmbedderConfig::defaults(EmbedderKind::tcn, 1), 1).param("tcn.conv1.v").dim(1), 24u);
  EXPECT_EQ(Embedder(EmbedderConfig::defaults(EmbedderKind::tcn, 2), 1).param("tcn.conv1.v").dim(1), 48u);
}

TEST(Tcn, OutputsAreCausalInDays) {
  const Embedder e(EmbedderConfig::defaults(EmbedderKind::tcn), 4);
  std::mt19937_64 rng(5);
  const Tensor x = random_input(1, 7, 1, rng);
  embed::ForwardTrace base;
  e.forward(x, nk::Mode::eval, &base);
  for (std::size_t d = 0; d + 1 < 7; ++d) {
    Tensor y = x.clone();
    for (std::size_t h = 0; h < 24; ++h) y[(d + 1) * 24 + h] = 1.0 - y[(d + 1) * 24 + h];
    embed::ForwardTrace tr;
    e.forward(y, nk::Mode::eval, &tr);
    for (std::size_t day = 0; day <= d; ++day)
      for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(tr.day_outputs[day * 32 + j], base.day_outputs[day * 32 + j]);
    double changed = 0.0;
    for (std::size_t j = 0; j < 32; ++j)
      changed = std::max(changed, std::abs(tr.day_outputs[(d + 1) * 32 + j] - base.day_outputs[(d + 1) * 32 + j]));
    EXPECT_GT(changed, 0.0) << d;
  }
}

TEST(Transformer, AttentionRowsSumToOne) {
  auto cfg = EmbedderConfig::defaults(EmbedderKind::transformer);
  cfg.layers = 3;
  const Embedder e(cfg, 6);
  std::mt19937_64 rng(7);
  embed::ForwardTrace tr;
  e.forward(random_input(2, 7, 1, rng), nk::Mode::eval, &tr);
  ASSERT_EQ(tr.attention.size(), 3u);
  for (const Tensor& a : tr.attention) {
    ASSERT_EQ(a.shape(), (nk::Shape{8, 7, 7}));
    for (std::size_t r = 0; r < 8 * 7; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) s += a[r * 7 + j];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

// With every attention and feedforward weight zeroed, each encoder layer
// only renormalizes its input, so the output is the position-wise map
// W_out * sum_d LN(LN(P(W_in x_d + pos_d))) evaluated here by hand.
TEST(Transformer, AblatedLayersReduceToPositionWiseMap) {
  auto cfg = EmbedderConfig::defaults(EmbedderKind::transformer);
  Embedder e(cfg, 10);
  for (std::size_t i = 0; i < e.parameters().size(); ++i) {
    const std::string& n = e.parameter_names()[i];
    if (n.find(".attn.") != std::string::npos || n.find(".ff") != std::string::npos)
      std::fill(e.parameters()[i].storage().begin(), e.parameters()[i].storage().end(), 0.0);
  }
  std::mt19937_64 rng(11);
  const Tensor x = random_input(1, 7, 1, rng);
  auto ln = [](std::vector<double> v, const Tensor& g, const Tensor& b) {
    double mu = 0.0, var = 0.0;
    for (double a : v) mu += a;
    mu /= static_cast<double>(v.size());
    for (double a : v) var += (a - mu) * (a - mu);
    var /= static_cast<double>(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = (v[j] - mu) / std::sqrt(var + 1e-5) * g[j] + b[j];
    return v;
  };
  std::vector<double> acc(64, 0.0);
  for (std::size_t d = 0; d < 7; ++d) {
    std::vector<double> row(x.data().begin() + d * 24, x.data().begin() + (d + 1) * 24);
    auto h = dense(row, e.param("input.weight"), e.param("input.bias"));
    for (std::size_t j = 0; j < 128; ++j) h[j] += e.param("position")[d * 128 + j];
    h = dense(h, e.param("enc0.in_proj.weight"), e.param("enc0.in_proj.bias"));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const std::string p = "enc" + std::to_string(l);
      h = ln(ln(h, e.param(p + ".norm1.gamma"), e.param(p + ".norm1.beta")), e.param(p + ".norm2.gamma"),
             e.param(p + ".norm2.beta"));
    }
    for (std::size_t j = 0; j < 64; ++j) acc[j] += h[j];
  }
  const auto expect = dense(acc, e.param("output.weight"), e.param("output.bias"));
  const Tensor y = e.forward(x);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(y[j], expect[j], 1e-10);
}

TEST(Transformer, WithoutPositionsIsPermutationInvariant) {
  auto cfg = EmbedderConfig::defaults(EmbedderKind::transformer);
  cfg.positional_encoding = false;
  const Embedder e(cfg, 12);
  EXPECT_EQ(e.param_count(), Embedder(EmbedderConfig::defaults(EmbedderKind::transformer), 12).param_count() - 7 * 128);
  std::mt19937_64 rng(13);
  const Tensor x = random_input(1, 7, 1, rng);
  Tensor swapped = x.clone();
  for (std::size_t h = 0; h < 24; ++h) std::swap(swapped[1 * 24 + h], swapped[4 * 24 + h]);
  const Tensor a = e.forward(x), b = e.forward(swapped);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(a[j], b[j], 1e-12);
}

}  // namespace
}  // namespace meterlink
