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
#include <map>

#include "meterlink/core/transforms.hpp"
#include "meterlink/synth/synthgen.hpp"

namespace meterlink::synth {
namespace {

SynthConfig noiseless(std::size_t n, std::size_t weeks) {
  SynthConfig cfg;
  cfg.n_households = n;
  cfg.n_weeks = weeks;
  cfg.week_noise = 0.0;
  cfg.vacation_prob = 0.0;
  cfg.seasonal_amplitude = 0.0;
  return cfg;
}

double week_distance(const MeterRecord& r, std::size_t w1, std::size_t w2) {
  const std::size_t n = kHoursPerWeek * r.utilities();
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = r.values[w1 * n + j] - r.values[w2 * n + j];
    s += d * d;
  }
  return std::sqrt(s);
}

TEST(Archetypes, ProfilesAreFiniteAndNonnegative) {
  for (const auto& a : archetypes()) {
    double total = 0.0;
    for (double v : a.base_profile) {
      EXPECT_TRUE(std::isfinite(v));
      EXPECT_GE(v, 0.0);
      total += v;
    }
    EXPECT_GT(total, 0.0);
    EXPECT_GE(a.gas_coupling, 0.0);
    for (double v : a.heating_profile) EXPECT_GE(v, 0.0);
  }
}

TEST(SamplePopulation, DeterministicGivenSeed) {
  SynthConfig cfg;
  cfg.n_households = 50;
  auto a = sample_population(cfg);
  auto b = sample_population(cfg);
  ASSERT_EQ(a.size(), 50u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].archetype, b[i].archetype);
    EXPECT_EQ(a[i].electricity, b[i].electricity);
    EXPECT_EQ(a[i].heating, b[i].heating);
  }
  cfg.seed = 2;
  auto c = sample_population(cfg);
  EXPECT_NE(a[0].electricity, c[0].electricity);
}

TEST(SamplePopulation, ZeroJitterGivesTemplateProfiles) {
  SynthConfig cfg;
  cfg.n_households = 200;
  cfg.profile_jitter = 0.0;
  auto pop = sample_population(cfg);
  std::map<Archetype, std::vector<double>> first;
  for (const auto& p : pop) {
    auto [it, fresh] = first.emplace(p.archetype, p.electricity);
    if (!fresh) {
      EXPECT_EQ(p.electricity, it->second);
    }
  }
  EXPECT_EQ(first.size(), kArchetypeCount);
}

TEST(SamplePopulation, ArchetypeFrequenciesFollowMix) {
  SynthConfig cfg;
  cfg.n_households = 10000;
  cfg.archetype_mix = {0.1, 0.4, 0.2, 0.25, 0.05};
  std::array<double, kArchetypeCount> counts{};
  for (const auto& p : sample_population(cfg)) counts[static_cast<std::size_t>(p.archetype)] += 1.0;
  const double n = 10000.0;
  for (std::size_t k = 0; k < kArchetypeCount; ++k) {
    const double p = cfg.archetype_mix[k];
    const double sigma = std::sqrt(n * p * (1.0 - p));
    EXPECT_NEAR(counts[k], n * p, 3.0 * sigma) << archetype_name(static_cast<Archetype>(k));
  }
}

TEST(Generate, NoiselessWeeksAreIdentical) {
  auto out = generate(noiseless(20, 4));
  for (const auto& [name, rec] : out.data)
    for (std::size_t w = 1; w < 4; ++w) EXPECT_EQ(week_distance(rec, 0, w), 0.0) << name;
  // Distinct households differ.
  const auto& a = out.data.at(out.user_ids[0]).values;
  for (std::size_t i = 1; i < out.user_ids.size(); ++i) EXPECT_NE(out.data.at(out.user_ids[i]).values, a);
}

TEST(Generate, ByteIdenticalForSameSeed) {
  SynthConfig cfg;
  cfg.n_households = 15;
  cfg.n_weeks = 3;
  cfg.utilities = 2;
  auto a = generate(cfg);
  auto b = generate(cfg);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(a.user_ids, b.user_ids);
}

TEST(Generate, ElectricityIndependentOfUtilityCount) {
  SynthConfig cfg;
  cfg.n_households = 10;
  cfg.n_weeks = 2;
  auto one = generate(cfg);
  cfg.utilities = 2;
  auto two = generate(cfg);
  EXPECT_EQ(select_utilities(two.data, 1), one.data);
}

TEST(Generate, MeanMatchesClosedFormTemplateMean) {
  SynthConfig cfg;
  cfg.n_households = 1000;
  cfg.n_weeks = 4;
  auto out = generate(cfg);
  // Every multiplicative factor is mean one except season and occupancy,
  // and timing shifts preserve each day's total. Bursts add
  // spike_rate * week_noise * spike_height kWh per day on average.
  double template_mean = 0.0;
  for (std::size_t k = 0; k < kArchetypeCount; ++k) {
    double m = 0.0;
    for (double v : archetypes()[k].base_profile) m += v;
    template_mean += cfg.archetype_mix[k] * m / static_cast<double>(kHoursPerWeek);
  }
  double season = 0.0;
  for (std::size_t w = 0; w < cfg.n_weeks; ++w) season += seasonal_factor(cfg.seasonal_amplitude, w);
  season /= static_cast<double>(cfg.n_weeks);
  const double occupancy = 1.0 - cfg.vacation_prob * (1.0 - kVacationFloor);
  const double burst = cfg.spike_rate * cfg.week_noise * cfg.spike_height / static_cast<double>(kHoursPerDay);
  const double expected = (template_mean * season + burst) * occupancy;

  double total = 0.0;
  for (const auto& [_, rec] : out.data) total += rec.total();
  const double sample = total / static_cast<double>(cfg.n_households * cfg.n_weeks * kHoursPerWeek);
  EXPECT_NEAR(sample, expected, 0.1 * expected);
}

TEST(Generate, IntraHouseholdDistanceGrowsWithNoise) {
  std::vector<double> mean_dist;
  for (double noise : {0.1, 0.3, 0.6}) {
    SynthConfig cfg;
    cfg.n_households = 200;
    cfg.n_weeks = 2;
    cfg.week_noise = noise;
    cfg.vacation_prob = 0.0;
    cfg.seasonal_amplitude = 0.0;
    auto out = generate(cfg);
    double s = 0.0;
    for (const auto& [_, rec] : out.data) s += week_distance(rec, 0, 1);
    mean_dist.push_back(s / 200.0);
  }
  EXPECT_LT(mean_dist[0], mean_dist[1]);
  EXPECT_LT(mean_dist[1], mean_dist[2]);
}

TEST(Generate, ValuesNonnegativeAndFiniteForExtremeConfigs) {
  for (int variant = 0; variant < 4; ++variant) {
    SynthConfig cfg;
    cfg.n_households = 30;
    cfg.n_weeks = 3;
    cfg.utilities = 2;
    cfg.seed = static_cast<std::uint64_t>(variant) + 5;
    cfg.week_noise = variant * 0.8;
    cfg.profile_jitter = variant * 0.5;
    cfg.ar1_rho = variant == 3 ? 0.99 : 0.0;
    cfg.vacation_prob = variant == 2 ? 1.0 : 0.0;
    cfg.seasonal_amplitude = 0.3 * variant;
    auto out = generate(cfg);
    for (const auto& [_, rec] : out.data) EXPECT_NO_THROW(rec.validate());
  }
}

TEST(DayShift, IntegerShiftRotatesWithinTheDay) {
  std::vector<double> profile(kHoursPerWeek);
  for (std::size_t i = 0; i < profile.size(); ++i) profile[i] = static_cast<double>(i);
  for (std::size_t h = 0; h < kHoursPerDay; ++h) {
    EXPECT_DOUBLE_EQ(detail::shifted(profile, 2, h, 3.0), profile[2 * kHoursPerDay + (h + 21) % 24]);
    EXPECT_DOUBLE_EQ(detail::shifted(profile, 6, h, -1.0), profile[6 * kHoursPerDay + (h + 1) % 24]);
  }
}

TEST(DayShift, FractionalShiftInterpolatesAndPreservesDayTotal) {
  std::vector<double> profile(kHoursPerWeek, 0.0);
  profile[kHoursPerDay + 10] = 4.0;
  EXPECT_DOUBLE_EQ(detail::shifted(profile, 1, 10, 0.25), 3.0);
  EXPECT_DOUBLE_EQ(detail::shifted(profile, 1, 11, 0.25), 1.0);
  double total = 0.0;
  for (std::size_t h = 0; h < kHoursPerDay; ++h) total += detail::shifted(profile, 1, h, -7.6);
  EXPECT_NEAR(total, 4.0, 1e-12);
}

TEST(Generate, DayComponentsVanishWithoutWeekNoise) {
  auto cfg = noiseless(20, 3);
  cfg.timing_jitter = 5.0;
  cfg.spike_rate = 10.0;
  auto out = generate(cfg);
  for (const auto& [_, rec] : out.data) EXPECT_EQ(week_distance(rec, 0, 2), 0.0);
}

TEST(Generate, DayComponentsLeaveSlotNoiseUnchanged) {
  SynthConfig cfg;
  cfg.n_households = 10;
  cfg.n_weeks = 2;
  cfg.timing_jitter = 0.0;
  cfg.spike_rate = 0.0;
  auto plain = generate(cfg);
  cfg.timing_jitter = 2.0;
  auto shifted = generate(cfg);
  cfg.timing_jitter = 0.0;
  cfg.spike_rate = 2.0;
  auto bursty = generate(cfg);
  for (const auto& [id, rec] : plain.data) {
    const auto& b = bursty.data.at(id);
    for (std::size_t t = 0; t < rec.values.size(); ++t) EXPECT_GE(b.values[t], rec.values[t]);
    EXPECT_NE(shifted.data.at(id), rec);
  }
}

TEST(Generate, TimingJitterAndBurstsIncreaseWeekToWeekDistance) {
  auto distance = [](double jitter, double rate) {
    SynthConfig cfg;
    cfg.n_households = 200;
    cfg.n_weeks = 2;
    cfg.vacation_prob = 0.0;
    cfg.seasonal_amplitude = 0.0;
    cfg.timing_jitter = jitter;
    cfg.spike_rate = rate;
    auto out = generate(cfg);
    double s = 0.0;
    for (const auto& [_, rec] : out.data) s += week_distance(rec, 0, 1);
    return s / 200.0;
  };
  const double base = distance(0.0, 0.0);
  EXPECT_GT(distance(3.0, 0.0), base);
  EXPECT_GT(distance(0.0, 3.0), base);
}

TEST(SynthConfig, Validation) {
  SynthConfig cfg;
  cfg.archetype_mix = {0.5, 0.5, 0.5, 0.0, 0.0};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.ar1_rho = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.utilities = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.n_households = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.timing_jitter = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = SynthConfig{};
  cfg.spike_rate = -0.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(UserId, ZeroPaddedAndSortable) {
  EXPECT_EQ(user_id(7, 100), "u00007");
  EXPECT_EQ(user_id(12345, 200000), "u012345");
  EXPECT_LT(user_id(9, 1000), user_id(10, 1000));
}

}  // namespace
}  // namespace meterlink::synth
