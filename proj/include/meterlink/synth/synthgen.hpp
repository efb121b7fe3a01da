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

// Seeded synthetic household electricity (and gas) consumption.
//
// Each household gets a fixed weekly signature: an archetype template
// (distinct peak hours) perturbed by a household-level scale, per
// hour-of-day factors and a small peak shift. Each week then multiplies the
// signature by a seasonal scalar and by mean-one lognormal noise whose log
// follows an AR(1) process across slots. Each day is also shifted in time
// and may carry short appliance bursts. Vacation weeks drop to a floor
// of 15% of the template. Gas follows an archetype heating schedule scaled
// by a household coupling, sharing half of the electricity noise.
//
// Every household draws from its own RNG streams derived from
// (seed, household index, stream), so output does not depend on the order
// households are generated in, and the first k weeks of an n-week dataset
// equal a k-week dataset generated with the same seed.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "meterlink/core/error.hpp"
#include "meterlink/core/record.hpp"

namespace meterlink::synth {

enum class Archetype { morning_peaker, evening_peaker, night_owl, flat, workday_away };
inline constexpr std::size_t kArchetypeCount = 5;

inline const char* archetype_name(Archetype a) {
  switch (a) {
    case Archetype::morning_peaker: return "morning-peaker";
    case Archetype::evening_peaker: return "evening-peaker";
    case Archetype::night_owl: return "night-owl";
    case Archetype::flat: return "flat";
    case Archetype::workday_away: return "workday-away";
  }
  return "unknown";
}

struct HouseholdArchetype {
  Archetype name;
  std::array<double, kHoursPerWeek> base_profile{};     // kWh per hour
  double gas_coupling = 0.0;
  std::array<double, kHoursPerWeek> heating_profile{};  // relative heating demand
};

namespace detail {

// Circular Gaussian bump centred on `hour` (in hours of the day).
inline double bump(double h, double hour, double width) {
  double d = std::abs(h - hour);
  d = std::min(d, 24.0 - d);
  return std::exp(-0.5 * (d * d) / (width * width));
}

struct DayShape {
  double base;
  std::vector<std::array<double, 3>> bumps;  // (hour, height, width)
};

inline std::array<double, kHoursPerWeek> weekly(const DayShape& weekday, const DayShape& weekend) {
  std::array<double, kHoursPerWeek> out{};
  for (std::size_t d = 0; d < kDaysPerWeek; ++d) {
    const DayShape& s = d < 5 ? weekday : weekend;
    for (std::size_t h = 0; h < kHoursPerDay; ++h) {
      double v = s.base;
      for (const auto& b : s.bumps) v += b[1] * bump(static_cast<double>(h), b[0], b[2]);
      out[d * kHoursPerDay + h] = v;
    }
  }
  return out;
}

inline std::array<HouseholdArchetype, kArchetypeCount> make_archetypes() {
  std::array<HouseholdArchetype, kArchetypeCount> a;
  a[0] = {Archetype::morning_peaker,
          weekly({0.22, {{7, 0.85, 1.2}, {19, 0.35, 1.8}}}, {0.25, {{9.5, 0.75, 1.5}, {19, 0.40, 2.0}}}),
          1.2,
          weekly({0.15, {{6.5, 1.0, 1.0}, {18, 0.6, 2.0}}}, {0.2, {{8.5, 0.9, 1.5}, {18, 0.7, 2.5}}})};
  a[1] = {Archetype::evening_peaker,
          weekly({0.20, {{7.5, 0.30, 1.0}, {19.5, 1.05, 1.6}}}, {0.24, {{13, 0.45, 2.0}, {19, 0.95, 2.0}}}),
          1.0,
          weekly({0.10, {{7, 0.5, 1.0}, {19, 1.1, 2.0}}}, {0.15, {{10, 0.6, 2.0}, {19, 1.0, 2.5}}})};
  a[2] = {Archetype::night_owl,
          weekly({0.28, {{23, 0.80, 1.5}, {1.5, 0.50, 1.2}, {13, 0.25, 2.0}}},
                 {0.30, {{0.5, 0.85, 1.8}, {15, 0.40, 2.5}}}),
          0.8,
          weekly({0.2, {{22, 0.9, 2.0}, {11, 0.4, 2.0}}}, {0.2, {{23, 0.9, 2.5}, {14, 0.5, 2.5}}})};
  a[3] = {Archetype::flat,
          weekly({0.45, {{12, 0.12, 4.0}, {20, 0.15, 3.0}}}, {0.48, {{12, 0.15, 4.0}, {20, 0.15, 3.0}}}),
          1.5,
          weekly({0.45, {{8, 0.3, 3.0}, {20, 0.3, 3.0}}}, {0.45, {{9, 0.3, 3.0}, {20, 0.3, 3.0}}})};
  a[4] = {Archetype::workday_away,
          weekly({0.12, {{7, 0.50, 0.8}, {19.5, 0.90, 2.0}}}, {0.30, {{11, 0.50, 2.5}, {18, 0.60, 2.5}}}),
          1.1,
          weekly({0.05, {{6.5, 0.8, 0.8}, {19, 1.0, 2.0}}}, {0.3, {{10, 0.6, 3.0}, {19, 0.8, 3.0}}})};
  return a;
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t household, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(household), static_cast<std::uint32_t>(household >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

}  // namespace detail

inline const std::array<HouseholdArchetype, kArchetypeCount>& archetypes() {
  static const auto kArchetypes = detail::make_archetypes();
  return kArchetypes;
}

struct SynthConfig {
  std::size_t n_households = 100;
  std::size_t n_weeks = 12;
  std::array<double, kArchetypeCount> archetype_mix{0.2, 0.2, 0.2, 0.2, 0.2};
  double profile_jitter = 0.3;
  double week_noise = 0.3;
  double ar1_rho = 0.5;
  double vacation_prob = 0.02;
  double seasonal_amplitude = 0.1;
  // Day-level components of the weekly noise, both scaled by week_noise so
  // that week_noise = 0 stays noiseless: each day's profile is shifted in
  // time by N(0, (timing_jitter * week_noise)^2) hours, and appliance
  // bursts arrive at spike_rate * week_noise per day.
  double timing_jitter = 2.0;
  double spike_rate = 2.0;
  double spike_height = 1.0;  // kWh of a burst hour
  std::size_t utilities = 1;
  std::uint64_t seed = 1;
  std::int64_t start = 1609718400;  // Monday 2021-01-04 00:00 UTC

  void validate() const {
    if (n_households == 0 || n_weeks == 0) throw ConfigError("n_households and n_weeks must be positive");
    double total = 0.0;
    for (double p : archetype_mix) {
      if (!(p >= 0.0)) throw ConfigError("archetype_mix entries must be nonnegative");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("archetype_mix must sum to 1");
    if (!(profile_jitter >= 0.0) || !(week_noise >= 0.0) || !(seasonal_amplitude >= 0.0))
      throw ConfigError("jitter, noise and seasonal amplitude must be nonnegative");
    if (!(ar1_rho >= 0.0 && ar1_rho < 1.0)) throw ConfigError("ar1_rho must lie in [0, 1)");
    if (!(vacation_prob >= 0.0 && vacation_prob <= 1.0)) throw ConfigError("vacation_prob must lie in [0, 1]");
    if (!(timing_jitter >= 0.0) || !(spike_rate >= 0.0) || !(spike_height >= 0.0))
      throw ConfigError("timing jitter, spike rate and spike height must be nonnegative");
    if (seasonal_amplitude >= 1.0) throw ConfigError("seasonal_amplitude must be below 1");
    if (utilities != 1 && utilities != 2) throw ConfigError("utilities must be 1 or 2");
  }
};

inline constexpr double kVacationFloor = 0.15;

struct HouseholdProfile {
  std::string user_id;
  Archetype archetype = Archetype::flat;
  std::vector<double> electricity;  // 168 hourly values
  std::vector<double> heating;      // 168 hourly values, already scaled by coupling
};

inline std::string user_id(std::size_t index, std::size_t population) {
  const std::size_t width = std::max<std::size_t>(5, std::to_string(population).size());
  std::string digits = std::to_string(index);
  return "u" + std::string(width - digits.size(), '0') + digits;
}

namespace detail {

// Household-specific perturbation of a 168-slot template: overall scale,
// weekday/weekend hour-of-day factors and a circular peak shift. Every
// factor is mean one, and sigma = 0 returns the template unchanged.
inline std::vector<double> perturb(const std::array<double, kHoursPerWeek>& tmpl, double sigma,
                                   std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double level = std::exp(sigma * normal(rng) - 0.5 * sigma * sigma);
  std::array<double, kHoursPerDay> weekday{}, weekend{};
  for (std::size_t h = 0; h < kHoursPerDay; ++h) {
    const double shared = normal(rng);
    const double own = normal(rng);
    weekday[h] = std::exp(sigma * shared - 0.5 * sigma * sigma);
    const double mixed = 0.6 * shared + 0.8 * own;  // unit variance
    weekend[h] = std::exp(sigma * mixed - 0.5 * sigma * sigma);
  }
  const long shift = std::lround(2.0 * sigma * normal(rng));
  std::vector<double> out(kHoursPerWeek);
  for (std::size_t d = 0; d < kDaysPerWeek; ++d)
    for (std::size_t h = 0; h < kHoursPerDay; ++h) {
      const long src = (static_cast<long>(h) - shift % 24 + 24) % 24;
      const double factor = d < 5 ? weekday[h] : weekend[h];
      out[d * kHoursPerDay + h] = level * factor * tmpl[d * kHoursPerDay + static_cast<std::size_t>(src)];
    }
  return out;
}

inline HouseholdProfile sample_household(const SynthConfig& cfg, std::size_t index) {
  auto rng = stream(cfg.seed, index, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  std::size_t k = 0;
  double cum = cfg.archetype_mix[0];
  while (u >= cum && k + 1 < kArchetypeCount) cum += cfg.archetype_mix[++k];
  // Skip archetypes with zero mass that the loop may land on through rounding.
  while (cfg.archetype_mix[k] == 0.0 && k > 0) --k;
  const auto& arch = archetypes()[k];

  HouseholdProfile p;
  p.user_id = user_id(index, cfg.n_households);
  p.archetype = arch.name;
  p.electricity = perturb(arch.base_profile, cfg.profile_jitter, rng);

  // Gas has its own stream so electricity is identical for F = 1 and F = 2.
  auto gas_rng = stream(cfg.seed, index, 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = cfg.profile_jitter;
  const double coupling = arch.gas_coupling * std::exp(sigma * normal(gas_rng) - 0.5 * sigma * sigma);
  p.heating = perturb(arch.heating_profile, sigma, gas_rng);
  for (double& v : p.heating) v *= coupling;
  return p;
}

// Value of `day` of a weekly profile at hour h - shift, linearly
// interpolated and wrapping within the day.
inline double shifted(const std::vector<double>& profile, std::size_t day, std::size_t h, double shift) {
  if (shift == 0.0) return profile[day * kHoursPerDay + h];
  const double x = static_cast<double>(h) - shift;
  const double fl = std::floor(x);
  const double frac = x - fl;
  const auto wrap = [](double v) {
    const long r = static_cast<long>(v) % static_cast<long>(kHoursPerDay);
    return static_cast<std::size_t>(r < 0 ? r + static_cast<long>(kHoursPerDay) : r);
  };
  const std::size_t lo = wrap(fl), hi = wrap(fl + 1.0);
  return (1.0 - frac) * profile[day * kHoursPerDay + lo] + frac * profile[day * kHoursPerDay + hi];
}

}  // namespace detail

inline std::vector<HouseholdProfile> sample_population(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<HouseholdProfile> out;
  out.reserve(cfg.n_households);
  for (std::size_t i = 0; i < cfg.n_households; ++i) out.push_back(detail::sample_household(cfg, i));
  return out;
}

inline double seasonal_factor(double amplitude, std::size_t week) {
  return 1.0 + amplitude * std::cos(2.0 * std::numbers::pi * static_cast<double>(week) / 52.0);
}

struct SynthOutput {
  Dataset data;                   // keyed by user id, n_weeks * 168 hourly slots
  std::vector<std::string> user_ids;
};

inline SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  SlotGrid grid;
  grid.start = cfg.start;
  grid.delta_t = kHourSeconds;
  grid.slots = cfg.n_weeks * kHoursPerWeek;
  grid.utilities = cfg.utilities;

  SynthOutput out{Dataset(grid), {}};
  const double sigma = cfg.week_noise;
  const double rho = cfg.ar1_rho;
  const double innovation = std::sqrt(1.0 - rho * rho) * sigma;
  for (std::size_t i = 0; i < cfg.n_households; ++i) {
    const HouseholdProfile prof = detail::sample_household(cfg, i);
    auto rng = detail::stream(cfg.seed, i, 2);
    auto gas_rng = detail::stream(cfg.seed, i, 3);
    // Separate distribution objects per engine: normal_distribution caches
    // values between calls.
    std::normal_distribution<double> normal(0.0, 1.0);
    std::normal_distribution<double> gas_normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // Day-level timing shifts and bursts draw from their own stream so the
    // slot noise above is unchanged when they are disabled.
    auto day_rng = detail::stream(cfg.seed, i, 4);
    std::normal_distribution<double> day_normal(0.0, 1.0);
    std::uniform_real_distribution<double> day_unif(0.0, 1.0);
    std::poisson_distribution<int> bursts(cfg.spike_rate * sigma);
    std::exponential_distribution<double> burst_size(1.0);
    const double shift_sd = cfg.timing_jitter * sigma;

    MeterRecord rec(prof.user_id, grid);
    double e = sigma * normal(rng);
    double g = sigma * gas_normal(gas_rng);
    for (std::size_t w = 0; w < cfg.n_weeks; ++w) {
      const double season = seasonal_factor(cfg.seasonal_amplitude, w);
      const double gas_season = seasonal_factor(std::min(0.95, 2.0 * cfg.seasonal_amplitude), w);
      const bool vacation = unif(rng) < cfg.vacation_prob;
      const double occupancy = vacation ? kVacationFloor : 1.0;
      std::array<double, kDaysPerWeek> shift{};
      std::array<double, kHoursPerWeek> burst{};
      if (shift_sd > 0.0)
        for (double& v : shift) v = shift_sd * day_normal(day_rng);
      if (cfg.spike_rate * sigma > 0.0)
        for (std::size_t d = 0; d < kDaysPerWeek; ++d)
          for (int n = bursts(day_rng); n > 0; --n) {
            const auto h = static_cast<std::size_t>(day_unif(day_rng) * kHoursPerDay) % kHoursPerDay;
            burst[d * kHoursPerDay + h] += cfg.spike_height * burst_size(day_rng);
          }
      for (std::size_t h = 0; h < kHoursPerWeek; ++h) {
        const std::size_t t = w * kHoursPerWeek + h;
        const std::size_t day = h / kHoursPerDay;
        if (t > 0) e = rho * e + innovation * normal(rng);
        const double noise = std::exp(e - 0.5 * sigma * sigma);
        const double elec = detail::shifted(prof.electricity, day, h % kHoursPerDay, shift[day]);
        rec.at(t, 0) = (elec * season + burst[h]) * occupancy * noise;
        if (cfg.utilities == 2) {
          if (t > 0) g = rho * g + innovation * gas_normal(gas_rng);
          const double mixed = 0.5 * e + std::sqrt(0.75) * g;  // same stationary variance
          const double heat = detail::shifted(prof.heating, day, h % kHoursPerDay, shift[day]);
          rec.at(t, 1) = heat * gas_season * occupancy * std::exp(mixed - 0.5 * sigma * sigma);
        }
      }
    }
    out.data.insert(std::move(rec));
    out.user_ids.push_back(prof.user_id);
  }
  return out;
}

}  // namespace meterlink::synth
