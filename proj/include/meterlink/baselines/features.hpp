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

// Hand-engineered weekly features for the feature-based baselines. All
// features are computed per utility and concatenated, so a record with F
// utilities yields 12F (Buchmann) or 5F (Tudor) values.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "meterlink/core/error.hpp"
#include "meterlink/core/record.hpp"

namespace meterlink::baselines {

inline constexpr std::size_t kBuchmannFeatures = 12;
inline constexpr std::size_t kTudorFeatures = 5;
inline constexpr double kDefaultWakeUp = 7.0;
inline constexpr double kDefaultBedtime = 23.0;
inline constexpr double kActivityFactor = 1.25;  // active hour: above 1.25x the overnight mean
inline constexpr double kMaxRatio = 1000.0;       // weekday/weekend ratio cap (x/0 with x > 0)

namespace detail {

inline void check_weekly(const MeterRecord& rec) {
  if (rec.grid.delta_t != kHourSeconds || rec.slots() != kHoursPerWeek)
    throw DataError("record '" + rec.pseudonym + "' is not one hourly week");
}

// Day of week of day d of the record, Monday = 0 (1970-01-01 was a Thursday).
inline std::size_t weekday(const SlotGrid& grid, std::size_t d) {
  const std::int64_t day = grid.start / 86400 + static_cast<std::int64_t>(d) - (grid.start % 86400 < 0 ? 1 : 0);
  return static_cast<std::size_t>(((day + 3) % 7 + 7) % 7);
}

// One utility of a weekly record as 7 x 24 values.
using Week = std::array<std::array<double, kHoursPerDay>, kDaysPerWeek>;

inline Week utility_week(const MeterRecord& rec, std::size_t f) {
  Week w{};
  for (std::size_t d = 0; d < kDaysPerWeek; ++d)
    for (std::size_t h = 0; h < kHoursPerDay; ++h) w[d][h] = rec.at(d * kHoursPerDay + h, f);
  return w;
}

struct DayStats {
  std::array<double, kDaysPerWeek> totals{};
  double overnight_mean = 0.0;  // 00-06h
};

inline DayStats day_stats(const Week& w) {
  DayStats s;
  double night = 0.0;
  for (std::size_t d = 0; d < kDaysPerWeek; ++d) {
    for (std::size_t h = 0; h < kHoursPerDay; ++h) {
      s.totals[d] += w[d][h];
      if (h < 6) night += w[d][h];
    }
  }
  s.overnight_mean = night / (6.0 * kDaysPerWeek);
  return s;
}

// Mean over days of the first hour >= 5 above the activity threshold.
inline double mean_wake_up(const Week& w, double threshold) {
  double sum = 0.0;
  for (const auto& day : w) {
    double hour = kDefaultWakeUp;
    for (std::size_t h = 5; h < kHoursPerDay; ++h)
      if (day[h] > threshold) {
        hour = static_cast<double>(h);
        break;
      }
    sum += hour;
  }
  return sum / kDaysPerWeek;
}

// Mean over days of the last hour >= 20 above the activity threshold.
inline double mean_bedtime(const Week& w, double threshold) {
  double sum = 0.0;
  for (const auto& day : w) {
    double hour = kDefaultBedtime;
    for (std::size_t h = kHoursPerDay; h-- > 20;)
      if (day[h] > threshold) {
        hour = static_cast<double>(h);
        break;
      }
    sum += hour;
  }
  return sum / kDaysPerWeek;
}

// Most frequent daily peak hour; ties go to the earlier hour (as do ties
// within a day).
inline double modal_peak_hour(const Week& w) {
  std::array<int, kHoursPerDay> votes{};
  for (const auto& day : w) ++votes[static_cast<std::size_t>(std::max_element(day.begin(), day.end()) - day.begin())];
  return static_cast<double>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

inline double window_mean(const Week& w, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (const auto& day : w)
    for (std::size_t h = from; h < to; ++h) s += day[h];
  return s / static_cast<double>((to - from) * kDaysPerWeek);
}

// Mean weekday daily total over mean weekend daily total; 0/0 := 1.
inline double weekday_weekend_ratio(const SlotGrid& grid, const DayStats& s) {
  double wd = 0.0, we = 0.0;
  std::size_t nwd = 0, nwe = 0;
  for (std::size_t d = 0; d < kDaysPerWeek; ++d) {
    if (weekday(grid, d) < 5) {
      wd += s.totals[d];
      ++nwd;
    } else {
      we += s.totals[d];
      ++nwe;
    }
  }
  wd /= static_cast<double>(nwd);
  we /= static_cast<double>(nwe);
  if (we == 0.0) return wd == 0.0 ? 1.0 : kMaxRatio;
  return std::min(wd / we, kMaxRatio);
}

}  // namespace detail

// Weekly total; mean, std, max and min daily total; mean overnight (00-06h),
// midday (12-14h) and evening (18-22h) hourly consumption; mean wake-up
// and bedtime hours; modal peak hour; weekday/weekend ratio.
inline std::vector<double> buchmann_features(const MeterRecord& rec) {
  detail::check_weekly(rec);
  std::vector<double> out;
  out.reserve(kBuchmannFeatures * rec.utilities());
  for (std::size_t f = 0; f < rec.utilities(); ++f) {
    const auto w = detail::utility_week(rec, f);
    const auto s = detail::day_stats(w);
    double total = 0.0;
    for (double t : s.totals) total += t;
    const double mean = total / kDaysPerWeek;
    double var = 0.0;
    for (double t : s.totals) var += (t - mean) * (t - mean);
    const double threshold = kActivityFactor * s.overnight_mean;
    out.insert(out.end(), {total, mean, std::sqrt(var / kDaysPerWeek),
                           *std::max_element(s.totals.begin(), s.totals.end()),
                           *std::min_element(s.totals.begin(), s.totals.end()), s.overnight_mean,
                           detail::window_mean(w, 12, 14), detail::window_mean(w, 18, 22),
                           detail::mean_wake_up(w, threshold), detail::mean_bedtime(w, threshold),
                           detail::modal_peak_hour(w), detail::weekday_weekend_ratio(rec.grid, s)});
  }
  return out;
}

// Weekly total, mean daily maximum, mean wake-up hour, mean overnight
// hourly consumption and weekday/weekend ratio.
inline std::vector<double> tudor_features(const MeterRecord& rec) {
  detail::check_weekly(rec);
  std::vector<double> out;
  out.reserve(kTudorFeatures * rec.utilities());
  for (std::size_t f = 0; f < rec.utilities(); ++f) {
    const auto w = detail::utility_week(rec, f);
    const auto s = detail::day_stats(w);
    double total = 0.0, max_sum = 0.0;
    for (std::size_t d = 0; d < kDaysPerWeek; ++d) {
      total += s.totals[d];
      max_sum += *std::max_element(w[d].begin(), w[d].end());
    }
    out.insert(out.end(), {total, max_sum / kDaysPerWeek,
                           detail::mean_wake_up(w, kActivityFactor * s.overnight_mean), s.overnight_mean,
                           detail::weekday_weekend_ratio(rec.grid, s)});
  }
  return out;
}

}  // namespace meterlink::baselines
