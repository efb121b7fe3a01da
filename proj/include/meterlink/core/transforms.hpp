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

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "meterlink/core/error.hpp"
#include "meterlink/core/record.hpp"

namespace meterlink {

// ---------------------------------------------------------------------------
// Period slicing

// Records restricted to slots [first_slot, first_slot + count).
inline Dataset slice_slots(const Dataset& ds, std::size_t first_slot, std::size_t count) {
  const auto& g = ds.grid();
  if (first_slot + count > g.slots || count == 0) throw DataError("slot range outside dataset");
  SlotGrid sub = g;
  sub.start = g.start + static_cast<std::int64_t>(first_slot) * g.delta_t;
  sub.slots = count;
  Dataset out(sub);
  const std::size_t F = g.utilities;
  for (const auto& [name, rec] : ds) {
    MeterRecord r(name, sub);
    std::copy(rec.values.begin() + first_slot * F, rec.values.begin() + (first_slot + count) * F,
              r.values.begin());
    out.insert_unchecked(std::move(r));
  }
  return out;
}

// Weeks [first_week, first_week + count) of a multi-week dataset.
inline Dataset slice_weeks(const Dataset& ds, std::size_t first_week, std::size_t count) {
  const std::size_t spw = ds.grid().slots_per_week();
  return slice_slots(ds, first_week * spw, count * spw);
}

// Splits a dataset into consecutive disjoint weeks. Partial weeks are
// rejected rather than padded.
inline std::vector<Dataset> split_weeks(const Dataset& ds) {
  const auto& g = ds.grid();
  if (kWeekSeconds % g.delta_t != 0) throw DataError("slot width does not divide a week");
  const std::size_t spw = g.slots_per_week();
  if (g.slots % spw != 0) throw DataError("dataset period is not an integer number of weeks");
  std::vector<Dataset> weeks;
  for (std::size_t w = 0; w < g.slots / spw; ++w) weeks.push_back(slice_slots(ds, w * spw, spw));
  return weeks;
}

// Concatenates consecutive periods that share the same pseudonyms; the
// inverse of split_weeks.
inline Dataset concat_periods(std::span<const Dataset> parts) {
  if (parts.empty()) throw DataError("nothing to concatenate");
  SlotGrid g = parts.front().grid();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.grid().delta_t != g.delta_t || p.grid().utilities != g.utilities)
      throw DataError("periods have different slot widths or utilities");
    if (p.grid().start != g.start + static_cast<std::int64_t>(total) * g.delta_t)
      throw DataError("periods are not contiguous");
    if (p.pseudonyms() != parts.front().pseudonyms())
      throw DataError("periods do not share pseudonyms");
    total += p.grid().slots;
  }
  g.slots = total;
  Dataset out(g);
  for (const auto& [name, _] : parts.front()) {
    MeterRecord r(name, g);
    auto dst = r.values.begin();
    for (const auto& p : parts) dst = std::copy(p.at(name).values.begin(), p.at(name).values.end(), dst);
    out.insert_unchecked(std::move(r));
  }
  return out;
}

// Keeps the first `utilities` utility columns (e.g. electricity only).
inline Dataset select_utilities(const Dataset& ds, std::size_t utilities) {
  const auto& g = ds.grid();
  if (utilities == 0 || utilities > g.utilities) throw DataError("invalid utility selection");
  if (utilities == g.utilities) return ds;
  SlotGrid sub = g;
  sub.utilities = utilities;
  Dataset out(sub);
  for (const auto& [name, rec] : ds) {
    MeterRecord r(name, sub);
    for (std::size_t t = 0; t < g.slots; ++t)
      for (std::size_t f = 0; f < utilities; ++f) r.at(t, f) = rec.at(t, f);
    out.insert_unchecked(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rounding

struct RoundingSpec {
  int n = 3;  // significant digits
};

// Rounds to n significant digits, half away from zero, working on the
// shortest decimal representation of x so that 0.15 rounds like the
// decimal 0.15 and not like its binary neighbour.
inline double round_significant(double x, int n) {
  require(n >= 1, "significant digits must be >= 1");
  if (x == 0.0 || !std::isfinite(x)) return x;
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), std::abs(x), std::chars_format::scientific);
  std::string s(buf, res.ptr);
  const auto epos = s.find('e');
  std::string mantissa = s.substr(0, epos);
  int exponent = std::atoi(s.c_str() + epos + 1);
  std::string digits;
  for (char c : mantissa)
    if (c != '.') digits.push_back(c);
  if (static_cast<int>(digits.size()) <= n) return x;

  const bool round_up = digits[static_cast<std::size_t>(n)] >= '5';
  std::string kept = digits.substr(0, static_cast<std::size_t>(n));
  if (round_up) {
    int i = n - 1;
    for (; i >= 0; --i) {
      if (kept[static_cast<std::size_t>(i)] == '9') {
        kept[static_cast<std::size_t>(i)] = '0';
      } else {
        ++kept[static_cast<std::size_t>(i)];
        break;
      }
    }
    if (i < 0) {
      kept.insert(kept.begin(), '1');
      kept.pop_back();
      ++exponent;
    }
  }
  std::string out = kept.substr(0, 1);
  if (kept.size() > 1) out += "." + kept.substr(1);
  out += "e" + std::to_string(exponent);
  const double magnitude = std::strtod(out.c_str(), nullptr);
  return x < 0 ? -magnitude : magnitude;
}

inline Dataset round_significant(const Dataset& ds, RoundingSpec spec) {
  require(spec.n >= 1, "significant digits must be >= 1");
  Dataset out(ds.grid());
  for (const auto& [name, rec] : ds) {
    MeterRecord r = rec;
    for (double& v : r.values) v = round_significant(v, spec.n);
    out.insert_unchecked(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Granularity

// Sums consecutive slots in groups of new_delta_t / delta_t.
inline Dataset aggregate_granularity(const Dataset& ds, std::int64_t new_delta_t) {
  const auto& g = ds.grid();
  if (new_delta_t <= 0 || new_delta_t % g.delta_t != 0)
    throw DataError("new slot width must be a positive multiple of the current one");
  const auto ratio = static_cast<std::size_t>(new_delta_t / g.delta_t);
  if (g.slots % ratio != 0) throw DataError("slot count not divisible by aggregation ratio");
  SlotGrid coarse = g;
  coarse.delta_t = new_delta_t;
  coarse.slots = g.slots / ratio;
  Dataset out(coarse);
  const std::size_t F = g.utilities;
  for (const auto& [name, rec] : ds) {
    MeterRecord r(name, coarse);
    for (std::size_t t = 0; t < coarse.slots; ++t)
      for (std::size_t f = 0; f < F; ++f) {
        double s = 0.0;
        for (std::size_t k = 0; k < ratio; ++k) s += rec.at(t * ratio + k, f);
        r.at(t, f) = s;
      }
    out.insert_unchecked(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scaling

struct ScalingStats {
  std::vector<double> unit_min;  // per utility
  std::vector<double> unit_max;  // per utility
  std::vector<double> mean;      // per feature (slot x utility)
  std::vector<double> stddev;    // per feature, population std

  bool fitted() const { return !unit_min.empty(); }
  bool operator==(const ScalingStats&) const = default;
};

// Fits per-utility min/max and per-feature mean/std over every record of
// every dataset. All datasets must share T and F; each record is one sample.
inline ScalingStats fit_scaling(std::span<const Dataset> train) {
  std::size_t samples = 0;
  for (const auto& ds : train) samples += ds.size();
  if (samples == 0) throw DataError("cannot fit scaling on an empty training set");
  const SlotGrid g = train.front().grid();
  const std::size_t F = g.utilities;
  const std::size_t n_features = g.slots * F;

  ScalingStats s;
  s.unit_min.assign(F, std::numeric_limits<double>::infinity());
  s.unit_max.assign(F, -std::numeric_limits<double>::infinity());
  s.mean.assign(n_features, 0.0);
  s.stddev.assign(n_features, 0.0);
  for (const auto& ds : train) {
    if (ds.grid().slots != g.slots || ds.grid().utilities != F)
      throw DataError("training datasets disagree on T x F");
    for (const auto& [_, rec] : ds)
      for (std::size_t j = 0; j < n_features; ++j) {
        const double v = rec.values[j];
        s.mean[j] += v;
        s.unit_min[j % F] = std::min(s.unit_min[j % F], v);
        s.unit_max[j % F] = std::max(s.unit_max[j % F], v);
      }
  }
  for (double& m : s.mean) m /= static_cast<double>(samples);
  for (const auto& ds : train)
    for (const auto& [_, rec] : ds)
      for (std::size_t j = 0; j < n_features; ++j) {
        const double d = rec.values[j] - s.mean[j];
        s.stddev[j] += d * d;
      }
  for (double& v : s.stddev) v = std::sqrt(v / static_cast<double>(samples));
  return s;
}

inline ScalingStats fit_scaling(const Dataset& train) { return fit_scaling(std::span<const Dataset>(&train, 1)); }

// Per-utility map of [min, max] onto [0, 1]; out-of-range values are clipped.
inline Dataset apply_unit_scaling(const Dataset& ds, const ScalingStats& stats) {
  const std::size_t F = ds.grid().utilities;
  if (stats.unit_min.size() != F) throw DataError("scaling stats fitted for a different utility count");
  Dataset out(ds.grid());
  for (const auto& [name, rec] : ds) {
    MeterRecord r = rec;
    for (std::size_t j = 0; j < r.values.size(); ++j) {
      const double lo = stats.unit_min[j % F];
      const double range = stats.unit_max[j % F] - lo;
      const double v = range > 0.0 ? (r.values[j] - lo) / range : 0.0;
      r.values[j] = std::clamp(v, 0.0, 1.0);
    }
    out.insert_unchecked(std::move(r));
  }
  return out;
}

// Standardized features (may be negative, so returned as flat rows rather
// than as a Dataset, whose records are consumption and must be >= 0).
inline std::vector<double> standardize_record(const MeterRecord& rec, const ScalingStats& stats) {
  if (stats.mean.size() != rec.values.size())
    throw DataError("scaling stats fitted for a different feature count");
  std::vector<double> z(rec.values.size());
  for (std::size_t j = 0; j < z.size(); ++j)
    z[j] = stats.stddev[j] > 0.0 ? (rec.values[j] - stats.mean[j]) / stats.stddev[j] : 0.0;
  return z;
}

// One standardized row per record, in dataset (pseudonym) order.
inline std::vector<std::vector<double>> apply_standardization(const Dataset& ds,
                                                              const ScalingStats& stats) {
  std::vector<std::vector<double>> rows;
  rows.reserve(ds.size());
  for (const auto& [_, rec] : ds) rows.push_back(standardize_record(rec, stats));
  return rows;
}

// ---------------------------------------------------------------------------
// Statistics helpers

// Sample quantile with linear interpolation between order statistics
// (the common "type 7" definition).
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("quantile of an empty sample");
  require(q >= 0.0 && q <= 1.0, "quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace meterlink
