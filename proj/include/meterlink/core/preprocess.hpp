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

#include <optional>
#include <vector>

#include "meterlink/core/io.hpp"
#include "meterlink/core/record.hpp"
#include "meterlink/core/transforms.hpp"

namespace meterlink {

enum class DuplicatePolicy { average };
enum class MissingPolicy { zero_fill };

struct PreprocessConfig {
  DuplicatePolicy duplicate_policy = DuplicatePolicy::average;
  MissingPolicy missing_policy = MissingPolicy::zero_fill;
  // Gas values above this quantile of the training split are clipped to it.
  // Unset disables clipping.
  std::optional<double> gas_clip_quantile = 0.999;

  void validate() const {
    if (gas_clip_quantile && !(*gas_clip_quantile > 0.9 && *gas_clip_quantile <= 1.0))
      throw ConfigError("gas_clip_quantile must lie in (0.9, 1]");
  }
};

// Hourly grid spanning every reading of `raw`.
inline SlotGrid infer_grid(const io::RawDataset& raw, std::int64_t delta_t = kHourSeconds) {
  SlotGrid g;
  g.start = raw.min_timestamp;
  g.delta_t = delta_t;
  g.slots = static_cast<std::size_t>((raw.max_timestamp - raw.min_timestamp) / delta_t) + 1;
  g.utilities = raw.utilities;
  return g;
}

// Splits raw readings into consecutive periods of `period_seconds` starting
// at `start` (e.g. weeks). A pseudonym seen in several periods appears in
// each of them.
inline std::vector<io::RawDataset> split_raw_periods(const io::RawDataset& raw, std::int64_t start,
                                                     std::int64_t period_seconds) {
  if (raw.min_timestamp < start) throw DataError("reading before the declared start");
  const auto n = static_cast<std::size_t>((raw.max_timestamp - start) / period_seconds) + 1;
  std::vector<io::RawDataset> parts(n);
  for (std::size_t p = 0; p < n; ++p) {
    parts[p].utilities = raw.utilities;
    parts[p].min_timestamp = start + static_cast<std::int64_t>(p) * period_seconds;
    parts[p].max_timestamp = parts[p].min_timestamp + period_seconds - 1;
  }
  for (const auto& [name, rows] : raw.readings)
    for (const auto& r : rows) {
      auto& part = parts[static_cast<std::size_t>((r.timestamp - start) / period_seconds)];
      part.readings[name].push_back(r);
      ++part.parsed_rows;
    }
  return parts;
}

// Gas clipping threshold fitted on the training split.
inline double gas_clip_threshold(std::span<const Dataset> train, double q) {
  std::vector<double> gas;
  for (const auto& ds : train) {
    if (ds.grid().utilities < 2) throw DataError("dataset has no gas column");
    for (const auto& [_, rec] : ds)
      for (std::size_t t = 0; t < rec.slots(); ++t) gas.push_back(rec.at(t, 1));
  }
  return quantile(std::move(gas), q);
}

inline Dataset clip_gas(const Dataset& ds, double threshold) {
  if (ds.grid().utilities < 2) return ds;
  Dataset out(ds.grid());
  for (const auto& [name, rec] : ds) {
    MeterRecord r = rec;
    for (std::size_t t = 0; t < r.slots(); ++t) r.at(t, 1) = std::min(r.at(t, 1), threshold);
    out.insert_unchecked(std::move(r));
  }
  return out;
}

// Places raw readings on `grid`: duplicate readings of one slot are
// averaged and slots without readings are zero-filled. Gas clipping uses
// `gas_threshold` when given; otherwise, when enabled in `cfg`, the
// threshold is fitted on this dataset itself (treated as the training split).
inline Dataset preprocess(const io::RawDataset& raw, const PreprocessConfig& cfg, const SlotGrid& grid,
                          std::optional<double> gas_threshold = {}) {
  cfg.validate();
  if (grid.utilities != raw.utilities) throw DataError("grid and readings disagree on utility count");
  const std::size_t F = grid.utilities;
  Dataset out(grid);
  for (const auto& [name, rows] : raw.readings) {
    std::vector<double> sum(grid.slots * F, 0.0);
    std::vector<int> count(grid.slots, 0);
    for (const auto& r : rows) {
      const std::int64_t offset = r.timestamp - grid.start;
      if (offset < 0 || offset % grid.delta_t != 0 || offset / grid.delta_t >= static_cast<std::int64_t>(grid.slots))
        throw DataError("reading at " + std::to_string(r.timestamp) + " does not fall on the slot grid");
      const auto t = static_cast<std::size_t>(offset / grid.delta_t);
      for (std::size_t f = 0; f < F; ++f) sum[t * F + f] += r.values[f];
      ++count[t];
    }
    MeterRecord rec(name, grid);
    for (std::size_t t = 0; t < grid.slots; ++t)
      for (std::size_t f = 0; f < F; ++f)
        rec.values[t * F + f] = count[t] > 0 ? sum[t * F + f] / count[t] : 0.0;
    out.insert(std::move(rec));
  }
  if (F >= 2) {
    if (gas_threshold) return clip_gas(out, *gas_threshold);
    if (cfg.gas_clip_quantile && !out.empty())
      return clip_gas(out, gas_clip_threshold(std::span<const Dataset>(&out, 1), *cfg.gas_clip_quantile));
  }
  return out;
}

inline Dataset preprocess(const io::RawDataset& raw, const PreprocessConfig& cfg) {
  return preprocess(raw, cfg, infer_grid(raw));
}

}  // namespace meterlink
