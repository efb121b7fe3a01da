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

// Daily-sequence view of weekly records. Day d of a week becomes one row
// x_d = [r_{d,1} | ... | r_{d,F}], the 24 hourly values of each utility
// in turn.

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "meterlink/core/error.hpp"
#include "meterlink/core/record.hpp"
#include "meterlink/nk/tensor.hpp"

namespace meterlink::embed {

struct WeeklyInput {
  std::size_t days = kDaysPerWeek;
  std::size_t slots_per_day = kHoursPerDay;
  std::size_t utilities = 1;
  std::vector<double> rows;  // days x (slots_per_day * utilities)

  std::size_t row_width() const { return slots_per_day * utilities; }
  double at(std::size_t day, std::size_t f, std::size_t hour) const {
    return rows[day * row_width() + f * slots_per_day + hour];
  }
  // Feature-map view used by the convolutional path: utility f of day d as
  // a 24-long channel. Utility blocks are contiguous in a row, so this is
  // the row itself read as [F x 24].
  std::span<const double> day_map(std::size_t day) const {
    return std::span<const double>(rows).subspan(day * row_width(), row_width());
  }
};

namespace detail {

// Rows of the 7-day window starting at `start_day` of a multi-day slot-major
// grid, wrapping around modulo `total_days`.
inline void fill_window(const std::vector<double>& values, std::size_t F, std::size_t start_day, std::size_t total_days,
                        double* out) {
  const std::size_t width = kHoursPerDay * F;
  for (std::size_t d = 0; d < kDaysPerWeek; ++d) {
    const std::size_t day = (start_day + d) % total_days;
    double* row = out + d * width;
    for (std::size_t h = 0; h < kHoursPerDay; ++h) {
      const std::size_t t = day * kHoursPerDay + h;
      for (std::size_t f = 0; f < F; ++f) row[f * kHoursPerDay + h] = values[t * F + f];
    }
  }
}

inline void check_hourly(const MeterRecord& rec) {
  if (rec.grid.delta_t != kHourSeconds)
    throw DataError("embedders need hourly records; aggregate the data first");
  if (rec.grid.slots % kHoursPerDay != 0) throw DataError("record does not cover whole days");
}

}  // namespace detail

inline WeeklyInput to_daily_sequence(const MeterRecord& rec) {
  detail::check_hourly(rec);
  if (rec.slots() != kHoursPerWeek)
    throw DataError("expected a weekly record of 168 hourly slots, got " + std::to_string(rec.slots()));
  WeeklyInput in;
  in.utilities = rec.utilities();
  in.rows.resize(kHoursPerWeek * in.utilities);
  detail::fill_window(rec.values, in.utilities, 0, kDaysPerWeek, in.rows.data());
  return in;
}

// Inverse of to_daily_sequence.
inline MeterRecord from_daily_sequence(const WeeklyInput& in, const std::string& pseudonym, std::int64_t start) {
  SlotGrid g;
  g.start = start;
  g.slots = in.days * in.slots_per_day;
  g.utilities = in.utilities;
  MeterRecord rec(pseudonym, g);
  for (std::size_t d = 0; d < in.days; ++d)
    for (std::size_t f = 0; f < in.utilities; ++f)
      for (std::size_t h = 0; h < in.slots_per_day; ++h) rec.at(d * in.slots_per_day + h, f) = in.at(d, f, h);
  return rec;
}

// A 7-day window of a multi-week record as daily rows; the window starts at
// `start_day` and wraps modulo the number of days in the record.
inline std::vector<double> window_rows(const MeterRecord& rec, std::size_t start_day) {
  detail::check_hourly(rec);
  const std::size_t total_days = rec.slots() / kHoursPerDay;
  if (total_days == 0) throw DataError("empty record");
  std::vector<double> rows(kHoursPerWeek * rec.utilities());
  detail::fill_window(rec.values, rec.utilities(), start_day % total_days, total_days, rows.data());
  return rows;
}

// Stacks per-record row blocks into a [B x 7 x 24F] tensor, rejecting
// values outside the unit range the embedders were trained on.
inline nk::Tensor stack_inputs(const std::vector<std::vector<double>>& blocks, std::size_t utilities) {
  if (blocks.empty()) throw DataError("empty embedding batch");
  const std::size_t width = kHoursPerDay * utilities;
  const std::size_t per = kDaysPerWeek * width;
  nk::Tensor x(nk::Shape{blocks.size(), kDaysPerWeek, width});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].size() != per) throw ShapeError("input block has the wrong size");
    for (std::size_t j = 0; j < per; ++j) {
      const double v = blocks[b][j];
      if (!std::isfinite(v)) throw DataError("non-finite embedder input");
      if (v < 0.0 || v > 1.0) throw DataError("embedder input outside [0, 1]; apply unit scaling first");
      x[b * per + j] = v;
    }
  }
  return x;
}

inline nk::Tensor weekly_batch(std::span<const MeterRecord* const> records) {
  if (records.empty()) throw DataError("empty embedding batch");
  std::vector<std::vector<double>> blocks;
  blocks.reserve(records.size());
  const std::size_t F = records.front()->utilities();
  for (const MeterRecord* r : records) {
    if (r->utilities() != F) throw DataError("records disagree on utility count");
    blocks.push_back(to_daily_sequence(*r).rows);
  }
  return stack_inputs(blocks, F);
}

}  // namespace meterlink::embed
