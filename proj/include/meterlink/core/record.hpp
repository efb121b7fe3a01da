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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meterlink/core/error.hpp"

namespace meterlink {

inline constexpr std::int64_t kHourSeconds = 3600;
inline constexpr std::int64_t kDaySeconds = 24 * kHourSeconds;
inline constexpr std::int64_t kWeekSeconds = 7 * kDaySeconds;
inline constexpr std::size_t kHoursPerDay = 24;
inline constexpr std::size_t kDaysPerWeek = 7;
inline constexpr std::size_t kHoursPerWeek = kHoursPerDay * kDaysPerWeek;

// Time layout shared by every record of a dataset.
struct SlotGrid {
  std::int64_t start = 0;              // UTC epoch seconds of slot 0
  std::int64_t delta_t = kHourSeconds;  // slot width in seconds
  std::size_t slots = 0;               // T
  std::size_t utilities = 1;           // F

  std::int64_t end() const { return start + static_cast<std::int64_t>(slots) * delta_t; }
  std::size_t slots_per_week() const { return static_cast<std::size_t>(kWeekSeconds / delta_t); }
  std::size_t slots_per_day() const { return static_cast<std::size_t>(kDaySeconds / delta_t); }

  bool operator==(const SlotGrid&) const = default;
};

// Consumption of one property over a period: a T x F grid in slot-major
// order, values[t * F + f].
struct MeterRecord {
  std::string pseudonym;
  SlotGrid grid;
  std::vector<double> values;

  MeterRecord() = default;
  MeterRecord(std::string name, SlotGrid g)
      : pseudonym(std::move(name)), grid(g), values(g.slots * g.utilities, 0.0) {}
  MeterRecord(std::string name, SlotGrid g, std::vector<double> v)
      : pseudonym(std::move(name)), grid(g), values(std::move(v)) {}

  std::size_t slots() const { return grid.slots; }
  std::size_t utilities() const { return grid.utilities; }

  double at(std::size_t t, std::size_t f) const { return values[t * grid.utilities + f]; }
  double& at(std::size_t t, std::size_t f) { return values[t * grid.utilities + f]; }

  double total() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }

  void validate() const {
    if (grid.slots == 0 || grid.utilities == 0 || grid.delta_t <= 0)
      throw DataError("record '" + pseudonym + "': empty or invalid grid");
    if (values.size() != grid.slots * grid.utilities)
      throw DataError("record '" + pseudonym + "': value count does not match T x F");
    for (double v : values) {
      if (!std::isfinite(v) || v < 0.0)
        throw DataError("record '" + pseudonym + "': values must be finite and nonnegative");
    }
  }

  bool operator==(const MeterRecord&) const = default;
};

// A set of records keyed by pseudonym, all sharing one slot grid.
// Iteration order is lexicographic by pseudonym.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(SlotGrid grid) : grid_(grid) {}

  const SlotGrid& grid() const { return grid_; }
  std::pair<std::int64_t, std::int64_t> period() const { return {grid_.start, grid_.end()}; }

  void insert(MeterRecord record) {
    if (!(record.grid == grid_))
      throw DataError("record '" + record.pseudonym + "' does not share the dataset grid");
    record.validate();
    auto name = record.pseudonym;
    auto [it, inserted] = records_.emplace(name, std::move(record));
    if (!inserted) throw DataError("duplicate pseudonym '" + name + "'");
  }

  // Inserts without re-running value validation; for transforms whose
  // output is valid by construction.
  void insert_unchecked(MeterRecord record) {
    auto name = record.pseudonym;
    if (!records_.emplace(name, std::move(record)).second)
      throw DataError("duplicate pseudonym '" + name + "'");
  }

  bool contains(const std::string& pseudonym) const { return records_.count(pseudonym) != 0; }

  const MeterRecord& at(const std::string& pseudonym) const {
    auto it = records_.find(pseudonym);
    if (it == records_.end()) throw DataError("unknown pseudonym '" + pseudonym + "'");
    return it->second;
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  std::vector<std::string> pseudonyms() const {
    std::vector<std::string> out;
    out.reserve(records_.size());
    for (const auto& [name, _] : records_) out.push_back(name);
    return out;
  }

  std::vector<const MeterRecord*> record_ptrs() const {
    std::vector<const MeterRecord*> out;
    out.reserve(records_.size());
    for (const auto& [_, rec] : records_) out.push_back(&rec);
    return out;
  }

  // Records restricted to `names`, in the order given.
  Dataset subset(std::span<const std::string> names) const {
    Dataset out(grid_);
    for (const auto& n : names) out.insert_unchecked(at(n));
    return out;
  }

  bool operator==(const Dataset&) const = default;

 private:
  SlotGrid grid_;
  std::map<std::string, MeterRecord> records_;
};

}  // namespace meterlink
