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

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "meterlink/core/error.hpp"
#include "meterlink/core/pseudonym.hpp"
#include "meterlink/core/record.hpp"

namespace meterlink::io {

// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split(std::string_view line, char delim = ',') {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    auto next = line.find(delim, pos);
    out.emplace_back(line.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  for (auto& s : out) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    while (!s.empty() && s.front() == ' ') s.erase(s.begin());
  }
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline bool parse_int(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Readings files: pseudonym,timestamp_utc,elec_kwh[,gas_kwh]

struct CsvSchema {
  std::string pseudonym = "pseudonym";
  std::string timestamp = "timestamp_utc";
  std::vector<std::string> utilities = {"elec_kwh", "gas_kwh"};
  char delimiter = ',';
};

struct RawReading {
  std::int64_t timestamp = 0;
  std::vector<double> values;  // one per utility
};

// Parsed rows grouped by pseudonym; not yet placed on a slot grid.
// Duplicate (pseudonym, timestamp) rows are all retained.
struct RawDataset {
  std::size_t utilities = 1;
  std::map<std::string, std::vector<RawReading>> readings;
  std::size_t parsed_rows = 0;
  std::size_t rejected_rows = 0;
  std::int64_t min_timestamp = 0;
  std::int64_t max_timestamp = 0;
};

// Reads a delimited readings file. Rows with unparseable fields are counted
// in `rejected_rows`. When `period` is given, any parsed timestamp outside
// [period.first, period.second) is an error.
inline RawDataset ingest_readings(const std::filesystem::path& path, const CsvSchema& schema = {},
                                  std::optional<std::pair<std::int64_t, std::int64_t>> period = {}) {
  if (!std::filesystem::exists(path)) throw DataError("missing readings file '" + path.string() + "'");
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("readings file '" + path.string() + "' is empty");
  const auto header = split(line, schema.delimiter);
  auto column = [&](const std::string& name) -> std::ptrdiff_t {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<std::ptrdiff_t>(i);
    return -1;
  };
  const auto c_pseudo = column(schema.pseudonym);
  const auto c_time = column(schema.timestamp);
  if (c_pseudo < 0 || c_time < 0) throw DataError("readings header lacks pseudonym or timestamp column");
  std::vector<std::size_t> c_util;
  for (const auto& u : schema.utilities) {
    const auto c = column(u);
    if (c < 0) break;  // trailing utilities are optional
    c_util.push_back(static_cast<std::size_t>(c));
  }
  if (c_util.empty()) throw DataError("readings header lacks the electricity column");

  RawDataset raw;
  raw.utilities = c_util.size();
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto fields = split(line, schema.delimiter);
    RawReading r;
    bool ok = fields.size() == header.size() && !fields[static_cast<std::size_t>(c_pseudo)].empty() &&
              parse_int(fields[static_cast<std::size_t>(c_time)], r.timestamp);
    for (std::size_t k = 0; ok && k < c_util.size(); ++k) {
      double v = 0.0;
      ok = parse_double(fields[c_util[k]], v) && std::isfinite(v) && v >= 0.0;
      r.values.push_back(v);
    }
    if (!ok) {
      ++raw.rejected_rows;
      continue;
    }
    if (period && (r.timestamp < period->first || r.timestamp >= period->second))
      throw DataError("timestamp " + std::to_string(r.timestamp) + " outside declared period");
    raw.min_timestamp = first ? r.timestamp : std::min(raw.min_timestamp, r.timestamp);
    raw.max_timestamp = first ? r.timestamp : std::max(raw.max_timestamp, r.timestamp);
    first = false;
    raw.readings[fields[static_cast<std::size_t>(c_pseudo)]].push_back(std::move(r));
    ++raw.parsed_rows;
  }
  if (raw.parsed_rows == 0) throw DataError("no parseable rows in '" + path.string() + "'");
  return raw;
}

// Writes every record of every dataset, one row per (pseudonym, slot).
inline void write_readings(const std::filesystem::path& path, std::span<const Dataset> periods) {
  if (periods.empty()) throw DataError("nothing to write");
  const std::size_t F = periods.front().grid().utilities;
  auto out = open_output(path);
  out << "pseudonym,timestamp_utc,elec_kwh";
  if (F >= 2) out << ",gas_kwh";
  out << '\n';
  for (const auto& ds : periods) {
    if (ds.grid().utilities != F) throw DataError("periods disagree on utility count");
    const auto& g = ds.grid();
    for (const auto& [name, rec] : ds)
      for (std::size_t t = 0; t < g.slots; ++t) {
        out << name << ',' << g.start + static_cast<std::int64_t>(t) * g.delta_t;
        for (std::size_t f = 0; f < std::min<std::size_t>(F, 2); ++f) out << ',' << format_double(rec.at(t, f));
        out << '\n';
      }
  }
}

// ---------------------------------------------------------------------------
// Linkage / ground-truth tables: user_id,<period column>,pseudonym

inline void write_linkage(const std::filesystem::path& path, const std::vector<LinkageRow>& rows,
                          const std::string& period_column = "period_index") {
  auto out = open_output(path);
  out << "user_id," << period_column << ",pseudonym\n";
  for (const auto& r : rows) out << r.user_id << ',' << r.period << ',' << r.pseudonym << '\n';
}

inline std::vector<LinkageRow> read_linkage(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("linkage file '" + path.string() + "' is empty");
  const auto header = split(line);
  if (header.size() != 3 || header[0] != "user_id" || header[2] != "pseudonym")
    throw DataError("unexpected linkage header in '" + path.string() + "'");
  std::vector<LinkageRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    std::int64_t period = 0;
    if (f.size() != 3 || !parse_int(f[1], period) || period < 0)
      throw DataError("malformed linkage row '" + line + "'");
    rows.push_back({f[0], static_cast<std::size_t>(period), f[2]});
  }
  return rows;
}

// Reads a whole text file; used for content hashes and byte comparisons.
inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace meterlink::io
