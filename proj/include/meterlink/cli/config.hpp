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


// Run configuration for the command-line driver: flat "key = value" text
// with dotted namespaces, '#' comments, no duplicates. Every subcommand
// declares the keys it accepts and rejects the rest. Also holds the SHA-1
// helpers used to attribute result rows to configs and checkpoints.

#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "meterlink/core/error.hpp"
#include "meterlink/core/io.hpp"

namespace meterlink::cli {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

class RunConfig {
 public:
  static RunConfig parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(no) + " lacks '='");
      const std::string key = trim(std::string_view(line).substr(0, eq));
      const std::string value = trim(std::string_view(line).substr(eq + 1));
      if (key.empty() || key.find_first_of(" \t") != std::string::npos)
        throw ConfigError("config line " + std::to_string(no) + " has a malformed key");
      if (!cfg.values_.emplace(key, value).second) throw ConfigError("config key '" + key + "' given twice");
    }
    return cfg;
  }

  static RunConfig load(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
    return parse(io::read_file(path));
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void check_keys(const std::set<std::string>& allowed) const {
    for (const auto& [k, _] : values_)
      if (!allowed.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  std::string require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config key '" + key + "' is required");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, values_.at(key)) : fallback;
  }
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    return has(key) ? to_int(key, values_.at(key)) : fallback;
  }
  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    const auto v = to_int(key, values_.at(key));
    if (v < 0) throw ConfigError("config key '" + key + "' must be nonnegative");
    return static_cast<std::size_t>(v);
  }
  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = values_.at(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "' must be true or false");
  }
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::string> out;
    for (const auto& item : io::split(values_.at(key), ',')) {
      const auto t = trim(item);
      if (t.empty()) throw ConfigError("config key '" + key + "' has an empty list item");
      out.push_back(t);
    }
    return out;
  }
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& s : get_list(key, {})) out.push_back(to_double(key, s));
    return out;
  }
  std::vector<std::size_t> get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::size_t> out;
    for (const auto& s : get_list(key, {})) {
      const auto v = to_int(key, s);
      if (v < 0) throw ConfigError("config key '" + key + "' must hold nonnegative integers");
      out.push_back(static_cast<std::size_t>(v));
    }
    return out;
  }

  // Sorted "key=value" lines; the input of the config hash.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  static double to_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    if (!io::parse_double(s, v)) throw ConfigError("config key '" + key + "' expects a number, got '" + s + "'");
    return v;
  }
  static std::int64_t to_int(const std::string& key, const std::string& s) {
    std::int64_t v = 0;
    if (!io::parse_int(s, v)) throw ConfigError("config key '" + key + "' expects an integer, got '" + s + "'");
    return v;
  }

  std::map<std::string, std::string> values_;
};

inline std::string sha1_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1) throw Error("SHA-1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[md[i] >> 4];
    out += kHex[md[i] & 15];
  }
  return out;
}

// Git blob id: SHA-1 of "blob <size>\0" followed by the content.
inline std::string content_id(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob.append(content);
  return sha1_hex(blob);
}

inline std::string config_hash(const RunConfig& cfg) { return sha1_hex(cfg.canonical()); }

}  // namespace meterlink::cli
