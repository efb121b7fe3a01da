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

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "meterlink/core/error.hpp"
#include "meterlink/core/record.hpp"

namespace meterlink {

struct LinkageRow {
  std::string user_id;
  std::size_t period = 0;
  std::string pseudonym;

  bool operator==(const LinkageRow&) const = default;
};

// Per-period pseudonym assignments plus the hidden ground-truth linkage.
// Only evaluation code should look at user ids.
class PseudonymScheme {
 public:
  PseudonymScheme() = default;
  explicit PseudonymScheme(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::size_t periods() const { return forward_.size(); }

  void assign(std::size_t period, const std::string& user, const std::string& pseudonym) {
    if (period >= forward_.size()) {
      forward_.resize(period + 1);
      backward_.resize(period + 1);
    }
    if (!forward_[period].emplace(user, pseudonym).second)
      throw DataError("user '" + user + "' assigned twice in period " + std::to_string(period));
    if (!backward_[period].emplace(pseudonym, user).second)
      throw DataError("pseudonym '" + pseudonym + "' not injective in period " +
                      std::to_string(period));
  }

  const std::map<std::string, std::string>& assignments(std::size_t period) const {
    check_period(period);
    return forward_[period];
  }

  const std::string& pseudonym_of(std::size_t period, const std::string& user) const {
    check_period(period);
    auto it = forward_[period].find(user);
    if (it == forward_[period].end())
      throw DataError("no pseudonym for user '" + user + "' in period " + std::to_string(period));
    return it->second;
  }

  const std::string& user_of(std::size_t period, const std::string& pseudonym) const {
    check_period(period);
    auto it = backward_[period].find(pseudonym);
    if (it == backward_[period].end())
      throw DataError("unknown pseudonym '" + pseudonym + "' in period " + std::to_string(period));
    return it->second;
  }

  bool has_pseudonym(std::size_t period, const std::string& pseudonym) const {
    return period < backward_.size() && backward_[period].count(pseudonym) != 0;
  }

  // Rows ordered by (period, user id).
  std::vector<LinkageRow> linkage() const {
    std::vector<LinkageRow> rows;
    for (std::size_t p = 0; p < forward_.size(); ++p)
      for (const auto& [user, pseudo] : forward_[p]) rows.push_back({user, p, pseudo});
    return rows;
  }

  static PseudonymScheme from_linkage(const std::vector<LinkageRow>& rows, std::uint64_t seed = 0) {
    PseudonymScheme s(seed);
    for (const auto& r : rows) s.assign(r.period, r.user_id, r.pseudonym);
    return s;
  }

 private:
  void check_period(std::size_t period) const {
    if (period >= forward_.size())
      throw DataError("period " + std::to_string(period) + " outside pseudonym scheme");
  }

  std::uint64_t seed_ = 0;
  std::vector<std::map<std::string, std::string>> forward_;
  std::vector<std::map<std::string, std::string>> backward_;
};

namespace detail {

inline std::string random_token(std::mt19937_64& rng) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::uint64_t bits = rng();
  std::string token = "p";
  for (int i = 0; i < 16; ++i) {
    token.push_back(kHex[bits & 0xF]);
    bits >>= 4;
  }
  return token;
}

}  // namespace detail

// Assigns each period a fresh random pseudonym per user. Tokens are unique
// across all periods and never equal an original identifier, so
// h_i(p) != h_j(p) for i != j and h_i(p) != p. Record contents are copied
// verbatim.
inline std::pair<std::vector<Dataset>, PseudonymScheme> repseudonymize(
    const std::vector<Dataset>& periods, std::uint64_t scheme_seed) {
  if (!periods.empty()) {
    const auto users = periods.front().pseudonyms();
    for (const auto& ds : periods)
      if (ds.pseudonyms() != users) throw DataError("periods must cover the same user set");
  }
  std::mt19937_64 rng(scheme_seed);
  PseudonymScheme scheme(scheme_seed);
  std::set<std::string> issued;
  for (const auto& ds : periods)
    for (const auto& [user, _] : ds) issued.insert(user);

  std::vector<Dataset> out;
  out.reserve(periods.size());
  for (std::size_t p = 0; p < periods.size(); ++p) {
    Dataset renamed(periods[p].grid());
    for (const auto& [user, rec] : periods[p]) {
      std::string token;
      do {
        token = detail::random_token(rng);
      } while (!issued.insert(token).second);
      scheme.assign(p, user, token);
      MeterRecord copy = rec;
      copy.pseudonym = token;
      renamed.insert_unchecked(std::move(copy));
    }
    out.push_back(std::move(renamed));
  }
  return {std::move(out), std::move(scheme)};
}

}  // namespace meterlink
