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

// Exact nearest-neighbor matching of target embeddings against a reference
// index, and rank-R identification curves. Candidates are ordered by
// Euclidean distance with exact ties broken by pseudonym.

#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "meterlink/core/error.hpp"
#include "meterlink/core/record.hpp"
#include "meterlink/embed/embedder.hpp"

namespace meterlink::attack {

struct IndexEntry {
  std::string pseudonym;
  std::vector<double> embedding;
};

struct ReferenceIndex {
  std::vector<IndexEntry> entries;
  std::size_t week = 0;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::size_t dim() const { return entries.empty() ? 0 : entries.front().embedding.size(); }
};

inline ReferenceIndex make_index(std::vector<std::string> pseudonyms, std::vector<std::vector<double>> embeddings,
                                 std::size_t week = 0) {
  if (pseudonyms.size() != embeddings.size()) throw ShapeError("index: pseudonym and embedding counts differ");
  if (pseudonyms.empty()) throw DataError("cannot index an empty reference set");
  ReferenceIndex idx;
  idx.week = week;
  std::set<std::string> seen;
  const std::size_t dim = embeddings.front().size();
  for (std::size_t i = 0; i < pseudonyms.size(); ++i) {
    if (!seen.insert(pseudonyms[i]).second) throw DataError("duplicate reference pseudonym '" + pseudonyms[i] + "'");
    if (embeddings[i].size() != dim) throw ShapeError("index: embeddings differ in dimension");
    for (double v : embeddings[i])
      if (!std::isfinite(v)) throw NumericalError("non-finite reference embedding for '" + pseudonyms[i] + "'");
    idx.entries.push_back({std::move(pseudonyms[i]), std::move(embeddings[i])});
  }
  return idx;
}

inline std::vector<const MeterRecord*> record_pointers(const Dataset& ds) {
  std::vector<const MeterRecord*> out;
  out.reserve(ds.size());
  for (const auto& [_, r] : ds) out.push_back(&r);
  return out;
}

// Embeds every record of one week (eval mode) in pseudonym order.
inline ReferenceIndex build_index(const embed::Embedder& model, const Dataset& week, std::size_t week_id = 0) {
  if (week.empty()) throw DataError("cannot index an empty week");
  return make_index(week.pseudonyms(), model.embed(record_pointers(week)), week_id);
}

struct Candidate {
  std::string pseudonym;
  double distance = 0.0;
};

struct MatchResult {
  std::string target;
  std::vector<Candidate> ranked;
  std::string truth;

  // 1-based rank of the true pseudonym, 0 when it is not a candidate.
  std::size_t rank_of_truth() const {
    for (std::size_t i = 0; i < ranked.size(); ++i)
      if (ranked[i].pseudonym == truth) return i + 1;
    return 0;
  }
};

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("distance between vectors of different dimension");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline bool candidate_before(const Candidate& x, const Candidate& y) {
  if (x.distance != y.distance) return x.distance < y.distance;
  return x.pseudonym < y.pseudonym;
}

// Ranks candidates given precomputed distances (shared by every matcher).
inline MatchResult rank_candidates(std::vector<Candidate> candidates, std::string target = {}, std::string truth = {}) {
  if (candidates.empty()) throw DataError("no candidates to rank");
  std::sort(candidates.begin(), candidates.end(), candidate_before);
  return MatchResult{std::move(target), std::move(candidates), std::move(truth)};
}

inline MatchResult match_target(const ReferenceIndex& index, std::span<const double> target_embedding,
                                std::string target = {}, std::string truth = {}) {
  if (index.empty()) throw DataError("cannot match against an empty index");
  std::vector<Candidate> cands;
  cands.reserve(index.size());
  for (const auto& e : index.entries) cands.push_back({e.pseudonym, euclidean(e.embedding, target_embedding)});
  return rank_candidates(std::move(cands), std::move(target), std::move(truth));
}

// Fraction of results whose truth is among the first R candidates.
inline double identification_within_rank(const std::vector<MatchResult>& results, std::size_t R) {
  if (results.empty()) throw DataError("no match results");
  const std::size_t N = results.front().ranked.size();
  if (R < 1 || R > N) throw PreconditionError("rank must lie in [1, N]");
  std::size_t hits = 0;
  for (const auto& r : results) {
    if (r.truth.empty()) throw PreconditionError("match result without ground truth");
    const std::size_t k = r.rank_of_truth();
    if (k >= 1 && k <= R) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

// p_R for R = 1..N.
struct RankCurve {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double at(std::size_t R) const {
    if (R < 1 || R > values.size()) throw PreconditionError("rank outside the curve");
    return values[R - 1];
  }
  double rank1() const { return at(1); }

  static RankCurve from_results(const std::vector<MatchResult>& results) {
    if (results.empty()) throw DataError("no match results");
    const std::size_t N = results.front().ranked.size();
    std::vector<std::size_t> hist(N + 1, 0);
    for (const auto& r : results) {
      if (r.ranked.size() != N) throw ShapeError("results disagree on candidate count");
      if (r.truth.empty()) throw PreconditionError("match result without ground truth");
      const std::size_t k = r.rank_of_truth();
      if (k > 0) ++hist[k];
    }
    RankCurve c;
    c.values.resize(N);
    std::size_t cum = 0;
    for (std::size_t R = 1; R <= N; ++R) {
      cum += hist[R];
      c.values[R - 1] = static_cast<double>(cum) / static_cast<double>(results.size());
    }
    return c;
  }
};

// Matches every target (pseudonym, embedding) whose truth is given by
// `truth_of`, which maps a target pseudonym to its reference pseudonym.
template <class TruthFn>
std::vector<MatchResult> match_all(const ReferenceIndex& index, const std::vector<std::string>& targets,
                                   const std::vector<std::vector<double>>& embeddings, TruthFn truth_of) {
  if (targets.size() != embeddings.size()) throw ShapeError("target and embedding counts differ");
  std::vector<MatchResult> out;
  out.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i)
    out.push_back(match_target(index, embeddings[i], targets[i], truth_of(targets[i])));
  return out;
}

}  // namespace meterlink::attack
