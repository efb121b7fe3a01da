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

// Attack experiments: re-pseudonymized reference and target periods,
// scenario runs aggregated over model seeds, multi-week averaged
// embeddings, gap-statistic confidence scores with ROC/AUC, population
// scaling and the linkage extrapolation.

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "meterlink/attack/match.hpp"
#include "meterlink/core/io.hpp"
#include "meterlink/core/pseudonym.hpp"
#include "meterlink/core/transforms.hpp"
#include "meterlink/embed/embedder.hpp"

namespace meterlink::attack {

enum class Scenario { I, II };

inline std::string to_string(Scenario s) { return s == Scenario::I ? "I" : "II"; }

struct ExperimentConfig {
  Scenario scenario = Scenario::I;
  std::size_t M = 8;             // auxiliary weeks; the reference period starts at week index M
  std::size_t gap = 1;           // target period starts gap * period_weeks weeks after the reference
  std::vector<std::size_t> population_sizes;
  std::size_t period_weeks = 1;  // weeks per pseudonym
  std::size_t utilities = 1;
  std::optional<RoundingSpec> rounding;
  std::size_t runs = 10;
  std::uint64_t seed = 1;

  void validate() const {
    if (gap < 1) throw ConfigError("gap must be at least 1");
    if (period_weeks != 1 && period_weeks != 2 && period_weeks != 4) throw ConfigError("period_weeks must be 1, 2 or 4");
    if (utilities != 1 && utilities != 2) throw ConfigError("utilities must be 1 or 2");
    if (runs < 1) throw ConfigError("runs must be positive");
    if (rounding && rounding->n < 1) throw ConfigError("rounding needs at least one significant digit");
  }

  std::size_t reference_week() const { return M; }
  std::size_t target_week() const { return M + gap * period_weeks; }
  std::size_t weeks_needed() const { return target_week() + period_weeks; }
};

// Maps one raw (kWh) weekly dataset to one vector per record, in pseudonym
// order. Encoders own whatever scaling they need.
using WeekEncoder = std::function<std::vector<std::vector<double>>(const Dataset& week)>;

inline WeekEncoder embedder_encoder(embed::Embedder model, ScalingStats stats) {
  return [model = std::move(model), stats = std::move(stats)](const Dataset& week) {
    const Dataset scaled = apply_unit_scaling(week, stats);
    return model.embed(record_pointers(scaled));
  };
}

// Raw standardized features: the identity embedding.
inline WeekEncoder identity_encoder(ScalingStats stats) {
  return [stats = std::move(stats)](const Dataset& week) { return apply_standardization(week, stats); };
}

inline std::vector<double> mean_vector(const std::vector<std::vector<double>>& vs) {
  if (vs.empty()) throw PreconditionError("mean of no vectors");
  std::vector<double> m(vs.front().size(), 0.0);
  for (const auto& v : vs) {
    if (v.size() != m.size()) throw ShapeError("vectors differ in dimension");
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += v[j];
  }
  for (double& x : m) x /= static_cast<double>(vs.size());
  return m;
}

// Mean of the per-week embeddings, without re-normalization.
inline std::vector<double> multi_week_embedding(const embed::Embedder& model,
                                                const std::vector<const MeterRecord*>& weeks) {
  if (weeks.empty()) throw PreconditionError("multi-week embedding of no weeks");
  return mean_vector(model.embed(weeks));
}

// One re-pseudonymized period: `weeks` weekly datasets sharing pseudonyms.
struct Period {
  std::vector<Dataset> weeks;
  std::vector<std::string> pseudonyms() const { return weeks.front().pseudonyms(); }
};

// Reference and target periods of `users` cut from `raw` (kWh, all
// weeks), optionally rounded, and re-pseudonymized per period.
struct PeriodPair {
  Period reference;
  Period target;
  PseudonymScheme scheme;

  // Reference pseudonym of the same user as a target pseudonym.
  std::string truth(const std::string& target_pseudonym) const {
    return scheme.pseudonym_of(0, scheme.user_of(1, target_pseudonym));
  }
};

inline Dataset select_users(const Dataset& ds, const std::vector<std::string>& users) {
  Dataset out(ds.grid());
  for (const auto& u : users) out.insert_unchecked(ds.at(u));
  return out;
}

inline PeriodPair make_period_pair(const Dataset& raw, const std::vector<std::string>& users, std::size_t first_week,
                                   std::size_t target_week, std::size_t period_weeks,
                                   const std::optional<RoundingSpec>& rounding, std::uint64_t seed) {
  const std::size_t available = raw.grid().slots / kHoursPerWeek;
  if (target_week + period_weeks > available || first_week + period_weeks > available)
    throw DataError("experiment needs " + std::to_string(std::max(first_week, target_week) + period_weeks) +
                    " weeks, data has " + std::to_string(available));
  const Dataset pop = select_users(raw, users);
  auto period = [&](std::size_t first) {
    Dataset d = slice_weeks(pop, first, period_weeks);
    if (rounding) d = round_significant(d, *rounding);
    return d;
  };
  auto [renamed, scheme] = repseudonymize({period(first_week), period(target_week)}, seed);
  PeriodPair pair;
  pair.scheme = std::move(scheme);
  pair.reference.weeks = split_weeks(renamed[0]);
  pair.target.weeks = split_weeks(renamed[1]);
  return pair;
}

// Per-pseudonym averaged encodings of a period, in pseudonym order.
inline std::vector<std::vector<double>> encode_period(const WeekEncoder& encoder, const Period& period) {
  std::vector<std::vector<std::vector<double>>> per_week;
  for (const auto& w : period.weeks) per_week.push_back(encoder(w));
  const std::size_t n = per_week.front().size();
  std::vector<std::vector<double>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::vector<double>> vs;
    for (const auto& w : per_week) vs.push_back(w[i]);
    out[i] = mean_vector(vs);
  }
  return out;
}

inline std::vector<MatchResult> attack_period_pair(const WeekEncoder& encoder, const PeriodPair& pair) {
  const ReferenceIndex index = make_index(pair.reference.pseudonyms(), encode_period(encoder, pair.reference));
  return match_all(index, pair.target.pseudonyms(), encode_period(encoder, pair.target),
                   [&](const std::string& t) { return pair.truth(t); });
}

struct ScenarioData {
  Dataset raw;                          // kWh, every user and week
  std::vector<std::string> aux_users;   // users seen in training
  std::vector<std::string> reference_users;
};

struct ScenarioResult {
  std::vector<RankCurve> curves;  // one per run
  std::vector<double> mean;       // p_R mean over runs
  std::vector<double> stddev;     // sample standard deviation (0 for one run)
  std::vector<std::vector<MatchResult>> results;
};

inline void aggregate_curves(ScenarioResult& r) {
  const std::size_t N = r.curves.front().size(), n = r.curves.size();
  r.mean.assign(N, 0.0);
  r.stddev.assign(N, 0.0);
  for (const auto& c : r.curves)
    for (std::size_t j = 0; j < N; ++j) r.mean[j] += c.values[j];
  for (double& m : r.mean) m /= static_cast<double>(n);
  if (n > 1) {
    for (const auto& c : r.curves)
      for (std::size_t j = 0; j < N; ++j) r.stddev[j] += (c.values[j] - r.mean[j]) * (c.values[j] - r.mean[j]);
    for (double& s : r.stddev) s = std::sqrt(s / static_cast<double>(n - 1));
  }
}

// One encoder per run (typically the same architecture trained with
// different seeds).
inline ScenarioResult run_scenario(const ExperimentConfig& cfg, const std::vector<WeekEncoder>& runs,
                                   const ScenarioData& data) {
  cfg.validate();
  if (runs.empty()) throw PreconditionError("run_scenario needs at least one encoder");
  if (data.reference_users.empty()) throw DataError("empty reference user set");
  const std::set<std::string> aux(data.aux_users.begin(), data.aux_users.end());
  if (cfg.scenario == Scenario::II) {
    for (const auto& u : data.reference_users)
      if (aux.count(u)) throw PreconditionError("scenario II reference user '" + u + "' was seen in training");
  }
  ScenarioResult out;
  for (std::size_t run = 0; run < runs.size(); ++run) {
    const PeriodPair pair = make_period_pair(data.raw, data.reference_users, cfg.reference_week(), cfg.target_week(),
                                             cfg.period_weeks, cfg.rounding, cfg.seed + run);
    auto results = attack_period_pair(runs[run], pair);
    out.curves.push_back(RankCurve::from_results(results));
    out.results.push_back(std::move(results));
  }
  aggregate_curves(out);
  return out;
}

// ---------------------------------------------------------------------------
// Confidence scoring

inline double gap_statistic(const MatchResult& r) {
  if (r.ranked.size() < 2) throw PreconditionError("gap statistic needs at least two candidates");
  return r.ranked[1].distance - r.ranked[0].distance;
}

struct ScoredMatch {
  double score = 0.0;
  bool correct = false;
};

inline std::vector<ScoredMatch> gap_scores(const std::vector<MatchResult>& results) {
  std::vector<ScoredMatch> out;
  for (const auto& r : results) out.push_back({gap_statistic(r), r.rank_of_truth() == 1});
  return out;
}

inline constexpr double kRocStep = 0.001;
inline constexpr std::size_t kRocPoints = 1001;

struct RocCurve {
  std::vector<double> fpr;  // 0, 0.001, ..., 1
  std::vector<double> tpr;
  // Trapezoidal rule over the exact ROC vertices. The grid cannot carry
  // vertical jumps, so integrating it would add up to half a grid step per
  // jump; the vertex form equals the Mann-Whitney statistic exactly.
  double auc = 0.0;
};

// ROC vertices of the threshold sweep "predict correct when score >= t",
// with tied scores forming one diagonal step.
inline std::vector<std::pair<double, double>> roc_vertices(std::vector<ScoredMatch> s) {
  std::size_t P = 0, Nn = 0;
  for (const auto& x : s) (x.correct ? P : Nn)++;
  if (P == 0 || Nn == 0) throw DataError("ROC needs both correct and incorrect matches");
  std::sort(s.begin(), s.end(), [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });
  std::vector<std::pair<double, double>> v{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i;
    while (j < s.size() && s[j].score == s[i].score) {
      (s[j].correct ? tp : fp)++;
      ++j;
    }
    v.emplace_back(static_cast<double>(fp) / static_cast<double>(Nn), static_cast<double>(tp) / static_cast<double>(P));
    i = j;
  }
  return v;
}

inline RocCurve roc_curve(const std::vector<ScoredMatch>& scores) {
  const auto v = roc_vertices(scores);
  RocCurve c;
  c.fpr.resize(kRocPoints);
  c.tpr.resize(kRocPoints);
  std::size_t k = 0;
  for (std::size_t i = 0; i < kRocPoints; ++i) {
    const double f = i == kRocPoints - 1 ? 1.0 : static_cast<double>(i) * kRocStep;
    c.fpr[i] = f;
    // Highest TPR reached at this FPR: last vertex with fpr <= f, then
    // linear interpolation along the next segment.
    while (k + 1 < v.size() && v[k + 1].first <= f) ++k;
    if (k + 1 < v.size() && v[k + 1].first > v[k].first) {
      const double t = (f - v[k].first) / (v[k + 1].first - v[k].first);
      c.tpr[i] = v[k].second + t * (v[k + 1].second - v[k].second);
    } else {
      c.tpr[i] = v[k].second;
    }
  }
  for (std::size_t i = 1; i < v.size(); ++i)
    c.auc += 0.5 * (v[i].first - v[i - 1].first) * (v[i].second + v[i - 1].second);
  return c;
}

// ---------------------------------------------------------------------------
// Population scaling

struct ScalingRow {
  std::size_t population = 0;
  std::size_t draws = 0;
  std::size_t targets = 0;
  double rank1 = 0.0;
};

// For each size n, draws seeded subsamples of n users from the pool; each
// subsample is matched on its own (reference index and targets both
// restricted to it). Draws repeat until at least `min_targets` targets are
// evaluated; a subsample equal to the whole pool is evaluated once.
inline std::vector<ScalingRow> population_scaling(const std::vector<std::size_t>& sizes, const ReferenceIndex& pool,
                                                  const std::vector<std::vector<double>>& target_embeddings,
                                                  std::uint64_t seed, std::size_t min_targets = 1000) {
  if (target_embeddings.size() != pool.size()) throw ShapeError("one target embedding per pool user expected");
  std::vector<ScalingRow> rows;
  std::mt19937_64 rng(seed);
  for (std::size_t n : sizes) {
    if (n < 1 || n > pool.size()) throw PreconditionError("population size " + std::to_string(n) + " outside the pool");
    const std::size_t draws = n == pool.size() ? 1 : (min_targets + n - 1) / n;
    std::size_t hits = 0;
    std::vector<std::size_t> order(pool.size());
    for (std::size_t d = 0; d < draws; ++d) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<std::size_t> members(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
      std::sort(members.begin(), members.end());
      ReferenceIndex sub;
      for (std::size_t m : members) sub.entries.push_back(pool.entries[m]);
      for (std::size_t m : members) {
        const MatchResult r = match_target(sub, target_embeddings[m], {}, pool.entries[m].pseudonym);
        if (r.rank_of_truth() == 1) ++hits;
      }
    }
    rows.push_back({n, draws, draws * n, static_cast<double>(hits) / static_cast<double>(draws * n)});
  }
  return rows;
}

// Chance of linking k consecutive week pairs, assuming independence.
inline double linkage_extrapolation(double p_week, std::size_t k) {
  require(p_week >= 0.0 && p_week <= 1.0, "linkage probability must lie in [0, 1]");
  require(k >= 1, "linkage needs at least one week pair");
  return std::pow(p_week, static_cast<double>(k));
}

// ---------------------------------------------------------------------------
// Result files

inline std::string results_csv(const std::string& method, Scenario scenario, std::size_t population,
                               const ScenarioResult& r, std::vector<std::size_t> ranks = {}) {
  std::ostringstream out;
  out << "method,run,scenario,population,rank,probability\n";
  const std::size_t N = r.mean.size();
  if (ranks.empty())
    for (std::size_t R = 1; R <= N; ++R) ranks.push_back(R);
  for (std::size_t run = 0; run < r.curves.size(); ++run)
    for (std::size_t R : ranks)
      out << method << ',' << run << ',' << to_string(scenario) << ',' << population << ',' << R << ','
          << io::format_double(r.curves[run].at(R)) << '\n';
  return out.str();
}

inline std::string roc_csv(const std::vector<RocCurve>& runs) {
  if (runs.empty()) throw PreconditionError("no ROC curves");
  std::ostringstream out;
  out << "fpr,tpr_mean,tpr_std\n";
  for (std::size_t i = 0; i < kRocPoints; ++i) {
    double m = 0.0, s = 0.0;
    for (const auto& c : runs) m += c.tpr[i];
    m /= static_cast<double>(runs.size());
    if (runs.size() > 1) {
      for (const auto& c : runs) s += (c.tpr[i] - m) * (c.tpr[i] - m);
      s = std::sqrt(s / static_cast<double>(runs.size() - 1));
    }
    out << io::format_double(runs.front().fpr[i]) << ',' << io::format_double(m) << ',' << io::format_double(s) << '\n';
  }
  return out.str();
}

}  // namespace meterlink::attack
