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

// Jawurek et al. style baseline: per (hour of day, consumption range) day
// counts summed over a week, classified by one-vs-rest linear support
// vector machines trained with Pegasos (regularized hinge loss, stochastic
// subgradient steps of size 1 / (lambda t)).

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "meterlink/attack/match.hpp"
#include "meterlink/baselines/distance.hpp"
#include "meterlink/core/transforms.hpp"

namespace meterlink::baselines {

struct JawurekConfig {
  std::size_t bins = 100;
  double lambda = 1e-3;  // regularization strength
  std::size_t epochs = 10;
  std::uint64_t seed = 1;

  void validate() const {
    if (bins < 1) throw ConfigError("jawurek bins must be positive");
    if (!(lambda > 0.0)) throw ConfigError("jawurek lambda must be positive");
    if (epochs < 1) throw ConfigError("jawurek epochs must be positive");
  }
};

// Interior range edges per utility, strictly increasing; bin(v) = number of
// edges <= v.
struct RangeEdges {
  std::size_t bins = 0;
  std::vector<std::vector<double>> edges;  // per utility

  bool fitted() const { return bins > 0; }
  std::size_t utilities() const { return edges.size(); }
  std::size_t dim() const { return kHoursPerDay * bins * edges.size(); }
  std::size_t bin(std::size_t f, double v) const {
    const auto& e = edges[f];
    return static_cast<std::size_t>(std::upper_bound(e.begin(), e.end(), v) - e.begin());
  }
};

// Equal-mass ranges: the k/b empirical quantiles (k = 1..b-1) of all
// values per utility, duplicates dropped.
inline RangeEdges fit_range_edges(const Dataset& train, std::size_t bins) {
  if (train.empty()) throw DataError("cannot fit consumption ranges on an empty dataset");
  if (bins < 1) throw ConfigError("bins must be positive");
  const std::size_t F = train.grid().utilities;
  RangeEdges r;
  r.bins = bins;
  r.edges.resize(F);
  for (std::size_t f = 0; f < F; ++f) {
    std::vector<double> v;
    for (const auto& [_, rec] : train)
      for (std::size_t t = 0; t < rec.slots(); ++t) v.push_back(rec.at(t, f));
    std::sort(v.begin(), v.end());
    for (std::size_t k = 1; k < bins; ++k) {
      const auto idx = static_cast<std::size_t>(
          std::ceil(static_cast<double>(k) / static_cast<double>(bins) * static_cast<double>(v.size())));
      const double e = v[std::max<std::size_t>(idx, 1) - 1];
      if (r.edges[f].empty() || e > r.edges[f].back()) r.edges[f].push_back(e);
    }
  }
  return r;
}

// Sparse nonnegative vector, indices strictly increasing.
struct SparseVector {
  std::vector<std::size_t> index;
  std::vector<double> value;

  double dot(const std::vector<double>& w) const {
    double s = 0.0;
    for (std::size_t i = 0; i < index.size(); ++i) s += w[index[i]] * value[i];
    return s;
  }
  double total() const {
    double s = 0.0;
    for (double v : value) s += v;
    return s;
  }
};

// Day counts per (utility, hour, range): position (f * 24 + h) * bins + bin.
// Any whole number of days is accepted; entries sum to 24 * days * F.
inline SparseVector jawurek_features(const MeterRecord& rec, const RangeEdges& edges) {
  if (!edges.fitted()) throw PreconditionError("consumption ranges are not fitted");
  if (rec.utilities() != edges.utilities()) throw ShapeError("record and ranges differ in utility count");
  if (rec.grid.delta_t != kHourSeconds || rec.slots() % kHoursPerDay != 0)
    throw DataError("record '" + rec.pseudonym + "' is not whole hourly days");
  std::map<std::size_t, double> counts;
  for (std::size_t t = 0; t < rec.slots(); ++t)
    for (std::size_t f = 0; f < rec.utilities(); ++f)
      counts[(f * kHoursPerDay + t % kHoursPerDay) * edges.bins + edges.bin(f, rec.at(t, f))] += 1.0;
  SparseVector x;
  for (const auto& [i, c] : counts) {
    x.index.push_back(i);
    x.value.push_back(c);
  }
  return x;
}

struct LinearClassifier {
  std::string label;
  std::vector<double> w;  // weights; the last entry is the bias
  double decision(const SparseVector& x) const { return x.dot(w) + w.back(); }
};

struct JawurekModel {
  RangeEdges edges;
  std::vector<LinearClassifier> classifiers;  // sorted by label
  std::vector<double> objective;              // mean primal objective after each epoch
  std::vector<std::string> warnings;
};

namespace detail {

// Counts are divided by the day count so every entry lies in [0, 1].
inline SparseVector normalized(SparseVector x, double days) {
  for (double& v : x.value) v /= days;
  return x;
}

// Pegasos for one binary problem on sparse inputs with an appended
// constant feature; w is kept as scale * v so the shrink step is O(1).
inline std::vector<double> pegasos(const std::vector<SparseVector>& X, const std::vector<int>& y, std::size_t dim,
                                   const JawurekConfig& cfg, std::mt19937_64& rng,
                                   std::vector<double>* objective_per_epoch) {
  std::vector<double> v(dim + 1, 0.0);
  double scale = 1.0;
  std::vector<std::size_t> order(X.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (cfg.lambda * static_cast<double>(t));
      const double margin = y[i] * scale * (X[i].dot(v) + v[dim]);
      const double shrink = 1.0 - eta * cfg.lambda;
      if (shrink <= 0.0) {
        std::fill(v.begin(), v.end(), 0.0);
        scale = 1.0;
      } else {
        scale *= shrink;
      }
      if (margin < 1.0) {
        const double step = eta * y[i] / scale;
        for (std::size_t k = 0; k < X[i].index.size(); ++k) v[X[i].index[k]] += step * X[i].value[k];
        v[dim] += step;
      }
      if (scale < 1e-100) {
        for (double& x : v) x *= scale;
        scale = 1.0;
      }
    }
    if (objective_per_epoch) {
      double norm2 = 0.0, hinge = 0.0;
      for (double x : v) norm2 += x * x * scale * scale;
      for (std::size_t i = 0; i < X.size(); ++i)
        hinge += std::max(0.0, 1.0 - y[i] * scale * (X[i].dot(v) + v[dim]));
      (*objective_per_epoch)[epoch] += 0.5 * cfg.lambda * norm2 + hinge / static_cast<double>(X.size());
    }
  }
  for (double& x : v) x *= scale;
  return v;
}

}  // namespace detail

// Trains one classifier per distinct label on pre-computed feature vectors
// (entries already in [0, 1]).
inline JawurekModel jawurek_train_features(const std::vector<SparseVector>& X, const std::vector<std::string>& labels,
                                           std::size_t dim, const JawurekConfig& cfg) {
  cfg.validate();
  if (X.size() != labels.size()) throw ShapeError("one label per sample expected");
  std::map<std::string, std::size_t> count;
  for (const auto& l : labels) ++count[l];
  if (count.size() < 2) throw DataError("one-vs-rest training needs at least two users");
  JawurekModel model;
  for (const auto& [l, c] : count)
    if (c < 2) model.warnings.push_back("user '" + l + "' has a single training sample");
  model.objective.assign(cfg.epochs, 0.0);
  std::size_t k = 0;
  for (const auto& [l, _] : count) {
    std::vector<int> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == l ? 1 : -1;
    std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(k++)};
    std::mt19937_64 rng(seq);
    model.classifiers.push_back({l, detail::pegasos(X, y, dim, cfg, rng, &model.objective)});
  }
  for (double& o : model.objective) o /= static_cast<double>(count.size());
  return model;
}

// Weekly samples: every user's weeks [0, weeks) of `train`, labeled by
// pseudonym. Ranges are fitted on the same data.
inline JawurekModel jawurek_train(const Dataset& train, std::size_t weeks, const JawurekConfig& cfg = {}) {
  const std::size_t available = train.grid().slots / kHoursPerWeek;
  if (weeks < 1 || weeks > available) throw DataError("jawurek training weeks exceed the data");
  const Dataset data = slice_weeks(train, 0, weeks);
  const RangeEdges edges = fit_range_edges(data, cfg.bins);
  std::vector<SparseVector> X;
  std::vector<std::string> labels;
  for (std::size_t w = 0; w < weeks; ++w)
    for (const auto& [p, rec] : slice_weeks(data, w, 1)) {
      X.push_back(detail::normalized(jawurek_features(rec, edges), kDaysPerWeek));
      labels.push_back(p);
    }
  JawurekModel model = jawurek_train_features(X, labels, edges.dim(), cfg);
  model.edges = edges;
  return model;
}

// Candidates are the trained labels ranked by descending decision value;
// the stored distance is the negated decision value.
inline MatchResult rank_by_decision(const JawurekModel& model, const SparseVector& x, std::string target,
                                    std::string truth) {
  std::vector<Candidate> cands;
  cands.reserve(model.classifiers.size());
  for (const auto& c : model.classifiers) cands.push_back({c.label, -c.decision(x)});
  return attack::rank_candidates(std::move(cands), std::move(target), std::move(truth));
}

inline std::vector<MatchResult> jawurek_match(const JawurekModel& model, const Dataset& target,
                                              const TruthFn& truth = {}) {
  std::vector<MatchResult> out;
  for (const auto& [p, rec] : target) {
    detail::check_weekly(rec);
    out.push_back(rank_by_decision(model, detail::normalized(jawurek_features(rec, model.edges), kDaysPerWeek), p,
                                   truth_of(truth, p)));
  }
  return out;
}

}  // namespace meterlink::baselines
