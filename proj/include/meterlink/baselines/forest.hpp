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

// Faisal et al. style baseline: a random forest classifying single days
// (24F hourly values) by user. A target week is scored by averaging the
// class-probability vectors of its seven days.
//
// Trees use Gini impurity, a random subset of ceil(sqrt(features))
// features per split (more are drawn only when all sampled features are
// constant), bootstrap samples and unlimited depth; a node with fewer than
// max(2, ceil(min_split_fraction * n)) samples becomes a leaf.

#pragma once

#include <algorithm>
#include <cmath>
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

struct ForestConfig {
  std::size_t trees = 100;
  double min_split_fraction = 0.005;
  bool bootstrap = true;
  std::uint64_t seed = 1;

  void validate() const {
    if (trees < 1) throw ConfigError("forest needs at least one tree");
    if (!(min_split_fraction > 0.0 && min_split_fraction <= 0.5))
      throw ConfigError("min_split_fraction must lie in (0, 0.5]");
  }
};

struct TreeNode {
  int feature = -1;  // -1: leaf
  double threshold = 0.0;
  std::size_t left = 0, right = 0;
  std::vector<std::pair<std::size_t, double>> distribution;  // leaf class probabilities
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // root at 0

  const TreeNode& leaf(const std::vector<double>& x) const {
    std::size_t i = 0;
    while (nodes[i].feature >= 0) i = x[static_cast<std::size_t>(nodes[i].feature)] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i];
  }
};

struct ForestModel {
  std::vector<std::string> classes;  // sorted labels
  std::size_t features = 0;
  std::vector<DecisionTree> trees;

  // Mean of the trees' leaf distributions.
  std::vector<double> predict_proba(const std::vector<double>& x) const {
    if (x.size() != features) throw ShapeError("forest input has the wrong feature count");
    std::vector<double> p(classes.size(), 0.0);
    for (const auto& t : trees)
      for (const auto& [c, q] : t.leaf(x).distribution) p[c] += q;
    for (double& v : p) v /= static_cast<double>(trees.size());
    return p;
  }
};

namespace detail {

struct TreeBuilder {
  const std::vector<std::vector<double>>& X;
  const std::vector<std::size_t>& y;
  std::size_t n_classes;
  std::size_t min_split;
  std::size_t mtry;
  std::mt19937_64& rng;
  DecisionTree tree;

  std::size_t make_leaf(const std::vector<std::size_t>& idx) {
    std::map<std::size_t, double> counts;
    for (std::size_t i : idx) counts[y[i]] += 1.0;
    TreeNode n;
    for (const auto& [c, k] : counts) n.distribution.emplace_back(c, k / static_cast<double>(idx.size()));
    tree.nodes.push_back(std::move(n));
    return tree.nodes.size() - 1;
  }

  struct Split {
    bool valid = false;
    double score = 0.0;  // weighted Gini numerator, lower is better
    std::size_t feature = 0;
    double threshold = 0.0;
  };

  // Best threshold on one feature by a sorted sweep. Sum over sides of
  // n_side - sum_c count_c^2 / n_side equals n times the weighted Gini.
  Split best_on(std::size_t f, std::vector<std::size_t>& idx, std::vector<double>& left,
                const std::vector<double>& right, double right_sq) const {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return X[a][f] < X[b][f]; });
    Split best;
    if (X[idx.front()][f] == X[idx.back()][f]) return best;
    std::fill(left.begin(), left.end(), 0.0);
    double left_sq = 0.0, rsq = right_sq;
    const double n = static_cast<double>(idx.size());
    std::vector<double> r = right;
    for (std::size_t k = 0; k + 1 < idx.size(); ++k) {
      const std::size_t c = y[idx[k]];
      left_sq += 2.0 * left[c] + 1.0;
      left[c] += 1.0;
      rsq -= 2.0 * r[c] - 1.0;
      r[c] -= 1.0;
      const double a = X[idx[k]][f], b = X[idx[k + 1]][f];
      if (a == b) continue;
      const double nl = static_cast<double>(k + 1), nr = n - nl;
      const double score = nl - left_sq / nl + nr - rsq / nr;
      if (!best.valid || score < best.score) {
        best = {true, score, f, a + 0.5 * (b - a)};
        if (best.threshold >= b) best.threshold = a;  // midpoint rounded up to b
      }
    }
    return best;
  }

  std::size_t grow(std::vector<std::size_t> idx) {
    bool pure = true;
    for (std::size_t i : idx) pure = pure && y[i] == y[idx.front()];
    if (pure || idx.size() < min_split) return make_leaf(idx);

    std::vector<double> counts(n_classes, 0.0), scratch(n_classes, 0.0);
    double sq = 0.0;
    for (std::size_t i : idx) counts[y[i]] += 1.0;
    for (double c : counts) sq += c * c;

    const std::size_t F = X.front().size();
    std::vector<std::size_t> feats(F);
    std::iota(feats.begin(), feats.end(), std::size_t{0});
    Split best;
    std::vector<std::size_t> work = idx;
    for (std::size_t k = 0; k < F; ++k) {
      // Partial Fisher-Yates: the k-th drawn feature.
      std::swap(feats[k], feats[k + std::uniform_int_distribution<std::size_t>(0, F - 1 - k)(rng)]);
      const Split s = best_on(feats[k], work, scratch, counts, sq);
      if (s.valid && (!best.valid || s.score < best.score)) best = s;
      if (k + 1 >= mtry && best.valid) break;
    }
    if (!best.valid) return make_leaf(idx);

    std::vector<std::size_t> l, r;
    for (std::size_t i : idx) (X[i][best.feature] <= best.threshold ? l : r).push_back(i);
    const std::size_t me = tree.nodes.size();
    tree.nodes.emplace_back();
    tree.nodes[me].feature = static_cast<int>(best.feature);
    tree.nodes[me].threshold = best.threshold;
    idx.clear();
    idx.shrink_to_fit();
    const std::size_t li = grow(std::move(l));
    const std::size_t ri = grow(std::move(r));
    tree.nodes[me].left = li;
    tree.nodes[me].right = ri;
    return me;
  }
};

}  // namespace detail

// X: samples x features; labels: one per sample.
inline ForestModel faisal_train_samples(const std::vector<std::vector<double>>& X,
                                        const std::vector<std::string>& labels, const ForestConfig& cfg) {
  cfg.validate();
  if (X.empty()) throw DataError("forest needs training samples");
  if (X.size() != labels.size()) throw ShapeError("one label per sample expected");
  ForestModel model;
  model.features = X.front().size();
  for (const auto& x : X)
    if (x.size() != model.features) throw ShapeError("training samples differ in feature count");
  model.classes = labels;
  std::sort(model.classes.begin(), model.classes.end());
  model.classes.erase(std::unique(model.classes.begin(), model.classes.end()), model.classes.end());
  std::vector<std::size_t> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    y[i] = static_cast<std::size_t>(std::lower_bound(model.classes.begin(), model.classes.end(), labels[i]) -
                                    model.classes.begin());

  const std::size_t n = X.size();
  const auto min_split = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::ceil(cfg.min_split_fraction * static_cast<double>(n))));
  const auto mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(model.features))));
  for (std::size_t t = 0; t < cfg.trees; ++t) {
    std::seed_seq seq{cfg.seed, static_cast<std::uint64_t>(t)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> idx(n);
    if (cfg.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& i : idx) i = pick(rng);
    } else {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    detail::TreeBuilder b{X, y, model.classes.size(), min_split, mtry, rng, {}};
    b.grow(std::move(idx));
    model.trees.push_back(std::move(b.tree));
  }
  return model;
}

// Daily rows (24F values, utility-major) of one record.
inline std::vector<std::vector<double>> daily_rows(const MeterRecord& rec) {
  if (rec.grid.delta_t != kHourSeconds || rec.slots() % kHoursPerDay != 0)
    throw DataError("record '" + rec.pseudonym + "' is not whole hourly days");
  const std::size_t F = rec.utilities();
  std::vector<std::vector<double>> rows(rec.slots() / kHoursPerDay, std::vector<double>(kHoursPerDay * F));
  for (std::size_t t = 0; t < rec.slots(); ++t)
    for (std::size_t f = 0; f < F; ++f) rows[t / kHoursPerDay][f * kHoursPerDay + t % kHoursPerDay] = rec.at(t, f);
  return rows;
}

// Every day of weeks [0, weeks) of every user, labeled by pseudonym.
inline ForestModel faisal_train(const Dataset& train, std::size_t weeks, const ForestConfig& cfg = {}) {
  const std::size_t available = train.grid().slots / kHoursPerWeek;
  if (weeks < 1 || weeks > available) throw DataError("forest training weeks exceed the data");
  std::vector<std::vector<double>> X;
  std::vector<std::string> labels;
  for (const auto& [p, rec] : slice_weeks(train, 0, weeks))
    for (auto& row : daily_rows(rec)) {
      X.push_back(std::move(row));
      labels.push_back(p);
    }
  return faisal_train_samples(X, labels, cfg);
}

// Class scores of a target record: mean of its days' probability vectors.
inline std::vector<double> faisal_scores(const ForestModel& model, const MeterRecord& rec) {
  const auto rows = daily_rows(rec);
  std::vector<double> s(model.classes.size(), 0.0);
  for (const auto& r : rows) {
    const auto p = model.predict_proba(r);
    for (std::size_t c = 0; c < s.size(); ++c) s[c] += p[c];
  }
  for (double& v : s) v /= static_cast<double>(rows.size());
  return s;
}

// Candidates are the trained classes by descending averaged score; the
// stored distance is 1 - score.
inline std::vector<MatchResult> faisal_match(const ForestModel& model, const Dataset& target,
                                             const TruthFn& truth = {}) {
  std::vector<MatchResult> out;
  for (const auto& [p, rec] : target) {
    detail::check_weekly(rec);
    const std::string t = truth_of(truth, p);
    if (!t.empty() && !std::binary_search(model.classes.begin(), model.classes.end(), t))
      throw DataError("true user '" + t + "' is absent from the forest's training labels");
    const auto s = faisal_scores(model, rec);
    std::vector<Candidate> cands;
    for (std::size_t c = 0; c < s.size(); ++c) cands.push_back({model.classes[c], 1.0 - s[c]});
    out.push_back(attack::rank_candidates(std::move(cands), p, t));
  }
  return out;
}

}  // namespace meterlink::baselines
