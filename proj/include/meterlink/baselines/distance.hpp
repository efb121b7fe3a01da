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

// Distance-based baselines: random guessing, nearest neighbor on raw
// standardized features (L2-raw), Tudor's five-feature matcher and
// Buchmann's thresholded feature differences.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "meterlink/attack/match.hpp"
#include "meterlink/baselines/features.hpp"
#include "meterlink/core/transforms.hpp"

namespace meterlink::baselines {

using attack::Candidate;
using attack::MatchResult;
using attack::RankCurve;

// Maps a target pseudonym to its true candidate; empty: no ground truth.
using TruthFn = std::function<std::string(const std::string&)>;

inline std::string truth_of(const TruthFn& truth, const std::string& target) { return truth ? truth(target) : std::string(); }

inline RankCurve random_guess_curve(std::size_t N) {
  if (N < 1) throw PreconditionError("random guess needs at least one candidate");
  RankCurve c;
  c.values.resize(N);
  for (std::size_t R = 1; R <= N; ++R) c.values[R - 1] = static_cast<double>(R) / static_cast<double>(N);
  return c;
}

// Ranks every reference record against every target record with a
// dissimilarity on per-record feature vectors.
template <class Features, class Dissimilarity>
std::vector<MatchResult> match_by_features(const Dataset& reference, const Dataset& target, Features features,
                                           Dissimilarity dissimilarity, const TruthFn& truth = {}) {
  if (reference.empty()) throw DataError("cannot match against an empty reference week");
  std::vector<std::pair<std::string, std::vector<double>>> ref;
  ref.reserve(reference.size());
  for (const auto& [p, rec] : reference) ref.emplace_back(p, features(rec));
  std::vector<MatchResult> out;
  out.reserve(target.size());
  for (const auto& [p, rec] : target) {
    const std::vector<double> x = features(rec);
    std::vector<Candidate> cands;
    cands.reserve(ref.size());
    for (const auto& [name, y] : ref) cands.push_back({name, dissimilarity(x, y)});
    out.push_back(attack::rank_candidates(std::move(cands), p, truth_of(truth, p)));
  }
  return out;
}

inline double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
  return attack::euclidean(a, b);
}

// Nearest neighbor over the 168F features standardized with training
// statistics: the identity embedding.
inline std::vector<MatchResult> l2_raw_match(const Dataset& reference, const Dataset& target, const ScalingStats& stats,
                                             const TruthFn& truth = {}) {
  return match_by_features(
      reference, target, [&](const MeterRecord& r) { return standardize_record(r, stats); }, euclidean_distance, truth);
}

inline std::vector<MatchResult> tudor_match(const Dataset& reference, const Dataset& target, const TruthFn& truth = {}) {
  return match_by_features(reference, target, tudor_features, euclidean_distance, truth);
}

// ---------------------------------------------------------------------------
// Buchmann

// |a - b| and the symmetric relative difference |2(a - b) / (a + b)|,
// with 0/0 := 0.
inline double absolute_difference(double a, double b) { return std::abs(a - b); }

inline double relative_difference(double a, double b) {
  const double den = a + b;
  if (den == 0.0) return a == b ? 0.0 : 2.0;
  return std::abs(2.0 * (a - b) / den);
}

struct DifferenceCalibration {
  std::vector<double> abs_quantile, abs_sigma;  // per feature
  std::vector<double> rel_quantile, rel_sigma;
  std::size_t pairs = 0;
};

inline constexpr double kCalibrationQuantile = 0.9;

// Nearest-rank empirical quantile and the population standard deviation
// of the values at or below it.
inline std::pair<double, double> quantile_and_sigma(std::vector<double> v, double q = kCalibrationQuantile) {
  if (v.empty()) throw PreconditionError("quantile of no values");
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  const double quant = v[std::max<std::size_t>(k, 1) - 1];
  double sum = 0.0, n = 0.0;
  for (double x : v)
    if (x <= quant) sum += x, n += 1.0;
  const double mean = sum / n;
  double var = 0.0;
  for (double x : v)
    if (x <= quant) var += (x - mean) * (x - mean);
  return {quant, std::sqrt(var / n)};
}

// Same-user feature differences pooled over every pair of consecutive
// weeks among the first M weeks of `aux` (kWh).
inline DifferenceCalibration buchmann_calibrate(const Dataset& aux, std::size_t M) {
  const std::size_t weeks = aux.grid().slots / kHoursPerWeek;
  if (M < 2) throw DataError("calibration needs at least two weeks");
  if (M > weeks) throw DataError("auxiliary data holds fewer than M weeks");
  if (aux.empty()) throw DataError("empty auxiliary dataset");
  std::vector<std::vector<double>> feats;  // [week][user * K + k]
  for (std::size_t w = 0; w < M; ++w) {
    std::vector<double> row;
    for (const auto& [_, rec] : slice_weeks(aux, w, 1)) {
      const auto f = buchmann_features(rec);
      row.insert(row.end(), f.begin(), f.end());
    }
    feats.push_back(std::move(row));
  }
  const std::size_t K = kBuchmannFeatures * aux.grid().utilities;
  DifferenceCalibration cal;
  cal.pairs = (M - 1) * aux.size();
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> abs_d, rel_d;
    for (std::size_t w = 0; w + 1 < M; ++w)
      for (std::size_t u = 0; u < aux.size(); ++u) {
        const double a = feats[w][u * K + k], b = feats[w + 1][u * K + k];
        abs_d.push_back(absolute_difference(a, b));
        rel_d.push_back(relative_difference(a, b));
      }
    const auto [qa, sa] = quantile_and_sigma(abs_d);
    const auto [qr, sr] = quantile_and_sigma(rel_d);
    cal.abs_quantile.push_back(qa);
    cal.abs_sigma.push_back(sa);
    cal.rel_quantile.push_back(qr);
    cal.rel_sigma.push_back(sr);
  }
  return cal;
}

// 0 at or below the quantile, else the excess in units of sigma. A feature
// with sigma = 0 contributes 1 when exceeded (an indicator instead of an
// unbounded ratio).
inline double thresholded(double d, double quantile, double sigma) {
  if (d <= quantile) return 0.0;
  return sigma > 0.0 ? (d - quantile) / sigma : 1.0;
}

// Unweighted sum of thresholded absolute and relative differences.
inline double buchmann_dissimilarity(const std::vector<double>& x, const std::vector<double>& y,
                                     const DifferenceCalibration& cal) {
  if (x.size() != y.size() || x.size() != cal.abs_quantile.size())
    throw ShapeError("Buchmann features do not match the calibration");
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    s += thresholded(absolute_difference(x[k], y[k]), cal.abs_quantile[k], cal.abs_sigma[k]);
    s += thresholded(relative_difference(x[k], y[k]), cal.rel_quantile[k], cal.rel_sigma[k]);
  }
  return s;
}

inline std::vector<MatchResult> buchmann_match(const Dataset& reference, const Dataset& target,
                                               const DifferenceCalibration& cal, const TruthFn& truth = {}) {
  return match_by_features(
      reference, target, buchmann_features,
      [&](const std::vector<double>& x, const std::vector<double>& y) { return buchmann_dissimilarity(x, y, cal); },
      truth);
}

}  // namespace meterlink::baselines
