// Copyright 2026 The cmdl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cmdl/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace cmdl {

double accuracy(std::span<const int> preds, std::span<const int> golds) {
  if (preds.size() != golds.size()) {
    throw UsageError("accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(golds.size()) + " golds");
  }
  if (preds.empty()) throw UsageError("accuracy: empty inputs");
  size_t hits = 0;
  for (size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double weighted_f1(std::span<const int> preds, std::span<const int> golds,
                   std::span<const int> labels) {
  if (preds.size() != golds.size()) {
    throw UsageError("weighted_f1: " + std::to_string(preds.size()) + " predictions vs " +
                     std::to_string(golds.size()) + " golds");
  }
  if (preds.empty()) throw UsageError("weighted_f1: empty inputs");
  std::unordered_set<int> label_set(labels.begin(), labels.end());
  for (int g : golds) {
    if (!label_set.count(g)) {
      throw DataError("weighted_f1: gold label " + std::to_string(g) + " outside the label set");
    }
  }
  for (int p : preds) {
    if (!label_set.count(p)) {
      throw DataError("weighted_f1: predicted label " + std::to_string(p) + " outside the label set");
    }
  }

  double score = 0.0;
  for (int c : labels) {
    size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
      const bool p = preds[i] == c, g = golds[i] == c;
      tp += (p && g) ? 1 : 0;
      fp += (p && !g) ? 1 : 0;
      fn += (!p && g) ? 1 : 0;
      support += g ? 1 : 0;
    }
    if (support == 0) continue;
    const double precision = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double f1 = (precision + recall) == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    score += f1 * static_cast<double>(support) / static_cast<double>(golds.size());
  }
  return score;
}

namespace {

double percentile_interpolated(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

BootstrapReport paired_bootstrap(std::span<const double> scores_a, std::span<const double> scores_b,
                                 size_t n_resamples, uint64_t seed) {
  const size_t n = scores_a.size();
  if (n != scores_b.size()) {
    throw UsageError("paired_bootstrap: " + std::to_string(n) + " vs " +
                     std::to_string(scores_b.size()) + " scores");
  }
  if (n < 2) throw UsageError("paired_bootstrap: need at least 2 pairs");
  if (n_resamples < 100) throw UsageError("paired_bootstrap: need at least 100 resamples");

  // Canonical pair order makes the resample draws a function of the pair
  // multiset, not the input permutation.
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t x, size_t y) {
    if (scores_a[x] != scores_a[y]) return scores_a[x] < scores_a[y];
    return scores_b[x] < scores_b[y];
  });
  std::vector<double> a(n), b(n);
  for (size_t i = 0; i < n; ++i) {
    a[i] = scores_a[order[i]];
    b[i] = scores_b[order[i]];
  }

  double mean_a = 0.0, mean_b = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);

  Rng rng(seed);
  std::vector<double> diffs(n_resamples);
  size_t non_positive = 0, non_negative = 0;
  for (size_t r = 0; r < n_resamples; ++r) {
    double sum_a = 0.0, sum_b = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const size_t idx = static_cast<size_t>(rng.uniform_index(n));
      sum_a += a[idx];
      sum_b += b[idx];
    }
    const double d = (sum_a - sum_b) / static_cast<double>(n);
    diffs[r] = d;
    non_positive += d <= 0.0 ? 1 : 0;
    non_negative += d >= 0.0 ? 1 : 0;
  }

  std::sort(diffs.begin(), diffs.end());
  BootstrapReport report;
  report.observed_diff = mean_a - mean_b;
  const double frac_le = static_cast<double>(non_positive) / static_cast<double>(n_resamples);
  const double frac_ge = static_cast<double>(non_negative) / static_cast<double>(n_resamples);
  report.p_value = std::clamp(2.0 * std::min(frac_le, frac_ge), 0.0, 1.0);
  report.ci_lo = percentile_interpolated(diffs, 0.025);
  report.ci_hi = percentile_interpolated(diffs, 0.975);
  report.resamples = n_resamples;
  report.seed = seed;
  return report;
}

}  // namespace cmdl
