#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "bayescal/evalstats/predict.hpp"

// Brute-force reference implementations shared by the unit tests and the
// acceptance binary. They deliberately avoid the library's algorithms.
namespace bayescal::oracle {

using evalstats::PartitionTag;
using evalstats::PredictionRecord;

/// 20 hand-built predictions over 3 classes: 13 correct; 7 have confidence
/// >= 0.7, of which 5 are correct.
inline std::vector<PredictionRecord> twenty_records() {
  struct R {
    std::size_t label, predicted;
    double confidence;
  };
  const R rows[] = {{0, 0, 0.95}, {1, 1, 0.90}, {2, 2, 0.85}, {0, 1, 0.80}, {1, 1, 0.75}, {2, 0, 0.72}, {0, 0, 0.70},
                    {1, 2, 0.68}, {2, 2, 0.65}, {0, 0, 0.60}, {1, 0, 0.58}, {2, 2, 0.55}, {0, 0, 0.52}, {1, 1, 0.50},
                    {2, 1, 0.48}, {0, 0, 0.45}, {1, 1, 0.42}, {2, 0, 0.40}, {0, 0, 0.38}, {1, 2, 0.35}};
  std::vector<PredictionRecord> out;
  for (const auto& r : rows) out.push_back({r.label, r.predicted, r.confidence, PartitionTag::test});
  return out;
}

/// Smallest correct-prediction confidence v with #(correct conf <= v) >= q n,
/// q = (100 - retention_percent) / 100, evaluated in integers.
inline double threshold_by_counting(const std::vector<PredictionRecord>& val, int retention_percent) {
  std::vector<double> conf;
  for (const auto& p : val) {
    if (p.label == p.predicted) conf.push_back(p.confidence);
  }
  const auto n = static_cast<long>(conf.size());
  std::optional<double> best;
  for (double v : conf) {
    long at_or_below = 0;
    for (double w : conf) at_or_below += (w <= v) ? 1 : 0;
    if (100 * at_or_below >= (100 - retention_percent) * n && at_or_below >= 1) {
      if (!best || v < *best) best = v;
    }
  }
  return *best;
}

struct FilterCount {
  std::size_t kept = 0;
  std::size_t right = 0;
};

inline FilterCount filter_and_count(const std::vector<PredictionRecord>& test, double threshold) {
  FilterCount out;
  for (const auto& p : test) {
    if (!(p.confidence >= threshold)) continue;
    ++out.kept;
    if (p.label == p.predicted) ++out.right;
  }
  return out;
}

/// Exact two-sided signed-rank p by listing every sign pattern: the fraction
/// of patterns whose W+ is at least as far from its null mean as observed.
inline double wilcoxon_brute_force(const std::vector<double>& d) {
  std::vector<double> a;
  std::vector<bool> pos;
  for (double x : d) {
    if (x != 0.0) {
      a.push_back(std::abs(x));
      pos.push_back(x > 0.0);
    }
  }
  const std::size_t n = a.size();
  if (n == 0) return 1.0;
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0.0, equal = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      less += a[j] < a[i] ? 1.0 : 0.0;
      equal += a[j] == a[i] ? 1.0 : 0.0;
    }
    rank[i] = less + (equal + 1.0) / 2.0;
  }
  double observed = 0.0, total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += rank[i];
    if (pos[i]) observed += rank[i];
  }
  const double centre = total / 2.0;
  const double dev = std::abs(observed - centre);
  std::uint64_t hits = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1U) w += rank[i];
    }
    if (std::abs(w - centre) >= dev - 1e-9) ++hits;
  }
  return static_cast<double>(hits) / std::ldexp(1.0, static_cast<int>(n));
}

}  // namespace bayescal::oracle
