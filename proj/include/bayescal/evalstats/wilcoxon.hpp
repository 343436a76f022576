#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "bayescal/errors.hpp"

namespace bayescal::evalstats {

inline constexpr std::size_t kWilcoxonMaxN = 20;

struct WilcoxonResult {
  double p = 1.0;             ///< exact two-sided p-value
  std::size_t n = 0;          ///< nonzero differences used
  double w_plus = 0.0;        ///< sum of ranks of the positive differences
  bool degenerate = false;    ///< every difference was zero
};

/// Average ranks of |d| (1-based), doubled so that tied averages stay integral.
inline std::vector<std::uint32_t> doubled_ranks(std::span<const double> magnitudes) {
  const std::size_t n = magnitudes.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return magnitudes[a] < magnitudes[b]; });
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && magnitudes[order[j + 1]] == magnitudes[order[i]]) ++j;
    // ranks i+1 .. j+1 share their mean; doubled: (i + 1) + (j + 1)
    const auto r2 = static_cast<std::uint32_t>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) out[order[k]] = r2;
    i = j + 1;
  }
  return out;
}

/// Exact two-sided signed-rank test. Zero differences are dropped, ties share
/// average ranks, and the null distribution of W+ comes from counting all 2^n
/// sign assignments of the observed ranks.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences) {
  std::vector<double> mag;
  std::vector<bool> positive;
  for (double d : differences) {
    if (!std::isfinite(d)) throw NumericError("non-finite paired difference");
    if (d == 0.0) continue;
    mag.push_back(std::abs(d));
    positive.push_back(d > 0.0);
  }
  WilcoxonResult out;
  out.n = mag.size();
  if (mag.empty()) {
    out.degenerate = true;
    return out;
  }
  if (mag.size() > kWilcoxonMaxN) throw ProtocolError("exact signed-rank test supports at most 20 nonzero differences");

  const auto r2 = doubled_ranks(mag);
  std::uint32_t total = 0;
  std::uint32_t observed = 0;
  for (std::size_t i = 0; i < r2.size(); ++i) {
    total += r2[i];
    if (positive[i]) observed += r2[i];
  }
  // counts[s] = number of sign assignments whose positive doubled-rank sum is s
  std::vector<double> counts(total + 1, 0.0);
  counts[0] = 1.0;
  for (std::uint32_t r : r2) {
    for (std::uint32_t s = total; s >= r; --s) counts[s] += counts[s - r];
  }
  double le = 0.0;
  double ge = 0.0;
  for (std::uint32_t s = 0; s <= total; ++s) {
    if (s <= observed) le += counts[s];
    if (s >= observed) ge += counts[s];
  }
  const double all = std::ldexp(1.0, static_cast<int>(r2.size()));
  out.p = std::min(1.0, 2.0 * std::min(le, ge) / all);
  out.w_plus = observed / 2.0;
  return out;
}

}  // namespace bayescal::evalstats
