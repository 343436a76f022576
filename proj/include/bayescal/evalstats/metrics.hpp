#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "bayescal/errors.hpp"
#include "bayescal/evalstats/predict.hpp"

namespace bayescal::evalstats {

inline double accuracy(std::span<const PredictionRecord> preds) {
  if (preds.empty()) throw ProtocolError("accuracy of an empty prediction set");
  std::size_t right = 0;
  for (const auto& p : preds) right += p.correct() ? 1 : 0;
  return static_cast<double>(right) / static_cast<double>(preds.size());
}

/// Ascending nearest-rank quantile: the ceil(q * n)-th smallest value (at
/// least the first).
inline double nearest_rank_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DegeneracyError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

struct ThresholdOptions {
  double retention = 0.95;
  /// Take the retention quantile itself rather than the (1 - retention)
  /// quantile, which keeps only the most confident tail.
  bool quantile_literal = false;
};

/// Confidence threshold from the correctly classified validation predictions,
/// chosen so that at least `retention` of them lie at or above it.
inline double confidence_threshold(std::span<const PredictionRecord> validation, const ThresholdOptions& opt = {}) {
  if (!(opt.retention > 0.0 && opt.retention <= 1.0)) throw ConfigError("retention must lie in (0, 1]");
  std::vector<double> conf;
  for (const auto& p : validation) {
    if (p.correct()) conf.push_back(p.confidence);
  }
  if (conf.empty()) throw DegeneracyError("no correctly classified validation predictions to calibrate on");
  return nearest_rank_quantile(std::move(conf), opt.quantile_literal ? opt.retention : 1.0 - opt.retention);
}

struct AccStar {
  /// Accuracy over retained predictions; empty when nothing was retained.
  std::optional<double> value;
  double retention = 0.0;  ///< fraction of predictions retained
  std::size_t retained = 0;

  [[nodiscard]] bool defined() const noexcept { return value.has_value(); }
};

inline AccStar acc_star(std::span<const PredictionRecord> test, double threshold) {
  if (test.empty()) throw ProtocolError("acc_star of an empty prediction set");
  std::size_t kept = 0;
  std::size_t right = 0;
  for (const auto& p : test) {
    if (p.confidence < threshold) continue;
    ++kept;
    right += p.correct() ? 1 : 0;
  }
  AccStar out;
  out.retained = kept;
  out.retention = static_cast<double>(kept) / static_cast<double>(test.size());
  if (kept > 0) out.value = static_cast<double>(right) / static_cast<double>(kept);
  return out;
}

}  // namespace bayescal::evalstats
