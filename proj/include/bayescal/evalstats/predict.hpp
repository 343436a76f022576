#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bayescal/diff.hpp"
#include "bayescal/model/leaves.hpp"
#include "bayescal/model/model.hpp"

namespace bayescal::evalstats {

using diff::Array;
using diff::Var;

enum class PartitionTag { iid_new, ood_new, base, test };

inline std::string to_string(PartitionTag t) {
  switch (t) {
    case PartitionTag::iid_new: return "iid_new";
    case PartitionTag::ood_new: return "ood_new";
    case PartitionTag::base: return "base";
    case PartitionTag::test: return "test";
  }
  return "?";
}

struct PredictionRecord {
  std::size_t label = 0;
  std::size_t predicted = 0;
  double confidence = 1.0;  ///< max softmax probability
  PartitionTag tag = PartitionTag::test;

  [[nodiscard]] bool correct() const noexcept { return label == predicted; }

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// How a posterior is turned into class probabilities.
struct PredictOptions {
  /// 0: softmax of the posterior-mean logits. S > 0: average of the softmax
  /// over S posterior draws.
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

/// Class probabilities (N x n) for `features` against the category names in
/// `candidates`.
inline Array class_probabilities(const model::BayesCalModel& m, const Array& features,
                                 std::span<const std::size_t> candidates, const PredictOptions& opt = {}) {
  diff::NoGradGuard no_grad;
  const Var f = Var::constant(features);
  const auto probs_for = [&](const model::SampledParams& p) {
    const Var txt = m.category().text_features(candidates, p);
    return diff::softmax_rows(model::alignment_logits(f, txt, m.config().temperature).logits).value();
  };
  if (opt.samples == 0) return probs_for(m.category().posterior_mean());
  Rng rng(opt.seed);
  const auto leaves = model::make_leaves(m.category(), false);
  Array acc(diff::Shape{features.rows(), candidates.size()});
  for (std::size_t s = 0; s < opt.samples; ++s) {
    const Array p = probs_for(model::sample_branch(leaves, model::draw_noise(m.category(), rng), 1.0));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i] / static_cast<double>(opt.samples);
  }
  return acc;
}

/// Prediction records from a probability matrix; ties go to the lowest index.
inline std::vector<PredictionRecord> records_from_probabilities(const Array& probs, std::span<const std::size_t> labels,
                                                                PartitionTag tag) {
  if (labels.size() != probs.rows()) throw StructuralError("one label per probability row required");
  std::vector<PredictionRecord> out;
  out.reserve(labels.size());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c) {
      if (probs(r, c) > probs(r, best)) best = c;
    }
    out.push_back({labels[r], best, probs(r, best), tag});
  }
  return out;
}

inline std::vector<PredictionRecord> predict(const model::BayesCalModel& m, const Array& features,
                                             std::span<const std::size_t> labels,
                                             std::span<const std::size_t> candidates, PartitionTag tag,
                                             const PredictOptions& opt = {}) {
  return records_from_probabilities(class_probabilities(m, features, candidates, opt), labels, tag);
}

}  // namespace bayescal::evalstats
