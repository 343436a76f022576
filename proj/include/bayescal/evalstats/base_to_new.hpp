#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "bayescal/data/dataset.hpp"
#include "bayescal/data/encode.hpp"
#include "bayescal/errors.hpp"
#include "bayescal/evalstats/metrics.hpp"
#include "bayescal/evalstats/predict.hpp"
#include "bayescal/model/model.hpp"

namespace bayescal::evalstats {

struct BaseToNewResult {
  double iid_acc = 0.0;
  double ood_acc = 0.0;
  AccStar iid_acc_star;
  AccStar ood_acc_star;
  double threshold = 0.0;
  std::size_t iid_count = 0;
  std::size_t ood_count = 0;
};

struct BaseToNewOptions {
  ThresholdOptions threshold;
  PredictOptions predict;
};

namespace detail {

inline std::vector<PredictionRecord> predict_rows(const model::BayesCalModel& m, const data::Dataset& ds,
                                                  std::span<const std::size_t> rows,
                                                  std::span<const std::size_t> candidates, PartitionTag tag,
                                                  const PredictOptions& opt) {
  std::vector<std::size_t> labels;
  labels.reserve(rows.size());
  for (std::size_t i : rows) {
    const auto it = std::find(candidates.begin(), candidates.end(), ds.samples[i].y_cat);
    if (it == candidates.end()) throw VocabularyError("sample class is not among the evaluation candidates");
    labels.push_back(static_cast<std::size_t>(it - candidates.begin()));
  }
  const Array features = data::encode_rows(m.encoder(), ds, rows);
  return predict(m, features, labels, candidates, tag, opt);
}

}  // namespace detail

/// Evaluates a model trained on `base` classes against the unseen `novel`
/// classes. In-distribution rows are novel-class samples from the training
/// domains, out-of-distribution rows come from the test domains; the Acc*
/// threshold is calibrated on `base_validation` rows predicted over the base
/// classes.
inline BaseToNewResult base_to_new_eval(const model::BayesCalModel& m, const data::Dataset& ds,
                                        std::span<const std::size_t> base, std::span<const std::size_t> novel,
                                        std::span<const std::size_t> base_validation,
                                        const BaseToNewOptions& opt = {}) {
  if (base.empty() || novel.empty()) throw ProtocolError("base and new class sets must be nonempty");
  const std::set<std::size_t> base_set(base.begin(), base.end());
  for (std::size_t c : novel) {
    if (base_set.contains(c)) throw ProtocolError("class " + std::to_string(c) + " is both base and new");
  }
  const std::set<std::size_t> novel_set(novel.begin(), novel.end());
  std::vector<std::size_t> iid_rows;
  std::vector<std::size_t> ood_rows;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    if (!novel_set.contains(s.y_cat)) continue;
    (s.split == data::Split::test ? ood_rows : iid_rows).push_back(i);
  }
  if (iid_rows.empty() || ood_rows.empty()) throw ProtocolError("new classes need samples in both training and test domains");
  if (base_validation.empty()) throw ProtocolError("base-class validation rows are required for the threshold");

  const auto val = detail::predict_rows(m, ds, base_validation, base, PartitionTag::base, opt.predict);
  const auto iid = detail::predict_rows(m, ds, iid_rows, novel, PartitionTag::iid_new, opt.predict);
  const auto ood = detail::predict_rows(m, ds, ood_rows, novel, PartitionTag::ood_new, opt.predict);

  BaseToNewResult out;
  out.threshold = confidence_threshold(val, opt.threshold);
  out.iid_acc = accuracy(iid);
  out.ood_acc = accuracy(ood);
  out.iid_acc_star = acc_star(iid, out.threshold);
  out.ood_acc_star = acc_star(ood, out.threshold);
  out.iid_count = iid.size();
  out.ood_count = ood.size();
  return out;
}

}  // namespace bayescal::evalstats
