#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bayescal/data.hpp"
#include "bayescal/errors.hpp"
#include "bayescal/evalstats.hpp"
#include "bayescal/harness/experiment.hpp"
#include "bayescal/harness/search.hpp"
#include "bayescal/train.hpp"

namespace bayescal::harness {

/// A trained (or zero-shot) model for one seed, ready to be evaluated.
struct TrialRun {
  std::shared_ptr<const data::Dataset> dataset;  // task.dataset points into it
  model::BayesCalModel model;
  train::TaskData task;
  train::TrainConfig config;
  std::optional<train::TrainResult> training;
  train::Selection selection;
};

/// Outcome of one (config, seed) run.
struct TrialOutcome {
  evalstats::TrialRow row;
  double validation = 0.0;  ///< selected-model validation accuracy
  std::size_t selected_epoch = 0;
};

inline model::BayesCalModel build_model(const data::DatasetSpec& spec, const train::TrainConfig& c) {
  return model::BayesCalModel(c.model, spec.category_prototypes(), spec.environment_prototypes(), spec.seed, c.seed);
}

namespace detail {

inline const std::vector<std::size_t>& validation_rows(const data::Splits& s, train::Strategy strategy) {
  switch (strategy) {
    case train::Strategy::train_domain: return s.val;
    case train::Strategy::test_domain: return s.test_val;
    case train::Strategy::ood: return s.ood_val;
  }
  return s.val;
}

inline std::vector<evalstats::PredictionRecord> predict_rows(const TrialRun& r, const std::vector<std::size_t>& rows,
                                                             evalstats::PartitionTag tag) {
  const auto b = data::make_batch(r.model.encoder(), *r.dataset, rows, r.task.category_candidates,
                                  r.task.environment_candidates);
  return evalstats::predict(r.model, b.features, b.y_cat, r.task.category_candidates, tag, r.config.predict);
}

}  // namespace detail

/// The seed's dataset, task and freshly initialized model.
inline TrialRun prepare_trial(const ExperimentConfig& e, std::uint64_t seed,
                              const std::optional<std::vector<std::size_t>>& classes = std::nullopt) {
  const auto spec = e.dataset_for(seed);
  const auto config = e.train_for(seed);
  TrialRun r{std::make_shared<const data::Dataset>(data::generate(spec)), build_model(spec, config), {}, config,
             std::nullopt, {}};
  r.task = train::make_task(*r.dataset, config, classes);
  return r;
}

/// Scores the model as it stands on the strategy's validation set.
inline train::Selection score_current(const TrialRun& r) {
  const auto& rows = detail::validation_rows(r.task.splits, r.config.strategy);
  if (rows.empty()) throw ProtocolError("validation set missing for strategy " + train::to_string(r.config.strategy));
  return {0, evalstats::accuracy(detail::predict_rows(r, rows, evalstats::PartitionTag::test))};
}

/// Generates the seed's dataset, trains (unless zero-shot), and leaves the
/// selected checkpoint applied to the model.
inline TrialRun train_trial(const ExperimentConfig& e, std::uint64_t seed,
                            const std::optional<std::vector<std::size_t>>& classes = std::nullopt,
                            const std::function<void(const train::StepLog&)>& on_step = {}) {
  TrialRun r = prepare_trial(e, seed, classes);
  if (e.learns()) {
    r.training = train::train_task(r.model, r.task, r.config, on_step);
    r.selection = train::select_model(r.training->checkpoints, r.config.strategy);
    train::apply_checkpoint(r.model, r.training->checkpoints[r.selection.index]);
  } else {
    r.selection = score_current(r);
  }
  return r;
}

/// Test accuracy and Acc* of a trained run. The confidence threshold is
/// calibrated on the strategy's validation set.
inline TrialOutcome evaluate_trial(const ExperimentConfig& e, const TrialRun& r, std::uint64_t seed) {
  TrialOutcome out;
  out.validation = r.selection.validation_accuracy;
  out.selected_epoch = r.training ? r.training->checkpoints[r.selection.index].epoch : 0;
  out.row.config_id = e.id;
  out.row.seed = std::to_string(seed);
  out.row.dataset = e.dataset_name;
  out.row.strategy = train::to_string(r.config.strategy);
  const auto test = detail::predict_rows(r, r.task.splits.test, evalstats::PartitionTag::test);
  out.row.acc = evalstats::accuracy(test);
  const auto val = detail::predict_rows(r, detail::validation_rows(r.task.splits, r.config.strategy),
                                        evalstats::PartitionTag::test);
  try {
    const double t = evalstats::confidence_threshold(val, e.threshold);
    const auto star = evalstats::acc_star(test, t);
    out.row.acc_star = star.value;
    out.row.retention = star.retention;
  } catch (const DegeneracyError&) {
    // no correct validation prediction: Acc* stays undefined
  }
  return out;
}

inline TrialOutcome run_trial(const ExperimentConfig& e, std::uint64_t seed) {
  return evaluate_trial(e, train_trial(e, seed), seed);
}

/// Search / ablation evaluator that trains `config` in the setting of `e`.
inline auto trial_evaluator(const ExperimentConfig& e) {
  return [e](const train::TrainConfig& config, std::uint64_t seed) {
    ExperimentConfig local = e;
    local.train = config;
    const auto o = run_trial(local, seed);
    return TrialScore{o.validation, o.row};
  };
}

/// Base classes and new classes for a seed.
inline data::BaseNew base_new_classes(const ExperimentConfig& e, std::uint64_t seed) {
  const auto& b = e.base_to_new;
  if (b.base.has_value() != b.novel.has_value()) throw ConfigError("give both base and novel class lists, or neither");
  if (b.base) return {*b.base, *b.novel};
  return data::split_base_new(data::iota_indices(e.dataset.n_classes), b.base_fraction, seed);
}

struct BaseToNewOutcome {
  evalstats::TrialRow row;
  evalstats::BaseToNewResult result;
};

/// Trains on the base classes only, then scores the new classes.
inline BaseToNewOutcome run_base_to_new_trial(const ExperimentConfig& e, std::uint64_t seed) {
  const auto split = base_new_classes(e, seed);
  const auto run = train_trial(e, seed, split.base);
  evalstats::BaseToNewOptions opt{e.threshold, run.config.predict};
  BaseToNewOutcome out;
  out.result = evalstats::base_to_new_eval(run.model, *run.dataset, split.base, split.novel, run.task.splits.val, opt);
  auto& row = out.row;
  row.config_id = e.id;
  row.seed = std::to_string(seed);
  row.dataset = e.dataset_name;
  row.strategy = train::to_string(run.config.strategy);
  row.acc = evalstats::accuracy(detail::predict_rows(run, run.task.splits.test, evalstats::PartitionTag::base));
  row.iid_acc = out.result.iid_acc;
  row.ood_acc = out.result.ood_acc;
  row.iid_acc_star = out.result.iid_acc_star.value;
  row.ood_acc_star = out.result.ood_acc_star.value;
  return out;
}

}  // namespace bayescal::harness
