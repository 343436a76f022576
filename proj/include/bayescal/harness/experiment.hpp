#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bayescal/data.hpp"
#include "bayescal/errors.hpp"
#include "bayescal/evalstats.hpp"
#include "bayescal/harness/search_space.hpp"
#include "bayescal/train.hpp"

namespace bayescal::harness {

/// The four comparison points shipped as presets.
enum class Baseline { zero_shot, coop, cal, bayes_cal };

inline std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::zero_shot: return "zero-shot";
    case Baseline::coop: return "coop";
    case Baseline::cal: return "cal";
    case Baseline::bayes_cal: return "bayes-cal";
  }
  return "?";
}

inline Baseline parse_baseline(const std::string& s) {
  if (s == "zero-shot") return Baseline::zero_shot;
  if (s == "coop") return Baseline::coop;
  if (s == "cal") return Baseline::cal;
  if (s == "bayes-cal") return Baseline::bayes_cal;
  throw ConfigError("unknown baseline '" + s + "' (expected zero-shot, coop, cal or bayes-cal)");
}

/// Training settings used for the correlation-shift benchmark: a prompt
/// learner with class-specific context and a tight N(0, 0.05^2) prior.
inline train::TrainConfig benchmark_train_config() {
  train::TrainConfig c;
  c.model.text.kind = model::BranchKind::PL;
  c.model.text.class_specific_context = true;
  c.model.init.prior_sigma = 0.05;
  c.learning_rate = 0.004;
  c.momentum = 0.9;
  c.epochs = 30;
  c.steps_per_epoch = 3;
  c.shots = 16;
  c.strategy = train::Strategy::test_domain;
  return c;
}

/// Applies a baseline preset on top of `c`.
inline train::TrainConfig apply_baseline(train::TrainConfig c, Baseline b) {
  switch (b) {
    case Baseline::zero_shot:
    case Baseline::coop:
      c.objective.lambda1 = c.objective.lambda2 = c.objective.lambda3 = 0.0;
      c.variational = false;
      break;
    case Baseline::cal:
      c.variational = false;
      break;
    case Baseline::bayes_cal:
      c.variational = true;
      break;
  }
  return c;
}

struct BaseToNewSpec {
  double base_fraction = 0.75;
  std::optional<std::vector<std::size_t>> base;
  std::optional<std::vector<std::size_t>> novel;
};

/// Everything a CLI run needs, resolved from a JSON config file.
struct ExperimentConfig {
  std::string id = "run";
  std::string dataset_name = "colored";
  data::DatasetSpec dataset = data::colored_benchmark_spec();
  /// Regenerate the synthetic dataset with each trial seed.
  bool dataset_per_seed = true;
  Baseline baseline = Baseline::bayes_cal;
  train::TrainConfig train = benchmark_train_config();
  std::vector<std::uint64_t> seeds{1, 2, 3};
  evalstats::ThresholdOptions threshold;
  SearchSpace search;
  BaseToNewSpec base_to_new;
  evalstats::GridSpec landscape;

  [[nodiscard]] bool learns() const { return baseline != Baseline::zero_shot; }

  /// Dataset spec and training config for one seed.
  [[nodiscard]] data::DatasetSpec dataset_for(std::uint64_t seed) const {
    data::DatasetSpec s = dataset;
    if (dataset_per_seed) s.seed = seed;
    return s;
  }
  [[nodiscard]] train::TrainConfig train_for(std::uint64_t seed) const {
    train::TrainConfig c = train;
    c.seed = seed;
    c.model.feature_dim = dataset.feature_dim;
    return c;
  }
};

inline data::DatasetSpec dataset_preset(const std::string& name) {
  if (name == "colored") return data::colored_benchmark_spec();
  if (name == "base-to-new") {
    data::DatasetSpec s;
    s.mode = data::ShiftMode::diversity;
    s.n_classes = 8;
    s.feature_dim = 16;
    s.domains = {{"domain_0", data::DomainRole::train},
                 {"domain_1", data::DomainRole::train},
                 {"domain_2", data::DomainRole::test}};
    s.style_offsets = {{"domain_0", {1.0, 0.0}}, {"domain_1", {-1.0, 0.0}}, {"domain_2", {0.0, 1.5}}};
    s.label_noise = 0.0;
    s.noise_sigma = 0.3;
    s.samples_per_class_per_env = 60;
    return s;
  }
  throw ConfigError("unknown dataset preset '" + name + "' (expected colored or base-to-new)");
}

inline nlohmann::json to_json(const ExperimentConfig& e) {
  nlohmann::json b2n = {{"base_fraction", e.base_to_new.base_fraction}};
  if (e.base_to_new.base) b2n["base"] = *e.base_to_new.base;
  if (e.base_to_new.novel) b2n["novel"] = *e.base_to_new.novel;
  return {{"id", e.id},
          {"dataset_name", e.dataset_name},
          {"dataset", data::to_json(e.dataset)},
          {"dataset_per_seed", e.dataset_per_seed},
          {"baseline", to_string(e.baseline)},
          {"train", train::to_json(e.train)},
          {"seeds", e.seeds},
          {"threshold", {{"retention", e.threshold.retention}, {"quantile_literal", e.threshold.quantile_literal}}},
          {"search", to_json(e.search)},
          {"base_to_new", b2n},
          {"landscape",
           {{"resolution", e.landscape.resolution}, {"margin", e.landscape.margin}}}};
}

/// Reads a config file. "preset" picks a dataset preset, "baseline" a
/// training preset; explicit "dataset" / "train" objects are overlaid on top.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig e;
  try {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    if (j.contains("id")) e.id = j.at("id").get<std::string>();
    if (j.contains("preset")) {
      e.dataset_name = j.at("preset").get<std::string>();
      e.dataset = dataset_preset(e.dataset_name);
    }
    if (j.contains("dataset_name")) e.dataset_name = j.at("dataset_name").get<std::string>();
    if (j.contains("dataset")) {
      nlohmann::json merged = data::to_json(e.dataset);
      merged.update(j.at("dataset"));
      e.dataset = data::dataset_spec_from_json(merged);
    }
    if (j.contains("dataset_per_seed")) e.dataset_per_seed = j.at("dataset_per_seed").get<bool>();
    if (j.contains("baseline")) {
      e.baseline = parse_baseline(j.at("baseline").get<std::string>());
      e.train = apply_baseline(e.train, e.baseline);
    }
    if (j.contains("train")) e.train = train::train_config_from_json(j.at("train"), e.train);
    if (j.contains("seeds")) e.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("threshold")) {
      const auto& t = j.at("threshold");
      if (t.contains("retention")) e.threshold.retention = t.at("retention").get<double>();
      if (t.contains("quantile_literal")) e.threshold.quantile_literal = t.at("quantile_literal").get<bool>();
    }
    if (j.contains("search")) e.search = search_space_from_json(j.at("search"), e.search);
    if (j.contains("base_to_new")) {
      const auto& b = j.at("base_to_new");
      if (b.contains("base_fraction")) e.base_to_new.base_fraction = b.at("base_fraction").get<double>();
      if (b.contains("base")) e.base_to_new.base = b.at("base").get<std::vector<std::size_t>>();
      if (b.contains("novel")) e.base_to_new.novel = b.at("novel").get<std::vector<std::size_t>>();
    }
    if (j.contains("landscape")) {
      const auto& l = j.at("landscape");
      if (l.contains("resolution")) e.landscape.resolution = l.at("resolution").get<std::size_t>();
      if (l.contains("margin")) e.landscape.margin = l.at("margin").get<double>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed experiment config: ") + ex.what());
  }
  if (e.seeds.empty()) throw ConfigError("at least one seed is required");
  if (e.id.empty() || e.id.find(',') != std::string::npos) throw ConfigError("config id must be nonempty without commas");
  e.dataset.validate();
  e.train.validate();
  e.search.validate();
  return e;
}

}  // namespace bayescal::harness
