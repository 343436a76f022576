#pragma once

#include <cstdint>
#include <cstring>
#include <functional>
#include <ostream>
#include <set>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bayescal/data.hpp"
#include "bayescal/diff.hpp"
#include "bayescal/evalstats/metrics.hpp"
#include "bayescal/evalstats/predict.hpp"
#include "bayescal/model/leaves.hpp"
#include "bayescal/model/model.hpp"
#include "bayescal/objective.hpp"

namespace bayescal::train {

using diff::Array;
using diff::Var;

enum class Strategy { train_domain, test_domain, ood };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::train_domain: return "train-domain";
    case Strategy::test_domain: return "test-domain";
    case Strategy::ood: return "ood";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "train-domain") return Strategy::train_domain;
  if (s == "test-domain") return Strategy::test_domain;
  if (s == "ood") return Strategy::ood;
  throw ConfigError("unknown selection strategy '" + s + "' (expected train-domain, test-domain or ood)");
}

struct TrainConfig {
  model::ModelConfig model;
  objective::ObjectiveConfig objective;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t epochs = 30;
  /// Full-batch optimizer steps per epoch.
  std::size_t steps_per_epoch = 1;
  /// Monte Carlo draws per step.
  std::size_t mc_samples = 1;
  /// false: deterministic variant (posterior means only, no sampling, no KL).
  bool variational = true;
  /// Scale KL by 1 / (number of training examples).
  bool kl_per_datum = false;
  std::size_t shots = 16;
  std::uint64_t seed = 1;
  Strategy strategy = Strategy::test_domain;
  evalstats::PredictOptions predict;

  void validate() const {
    const auto& o = objective;
    if (o.lambda1 < 0.0 || o.lambda2 < 0.0 || o.lambda3 < 0.0) throw ConfigError("lambdas must be non-negative");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (mc_samples < 1) throw ConfigError("mc_samples must be at least 1");
    if (!(model.temperature > 0.0)) throw ConfigError("temperature must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  const auto& o = c.objective;
  return {{"model", model::to_json(c.model)},
          {"lambda1", o.lambda1},
          {"lambda2", o.lambda2},
          {"lambda3", o.lambda3},
          {"kl_mode", o.kl_mode == model::KlMode::paper ? "paper" : "exact"},
          {"orth_reduction", objective::to_string(o.orth)},
          {"irm_branch", objective::to_string(o.irm_branch)},
          {"prune_zero_weighted", o.prune_zero_weighted},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"mc_samples", c.mc_samples},
          {"variational", c.variational},
          {"kl_per_datum", c.kl_per_datum},
          {"shots", c.shots},
          {"seed", c.seed},
          {"strategy", to_string(c.strategy)},
          {"predict_samples", c.predict.samples}};
}

/// Overlays the fields present in `j` onto `c`.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  try {
    auto& o = c.objective;
    if (j.contains("model")) c.model = model::model_config_from_json(j.at("model"), c.model);
    if (j.contains("lambda1")) o.lambda1 = j.at("lambda1").get<double>();
    if (j.contains("lambda2")) o.lambda2 = j.at("lambda2").get<double>();
    if (j.contains("lambda3")) o.lambda3 = j.at("lambda3").get<double>();
    if (j.contains("kl_mode")) {
      const auto m = j.at("kl_mode").get<std::string>();
      if (m != "paper" && m != "exact") throw ConfigError("kl_mode must be paper or exact");
      o.kl_mode = m == "paper" ? model::KlMode::paper : model::KlMode::exact;
    }
    if (j.contains("orth_reduction")) o.orth = objective::parse_orth_reduction(j.at("orth_reduction").get<std::string>());
    if (j.contains("irm_branch")) o.irm_branch = objective::parse_irm_branch(j.at("irm_branch").get<std::string>());
    if (j.contains("prune_zero_weighted")) o.prune_zero_weighted = j.at("prune_zero_weighted").get<bool>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("momentum")) c.momentum = j.at("momentum").get<double>();
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("steps_per_epoch")) c.steps_per_epoch = j.at("steps_per_epoch").get<std::size_t>();
    if (j.contains("mc_samples")) c.mc_samples = j.at("mc_samples").get<std::size_t>();
    if (j.contains("variational")) c.variational = j.at("variational").get<bool>();
    if (j.contains("kl_per_datum")) c.kl_per_datum = j.at("kl_per_datum").get<bool>();
    if (j.contains("shots")) c.shots = j.at("shots").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("predict_samples")) c.predict.samples = j.at("predict_samples").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

// Optimizer -----------------------------------------------------------------

struct OptimizerState {
  std::vector<Array> velocity;
};

/// Classical momentum: v <- m v + g; p <- p - lr v.
inline void optimizer_step(std::span<Array* const> params, std::span<const Array> grads, double lr, double momentum,
                           OptimizerState& state) {
  if (params.size() != grads.size()) throw StructuralError("optimizer_step: one gradient per parameter required");
  if (state.velocity.empty()) {
    for (const Array* p : params) state.velocity.emplace_back(p->shape());
  }
  if (state.velocity.size() != params.size()) throw StructuralError("optimizer_step: state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Array& p = *params[k];
    Array& v = state.velocity[k];
    const Array& g = grads[k];
    if (g.shape() != p.shape() || v.shape() != p.shape()) {
      throw StructuralError("optimizer_step: gradient shape " + g.shape().str() + " does not match parameter " +
                            p.shape().str());
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  }
}

// Checkpoints ---------------------------------------------------------------

struct Metrics {
  std::optional<double> train_acc;
  std::optional<double> val_acc;       ///< training-domain validation
  std::optional<double> test_val_acc;  ///< test-distribution validation
  std::optional<double> ood_val_acc;   ///< held-out-domain validation
  std::optional<double> test_acc;

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    const auto put = [&](const char* k, const std::optional<double>& v) {
      if (v) j[k] = *v;
    };
    put("train_acc", train_acc);
    put("val_acc", val_acc);
    put("test_val_acc", test_val_acc);
    put("ood_val_acc", ood_val_acc);
    put("test_acc", test_acc);
    return j;
  }
};

struct Checkpoint {
  std::size_t epoch = 0;
  std::map<std::string, model::VariationalParam> category;
  std::map<std::string, model::VariationalParam> environment;
  Metrics metrics;
  objective::LossBreakdown loss;
};

inline void apply_checkpoint(model::BayesCalModel& m, const Checkpoint& c) {
  m.category().params() = c.category;
  m.environment().params() = c.environment;
}

struct StepLog {
  std::size_t epoch = 0;
  std::size_t step = 0;
  objective::LossBreakdown loss;
  bool orth_degenerate = false;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"step", step}, {"loss", loss.to_json()}, {"orth_degenerate", orth_degenerate}};
  }
};

/// Everything a run trains and evaluates on. Category candidates are the
/// class names trained against (all classes, or the base classes).
struct TaskData {
  const data::Dataset* dataset = nullptr;
  data::Splits splits;
  std::vector<std::size_t> category_candidates;
  std::vector<std::size_t> environment_candidates;
};

/// Splits and candidate lists for a dataset under `config`; `classes`
/// restricts everything to a subset of classes (base-class training).
inline TaskData make_task(const data::Dataset& ds, const TrainConfig& config,
                          const std::optional<std::vector<std::size_t>>& classes = std::nullopt) {
  TaskData t;
  t.dataset = &ds;
  std::optional<std::set<std::size_t>> subset;
  if (classes) subset.emplace(classes->begin(), classes->end());
  t.splits = data::prepare_splits(ds, config.shots, config.seed, subset);
  t.category_candidates = classes ? *classes : data::iota_indices(ds.category_names.size());
  t.environment_candidates = data::iota_indices(ds.environment_names.size());
  return t;
}

struct TrainResult {
  std::vector<Checkpoint> checkpoints;   ///< epochs 0 (initialization) .. E
  std::vector<std::vector<double>> trajectory;  ///< flattened posterior means per checkpoint
};

/// Hash of every frozen array of the model (encoder and text-branch parts).
inline std::uint64_t frozen_digest(const model::BayesCalModel& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&](const Array& a) {
    for (double v : a.data()) {
      std::uint64_t bits = 0;
      std::memcpy(&bits, &v, sizeof bits);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    }
  };
  mix(m.encoder().mixing());
  for (const model::TextBranch* b : {&m.category(), &m.environment()}) {
    mix(b->token_embeddings());
    mix(b->mixer());
    mix(b->word_vectors());
  }
  return h;
}

namespace detail {

struct EncodedSplit {
  Array features;
  std::vector<std::size_t> labels;  // positions in the category candidates
};

inline std::optional<EncodedSplit> encode_split(const model::BayesCalModel& m, const TaskData& t,
                                                const std::vector<std::size_t>& rows) {
  if (rows.empty()) return std::nullopt;
  const auto b = data::make_batch(m.encoder(), *t.dataset, rows, t.category_candidates, t.environment_candidates);
  return EncodedSplit{b.features, b.y_cat};
}

inline std::optional<double> split_accuracy(const model::BayesCalModel& m, const TaskData& t,
                                            const std::optional<EncodedSplit>& s, const TrainConfig& c) {
  if (!s) return std::nullopt;
  const auto preds = evalstats::predict(m, s->features, s->labels, t.category_candidates,
                                        evalstats::PartitionTag::test, c.predict);
  return evalstats::accuracy(preds);
}

}  // namespace detail

/// Trains both text branches of `m` in place and returns one checkpoint per
/// epoch (the first is the initialization) plus the parameter trajectory.
inline TrainResult train_task(model::BayesCalModel& m, const TaskData& task, const TrainConfig& config,
                              const std::function<void(const StepLog&)>& on_step = {}) {
  config.validate();
  const auto& splits = task.splits;
  const auto batch = data::make_batch(m.encoder(), *task.dataset, splits.train, task.category_candidates,
                                      task.environment_candidates);
  if (config.objective.lambda2 > 0.0 && batch.env_partition.size() < 2) {
    throw ProtocolError("the IRM penalty needs at least 2 training environments, found " +
                        std::to_string(batch.env_partition.size()));
  }
  const auto train_eval = detail::encode_split(m, task, splits.train);
  const auto val_eval = detail::encode_split(m, task, splits.val);
  const auto test_val_eval = detail::encode_split(m, task, splits.test_val);
  const auto ood_val_eval = detail::encode_split(m, task, splits.ood_val);
  const auto test_eval = detail::encode_split(m, task, splits.test);

  objective::ObjectiveConfig obj = config.objective;
  obj.include_kl = config.variational;
  obj.kl_weight = config.kl_per_datum ? 1.0 / static_cast<double>(batch.size()) : 1.0;
  const double scale = config.variational ? 1.0 : 0.0;
  Rng rng(derive_seed(config.seed, stream::sampling));
  OptimizerState opt_state;

  struct Forward {
    model::BranchLeaves category;
    model::BranchLeaves environment;
    objective::LossTerms terms;
  };
  // Fresh leaves and fresh sampling noise for every forward pass.
  const auto forward = [&]() {
    Forward f{model::make_leaves(m.category(), config.variational),
              model::make_leaves(m.environment(), config.variational), {}};
    std::vector<objective::SamplePair> samples;
    for (std::size_t s = 0; s < config.mc_samples; ++s) {
      samples.push_back({model::sample_branch(f.category, model::draw_noise(m.category(), rng), scale),
                         model::sample_branch(f.environment, model::draw_noise(m.environment(), rng), scale)});
    }
    f.terms = objective::total_objective(batch, m.category(), m.environment(), f.category, f.environment, samples,
                                         m.config().temperature, obj);
    return f;
  };

  const auto snapshot = [&](std::size_t epoch, const objective::LossBreakdown& loss) {
    Checkpoint c;
    c.epoch = epoch;
    c.category = m.category().params();
    c.environment = m.environment().params();
    c.loss = loss;
    c.metrics.train_acc = detail::split_accuracy(m, task, train_eval, config);
    c.metrics.val_acc = detail::split_accuracy(m, task, val_eval, config);
    c.metrics.test_val_acc = detail::split_accuracy(m, task, test_val_eval, config);
    c.metrics.ood_val_acc = detail::split_accuracy(m, task, ood_val_eval, config);
    c.metrics.test_acc = detail::split_accuracy(m, task, test_eval, config);
    return c;
  };

  const auto check_finite = [](const objective::LossBreakdown& b) {
    if (!b.all_finite()) throw NumericError("non-finite loss: " + b.to_json().dump());
  };

  TrainResult out;
  {
    const auto initial = forward().terms.breakdown();
    check_finite(initial);
    out.checkpoints.push_back(snapshot(0, initial));
    out.trajectory.push_back(m.flat_means());
  }

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    objective::LossBreakdown last;
    for (std::size_t step = 0; step < config.steps_per_epoch; ++step) {
      const Forward f = forward();
      last = f.terms.breakdown();
      check_finite(last);
      std::vector<Var> wrt;
      std::vector<Array*> targets;
      const auto collect = [&](const model::BranchLeaves& leaves, model::TextBranch& branch) {
        for (const auto& [name, l] : leaves) {
          auto& p = branch.params().at(name);
          wrt.push_back(l.mu);
          targets.push_back(&p.mu);
          if (config.variational) {
            wrt.push_back(l.rho);
            targets.push_back(&p.rho);
          }
        }
      };
      collect(f.category, m.category());
      collect(f.environment, m.environment());
      const auto g = diff::grad(f.terms.total, wrt, false);
      std::vector<Array> grads;
      grads.reserve(g.size());
      for (std::size_t k = 0; k < g.size(); ++k) grads.push_back(g[k].value());
      optimizer_step(targets, grads, config.learning_rate, config.momentum, opt_state);
      if (on_step) on_step({epoch, step, last, f.terms.orth_degenerate});
    }
    out.checkpoints.push_back(snapshot(epoch, last));
    out.trajectory.push_back(m.flat_means());
  }
  return out;
}

// Model selection -----------------------------------------------------------

struct Selection {
  std::size_t index = 0;  ///< into the checkpoint list
  double validation_accuracy = 0.0;
};

/// Training-domain / OoD: argmax of the respective validation accuracy, ties
/// to the earliest epoch. Test-domain: the last checkpoint, scored on
/// test-distribution validation data.
inline Selection select_model(std::span<const Checkpoint> checkpoints, Strategy strategy) {
  if (checkpoints.empty()) throw ProtocolError("no checkpoints to select from");
  const auto score = [&](const Checkpoint& c) -> double {
    const std::optional<double>* v = nullptr;
    const char* what = "";
    switch (strategy) {
      case Strategy::train_domain: v = &c.metrics.val_acc; what = "training-domain validation"; break;
      case Strategy::test_domain: v = &c.metrics.test_val_acc; what = "test-domain validation"; break;
      case Strategy::ood: v = &c.metrics.ood_val_acc; what = "held-out-domain validation"; break;
    }
    if (!*v) throw ProtocolError(std::string(what) + " set missing for strategy " + to_string(strategy));
    return **v;
  };
  if (strategy == Strategy::test_domain) {
    return {checkpoints.size() - 1, score(checkpoints.back())};
  }
  Selection best{0, score(checkpoints[0])};
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    const double s = score(checkpoints[i]);
    if (s > best.validation_accuracy) best = {i, s};
  }
  return best;
}

// Persistence ---------------------------------------------------------------

inline nlohmann::json checkpoint_to_json(const model::BayesCalModel& m, const Checkpoint& c) {
  model::BayesCalModel copy = m;
  apply_checkpoint(copy, c);
  return {{"epoch", c.epoch},
          {"model", model::model_to_json(copy)},
          {"metrics", c.metrics.to_json()},
          {"loss", c.loss.to_json()}};
}

/// CSV with header epoch,p0,p1,... and one row per checkpoint.
inline void write_trajectory_csv(std::ostream& out, const std::vector<std::vector<double>>& trajectory) {
  out.precision(17);
  out << "epoch";
  const std::size_t p = trajectory.empty() ? 0 : trajectory.front().size();
  for (std::size_t k = 0; k < p; ++k) out << ",p" << k;
  out << '\n';
  for (std::size_t e = 0; e < trajectory.size(); ++e) {
    out << e;
    for (double v : trajectory[e]) out << ',' << v;
    out << '\n';
  }
}

}  // namespace bayescal::train
