#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bayescal/diff.hpp"
#include "bayescal/errors.hpp"
#include "bayescal/model/alignment.hpp"
#include "bayescal/model/batch.hpp"
#include "bayescal/model/leaves.hpp"
#include "bayescal/model/text_branch.hpp"
#include "bayescal/model/variational.hpp"

namespace bayescal::objective {

using diff::Array;
using diff::Shape;
using diff::Var;

namespace detail {

inline void check_labels(const Var& logits, std::span<const std::size_t> labels) {
  const Shape s = logits.shape();
  if (labels.size() != s.rows) {
    throw StructuralError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + s.str());
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= s.cols) {
      throw VocabularyError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) + " outside " +
                            std::to_string(s.cols) + " classes");
    }
  }
}

/// Sum over rows of -log softmax(logits)[label].
inline Var ce_sum(const Var& logits, std::span<const std::size_t> labels) {
  check_labels(logits, labels);
  return -diff::sum(diff::gather_cols(diff::log_softmax_rows(logits), {labels.begin(), labels.end()}));
}

/// Constant k x N matrix picking `rows` out of an N-row array.
inline Var row_selector(std::span<const std::size_t> rows, std::size_t n) {
  Array s(Shape{rows.size(), n});
  for (std::size_t k = 0; k < rows.size(); ++k) s(k, rows[k]) = 1.0;
  return Var::constant(std::move(s));
}

}  // namespace detail

/// Mean cross-entropy over rows, via log-sum-exp.
inline Var cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  if (labels.empty()) throw StructuralError("cross_entropy of an empty batch");
  return detail::ce_sum(logits, labels) * (1.0 / static_cast<double>(labels.size()));
}

struct FeatureGradients {
  Var g1;  // N x d, category loss
  Var g2;  // N x d, environment loss
};

/// Per-example gradients of the category and environment losses with respect
/// to the feature rows. `features` must be the leaf both logits were built
/// from. Row i of the summed loss depends only on row i of the features, so
/// the gradient of the sum is the stack of per-example gradients.
inline FeatureGradients feature_gradients(const Var& features, const Var& cat_logits,
                                          std::span<const std::size_t> y_cat, const Var& env_logits,
                                          std::span<const std::size_t> y_env, bool create_graph = true) {
  if (!features.requires_grad()) throw ContractError("feature_gradients: features must require grad");
  const auto one = [&](const Var& logits, std::span<const std::size_t> labels, const char* which) {
    const auto g = diff::grad(detail::ce_sum(logits, labels), std::span<const Var>(&features, 1), create_graph);
    const Array& v = g[0].value();
    for (std::size_t r = 0; r < v.rows(); ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) {
        if (!std::isfinite(v(r, c))) {
          throw NumericError(std::string("non-finite ") + which + " feature gradient at example " + std::to_string(r));
        }
      }
    }
    return g[0];
  };
  return {one(cat_logits, y_cat, "category"), one(env_logits, y_env, "environment")};
}

enum class OrthReduction {
  mean,       ///< per-example squared cosines, averaged
  batch_flat  ///< one squared cosine between the flattened gradient matrices
};

inline std::string to_string(OrthReduction r) { return r == OrthReduction::mean ? "mean" : "batch_flat"; }

inline OrthReduction parse_orth_reduction(const std::string& s) {
  if (s == "mean") return OrthReduction::mean;
  if (s == "batch_flat") return OrthReduction::batch_flat;
  throw ConfigError("unknown orth reduction '" + s + "' (expected mean or batch_flat)");
}

struct OrthResult {
  Var value;
  /// Some example had both gradients below the guard norm; it contributed 0.
  bool degenerate = false;
};

inline OrthResult orth_penalty(const Var& g1, const Var& g2, OrthReduction reduction = OrthReduction::mean) {
  if (g1.shape() != g2.shape()) {
    throw StructuralError("orth_penalty: gradient shapes " + g1.shape().str() + " and " + g2.shape().str() + " differ");
  }
  Var a = g1;
  Var b = g2;
  if (reduction == OrthReduction::batch_flat) {
    a = diff::reshape(a, Shape{1, a.shape().size()});
    b = diff::reshape(b, Shape{1, b.shape().size()});
  }
  const Var na = diff::norm_rows(a);
  const Var nb = diff::norm_rows(b);
  const Var ua = diff::div(a, diff::shift(na, diff::kGuardEps), diff::Guard::none);
  const Var ub = diff::div(b, diff::shift(nb, diff::kGuardEps), diff::Guard::none);
  const std::size_t rows = a.shape().rows;
  const Var cos = diff::sum_to(ua * ub, Shape{rows, 1});

  Array mask(Shape{rows, 1}, 1.0);
  bool degenerate = false;
  for (std::size_t r = 0; r < rows; ++r) {
    if (na.value()[r] < diff::kGuardEps && nb.value()[r] < diff::kGuardEps) {
      mask[r] = 0.0;
      degenerate = true;
    }
  }
  return {diff::mean(diff::square(cos) * Var::constant(std::move(mask))), degenerate};
}

struct EnvLogits {
  Var logits;
  std::vector<std::size_t> labels;
};

/// Sum over environments of (d/dw loss_e(w * logits) at w = 1)^2.
inline Var irm_penalty(const std::map<std::size_t, EnvLogits>& per_env) {
  if (per_env.empty()) throw ProtocolError("irm_penalty needs at least one environment");
  Var total;
  for (const auto& [env, e] : per_env) {
    if (e.labels.empty()) throw ProtocolError("environment " + std::to_string(env) + " has no examples");
    const Var w = Var::scalar(1.0, true);
    const Var loss = cross_entropy(e.logits * w, e.labels);
    const Var dw = diff::grad(loss, {w})[0];
    const Var term = diff::square(dw);
    total = total.defined() ? total + term : term;
  }
  return total;
}

enum class IrmBranch { category, environment };

inline std::string to_string(IrmBranch b) { return b == IrmBranch::category ? "category" : "environment"; }

inline IrmBranch parse_irm_branch(const std::string& s) {
  if (s == "category") return IrmBranch::category;
  if (s == "environment") return IrmBranch::environment;
  throw ConfigError("unknown irm branch '" + s + "' (expected category or environment)");
}

struct ObjectiveConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  model::KlMode kl_mode = model::KlMode::paper;
  OrthReduction orth = OrthReduction::mean;
  IrmBranch irm_branch = IrmBranch::category;
  /// Multiplier on both KL terms (1 / number of training examples for
  /// per-datum scaling).
  double kl_weight = 1.0;
  /// Deterministic variant: no KL terms at all.
  bool include_kl = true;
  /// Leave zero-weighted penalties out of the graph; their values are still
  /// reported.
  bool prune_zero_weighted = true;

  friend bool operator==(const ObjectiveConfig&, const ObjectiveConfig&) = default;
};

struct LossBreakdown {
  double ce_cat = 0.0;
  double ce_env = 0.0;
  double irm = 0.0;
  double orth = 0.0;
  double kl_cat = 0.0;
  double kl_env = 0.0;
  double total = 0.0;

  [[nodiscard]] bool all_finite() const {
    for (double v : {ce_cat, ce_env, irm, orth, kl_cat, kl_env, total}) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  [[nodiscard]] double reassemble(const ObjectiveConfig& c) const {
    return ce_cat + c.lambda1 * ce_env + c.lambda2 * irm + c.lambda3 * orth + kl_cat + kl_env;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"ce_cat", ce_cat}, {"ce_env", ce_env}, {"irm", irm},    {"orth", orth},
            {"kl_cat", kl_cat}, {"kl_env", kl_env}, {"total", total}};
  }
};

struct LossTerms {
  Var ce_cat, ce_env, irm, orth, kl_cat, kl_env, total;
  bool orth_degenerate = false;
  bool alignment_degenerate = false;

  [[nodiscard]] LossBreakdown breakdown() const {
    return {ce_cat.item(), ce_env.item(), irm.item(), orth.item(), kl_cat.item(), kl_env.item(), total.item()};
  }
};

/// One Monte Carlo draw of both branches' parameters.
struct SamplePair {
  model::SampledParams category;
  model::SampledParams environment;
};

/// The full objective. Data terms are averaged over `samples`; KL terms are
/// closed form in the leaves.
inline LossTerms total_objective(const model::LabeledBatch& batch, const model::TextBranch& category,
                                 const model::TextBranch& environment, const model::BranchLeaves& category_leaves,
                                 const model::BranchLeaves& environment_leaves, std::span<const SamplePair> samples,
                                 double temperature, const ObjectiveConfig& config) {
  batch.validate();
  if (samples.empty()) throw ContractError("total_objective needs at least one parameter sample");
  if (config.lambda1 < 0.0 || config.lambda2 < 0.0 || config.lambda3 < 0.0) {
    throw ConfigError("objective weights must be non-negative");
  }
  const std::size_t n = batch.size();
  const double inv_s = 1.0 / static_cast<double>(samples.size());
  const bool orth_in_graph = config.lambda3 > 0.0 || !config.prune_zero_weighted;
  const bool irm_in_graph = config.lambda2 > 0.0 || !config.prune_zero_weighted;

  LossTerms t;
  Var ce_cat, ce_env, irm, orth;
  const auto accumulate = [&](Var& acc, const Var& v) { acc = acc.defined() ? acc + v * inv_s : v * inv_s; };

  for (const SamplePair& s : samples) {
    const Var features = Var::leaf(batch.features, true);
    const auto cat = model::alignment_logits(
        features, category.text_features(batch.category_names, s.category), temperature);
    const auto env = model::alignment_logits(
        features, environment.text_features(batch.environment_names, s.environment), temperature);
    t.alignment_degenerate = t.alignment_degenerate || cat.degenerate || env.degenerate;

    accumulate(ce_cat, cross_entropy(cat.logits, batch.y_cat));
    accumulate(ce_env, cross_entropy(env.logits, batch.y_env));

    {
      const bool on_category = config.irm_branch == IrmBranch::category;
      const Var& logits = on_category ? cat.logits : env.logits;
      const auto& labels = on_category ? batch.y_cat : batch.y_env;
      std::map<std::size_t, EnvLogits> per_env;
      for (const auto& [e, rows] : batch.env_partition) {
        EnvLogits el{diff::matmul(detail::row_selector(rows, n), logits), {}};
        for (std::size_t r : rows) el.labels.push_back(labels[r]);
        per_env.emplace(e, std::move(el));
      }
      Var v = irm_penalty(per_env);
      if (!irm_in_graph) v = Var::constant(v.value());
      accumulate(irm, v);
    }

    const auto g = feature_gradients(features, cat.logits, batch.y_cat, env.logits, batch.y_env, orth_in_graph);
    const auto o = orth_penalty(g.g1, g.g2, config.orth);
    t.orth_degenerate = t.orth_degenerate || o.degenerate;
    accumulate(orth, orth_in_graph ? o.value : Var::constant(o.value.value()));
  }

  t.ce_cat = ce_cat;
  t.ce_env = ce_env;
  t.irm = irm;
  t.orth = orth;
  if (config.include_kl) {
    t.kl_cat = model::branch_kl(category_leaves, config.kl_mode) * config.kl_weight;
    t.kl_env = model::branch_kl(environment_leaves, config.kl_mode) * config.kl_weight;
  } else {
    t.kl_cat = Var::scalar(0.0);
    t.kl_env = Var::scalar(0.0);
  }

  Var total = t.ce_cat;
  if (config.lambda1 > 0.0 || !config.prune_zero_weighted) total = total + t.ce_env * config.lambda1;
  if (irm_in_graph) total = total + t.irm * config.lambda2;
  if (orth_in_graph) total = total + t.orth * config.lambda3;
  t.total = total + t.kl_cat + t.kl_env;
  return t;
}

}  // namespace bayescal::objective
