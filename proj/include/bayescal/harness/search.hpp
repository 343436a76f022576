#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "bayescal/errors.hpp"
#include "bayescal/evalstats/aggregate.hpp"
#include "bayescal/harness/search_space.hpp"
#include "bayescal/train.hpp"

namespace bayescal::harness {

/// What an evaluator reports for one (config, seed) run.
struct TrialScore {
  double validation = 0.0;  ///< selected-model validation accuracy
  evalstats::TrialRow row;
};

struct TrialFailure {
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  std::string message;
};

struct SearchResult {
  std::size_t best = 0;
  double best_validation = 0.0;
  std::vector<train::TrainConfig> candidates;
  std::vector<double> mean_validation;  ///< per candidate; NaN if every seed failed
  evalstats::TrialTable table;
  std::vector<TrialFailure> failures;
  std::size_t runs = 0;  ///< training runs attempted

  [[nodiscard]] const train::TrainConfig& best_config() const { return candidates.at(best); }
};

inline std::string trial_id(std::size_t t) { return "trial_" + std::to_string(t); }

/// Evaluates every candidate on every seed. `evaluate(config, seed)` returns
/// a TrialScore; a bayescal::Error from it marks that run failed and skips
/// it. The winner has the highest mean validation accuracy over its
/// successful seeds (ties to the earlier candidate).
template <class Evaluator>
SearchResult run_search(std::vector<train::TrainConfig> candidates, const std::vector<std::uint64_t>& seeds,
                        Evaluator&& evaluate) {
  if (candidates.empty()) throw ConfigError("search needs at least one candidate");
  if (seeds.empty()) throw ConfigError("search needs at least one seed");
  SearchResult out;
  out.candidates = std::move(candidates);
  bool any = false;
  for (std::size_t t = 0; t < out.candidates.size(); ++t) {
    double sum = 0.0;
    std::size_t ok = 0;
    for (std::uint64_t seed : seeds) {
      ++out.runs;
      try {
        TrialScore s = evaluate(out.candidates[t], seed);
        s.row.config_id = trial_id(t);
        s.row.seed = std::to_string(seed);
        out.table.push_back(std::move(s.row));
        sum += s.validation;
        ++ok;
      } catch (const Error& e) {
        out.failures.push_back({t, seed, e.what()});
      }
    }
    const double mean = ok ? sum / static_cast<double>(ok) : std::numeric_limits<double>::quiet_NaN();
    out.mean_validation.push_back(mean);
    if (ok && (!any || mean > out.best_validation)) {
      out.best = t;
      out.best_validation = mean;
      any = true;
    }
  }
  if (!any) throw ProtocolError("every search trial failed; first error: " + out.failures.front().message);
  return out;
}

template <class Evaluator>
SearchResult run_search(const SearchSpace& space, const train::TrainConfig& base, Evaluator&& evaluate) {
  return run_search(sample_candidates(space, base), space.seeds, std::forward<Evaluator>(evaluate));
}

/// Full objective plus each single-term removal.
inline std::vector<std::pair<std::string, train::TrainConfig>> ablation_variants(const train::TrainConfig& base) {
  std::vector<std::pair<std::string, train::TrainConfig>> out{{"full", base}};
  auto v = base;
  v.objective.lambda1 = 0.0;
  out.emplace_back("no_lambda1", v);
  v = base;
  v.objective.lambda2 = 0.0;
  out.emplace_back("no_lambda2", v);
  v = base;
  v.objective.lambda3 = 0.0;
  out.emplace_back("no_lambda3", v);
  return out;
}

struct AblationResult {
  evalstats::TrialTable table;
  std::vector<evalstats::Aggregate> aggregates;

  /// Mean of `acc` for a variant name.
  [[nodiscard]] double mean_acc(const std::string& variant) const {
    for (const auto& a : aggregates) {
      if (a.config_id == variant && a.mean.acc) return *a.mean.acc;
    }
    throw ProtocolError("no ablation variant '" + variant + "'");
  }
};

/// Runs every ablation variant on every seed; errors propagate.
template <class Evaluator>
AblationResult run_ablation(const train::TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                            Evaluator&& evaluate) {
  AblationResult out;
  for (const auto& [name, config] : ablation_variants(base)) {
    for (std::uint64_t seed : seeds) {
      TrialScore s = evaluate(config, seed);
      s.row.config_id = name;
      s.row.seed = std::to_string(seed);
      out.table.push_back(std::move(s.row));
    }
  }
  out.aggregates = evalstats::aggregate_trials(out.table);
  return out;
}

}  // namespace bayescal::harness
