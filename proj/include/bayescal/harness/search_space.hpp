#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bayescal/errors.hpp"
#include "bayescal/model/text_branch.hpp"
#include "bayescal/rng.hpp"
#include "bayescal/train.hpp"

namespace bayescal::harness {

/// 10^U(a, b).
struct LogUniform {
  double a = -4.0;
  double b = -1.0;

  friend bool operator==(const LogUniform&, const LogUniform&) = default;
};

struct SearchSpace {
  /// Unset ranges leave the base configuration's value alone.
  std::optional<LogUniform> lambda1 = LogUniform{-4.0, -1.0};
  std::optional<LogUniform> lambda2 = LogUniform{-4.0, -1.0};
  std::optional<LogUniform> lambda3 = LogUniform{-4.0, -1.0};
  std::vector<model::TokenPosition> class_token_position{model::TokenPosition::end, model::TokenPosition::middle};
  std::vector<bool> class_specific_context{true, false};
  std::size_t trials = 20;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::uint64_t master_seed = 0;

  void validate() const {
    for (const auto* r : {&lambda1, &lambda2, &lambda3}) {
      if (*r && !((*r)->a <= (*r)->b)) throw ConfigError("log-uniform range needs a <= b");
      if (*r && !(std::isfinite((*r)->a) && std::isfinite((*r)->b))) throw ConfigError("log-uniform bounds must be finite");
    }
    if (class_token_position.empty() || class_specific_context.empty()) {
      throw ConfigError("categorical search choices may not be empty");
    }
    if (trials < 1) throw ConfigError("search needs at least one trial");
    if (seeds.empty()) throw ConfigError("search needs at least one seed");
  }
};

struct HyperSample {
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<double> lambda3;
  model::TokenPosition class_token_position = model::TokenPosition::end;
  bool class_specific_context = false;
};

inline double sample_log_uniform(const LogUniform& r, Rng& rng) {
  if (r.a == r.b) return std::pow(10.0, r.a);
  std::uniform_real_distribution<double> u(r.a, r.b);
  return std::pow(10.0, u(rng));
}

inline HyperSample sample_hyperparams(const SearchSpace& space, Rng& rng) {
  HyperSample h;
  if (space.lambda1) h.lambda1 = sample_log_uniform(*space.lambda1, rng);
  if (space.lambda2) h.lambda2 = sample_log_uniform(*space.lambda2, rng);
  if (space.lambda3) h.lambda3 = sample_log_uniform(*space.lambda3, rng);
  std::uniform_int_distribution<std::size_t> ctp(0, space.class_token_position.size() - 1);
  std::uniform_int_distribution<std::size_t> csc(0, space.class_specific_context.size() - 1);
  h.class_token_position = space.class_token_position[ctp(rng)];
  h.class_specific_context = space.class_specific_context[csc(rng)];
  return h;
}

inline train::TrainConfig apply_hyperparams(train::TrainConfig c, const HyperSample& h) {
  if (h.lambda1) c.objective.lambda1 = *h.lambda1;
  if (h.lambda2) c.objective.lambda2 = *h.lambda2;
  if (h.lambda3) c.objective.lambda3 = *h.lambda3;
  c.model.text.class_token_position = h.class_token_position;
  c.model.text.class_specific_context = h.class_specific_context;
  return c;
}

/// Candidate configurations: trial t draws from its own counter-derived
/// stream, so a trial's config does not depend on which trials ran before.
inline std::vector<train::TrainConfig> sample_candidates(const SearchSpace& space, const train::TrainConfig& base) {
  space.validate();
  std::vector<train::TrainConfig> out;
  for (std::size_t t = 0; t < space.trials; ++t) {
    Rng rng(derive_seed(space.master_seed, stream::search, t));
    out.push_back(apply_hyperparams(base, sample_hyperparams(space, rng)));
  }
  return out;
}

inline nlohmann::json to_json(const SearchSpace& s) {
  const auto range = [](const std::optional<LogUniform>& r) -> nlohmann::json {
    if (!r) return nullptr;
    return nlohmann::json::array({r->a, r->b});
  };
  std::vector<std::string> ctp;
  for (auto p : s.class_token_position) ctp.push_back(model::to_string(p));
  return {{"lambda1", range(s.lambda1)},
          {"lambda2", range(s.lambda2)},
          {"lambda3", range(s.lambda3)},
          {"class_token_position", ctp},
          {"class_specific_context", s.class_specific_context},
          {"trials", s.trials},
          {"seeds", s.seeds},
          {"master_seed", s.master_seed}};
}

inline SearchSpace search_space_from_json(const nlohmann::json& j, SearchSpace s = {}) {
  const auto range = [&](const char* key, std::optional<LogUniform>& r) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (v.is_null()) {
      r.reset();
      return;
    }
    const auto ab = v.get<std::vector<double>>();
    if (ab.size() != 2) throw ConfigError(std::string(key) + " range must be [a, b]");
    r = LogUniform{ab[0], ab[1]};
  };
  range("lambda1", s.lambda1);
  range("lambda2", s.lambda2);
  range("lambda3", s.lambda3);
  if (j.contains("class_token_position")) {
    s.class_token_position.clear();
    for (const auto& p : j.at("class_token_position")) {
      s.class_token_position.push_back(model::parse_token_position(p.get<std::string>()));
    }
  }
  if (j.contains("class_specific_context")) {
    s.class_specific_context = j.at("class_specific_context").get<std::vector<bool>>();
  }
  if (j.contains("trials")) s.trials = j.at("trials").get<std::size_t>();
  if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("master_seed")) s.master_seed = j.at("master_seed").get<std::uint64_t>();
  s.validate();
  return s;
}

}  // namespace bayescal::harness
