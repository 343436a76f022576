#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "bayescal/model/alignment.hpp"
#include "bayescal/model/encoder.hpp"
#include "bayescal/model/text_branch.hpp"
#include "bayescal/model/variational.hpp"
#include "bayescal/rng.hpp"

namespace bayescal::model {

struct ModelConfig {
  std::size_t feature_dim = 32;
  TextBranchConfig text;
  InitConfig init;
  double temperature = 10.0;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Frozen image encoder plus the category and environment text branches.
/// `*_prototypes` are the latent directions each class / environment name
/// denotes; the frozen text parts are aligned to their encoded images.
class BayesCalModel {
 public:
  BayesCalModel(ModelConfig config, const Array& category_prototypes, const Array& environment_prototypes,
                std::uint64_t encoder_seed, std::uint64_t init_seed)
      : config_(config),
        encoder_(config.feature_dim, encoder_seed),
        category_prototypes_(category_prototypes),
        environment_prototypes_(environment_prototypes),
        encoder_seed_(encoder_seed),
        init_seed_(init_seed),
        category_(config.text, encode_rows(encoder_, category_prototypes),
                  derive_seed(encoder_seed, stream::category_text), derive_seed(init_seed, stream::category_text),
                  config.init),
        environment_(config.text, encode_rows(encoder_, environment_prototypes),
                     derive_seed(encoder_seed, stream::environment_text),
                     derive_seed(init_seed, stream::environment_text), config.init) {}

  [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
  [[nodiscard]] const FrozenImageEncoder& encoder() const noexcept { return encoder_; }
  [[nodiscard]] const TextBranch& category() const noexcept { return category_; }
  [[nodiscard]] TextBranch& category() noexcept { return category_; }
  [[nodiscard]] const TextBranch& environment() const noexcept { return environment_; }
  [[nodiscard]] TextBranch& environment() noexcept { return environment_; }
  [[nodiscard]] const Array& category_prototypes() const noexcept { return category_prototypes_; }
  [[nodiscard]] const Array& environment_prototypes() const noexcept { return environment_prototypes_; }
  [[nodiscard]] std::uint64_t encoder_seed() const noexcept { return encoder_seed_; }
  [[nodiscard]] std::uint64_t init_seed() const noexcept { return init_seed_; }

  /// Posterior means of every block of both branches, flattened in a fixed
  /// order (category blocks then environment blocks, by name).
  [[nodiscard]] std::vector<double> flat_means() const {
    std::vector<double> out;
    for (const TextBranch* b : {&category_, &environment_}) {
      for (const auto& [_, p] : b->params()) out.insert(out.end(), p.mu.vec().begin(), p.mu.vec().end());
    }
    return out;
  }

  /// Inverse of flat_means.
  void set_flat_means(std::span<const double> flat) {
    std::size_t k = 0;
    for (TextBranch* b : {&category_, &environment_}) {
      for (auto& [_, p] : b->params()) {
        if (k + p.size() > flat.size()) throw StructuralError("set_flat_means: vector too short");
        std::copy(flat.begin() + static_cast<std::ptrdiff_t>(k), flat.begin() + static_cast<std::ptrdiff_t>(k + p.size()),
                  p.mu.data().begin());
        k += p.size();
      }
    }
    if (k != flat.size()) throw StructuralError("set_flat_means: vector too long");
  }

 private:
  static Array encode_rows(const FrozenImageEncoder& enc, const Array& latent) {
    if (latent.cols() != enc.feature_dim()) {
      throw StructuralError("prototype width " + std::to_string(latent.cols()) + " does not match feature_dim " +
                            std::to_string(enc.feature_dim()));
    }
    Array out(latent.shape());
    for (std::size_t r = 0; r < latent.rows(); ++r) {
      const Array row = enc.apply(latent.data().subspan(r * latent.cols(), latent.cols()));
      for (std::size_t c = 0; c < latent.cols(); ++c) out(r, c) = row[c];
    }
    return out;
  }

  ModelConfig config_;
  FrozenImageEncoder encoder_;
  Array category_prototypes_;
  Array environment_prototypes_;
  std::uint64_t encoder_seed_;
  std::uint64_t init_seed_;
  TextBranch category_;
  TextBranch environment_;
};

// JSON ---------------------------------------------------------------------

inline nlohmann::json array_to_json(const Array& a) {
  return {{"shape", {a.rows(), a.cols()}}, {"data", a.vec()}};
}

inline Array array_from_json(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2) throw ParseError("array shape must have two dimensions");
  return Array(Shape{shape[0], shape[1]}, j.at("data").get<std::vector<double>>());
}

inline nlohmann::json to_json(const TextBranchConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"context_tokens", c.context_tokens},
          {"class_token_position", to_string(c.class_token_position)},
          {"class_specific_context", c.class_specific_context},
          {"token_dim", c.token_dim},
          {"word_dim", c.word_dim},
          {"hidden_dim", c.hidden_dim},
          {"semantic_noise", c.semantic_noise},
          {"positional_mix", c.positional_mix}};
}

inline TextBranchConfig text_config_from_json(const nlohmann::json& j, TextBranchConfig c = {}) {
  if (j.contains("kind")) c.kind = parse_branch_kind(j.at("kind").get<std::string>());
  if (j.contains("context_tokens")) c.context_tokens = j.at("context_tokens").get<std::size_t>();
  if (j.contains("class_token_position")) {
    c.class_token_position = parse_token_position(j.at("class_token_position").get<std::string>());
  }
  if (j.contains("class_specific_context")) c.class_specific_context = j.at("class_specific_context").get<bool>();
  if (j.contains("token_dim")) c.token_dim = j.at("token_dim").get<std::size_t>();
  if (j.contains("word_dim")) c.word_dim = j.at("word_dim").get<std::size_t>();
  if (j.contains("hidden_dim")) c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  if (j.contains("semantic_noise")) c.semantic_noise = j.at("semantic_noise").get<double>();
  if (j.contains("positional_mix")) c.positional_mix = j.at("positional_mix").get<double>();
  return c;
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"feature_dim", c.feature_dim},
          {"text", to_json(c.text)},
          {"init", {{"mu_sd", c.init.mu_sd}, {"sigma", c.init.sigma}, {"prior_sigma", c.init.prior_sigma}}},
          {"temperature", c.temperature}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  if (j.contains("feature_dim")) c.feature_dim = j.at("feature_dim").get<std::size_t>();
  if (j.contains("text")) c.text = text_config_from_json(j.at("text"), c.text);
  if (j.contains("init")) {
    const auto& i = j.at("init");
    if (i.contains("mu_sd")) c.init.mu_sd = i.at("mu_sd").get<double>();
    if (i.contains("sigma")) c.init.sigma = i.at("sigma").get<double>();
    if (i.contains("prior_sigma")) c.init.prior_sigma = i.at("prior_sigma").get<double>();
  }
  if (j.contains("temperature")) c.temperature = j.at("temperature").get<double>();
  return c;
}

inline nlohmann::json params_to_json(const TextBranch& b) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, p] : b.params()) {
    out[name] = {{"mu", array_to_json(p.mu)},
                 {"rho", array_to_json(p.rho)},
                 {"prior_mu", array_to_json(p.prior_mu)},
                 {"prior_sigma", array_to_json(p.prior_sigma)}};
  }
  return out;
}

inline void params_from_json(TextBranch& b, const nlohmann::json& j) {
  for (auto& [name, p] : b.params()) {
    if (!j.contains(name)) throw ParseError("checkpoint lacks parameter block '" + name + "'");
    const auto& e = j.at(name);
    VariationalParam loaded{array_from_json(e.at("mu")), array_from_json(e.at("rho")),
                            array_from_json(e.at("prior_mu")), array_from_json(e.at("prior_sigma"))};
    if (loaded.shape() != p.shape()) {
      throw ParseError("parameter block '" + name + "' has shape " + loaded.shape().str() + ", expected " +
                       p.shape().str());
    }
    loaded.validate();
    p = std::move(loaded);
  }
}

/// Model checkpoint: configuration, frozen-part seeds, name prototypes and
/// all variational arrays. Frozen arrays are regenerated from the seeds.
inline nlohmann::json model_to_json(const BayesCalModel& m) {
  return {{"branch_kind", to_string(m.config().text.kind)},
          {"config", to_json(m.config())},
          {"encoder_seed", m.encoder_seed()},
          {"init_seed", m.init_seed()},
          {"frozen_seeds",
           {{"category", m.category().frozen_seed()}, {"environment", m.environment().frozen_seed()}}},
          {"category_prototypes", array_to_json(m.category_prototypes())},
          {"environment_prototypes", array_to_json(m.environment_prototypes())},
          {"category_params", params_to_json(m.category())},
          {"environment_params", params_to_json(m.environment())}};
}

inline BayesCalModel model_from_json(const nlohmann::json& j) {
  try {
    BayesCalModel m(model_config_from_json(j.at("config")), array_from_json(j.at("category_prototypes")),
                    array_from_json(j.at("environment_prototypes")), j.at("encoder_seed").get<std::uint64_t>(),
                    j.at("init_seed").get<std::uint64_t>());
    params_from_json(m.category(), j.at("category_params"));
    params_from_json(m.environment(), j.at("environment_params"));
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace bayescal::model
