#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bayescal/diff/array.hpp"
#include "bayescal/errors.hpp"
#include "bayescal/rng.hpp"

namespace bayescal::data {

using diff::Array;
using diff::Shape;

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ParseError("unknown split '" + s + "'");
}

/// One synthetic image in latent form. The latent vector fed to the frozen
/// encoder is category_signal ++ environment_signal ++ noise.
struct RawSample {
  std::vector<double> category_signal;
  std::vector<double> environment_signal;
  std::vector<double> noise;
  std::size_t y_cat = 0;
  std::size_t y_env = 0;
  /// Domain the sample was drawn from; IRM environments are domains.
  std::size_t domain = 0;
  Split split = Split::train;

  [[nodiscard]] std::size_t latent_dim() const {
    return category_signal.size() + environment_signal.size() + noise.size();
  }

  [[nodiscard]] std::vector<double> latent() const {
    std::vector<double> out(category_signal);
    out.insert(out.end(), environment_signal.begin(), environment_signal.end());
    out.insert(out.end(), noise.begin(), noise.end());
    return out;
  }

  friend bool operator==(const RawSample&, const RawSample&) = default;
};

struct Dataset {
  std::vector<RawSample> samples;
  std::vector<std::string> category_names;
  std::vector<std::string> environment_names;
  std::vector<std::string> domain_names;

  [[nodiscard]] std::size_t size() const noexcept { return samples.size(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class ShiftMode { correlation, diversity };

inline std::string to_string(ShiftMode m) { return m == ShiftMode::correlation ? "correlation" : "diversity"; }

inline ShiftMode parse_shift_mode(const std::string& s) {
  if (s == "correlation") return ShiftMode::correlation;
  if (s == "diversity") return ShiftMode::diversity;
  throw ConfigError("unknown shift mode '" + s + "' (expected correlation or diversity)");
}

/// What a domain is used for: few-shot training, final testing, or held-out
/// validation for the OoD selection strategy.
enum class DomainRole { train, test, val };

inline std::string to_string(DomainRole r) {
  switch (r) {
    case DomainRole::train: return "train";
    case DomainRole::test: return "test";
    case DomainRole::val: return "val";
  }
  return "?";
}

inline DomainRole parse_domain_role(const std::string& s) {
  if (s == "train") return DomainRole::train;
  if (s == "test") return DomainRole::test;
  if (s == "val") return DomainRole::val;
  throw ConfigError("unknown domain role '" + s + "' (expected train, test or val)");
}

struct DomainSpec {
  std::string name;
  DomainRole role = DomainRole::train;

  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

/// Generator configuration.
///
/// Correlation mode: the environment signal is one of n_classes "colors";
/// color c goes with label c with probability corr[domain]. Environment
/// labels are colors.
/// Diversity mode: the environment signal is the domain's style offset plus
/// noise and is independent of the class. Environment labels are domains.
struct DatasetSpec {
  ShiftMode mode = ShiftMode::correlation;
  std::size_t n_classes = 2;
  std::size_t feature_dim = 16;
  std::vector<DomainSpec> domains;
  double label_noise = 0.25;
  std::map<std::string, double> corr;
  std::map<std::string, std::vector<double>> style_offsets;
  double noise_sigma = 0.3;
  double category_strength = 1.0;
  double environment_strength = 1.0;
  std::size_t samples_per_class_per_env = 100;
  std::uint64_t seed = 0;

  [[nodiscard]] std::size_t environment_dim() const {
    if (mode == ShiftMode::correlation) return n_classes;
    return style_offsets.empty() ? 0 : style_offsets.begin()->second.size();
  }

  [[nodiscard]] std::size_t noise_dim() const { return feature_dim - n_classes - environment_dim(); }

  [[nodiscard]] std::vector<std::size_t> domains_with_role(DomainRole r) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < domains.size(); ++i) {
      if (domains[i].role == r) out.push_back(i);
    }
    return out;
  }

  void validate() const {
    if (n_classes < 2) throw ConfigError("need at least 2 classes");
    const auto prob = [](double p, const std::string& what) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(what + " must lie in [0, 1], got " + std::to_string(p));
    };
    prob(label_noise, "label_noise");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
    if (domains_with_role(DomainRole::train).size() < 2) throw ConfigError("need at least 2 training domains");
    std::set<std::string> names;
    for (const auto& d : domains) {
      if (!names.insert(d.name).second) throw ConfigError("duplicate domain name '" + d.name + "'");
    }
    if (mode == ShiftMode::correlation) {
      for (const auto& d : domains) {
        auto it = corr.find(d.name);
        if (it == corr.end()) throw ConfigError("no correlation probability for domain '" + d.name + "'");
        prob(it->second, "corr[" + d.name + "]");
      }
    } else {
      std::set<std::vector<double>> seen;
      std::size_t dim = 0;
      for (const auto& d : domains) {
        auto it = style_offsets.find(d.name);
        if (it == style_offsets.end()) throw ConfigError("no style offset for domain '" + d.name + "'");
        if (dim == 0) dim = it->second.size();
        if (it->second.empty() || it->second.size() != dim) throw ConfigError("style offsets must share one nonzero length");
        if (!seen.insert(it->second).second) throw ConfigError("duplicate style offset for domain '" + d.name + "'");
      }
    }
    if (n_classes + environment_dim() > feature_dim) {
      throw ConfigError("feature_dim " + std::to_string(feature_dim) + " cannot hold " + std::to_string(n_classes) +
                        " category and " + std::to_string(environment_dim()) + " environment dimensions");
    }
  }

  [[nodiscard]] std::vector<std::string> category_names() const {
    std::vector<std::string> out;
    for (std::size_t c = 0; c < n_classes; ++c) out.push_back("class_" + std::to_string(c));
    return out;
  }

  [[nodiscard]] std::vector<std::string> environment_names() const {
    std::vector<std::string> out;
    if (mode == ShiftMode::correlation) {
      for (std::size_t c = 0; c < n_classes; ++c) out.push_back("env_" + std::to_string(c));
    } else {
      for (const auto& d : domains) out.push_back(d.name);
    }
    return out;
  }

  [[nodiscard]] std::vector<std::string> domain_names() const {
    std::vector<std::string> out;
    for (const auto& d : domains) out.push_back(d.name);
    return out;
  }

  /// Latent direction each category name stands for (n_classes x feature_dim).
  [[nodiscard]] Array category_prototypes() const {
    Array p(Shape{n_classes, feature_dim});
    for (std::size_t c = 0; c < n_classes; ++c) p(c, c) = category_strength;
    return p;
  }

  /// Latent direction each environment name stands for.
  [[nodiscard]] Array environment_prototypes() const {
    const auto names = environment_names();
    Array p(Shape{names.size(), feature_dim});
    for (std::size_t e = 0; e < names.size(); ++e) {
      if (mode == ShiftMode::correlation) {
        p(e, n_classes + e) = environment_strength;
      } else {
        const auto& off = style_offsets.at(names[e]);
        for (std::size_t k = 0; k < off.size(); ++k) p(e, n_classes + k) = environment_strength * off[k];
      }
    }
    return p;
  }

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

inline nlohmann::json to_json(const DatasetSpec& s) {
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : s.domains) domains.push_back({{"name", d.name}, {"role", to_string(d.role)}});
  return {{"mode", to_string(s.mode)},
          {"n_classes", s.n_classes},
          {"feature_dim", s.feature_dim},
          {"domains", domains},
          {"label_noise", s.label_noise},
          {"corr", s.corr},
          {"style_offsets", s.style_offsets},
          {"noise_sigma", s.noise_sigma},
          {"category_strength", s.category_strength},
          {"environment_strength", s.environment_strength},
          {"samples_per_class_per_env", s.samples_per_class_per_env},
          {"seed", s.seed}};
}

inline DatasetSpec dataset_spec_from_json(const nlohmann::json& j) {
  try {
    DatasetSpec s;
    if (j.contains("mode")) s.mode = parse_shift_mode(j.at("mode").get<std::string>());
    if (j.contains("n_classes")) s.n_classes = j.at("n_classes").get<std::size_t>();
    if (j.contains("feature_dim")) s.feature_dim = j.at("feature_dim").get<std::size_t>();
    for (const auto& d : j.at("domains")) {
      s.domains.push_back({d.at("name").get<std::string>(), parse_domain_role(d.value("role", std::string("train")))});
    }
    if (j.contains("label_noise")) s.label_noise = j.at("label_noise").get<double>();
    if (j.contains("corr")) s.corr = j.at("corr").get<std::map<std::string, double>>();
    if (j.contains("style_offsets")) s.style_offsets = j.at("style_offsets").get<std::map<std::string, std::vector<double>>>();
    if (j.contains("noise_sigma")) s.noise_sigma = j.at("noise_sigma").get<double>();
    if (j.contains("category_strength")) s.category_strength = j.at("category_strength").get<double>();
    if (j.contains("environment_strength")) s.environment_strength = j.at("environment_strength").get<double>();
    if (j.contains("samples_per_class_per_env")) {
      s.samples_per_class_per_env = j.at("samples_per_class_per_env").get<std::size_t>();
    }
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed dataset spec: ") + e.what());
  }
}

/// The colored two-class benchmark: two training domains with color/label
/// agreement 0.9 and 0.8, a test domain with 0.1, and a held-out 0.5 domain.
inline DatasetSpec colored_benchmark_spec(std::uint64_t seed = 0) {
  DatasetSpec s;
  s.mode = ShiftMode::correlation;
  s.domains = {{"domain_0", DomainRole::train},
               {"domain_1", DomainRole::train},
               {"domain_2", DomainRole::test},
               {"domain_3", DomainRole::val}};
  s.corr = {{"domain_0", 0.9}, {"domain_1", 0.8}, {"domain_2", 0.1}, {"domain_3", 0.5}};
  s.seed = seed;
  return s;
}

namespace detail {

inline Split split_for(DomainRole r) {
  switch (r) {
    case DomainRole::train: return Split::train;
    case DomainRole::test: return Split::test;
    case DomainRole::val: return Split::val;
  }
  return Split::train;
}

inline std::vector<double> gaussian(Rng& rng, std::size_t n, double sd) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = sd * g(rng);
  return v;
}

/// A uniformly chosen index in [0, n) other than `skip`.
inline std::size_t other_index(Rng& rng, std::size_t n, std::size_t skip) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 2);
  const std::size_t k = pick(rng);
  return k >= skip ? k + 1 : k;
}

inline Dataset empty_dataset(const DatasetSpec& s) {
  return {{}, s.category_names(), s.environment_names(), s.domain_names()};
}

}  // namespace detail

/// Colored-background analogue. For every (observed label, domain) cell,
/// exactly samples_per_class_per_env samples are produced: the true class is
/// the label flipped with probability label_noise, the category signal shows
/// the true class, and the color agrees with the observed label with
/// probability corr[domain].
inline Dataset generate_correlation_shift(const DatasetSpec& spec) {
  if (spec.mode != ShiftMode::correlation) throw ConfigError("spec is not in correlation mode");
  spec.validate();
  Dataset ds = detail::empty_dataset(spec);
  Rng rng(derive_seed(spec.seed, stream::semantics));
  std::bernoulli_distribution flip(spec.label_noise);
  const std::size_t n = spec.n_classes;
  for (std::size_t d = 0; d < spec.domains.size(); ++d) {
    std::bernoulli_distribution agree(spec.corr.at(spec.domains[d].name));
    for (std::size_t label = 0; label < n; ++label) {
      for (std::size_t k = 0; k < spec.samples_per_class_per_env; ++k) {
        const std::size_t true_class = flip(rng) ? detail::other_index(rng, n, label) : label;
        const std::size_t color = agree(rng) ? label : detail::other_index(rng, n, label);
        RawSample s;
        s.category_signal = detail::gaussian(rng, n, spec.noise_sigma);
        s.category_signal[true_class] += spec.category_strength;
        s.environment_signal = detail::gaussian(rng, n, spec.noise_sigma);
        s.environment_signal[color] += spec.environment_strength;
        s.noise = detail::gaussian(rng, spec.noise_dim(), spec.noise_sigma);
        s.y_cat = label;
        s.y_env = color;
        s.domain = d;
        s.split = detail::split_for(spec.domains[d].role);
        ds.samples.push_back(std::move(s));
      }
    }
  }
  return ds;
}

/// Style-shift analogue: the environment signal is the domain's offset plus
/// noise, independent of the class.
inline Dataset generate_diversity_shift(const DatasetSpec& spec) {
  if (spec.mode != ShiftMode::diversity) throw ConfigError("spec is not in diversity mode");
  spec.validate();
  for (std::size_t t : spec.domains_with_role(DomainRole::test)) {
    for (std::size_t r : spec.domains_with_role(DomainRole::train)) {
      if (spec.style_offsets.at(spec.domains[t].name) == spec.style_offsets.at(spec.domains[r].name)) {
        throw ConfigError("test domain '" + spec.domains[t].name + "' shares its style with a training domain");
      }
    }
  }
  Dataset ds = detail::empty_dataset(spec);
  Rng rng(derive_seed(spec.seed, stream::semantics));
  std::bernoulli_distribution flip(spec.label_noise);
  const std::size_t n = spec.n_classes;
  for (std::size_t d = 0; d < spec.domains.size(); ++d) {
    const auto& offset = spec.style_offsets.at(spec.domains[d].name);
    for (std::size_t label = 0; label < n; ++label) {
      for (std::size_t k = 0; k < spec.samples_per_class_per_env; ++k) {
        const std::size_t true_class = flip(rng) ? detail::other_index(rng, n, label) : label;
        RawSample s;
        s.category_signal = detail::gaussian(rng, n, spec.noise_sigma);
        s.category_signal[true_class] += spec.category_strength;
        s.environment_signal = detail::gaussian(rng, offset.size(), spec.noise_sigma);
        for (std::size_t i = 0; i < offset.size(); ++i) s.environment_signal[i] += spec.environment_strength * offset[i];
        s.noise = detail::gaussian(rng, spec.noise_dim(), spec.noise_sigma);
        s.y_cat = label;
        s.y_env = d;
        s.domain = d;
        s.split = detail::split_for(spec.domains[d].role);
        ds.samples.push_back(std::move(s));
      }
    }
  }
  return ds;
}

inline Dataset generate(const DatasetSpec& spec) {
  return spec.mode == ShiftMode::correlation ? generate_correlation_shift(spec) : generate_diversity_shift(spec);
}

}  // namespace bayescal::data
