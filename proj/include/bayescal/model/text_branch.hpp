#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bayescal/diff.hpp"
#include "bayescal/errors.hpp"
#include "bayescal/model/variational.hpp"
#include "bayescal/rng.hpp"

namespace bayescal::model {

/// Task-specific instantiation of a text branch.
enum class BranchKind {
  PL,   ///< learnable prompt context fed through a frozen text mixer
  LV,   ///< learnable per-name feature vectors
  W2V,  ///< fixed word vectors through a learnable two-layer perceptron
};

enum class TokenPosition { end, middle };

inline std::string to_string(BranchKind k) {
  switch (k) {
    case BranchKind::PL: return "PL";
    case BranchKind::LV: return "LV";
    case BranchKind::W2V: return "W2V";
  }
  return "?";
}

inline BranchKind parse_branch_kind(const std::string& s) {
  if (s == "PL") return BranchKind::PL;
  if (s == "LV") return BranchKind::LV;
  if (s == "W2V") return BranchKind::W2V;
  throw ConfigError("unknown branch kind '" + s + "' (expected PL, LV or W2V)");
}

inline std::string to_string(TokenPosition p) { return p == TokenPosition::end ? "end" : "middle"; }

inline TokenPosition parse_token_position(const std::string& s) {
  if (s == "end") return TokenPosition::end;
  if (s == "middle") return TokenPosition::middle;
  throw ConfigError("unknown class token position '" + s + "' (expected end or middle)");
}

struct TextBranchConfig {
  BranchKind kind = BranchKind::PL;
  std::size_t context_tokens = 16;  // M
  TokenPosition class_token_position = TokenPosition::end;
  bool class_specific_context = false;
  std::size_t token_dim = 512;
  std::size_t word_dim = 300;
  std::size_t hidden_dim = 64;
  /// Spread of the frozen text parts around each name's true semantic
  /// direction; 0 gives perfectly aligned pretrained text.
  double semantic_noise = 0.5;
  /// Weight of the position-specific part of each mixer block.
  double positional_mix = 0.25;

  friend bool operator==(const TextBranchConfig&, const TextBranchConfig&) = default;
};

/// Parameter initialization and prior.
struct InitConfig {
  double mu_sd = 0.02;
  double sigma = 0.05;
  double prior_sigma = 1.0;

  friend bool operator==(const InitConfig&, const InitConfig&) = default;
};

/// Sampled (or posterior-mean) values of a branch's learnable blocks.
using SampledParams = std::map<std::string, Var>;

/// One text branch over a fixed vocabulary of names.
///
/// Frozen parts are generated from `frozen_seed` and the per-name semantic
/// targets (feature-space directions each name means to the frozen encoders):
///   PL  - token embeddings e_i and a mixer W whose every block is A + c*B_m,
///         with e_i solving e_i A = target_i (minimum norm);
///   W2V - word vectors target_i * P plus noise.
/// LV has no frozen parts.
class TextBranch {
 public:
  TextBranch(TextBranchConfig config, const Array& semantic_targets, std::uint64_t frozen_seed,
             std::uint64_t init_seed, InitConfig init = {})
      : config_(config),
        vocab_size_(semantic_targets.rows()),
        feature_dim_(semantic_targets.cols()),
        frozen_seed_(frozen_seed) {
    if (vocab_size_ == 0) throw ConfigError("text branch needs a nonempty vocabulary");
    build_frozen(semantic_targets);
    Rng rng(init_seed);
    auto add = [&](const std::string& name, Shape s) {
      params_.emplace(name, VariationalParam::init(s, rng, init.mu_sd, init.sigma, init.prior_sigma));
    };
    switch (config_.kind) {
      case BranchKind::PL: {
        if (config_.context_tokens == 0) throw ConfigError("PL needs at least one context token");
        const std::size_t sets = config_.class_specific_context ? vocab_size_ : 1;
        add("ctx", Shape{sets * config_.context_tokens, config_.token_dim});
        break;
      }
      case BranchKind::LV:
        add("table", Shape{vocab_size_, feature_dim_});
        break;
      case BranchKind::W2V:
        add("w1", Shape{config_.word_dim, config_.hidden_dim});
        add("b1", Shape{1, config_.hidden_dim});
        add("w2", Shape{config_.hidden_dim, feature_dim_});
        add("b2", Shape{1, feature_dim_});
        break;
    }
  }

  [[nodiscard]] const TextBranchConfig& config() const noexcept { return config_; }
  [[nodiscard]] BranchKind kind() const noexcept { return config_.kind; }
  [[nodiscard]] std::size_t vocab_size() const noexcept { return vocab_size_; }
  [[nodiscard]] std::size_t feature_dim() const noexcept { return feature_dim_; }
  [[nodiscard]] std::uint64_t frozen_seed() const noexcept { return frozen_seed_; }

  [[nodiscard]] const std::map<std::string, VariationalParam>& params() const noexcept { return params_; }
  [[nodiscard]] std::map<std::string, VariationalParam>& params() noexcept { return params_; }

  [[nodiscard]] const Array& token_embeddings() const noexcept { return token_embeddings_; }
  [[nodiscard]] const Array& mixer() const noexcept { return mixer_; }
  [[nodiscard]] const Array& word_vectors() const noexcept { return word_vectors_; }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t k = 0;
    for (const auto& [_, p] : params_) k += p.size();
    return k;
  }

  /// Posterior means as constants (evaluation path).
  [[nodiscard]] SampledParams posterior_mean() const {
    SampledParams out;
    for (const auto& [name, p] : params_) out.emplace(name, Var::constant(p.mu));
    return out;
  }

  /// Text features (one unnormalized row per requested name).
  [[nodiscard]] Var text_features(std::span<const std::size_t> names, const SampledParams& sampled) const {
    if (names.empty()) throw VocabularyError("text_features: no names requested");
    for (std::size_t n : names) {
      if (n >= vocab_size_) {
        throw VocabularyError("name index " + std::to_string(n) + " outside vocabulary of size " +
                              std::to_string(vocab_size_));
      }
    }
    switch (config_.kind) {
      case BranchKind::PL: return prompt_features(names, at(sampled, "ctx"));
      case BranchKind::LV: return diff::matmul(selection(names), at(sampled, "table"));
      case BranchKind::W2V: {
        Array x(Shape{names.size(), config_.word_dim});
        for (std::size_t r = 0; r < names.size(); ++r) {
          for (std::size_t c = 0; c < config_.word_dim; ++c) x(r, c) = word_vectors_(names[r], c);
        }
        const Var h = diff::softplus(diff::matmul(Var::constant(x), at(sampled, "w1")) + at(sampled, "b1"));
        return diff::matmul(h, at(sampled, "w2")) + at(sampled, "b2");
      }
    }
    throw ConfigError("unhandled branch kind");
  }

  /// Index of the class-token block inside a prompt of M+1 tokens.
  [[nodiscard]] std::size_t class_token_index() const noexcept {
    return config_.class_token_position == TokenPosition::end ? config_.context_tokens : config_.context_tokens / 2;
  }

 private:
  static const Var& at(const SampledParams& sampled, const std::string& name) {
    auto it = sampled.find(name);
    if (it == sampled.end()) throw ContractError("missing sampled parameter block '" + name + "'");
    return it->second;
  }

  [[nodiscard]] Var selection(std::span<const std::size_t> names) const {
    Array s(Shape{names.size(), vocab_size_});
    for (std::size_t r = 0; r < names.size(); ++r) s(r, names[r]) = 1.0;
    return Var::constant(std::move(s));
  }

  [[nodiscard]] Var prompt_features(std::span<const std::size_t> names, const Var& ctx) const {
    const std::size_t m = config_.context_tokens;
    const std::size_t d = config_.token_dim;
    const std::size_t split = class_token_index();
    std::vector<Var> rows;
    rows.reserve(names.size());
    for (std::size_t name : names) {
      const std::size_t base = config_.class_specific_context ? name * m : 0;
      Array token(Shape{1, d});
      for (std::size_t c = 0; c < d; ++c) token[c] = token_embeddings_(name, c);
      std::vector<Var> parts;
      if (split > 0) parts.push_back(diff::slice(ctx, diff::Axis::rows, base, base + split));
      parts.push_back(Var::constant(std::move(token)));
      if (split < m) parts.push_back(diff::slice(ctx, diff::Axis::rows, base + split, base + m));
      const Var prompt = diff::concat(parts, diff::Axis::rows);
      rows.push_back(diff::reshape(prompt, Shape{1, (m + 1) * d}));
    }
    const Var flat = rows.size() == 1 ? rows.front() : diff::concat(rows, diff::Axis::rows);
    return diff::matmul(flat, Var::constant(mixer_));
  }

  void build_frozen(const Array& targets) {
    Rng rng(frozen_seed_);
    const std::size_t n = vocab_size_, fd = feature_dim_;
    std::normal_distribution<double> normal(0.0, 1.0);
    // Distorted semantic targets shared by PL and W2V.
    Array distorted = targets;
    for (std::size_t i = 0; i < n; ++i) {
      double norm = 0.0;
      for (std::size_t c = 0; c < fd; ++c) norm += targets(i, c) * targets(i, c);
      norm = std::sqrt(norm / static_cast<double>(fd));
      for (std::size_t c = 0; c < fd; ++c) distorted(i, c) += config_.semantic_noise * norm * normal(rng);
    }
    if (config_.kind == BranchKind::PL) {
      const std::size_t d = config_.token_dim, blocks = config_.context_tokens + 1;
      const double s = 1.0 / std::sqrt(static_cast<double>(d));
      Eigen::MatrixXd shared(d, fd);
      for (Eigen::Index c = 0; c < shared.cols(); ++c) {
        for (Eigen::Index r = 0; r < shared.rows(); ++r) shared(r, c) = s * normal(rng);
      }
      mixer_ = Array(Shape{blocks * d, fd});
      for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t c = 0; c < fd; ++c) {
          for (std::size_t r = 0; r < d; ++r) {
            mixer_(b * d + r, c) = shared(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) +
                                   config_.positional_mix * s * normal(rng);
          }
        }
      }
      // Minimum-norm e with e * shared = target: e = target (shared^T shared)^-1 shared^T.
      const Eigen::MatrixXd gram_inv = (shared.transpose() * shared).inverse();
      const Eigen::MatrixXd solve = gram_inv * shared.transpose();  // fd x d
      token_embeddings_ = Array(Shape{n, d});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t r = 0; r < d; ++r) {
          double v = 0.0;
          for (std::size_t c = 0; c < fd; ++c) v += distorted(i, c) * solve(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(r));
          token_embeddings_(i, r) = v;
        }
      }
    } else if (config_.kind == BranchKind::W2V) {
      const std::size_t w = config_.word_dim;
      Array projection = normal_array(rng, Shape{fd, w}, 1.0 / std::sqrt(static_cast<double>(fd)));
      word_vectors_ = Array(Shape{n, w});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < w; ++k) {
          double v = 0.0;
          for (std::size_t c = 0; c < fd; ++c) v += distorted(i, c) * projection(c, k);
          word_vectors_(i, k) = v;
        }
      }
    }
  }

  TextBranchConfig config_;
  std::size_t vocab_size_;
  std::size_t feature_dim_;
  std::uint64_t frozen_seed_;
  std::map<std::string, VariationalParam> params_;
  Array token_embeddings_;
  Array mixer_;
  Array word_vectors_;
};

}  // namespace bayescal::model
