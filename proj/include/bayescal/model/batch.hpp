#pragma once

#include <map>
#include <string>
#include <vector>

#include "bayescal/diff/array.hpp"
#include "bayescal/errors.hpp"

namespace bayescal::model {

/// Encoded image features with their category / environment labels.
/// Labels are positions in `category_names` / `environment_names`, which
/// hold vocabulary indices of the candidate names for each branch.
/// `env_partition` groups rows by training environment.
struct LabeledBatch {
  diff::Array features;  // N x feature_dim
  std::vector<std::size_t> y_cat;
  std::vector<std::size_t> y_env;
  std::vector<std::size_t> category_names;
  std::vector<std::size_t> environment_names;
  std::map<std::size_t, std::vector<std::size_t>> env_partition;

  [[nodiscard]] std::size_t size() const noexcept { return features.rows(); }

  void validate() const {
    const std::size_t n = features.rows();
    if (y_cat.size() != n || y_env.size() != n) {
      throw StructuralError("batch has " + std::to_string(n) + " rows but " + std::to_string(y_cat.size()) +
                            " category and " + std::to_string(y_env.size()) + " environment labels");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (y_cat[i] >= category_names.size()) {
        throw VocabularyError("category label " + std::to_string(y_cat[i]) + " at row " + std::to_string(i) +
                              " outside " + std::to_string(category_names.size()) + " candidates");
      }
      if (y_env[i] >= environment_names.size()) {
        throw VocabularyError("environment label " + std::to_string(y_env[i]) + " at row " + std::to_string(i) +
                              " outside " + std::to_string(environment_names.size()) + " candidates");
      }
    }
    std::vector<int> seen(n, 0);
    for (const auto& [env, rows] : env_partition) {
      for (std::size_t r : rows) {
        if (r >= n) throw StructuralError("partition of environment " + std::to_string(env) + " names row " + std::to_string(r));
        ++seen[r];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (seen[i] != 1) {
        throw ProtocolError("row " + std::to_string(i) + " appears in " + std::to_string(seen[i]) +
                            " environment buckets, expected exactly one");
      }
    }
  }
};

}  // namespace bayescal::model
