#pragma once

#include <map>
#include <span>
#include <vector>

#include "bayescal/data/dataset.hpp"
#include "bayescal/model/batch.hpp"
#include "bayescal/model/encoder.hpp"

namespace bayescal::data {

/// Frozen-encoder features of the given rows (N x feature_dim).
inline Array encode_rows(const model::FrozenImageEncoder& encoder, const Dataset& ds,
                         std::span<const std::size_t> rows) {
  Array out(Shape{rows.size(), encoder.feature_dim()});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& s = ds.samples.at(rows[r]);
    if (s.latent_dim() != encoder.feature_dim()) {
      throw StructuralError("sample " + std::to_string(rows[r]) + " has latent size " + std::to_string(s.latent_dim()) +
                            ", encoder expects " + std::to_string(encoder.feature_dim()));
    }
    const Array f = encoder.apply(s.latent());
    for (std::size_t c = 0; c < f.size(); ++c) out(r, c) = f[c];
  }
  return out;
}

/// Labeled batch over `rows`, with category labels expressed as positions in
/// `category_candidates` and environment labels as positions in
/// `environment_candidates` (both vocabulary indices). Rows are partitioned
/// by domain.
inline model::LabeledBatch make_batch(const model::FrozenImageEncoder& encoder, const Dataset& ds,
                                      std::span<const std::size_t> rows,
                                      std::span<const std::size_t> category_candidates,
                                      std::span<const std::size_t> environment_candidates) {
  const auto positions = [](std::span<const std::size_t> candidates) {
    std::map<std::size_t, std::size_t> pos;
    for (std::size_t i = 0; i < candidates.size(); ++i) pos.emplace(candidates[i], i);
    return pos;
  };
  const auto cat_pos = positions(category_candidates);
  const auto env_pos = positions(environment_candidates);

  model::LabeledBatch b;
  b.features = encode_rows(encoder, ds, rows);
  b.category_names.assign(category_candidates.begin(), category_candidates.end());
  b.environment_names.assign(environment_candidates.begin(), environment_candidates.end());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& s = ds.samples.at(rows[r]);
    auto c = cat_pos.find(s.y_cat);
    if (c == cat_pos.end()) {
      throw VocabularyError("sample " + std::to_string(rows[r]) + " has category '" + ds.category_names.at(s.y_cat) +
                            "' outside the candidate list");
    }
    auto e = env_pos.find(s.y_env);
    if (e == env_pos.end()) {
      throw VocabularyError("sample " + std::to_string(rows[r]) + " has environment '" +
                            ds.environment_names.at(s.y_env) + "' outside the candidate list");
    }
    b.y_cat.push_back(c->second);
    b.y_env.push_back(e->second);
    b.env_partition[s.domain].push_back(r);
  }
  return b;
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace bayescal::data
