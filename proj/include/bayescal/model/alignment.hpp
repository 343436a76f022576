#pragma once

#include "bayescal/diff.hpp"
#include "bayescal/errors.hpp"

namespace bayescal::model {

using diff::Var;

struct AlignmentLogits {
  Var logits;  // N x n
  /// Some image or text row was all zero; its cosines are reported as 0.
  bool degenerate = false;
};

namespace detail {

inline bool has_zero_row(const diff::Array& a) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    bool zero = true;
    for (std::size_t c = 0; c < a.cols() && zero; ++c) zero = a(r, c) == 0.0;
    if (zero) return true;
  }
  return false;
}

}  // namespace detail

/// logits[i][j] = temperature * cos(image_features[i], text_features[j]).
inline AlignmentLogits alignment_logits(const Var& image_features, const Var& text_features, double temperature) {
  if (image_features.shape().cols != text_features.shape().cols) {
    throw StructuralError("alignment: image features " + image_features.shape().str() + " and text features " +
                          text_features.shape().str() + " differ in feature dimension");
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  const Var logits =
      diff::matmul(diff::normalize_rows(image_features), diff::transpose(diff::normalize_rows(text_features))) *
      temperature;
  return {logits,
          detail::has_zero_row(image_features.value()) || detail::has_zero_row(text_features.value())};
}

}  // namespace bayescal::model
