#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "bayescal/diff/array.hpp"
#include "bayescal/errors.hpp"
#include "bayescal/rng.hpp"

namespace bayescal::model {

using diff::Array;
using diff::Shape;

/// Stand-in for a pretrained image encoder: a fixed random orthogonal map
/// applied to the concatenated latent signals. It never receives updates.
class FrozenImageEncoder {
 public:
  FrozenImageEncoder(std::size_t feature_dim, std::uint64_t seed)
      : feature_dim_(feature_dim), seed_(seed), mixing_(Shape{feature_dim, feature_dim}) {
    if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
    Rng rng(derive_seed(seed, stream::encoder));
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd g(feature_dim, feature_dim);
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = n(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
      if (r(c, c) < 0.0) q.col(c) *= -1.0;
    }
    for (std::size_t i = 0; i < feature_dim; ++i) {
      for (std::size_t j = 0; j < feature_dim; ++j) {
        mixing_(i, j) = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
  }

  /// Identity mixing; keeps latent axes visible (tests and debugging).
  static FrozenImageEncoder identity(std::size_t feature_dim) {
    FrozenImageEncoder e(feature_dim);
    for (std::size_t i = 0; i < feature_dim; ++i) e.mixing_(i, i) = 1.0;
    return e;
  }

  [[nodiscard]] std::size_t feature_dim() const noexcept { return feature_dim_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] const Array& mixing() const noexcept { return mixing_; }

  /// mixing * latent for a single latent column given as a flat span.
  [[nodiscard]] Array apply(std::span<const double> latent) const {
    if (latent.size() != feature_dim_) {
      throw StructuralError("latent length " + std::to_string(latent.size()) + " does not match feature_dim " +
                            std::to_string(feature_dim_));
    }
    Array out(Shape{1, feature_dim_});
    for (std::size_t i = 0; i < feature_dim_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < feature_dim_; ++j) s += mixing_(i, j) * latent[j];
      out[i] = s;
    }
    return out;
  }

  /// Feature vector of one sample: mixing * concat(category, environment, noise).
  [[nodiscard]] Array encode(std::span<const double> category_signal, std::span<const double> environment_signal,
                             std::span<const double> noise) const {
    const std::size_t total = category_signal.size() + environment_signal.size() + noise.size();
    if (total != feature_dim_) {
      throw StructuralError("signal dimensions " + std::to_string(category_signal.size()) + "+" +
                            std::to_string(environment_signal.size()) + "+" + std::to_string(noise.size()) +
                            " do not sum to feature_dim " + std::to_string(feature_dim_));
    }
    std::vector<double> latent;
    latent.reserve(total);
    latent.insert(latent.end(), category_signal.begin(), category_signal.end());
    latent.insert(latent.end(), environment_signal.begin(), environment_signal.end());
    latent.insert(latent.end(), noise.begin(), noise.end());
    return apply(latent);
  }

 private:
  explicit FrozenImageEncoder(std::size_t feature_dim)
      : feature_dim_(feature_dim), seed_(0), mixing_(Shape{feature_dim, feature_dim}) {}

  std::size_t feature_dim_;
  std::uint64_t seed_;
  Array mixing_;
};

}  // namespace bayescal::model
