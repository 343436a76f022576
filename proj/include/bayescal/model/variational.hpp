#pragma once

#include <cmath>
#include <string>

#include "bayescal/diff.hpp"
#include "bayescal/errors.hpp"
#include "bayescal/rng.hpp"

namespace bayescal::model {

using diff::Array;
using diff::Shape;
using diff::Var;

/// Inverse of softplus: the rho giving posterior scale `sigma`.
inline double softplus_inverse(double sigma) { return sigma + std::log(-std::expm1(-sigma)); }

/// Mean-field Gaussian posterior N(mu, softplus(rho)^2) over one parameter
/// block, with its per-coordinate Gaussian prior.
struct VariationalParam {
  Array mu;
  Array rho;
  Array prior_mu;
  Array prior_sigma;

  /// mu ~ N(0, mu_sd), sigma = init_sigma everywhere, prior N(0, prior_sigma).
  static VariationalParam init(Shape shape, Rng& rng, double mu_sd = 0.02, double init_sigma = 0.05,
                               double prior_sigma = 1.0) {
    if (!(init_sigma > 0.0) || !(prior_sigma > 0.0)) throw ConfigError("sigma values must be positive");
    VariationalParam p;
    p.mu = normal_array(rng, shape, mu_sd);
    p.rho = Array(shape, softplus_inverse(init_sigma));
    p.prior_mu = Array(shape, 0.0);
    p.prior_sigma = Array(shape, prior_sigma);
    return p;
  }

  [[nodiscard]] const Shape& shape() const noexcept { return mu.shape(); }
  [[nodiscard]] std::size_t size() const noexcept { return mu.size(); }

  [[nodiscard]] Array sigma() const {
    Array s(rho.shape());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = diff::detail::softplus_value(rho[i]);
    return s;
  }

  void validate() const {
    if (rho.shape() != mu.shape() || prior_mu.shape() != mu.shape() || prior_sigma.shape() != mu.shape()) {
      throw StructuralError("variational arrays must share one shape, mu is " + mu.shape().str());
    }
    for (double s : prior_sigma.data()) {
      if (!(s > 0.0)) throw ConfigError("prior sigma must be positive");
    }
    const Array posterior_sigma = sigma();
    for (double s : posterior_sigma.data()) {
      if (!(s > 0.0)) throw NumericError("posterior sigma underflowed to zero");
    }
  }

  friend bool operator==(const VariationalParam&, const VariationalParam&) = default;
};

/// mu + scale * softplus(rho) * noise; differentiable in mu and rho.
/// scale = 0 yields the posterior mean.
inline Var sample_variational(const Var& mu, const Var& rho, const Array& noise, double scale) {
  if (noise.shape() != mu.shape() || rho.shape() != mu.shape()) {
    throw StructuralError("noise shape " + noise.shape().str() + " does not match mu shape " + mu.shape().str());
  }
  if (scale == 0.0) return mu;
  return mu + diff::softplus(rho) * Var::constant(noise) * scale;
}

inline Array sample_variational(const VariationalParam& p, const Array& noise, double scale) {
  diff::NoGradGuard no_grad;
  return sample_variational(Var::constant(p.mu), Var::constant(p.rho), noise, scale).value();
}

enum class KlMode {
  paper,  ///< Σ log(σ1/σ2) + ½(σ2² + (μ2−μ1)²)/σ1², as written (exceeds the true KL by K/2)
  exact   ///< true Gaussian KL, the same expression minus K/2
};

/// KL(posterior || prior) summed over the block, as a differentiable scalar.
inline Var kl_divergence(const Var& mu, const Var& rho, const Array& prior_mu, const Array& prior_sigma,
                         KlMode mode = KlMode::paper) {
  if (prior_mu.shape() != mu.shape() || prior_sigma.shape() != mu.shape() || rho.shape() != mu.shape()) {
    throw StructuralError("kl_divergence: prior shape does not match " + mu.shape().str());
  }
  Array log_prior_sigma(prior_sigma.shape());
  Array inv_prior_var(prior_sigma.shape());
  for (std::size_t i = 0; i < prior_sigma.size(); ++i) {
    log_prior_sigma[i] = std::log(prior_sigma[i]);
    inv_prior_var[i] = 1.0 / (prior_sigma[i] * prior_sigma[i]);
  }
  const Var sigma = diff::softplus(rho);
  const Var diff_mu = mu - Var::constant(prior_mu);
  const Var per_coord = Var::constant(log_prior_sigma) - diff::log(sigma) +
                        (diff::square(sigma) + diff::square(diff_mu)) * Var::constant(inv_prior_var) * 0.5;
  Var total = diff::sum(per_coord);
  if (mode == KlMode::exact) total = total - 0.5 * static_cast<double>(mu.shape().size());
  return total;
}

inline double kl_divergence(const VariationalParam& p, KlMode mode = KlMode::paper) {
  diff::NoGradGuard no_grad;
  return kl_divergence(Var::constant(p.mu), Var::constant(p.rho), p.prior_mu, p.prior_sigma, mode).item();
}

}  // namespace bayescal::model
