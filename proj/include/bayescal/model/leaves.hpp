#pragma once

#include <map>
#include <string>

#include "bayescal/diff.hpp"
#include "bayescal/model/text_branch.hpp"
#include "bayescal/model/variational.hpp"
#include "bayescal/rng.hpp"

namespace bayescal::model {

/// Graph leaves for one variational block during a training step.
struct VariationalLeaves {
  Var mu;
  Var rho;
  const VariationalParam* source = nullptr;
};

using BranchLeaves = std::map<std::string, VariationalLeaves>;

/// Fresh leaves for every block of `branch`. With `trainable_rho` false the
/// posterior scale is held fixed (deterministic variant).
inline BranchLeaves make_leaves(const TextBranch& branch, bool trainable_rho = true) {
  BranchLeaves out;
  for (const auto& [name, p] : branch.params()) {
    out.emplace(name, VariationalLeaves{Var::leaf(p.mu, true), Var::leaf(p.rho, trainable_rho), &p});
  }
  return out;
}

/// Standard-normal noise for every block, drawn in block-name order.
inline std::map<std::string, Array> draw_noise(const TextBranch& branch, Rng& rng) {
  std::map<std::string, Array> out;
  for (const auto& [name, p] : branch.params()) out.emplace(name, normal_array(rng, p.shape()));
  return out;
}

/// Reparameterized sample of every block; scale 0 gives the posterior mean.
inline SampledParams sample_branch(const BranchLeaves& leaves, const std::map<std::string, Array>& noise,
                                   double scale) {
  SampledParams out;
  for (const auto& [name, l] : leaves) {
    if (scale == 0.0) {
      out.emplace(name, l.mu);
      continue;
    }
    auto it = noise.find(name);
    if (it == noise.end()) throw ContractError("no noise drawn for block '" + name + "'");
    out.emplace(name, sample_variational(l.mu, l.rho, it->second, scale));
  }
  return out;
}

/// Sum of the per-block KL terms of a branch.
inline Var branch_kl(const BranchLeaves& leaves, KlMode mode) {
  Var total;
  for (const auto& [_, l] : leaves) {
    const Var k = kl_divergence(l.mu, l.rho, l.source->prior_mu, l.source->prior_sigma, mode);
    total = total.defined() ? total + k : k;
  }
  return total;
}

}  // namespace bayescal::model
