#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "bayescal/data/dataset.hpp"

namespace bayescal::data {

struct FewShot {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

namespace detail {

using Cells = std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>>;  // (class, domain) -> rows

inline Cells shuffled_cells(const Dataset& ds, Split split, const std::optional<std::set<std::size_t>>& classes,
                            std::uint64_t seed) {
  Cells cells;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    if (s.split != split) continue;
    if (classes && !classes->contains(s.y_cat)) continue;
    cells[{s.y_cat, s.domain}].push_back(i);
  }
  Rng rng(seed);
  for (auto& [_, rows] : cells) std::shuffle(rows.begin(), rows.end(), rng);
  return cells;
}

/// Per class, `draws` disjoint sets of k rows each, spread over the domains
/// present: k / D from every domain and one more from each of the first
/// k mod D domains in ascending order.
inline std::vector<std::vector<std::size_t>> draw_per_class(const Dataset& ds, const Cells& cells, std::size_t k,
                                                            std::size_t draws) {
  std::set<std::size_t> class_set;
  std::set<std::size_t> domain_set;
  for (const auto& [key, _] : cells) {
    class_set.insert(key.first);
    domain_set.insert(key.second);
  }
  std::vector<std::vector<std::size_t>> out(draws);
  const std::vector<std::size_t> domains(domain_set.begin(), domain_set.end());
  if (domains.empty()) return out;
  for (std::size_t c : class_set) {
    for (std::size_t j = 0; j < domains.size(); ++j) {
      const std::size_t need = k / domains.size() + (j < k % domains.size() ? 1 : 0);
      auto it = cells.find({c, domains[j]});
      const std::size_t have = it == cells.end() ? 0 : it->second.size();
      if (have < need * draws) {
        throw CapacityError("cell (" + ds.category_names.at(c) + ", " + ds.domain_names.at(domains[j]) + ") has " +
                            std::to_string(have) + " samples, needs " + std::to_string(need * draws));
      }
      for (std::size_t d = 0; d < draws; ++d) {
        out[d].insert(out[d].end(), it->second.begin() + static_cast<std::ptrdiff_t>(d * need),
                      it->second.begin() + static_cast<std::ptrdiff_t>((d + 1) * need));
      }
    }
  }
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

}  // namespace detail

/// k training and k validation samples per class from the training domains,
/// equally spread over domains. Restricting to `classes` serves base-class
/// training.
inline FewShot sample_few_shot(const Dataset& ds, std::size_t k, std::uint64_t seed,
                               const std::optional<std::set<std::size_t>>& classes = std::nullopt) {
  if (k == 0) throw ConfigError("shots per class must be positive");
  const auto cells = detail::shuffled_cells(ds, Split::train, classes, derive_seed(seed, stream::few_shot));
  auto draws = detail::draw_per_class(ds, cells, k, 2);
  return {std::move(draws[0]), std::move(draws[1])};
}

/// Every index set a training run needs.
struct Splits {
  std::vector<std::size_t> train;     ///< few-shot, training domains
  std::vector<std::size_t> val;       ///< few-shot, training domains, disjoint from train
  std::vector<std::size_t> test_val;  ///< k per class from the test domains
  std::vector<std::size_t> ood_val;   ///< k per class from held-out validation domains (may be empty)
  std::vector<std::size_t> test;      ///< remaining test-domain samples
};

inline Splits prepare_splits(const Dataset& ds, std::size_t k, std::uint64_t seed,
                             const std::optional<std::set<std::size_t>>& classes = std::nullopt) {
  Splits out;
  auto fs = sample_few_shot(ds, k, seed, classes);
  out.train = std::move(fs.train);
  out.val = std::move(fs.val);

  const auto test_cells = detail::shuffled_cells(ds, Split::test, classes, derive_seed(seed, stream::split, 0));
  out.test_val = detail::draw_per_class(ds, test_cells, k, 1)[0];
  const std::set<std::size_t> taken(out.test_val.begin(), out.test_val.end());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    if (s.split != Split::test || taken.contains(i)) continue;
    if (classes && !classes->contains(s.y_cat)) continue;
    out.test.push_back(i);
  }
  const auto val_cells = detail::shuffled_cells(ds, Split::val, classes, derive_seed(seed, stream::split, 1));
  out.ood_val = detail::draw_per_class(ds, val_cells, k, 1)[0];
  return out;
}

struct BaseNew {
  std::vector<std::size_t> base;
  std::vector<std::size_t> novel;
};

/// Random split of class ids into round(fraction * n) base and the rest new,
/// each side nonempty.
inline BaseNew split_base_new(std::vector<std::size_t> class_ids, double fraction_base, std::uint64_t seed) {
  if (class_ids.size() < 2) throw ProtocolError("base/new split needs at least 2 classes");
  if (!(fraction_base > 0.0 && fraction_base < 1.0)) throw ConfigError("base fraction must lie in (0, 1)");
  const std::set<std::size_t> unique(class_ids.begin(), class_ids.end());
  if (unique.size() != class_ids.size()) throw ProtocolError("duplicate class id in base/new split");
  const std::size_t n = class_ids.size();
  const auto rounded = static_cast<std::size_t>(std::llround(fraction_base * static_cast<double>(n)));
  const std::size_t n_base = std::clamp<std::size_t>(rounded, 1, n - 1);
  Rng rng(derive_seed(seed, stream::split, 2));
  std::shuffle(class_ids.begin(), class_ids.end(), rng);
  BaseNew out{{class_ids.begin(), class_ids.begin() + static_cast<std::ptrdiff_t>(n_base)},
              {class_ids.begin() + static_cast<std::ptrdiff_t>(n_base), class_ids.end()}};
  std::sort(out.base.begin(), out.base.end());
  std::sort(out.novel.begin(), out.novel.end());
  return out;
}

}  // namespace bayescal::data
