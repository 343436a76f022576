#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "bayescal/errors.hpp"

namespace bayescal::evalstats {

/// One trained-and-evaluated run. Metrics a run did not produce stay empty.
struct TrialRow {
  std::string config_id;
  std::string seed;  ///< a seed number; "mean" / "stderr" on aggregate rows
  std::string dataset;
  std::string strategy;
  std::optional<double> acc;
  std::optional<double> acc_star;
  std::optional<double> retention;
  std::optional<double> iid_acc;
  std::optional<double> ood_acc;
  std::optional<double> iid_acc_star;
  std::optional<double> ood_acc_star;

  static constexpr std::size_t kMetrics = 7;

  [[nodiscard]] std::array<const std::optional<double>*, kMetrics> metrics() const {
    return {&acc, &acc_star, &retention, &iid_acc, &ood_acc, &iid_acc_star, &ood_acc_star};
  }
  std::array<std::optional<double>*, kMetrics> metrics() {
    return {&acc, &acc_star, &retention, &iid_acc, &ood_acc, &iid_acc_star, &ood_acc_star};
  }
};

inline const std::vector<std::string>& results_csv_columns() {
  static const std::vector<std::string> cols{"config_id", "seed",      "dataset",      "strategy",
                                             "acc",       "acc_star",  "retention",    "iid_acc",
                                             "ood_acc",   "iid_acc_star", "ood_acc_star"};
  return cols;
}

using TrialTable = std::vector<TrialRow>;

/// Throws ProtocolError when a (config, dataset, strategy, seed) cell repeats.
inline void check_unique(const TrialTable& table) {
  std::set<std::tuple<std::string, std::string, std::string, std::string>> seen;
  for (const auto& r : table) {
    if (!seen.emplace(r.config_id, r.dataset, r.strategy, r.seed).second) {
      throw ProtocolError("duplicate trial for config '" + r.config_id + "' seed " + r.seed);
    }
  }
}

struct Aggregate {
  std::string config_id;
  std::string dataset;
  std::string strategy;
  std::size_t n = 0;
  TrialRow mean;            ///< seed field "mean"
  TrialRow standard_error;  ///< seed field "stderr"; sample sd (n - 1) over sqrt(n), 0 for one seed
};

/// Mean and standard error per (config, dataset, strategy), in sorted key
/// order so the output does not depend on row order.
inline std::vector<Aggregate> aggregate_trials(const TrialTable& table) {
  check_unique(table);
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<const TrialRow*>> groups;
  for (const auto& r : table) groups[{r.config_id, r.dataset, r.strategy}].push_back(&r);

  std::vector<Aggregate> out;
  for (const auto& [key, rows] : groups) {
    Aggregate a;
    std::tie(a.config_id, a.dataset, a.strategy) = key;
    a.n = rows.size();
    for (TrialRow* t : {&a.mean, &a.standard_error}) {
      t->config_id = a.config_id;
      t->dataset = a.dataset;
      t->strategy = a.strategy;
    }
    a.mean.seed = "mean";
    a.standard_error.seed = "stderr";
    const auto mean_slots = a.mean.metrics();
    const auto se_slots = a.standard_error.metrics();
    for (std::size_t m = 0; m < TrialRow::kMetrics; ++m) {
      std::vector<double> v;
      for (const TrialRow* r : rows) {
        if (*r->metrics()[m]) v.push_back(**r->metrics()[m]);
      }
      if (v.empty()) continue;
      double sum = 0.0;
      for (double x : v) sum += x;
      const double mu = sum / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mu) * (x - mu);
      const double n = static_cast<double>(v.size());
      *mean_slots[m] = mu;
      *se_slots[m] = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
    }
    out.push_back(std::move(a));
  }
  return out;
}

namespace detail {

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline void write_results_csv(std::ostream& out, const TrialTable& rows) {
  const auto& cols = results_csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : rows) {
    if (r.config_id.find(',') != std::string::npos || r.dataset.find(',') != std::string::npos) {
      throw StructuralError("identifiers in the results table may not contain commas");
    }
    out << r.config_id << ',' << r.seed << ',' << r.dataset << ',' << r.strategy;
    for (const auto* m : r.metrics()) out << ',' << detail::format_metric(*m);
    out << '\n';
  }
}

/// Aggregates in the results schema: a "mean" row then a "stderr" row per key.
inline void write_aggregate_csv(std::ostream& out, const std::vector<Aggregate>& aggs) {
  TrialTable rows;
  for (const auto& a : aggs) {
    rows.push_back(a.mean);
    rows.push_back(a.standard_error);
  }
  write_results_csv(out, rows);
}

inline TrialTable read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("results table is empty");
  if (detail::split_csv_line(line) != results_csv_columns()) throw ParseError("line 1: unexpected results header");
  TrialTable out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != results_csv_columns().size()) {
      throw ParseError("line " + std::to_string(lineno) + ": expected 11 fields");
    }
    TrialRow r{cells[0], cells[1], cells[2], cells[3]};
    const auto slots = r.metrics();
    for (std::size_t m = 0; m < TrialRow::kMetrics; ++m) {
      const auto& c = cells[4 + m];
      if (c.empty()) continue;
      try {
        std::size_t used = 0;
        *slots[m] = std::stod(c, &used);
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::logic_error&) {
        throw ParseError("line " + std::to_string(lineno) + ": bad number '" + c + "'");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace bayescal::evalstats
