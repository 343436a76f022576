#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "bayescal/data/dataset.hpp"

namespace bayescal::data {

inline nlohmann::json to_json(const RawSample& s, const Dataset& ds) {
  return {{"category_signal", s.category_signal},
          {"environment_signal", s.environment_signal},
          {"noise", s.noise},
          {"y_cat", s.y_cat},
          {"y_env", s.y_env},
          {"domain", s.domain},
          {"split", to_string(s.split)},
          {"names",
           {{"category", ds.category_names.at(s.y_cat)},
            {"environment", ds.environment_names.at(s.y_env)},
            {"domain", ds.domain_names.at(s.domain)}}}};
}

/// One JSON record per line, in sample order.
inline void write_dataset(const Dataset& ds, std::ostream& out) {
  for (const auto& s : ds.samples) out << to_json(s, ds).dump() << '\n';
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  write_dataset(ds, out);
  if (!out) throw Error("failed writing '" + path + "'");
}

namespace detail {

inline void record_name(std::vector<std::string>& names, std::size_t index, const std::string& name,
                        const char* what, std::size_t line) {
  if (names.size() <= index) names.resize(index + 1);
  if (names[index].empty()) {
    names[index] = name;
  } else if (names[index] != name) {
    throw ParseError("line " + std::to_string(line) + ": " + what + " index " + std::to_string(index) +
                     " named '" + name + "' but earlier '" + names[index] + "'");
  }
}

inline void fill_gaps(std::vector<std::string>& names, const std::string& prefix) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].empty()) names[i] = prefix + std::to_string(i);
  }
}

}  // namespace detail

/// Inverse of write_dataset. Vocabularies are rebuilt from the per-record
/// names; indices no record uses get their default names.
inline Dataset read_dataset(std::istream& in) {
  Dataset ds;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      RawSample s;
      s.category_signal = j.at("category_signal").get<std::vector<double>>();
      s.environment_signal = j.at("environment_signal").get<std::vector<double>>();
      s.noise = j.at("noise").get<std::vector<double>>();
      s.y_cat = j.at("y_cat").get<std::size_t>();
      s.y_env = j.at("y_env").get<std::size_t>();
      s.domain = j.at("domain").get<std::size_t>();
      s.split = parse_split(j.at("split").get<std::string>());
      const auto& names = j.at("names");
      detail::record_name(ds.category_names, s.y_cat, names.at("category").get<std::string>(), "category", line);
      detail::record_name(ds.environment_names, s.y_env, names.at("environment").get<std::string>(), "environment",
                          line);
      detail::record_name(ds.domain_names, s.domain, names.at("domain").get<std::string>(), "domain", line);
      ds.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line) + ": " + e.what());
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      if (msg.rfind("line ", 0) == 0) throw;
      throw ParseError("line " + std::to_string(line) + ": " + msg);
    }
  }
  detail::fill_gaps(ds.category_names, "class_");
  detail::fill_gaps(ds.environment_names, "env_");
  detail::fill_gaps(ds.domain_names, "domain_");
  return ds;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  return read_dataset(in);
}

}  // namespace bayescal::data
