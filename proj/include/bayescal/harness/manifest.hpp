#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bayescal/data/io.hpp"
#include "bayescal/errors.hpp"

namespace bayescal::harness {

inline constexpr const char* kVersion = "bayescal 0.1.0";

/// Record of one CLI run: enough to regenerate every output on the same build.
struct RunManifest {
  std::string command;
  nlohmann::json config;  ///< fully resolved experiment config
  std::map<std::string, std::string> dataset_hashes;  ///< per seed
  std::string version = kVersion;
  std::map<std::string, std::string> inputs;  ///< extra input files (checkpoint, pairs table)
  std::vector<std::string> outputs;           ///< paths relative to the output directory
};

/// FNV-1a over the dataset's JSONL serialization, as 16 hex digits.
inline std::string dataset_hash(const data::Dataset& ds) {
  std::ostringstream out;
  data::write_dataset(ds, out);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : out.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline nlohmann::json to_json(const RunManifest& m) {
  return {{"command", m.command}, {"config", m.config},   {"dataset_hashes", m.dataset_hashes},
          {"version", m.version}, {"inputs", m.inputs},   {"outputs", m.outputs}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config");
    m.dataset_hashes = j.at("dataset_hashes").get<std::map<std::string, std::string>>();
    m.version = j.at("version").get<std::string>();
    if (j.contains("inputs")) m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed manifest: ") + e.what());
  }
}

inline RunManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace bayescal::harness
