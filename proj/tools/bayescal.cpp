#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bayescal/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kRuntime = 2;

nlohmann::json read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw bayescal::ConfigError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw bayescal::ConfigError("config " + path + ": " + e.what());
  }
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::string out = ".";
  std::string checkpoint;
  std::string pairs;
  std::string metric = "acc";
  std::string manifest;
};

}  // namespace

int main(int argc, char** argv) {
  using bayescal::harness::command_names;

  CLI::App app{"Bayesian cross-modal alignment learning: data, training, evaluation and experiment harness"};
  app.require_subcommand(1);
  Flags flags;
  const std::map<std::string, std::string> help{
      {"gen-data", "generate a synthetic dataset (JSONL)"},
      {"train", "train one run per seed; write checkpoints, metrics stream, trajectory and results"},
      {"eval", "evaluate a saved checkpoint"},
      {"search", "random hyperparameter search"},
      {"ablate", "full objective and each single-term removal over the seeds"},
      {"base-to-new", "train on base classes, evaluate on new classes in and out of distribution"},
      {"stats", "signed-rank tests between configs of a results table"},
      {"landscape", "PCA of the parameter trajectory and the loss over the top-2 plane"}};

  std::map<std::string, CLI::App*> subs;
  for (const auto& name : command_names()) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", flags.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "run only this seed");
    sub->add_option("--strategy", flags.strategy, "model selection strategy")
        ->check(CLI::IsMember({"train-domain", "test-domain", "ood"}));
    sub->add_option("--out", flags.out, "output directory")->default_val(".");
    sub->add_option("--manifest", flags.manifest, "re-run the run recorded in this manifest")
        ->check(CLI::ExistingFile);
    if (name == "eval") sub->add_option("--checkpoint", flags.checkpoint, "checkpoint JSON")->check(CLI::ExistingFile);
    if (name == "stats") {
      sub->add_option("--pairs", flags.pairs, "results CSV to compare")->check(CLI::ExistingFile);
      sub->add_option("--metric", flags.metric, "metric column to compare")->default_val("acc");
    }
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << '\n' << app.help();
    return kUsage;
  }

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }

  const auto usage = [&](const std::string& message) {
    std::cerr << "usage error: " << message << "\n\n" << subs.at(command)->help();
    return kUsage;
  };
  if (!flags.manifest.empty()) {
    if (!flags.config.empty() || flags.seed || flags.strategy) {
      return usage("--manifest cannot be combined with --config, --seed or --strategy");
    }
  } else {
    if (command != "stats" && flags.config.empty()) return usage("--config is required");
    if (command == "eval" && flags.checkpoint.empty()) return usage("eval needs --checkpoint");
    if (command == "stats" && flags.pairs.empty()) return usage("stats needs --pairs");
  }

  try {
    if (!flags.manifest.empty()) {
      const auto m = bayescal::harness::read_manifest(flags.manifest);
      if (m.command != command) return usage("manifest records command '" + m.command + "'");
      bayescal::harness::rerun(m, flags.out, std::cout);
      return kOk;
    }
    bayescal::harness::CommandOptions o;
    o.command = command;
    if (!flags.config.empty()) o.config = read_config(flags.config);
    o.seed = flags.seed;
    o.strategy = flags.strategy;
    o.out = flags.out;
    if (!flags.checkpoint.empty()) o.checkpoint = flags.checkpoint;
    if (!flags.pairs.empty()) o.pairs = flags.pairs;
    o.metric = flags.metric;
    bayescal::harness::run_command(o, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
