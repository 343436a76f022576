#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bayescal/data.hpp"
#include "bayescal/errors.hpp"
#include "bayescal/evalstats.hpp"
#include "bayescal/harness/experiment.hpp"
#include "bayescal/harness/manifest.hpp"
#include "bayescal/harness/search.hpp"
#include "bayescal/harness/trial.hpp"
#include "bayescal/train.hpp"

namespace bayescal::harness {

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-data", "train", "eval",  "search",
                                              "ablate",   "base-to-new", "stats", "landscape"};
  return names;
}

struct CommandOptions {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::filesystem::path out = ".";
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> pairs;
  std::string metric = "acc";
};

/// Output directory that remembers every file written through it.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
  }

  std::ofstream open(const std::string& relative) {
    const auto path = root_ / relative;
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    written_.push_back(relative);
    return out;
  }

  void json(const std::string& relative, const nlohmann::json& j) { open(relative) << j.dump(2) << '\n'; }

  [[nodiscard]] const std::vector<std::string>& written() const { return written_; }
  [[nodiscard]] const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::vector<std::string> written_;
};

/// The experiment a command runs: the config file with --seed and --strategy
/// applied.
inline ExperimentConfig resolve_experiment(const CommandOptions& o) {
  ExperimentConfig e = experiment_from_json(o.config);
  if (o.seed) {
    e.seeds = {*o.seed};
    e.search.seeds = {*o.seed};
  }
  if (o.strategy) e.train.strategy = train::parse_strategy(*o.strategy);
  return e;
}

namespace detail {

inline std::string seed_tag(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

inline std::string epoch_tag(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu", epoch);
  return buf;
}

/// Column index of a metric in TrialRow::metrics().
inline std::size_t metric_index(const std::string& name) {
  const auto& cols = evalstats::results_csv_columns();
  for (std::size_t i = 4; i < cols.size(); ++i) {
    if (cols[i] == name) return i - 4;
  }
  throw ConfigError("unknown metric '" + name + "'");
}

inline void cmd_gen_data(const ExperimentConfig& e, OutputDir& out, std::ostream& log) {
  const auto spec = e.dataset_for(e.seeds.front());
  const auto ds = data::generate(spec);
  auto f = out.open("dataset.jsonl");
  data::write_dataset(ds, f);
  out.json("dataset_spec.json", data::to_json(spec));
  log << "wrote " << ds.samples.size() << " samples\n";
}

inline void cmd_train(const ExperimentConfig& e, OutputDir& out, std::ostream& log) {
  evalstats::TrialTable rows;
  for (std::uint64_t seed : e.seeds) {
    const std::string tag = seed_tag(seed);
    auto metrics = out.open("metrics_" + tag + ".jsonl");
    const auto on_step = [&](const train::StepLog& s) {
      nlohmann::json j = s.to_json();
      j["type"] = "step";
      metrics << j.dump() << '\n';
    };
    const TrialRun run = train_trial(e, seed, std::nullopt, on_step);
    if (run.training) {
      const auto& cps = run.training->checkpoints;
      for (const auto& c : cps) {
        metrics << nlohmann::json{{"type", "epoch"},
                                  {"epoch", c.epoch},
                                  {"metrics", c.metrics.to_json()},
                                  {"loss", c.loss.to_json()}}
                       .dump()
                << '\n';
      }
      // Full parameter dumps for the final epoch only; the trajectory file
      // holds the means of every epoch.
      out.open("checkpoints/" + tag + "/" + epoch_tag(cps.back().epoch) + ".json")
          << train::checkpoint_to_json(run.model, cps.back()).dump() << '\n';
      auto traj = out.open("trajectory_" + tag + ".csv");
      train::write_trajectory_csv(traj, run.training->trajectory);
    }
    out.open("checkpoints/" + tag + "/selected.json")
        << nlohmann::json{{"epoch", run.training ? run.training->checkpoints[run.selection.index].epoch : 0},
                          {"validation_accuracy", run.selection.validation_accuracy},
                          {"model", model::model_to_json(run.model)}}
               .dump()
        << '\n';
    const auto outcome = evaluate_trial(e, run, seed);
    rows.push_back(outcome.row);
    log << "seed " << seed << ": selected epoch " << outcome.selected_epoch << ", test acc "
        << evalstats::detail::format_metric(outcome.row.acc) << '\n';
  }
  auto csv = out.open("results.csv");
  evalstats::write_results_csv(csv, rows);
}

inline void cmd_eval(const ExperimentConfig& e, const CommandOptions& o, OutputDir& out, std::ostream& log) {
  if (!o.checkpoint) throw ConfigError("eval needs --checkpoint");
  std::ifstream in(*o.checkpoint);
  if (!in) throw ParseError("cannot open checkpoint " + o.checkpoint->string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& ex) {
    throw ParseError("checkpoint " + o.checkpoint->string() + ": " + ex.what());
  }
  const std::uint64_t seed = e.seeds.front();
  TrialRun run = prepare_trial(e, seed);
  run.model = model::model_from_json(j.contains("model") ? j.at("model") : j);
  if (run.model.encoder().feature_dim() != e.dataset.feature_dim) {
    throw StructuralError("checkpoint feature size does not match the dataset");
  }
  run.selection = score_current(run);
  const auto outcome = evaluate_trial(e, run, seed);
  auto csv = out.open("results.csv");
  evalstats::write_results_csv(csv, {outcome.row});
  log << "test acc " << evalstats::detail::format_metric(outcome.row.acc) << '\n';
}

inline void cmd_search(const ExperimentConfig& e, OutputDir& out, std::ostream& log) {
  const auto result = run_search(e.search, e.train, trial_evaluator(e));
  auto csv = out.open("trials.csv");
  evalstats::write_results_csv(csv, result.table);
  nlohmann::json trials = nlohmann::json::array();
  for (std::size_t t = 0; t < result.candidates.size(); ++t) {
    const auto& c = result.candidates[t];
    const double mv = result.mean_validation[t];
    trials.push_back({{"id", trial_id(t)},
                      {"lambda1", c.objective.lambda1},
                      {"lambda2", c.objective.lambda2},
                      {"lambda3", c.objective.lambda3},
                      {"class_token_position", model::to_string(c.model.text.class_token_position)},
                      {"class_specific_context", c.model.text.class_specific_context},
                      {"mean_validation", std::isfinite(mv) ? nlohmann::json(mv) : nlohmann::json(nullptr)}});
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : result.failures) failures.push_back({{"trial", trial_id(f.trial)}, {"seed", f.seed}, {"error", f.message}});
  out.json("search_summary.json", {{"best", trial_id(result.best)},
                                   {"best_validation", result.best_validation},
                                   {"runs", result.runs},
                                   {"trials", trials},
                                   {"failures", failures}});
  ExperimentConfig best = e;
  best.id = e.id + "-best";
  best.train = result.best_config();
  out.json("best_config.json", to_json(best));
  log << "best " << trial_id(result.best) << " (mean validation " << result.best_validation << ")\n";
}

inline void cmd_ablate(const ExperimentConfig& e, OutputDir& out, std::ostream& log) {
  const auto result = run_ablation(e.train, e.seeds, trial_evaluator(e));
  auto csv = out.open("ablation.csv");
  evalstats::write_results_csv(csv, result.table);
  auto agg = out.open("ablation_summary.csv");
  evalstats::write_aggregate_csv(agg, result.aggregates);
  for (const auto& a : result.aggregates) {
    log << a.config_id << ": mean acc " << evalstats::detail::format_metric(a.mean.acc) << " +- "
        << evalstats::detail::format_metric(a.standard_error.acc) << '\n';
  }
}

inline void cmd_base_to_new(const ExperimentConfig& e, OutputDir& out, std::ostream& log) {
  evalstats::TrialTable rows;
  for (std::uint64_t seed : e.seeds) {
    const auto o = run_base_to_new_trial(e, seed);
    rows.push_back(o.row);
    log << "seed " << seed << ": iid_acc " << o.result.iid_acc << ", ood_acc " << o.result.ood_acc << '\n';
  }
  auto csv = out.open("results.csv");
  evalstats::write_results_csv(csv, rows);
  auto agg = out.open("summary.csv");
  evalstats::write_aggregate_csv(agg, evalstats::aggregate_trials(rows));
}

struct PairTest {
  std::string a;
  std::string b;
  evalstats::WilcoxonResult result;
};

/// Signed-rank tests between every pair of configs in a results table,
/// pairing rows by (dataset, strategy, seed); aggregate rows are ignored.
inline std::vector<PairTest> pairwise_tests(const evalstats::TrialTable& table, const std::string& metric) {
  const std::size_t m = metric_index(metric);
  evalstats::TrialTable per_seed;
  for (const auto& r : table) {
    if (r.seed != "mean" && r.seed != "stderr") per_seed.push_back(r);
  }
  evalstats::check_unique(per_seed);
  std::map<std::string, std::map<std::tuple<std::string, std::string, std::string>, double>> by_config;
  for (const auto& r : per_seed) {
    if (const auto& v = *r.metrics()[m]) by_config[r.config_id][{r.dataset, r.strategy, r.seed}] = *v;
  }
  std::vector<PairTest> out;
  for (auto a = by_config.begin(); a != by_config.end(); ++a) {
    for (auto b = std::next(a); b != by_config.end(); ++b) {
      std::vector<double> d;
      for (const auto& [key, va] : a->second) {
        if (auto it = b->second.find(key); it != b->second.end()) d.push_back(va - it->second);
      }
      if (d.empty()) continue;
      out.push_back({a->first, b->first, evalstats::wilcoxon_signed_rank(d)});
    }
  }
  return out;
}

inline void cmd_stats(const CommandOptions& o, OutputDir& out, std::ostream& log) {
  if (!o.pairs) throw ConfigError("stats needs --pairs");
  std::ifstream in(*o.pairs);
  if (!in) throw ParseError("cannot open " + o.pairs->string());
  const auto tests = pairwise_tests(evalstats::read_results_csv(in), o.metric);
  auto csv = out.open("stats.csv");
  csv << "config_a,config_b,metric,n,w_plus,p,degenerate\n";
  char buf[64];
  for (const auto& t : tests) {
    std::snprintf(buf, sizeof buf, "%.1f,%.6f", t.result.w_plus, t.result.p);
    csv << t.a << ',' << t.b << ',' << o.metric << ',' << t.result.n << ',' << buf << ','
        << (t.result.degenerate ? "true" : "false") << '\n';
    log << t.a << " vs " << t.b << ": n=" << t.result.n << " p=" << t.result.p
        << (t.result.degenerate ? " (all differences zero)" : "") << '\n';
  }
  if (tests.empty()) log << "no config pairs share a (dataset, strategy, seed) cell\n";
}

/// Training objective at the posterior means, as a function of the flattened
/// means; used for the landscape grid.
inline std::function<double(const std::vector<double>&)> posterior_mean_objective(const TrialRun& run) {
  auto batch = std::make_shared<model::LabeledBatch>(data::make_batch(
      run.model.encoder(), *run.dataset, run.task.splits.train, run.task.category_candidates,
      run.task.environment_candidates));
  objective::ObjectiveConfig obj = run.config.objective;
  obj.include_kl = run.config.variational;
  obj.kl_weight = run.config.kl_per_datum ? 1.0 / static_cast<double>(batch->size()) : 1.0;
  auto base = std::make_shared<model::BayesCalModel>(run.model);
  return [batch, obj, base](const std::vector<double>& flat) {
    model::BayesCalModel m = *base;
    m.set_flat_means(flat);
    const auto cat = model::make_leaves(m.category(), false);
    const auto env = model::make_leaves(m.environment(), false);
    Rng unused(0);
    const std::vector<objective::SamplePair> samples{
        {model::sample_branch(cat, model::draw_noise(m.category(), unused), 0.0),
         model::sample_branch(env, model::draw_noise(m.environment(), unused), 0.0)}};
    return objective::total_objective(*batch, m.category(), m.environment(), cat, env, samples, m.config().temperature,
                                      obj)
        .total.item();
  };
}

inline void cmd_landscape(const ExperimentConfig& e, OutputDir& out, std::ostream& log) {
  if (!e.learns()) throw ProtocolError("the zero-shot baseline has no optimization trajectory");
  const std::uint64_t seed = e.seeds.front();
  const TrialRun run = train_trial(e, seed);
  const auto& traj = run.training->trajectory;
  const auto l = evalstats::pca_landscape(traj, posterior_mean_objective(run), e.landscape);
  const std::string tag = seed_tag(seed);
  auto t = out.open("trajectory_" + tag + ".csv");
  train::write_trajectory_csv(t, traj);
  auto g = out.open("landscape_grid.csv");
  evalstats::write_landscape_grid_csv(g, l);
  auto p = out.open("landscape_trajectory.csv");
  evalstats::write_landscape_trajectory_csv(p, l);
  out.json("landscape_summary.json", {{"explained", l.explained}, {"converged", l.converged}, {"seed", seed}});
  log << "top-2 components capture " << l.captured() << " of the variance\n";
}

}  // namespace detail

/// Runs one subcommand, writing its outputs and manifest.json under o.out.
inline RunManifest run_command(const CommandOptions& o, std::ostream& log) {
  const auto& names = command_names();
  if (std::find(names.begin(), names.end(), o.command) == names.end()) {
    throw ConfigError("unknown command '" + o.command + "'");
  }
  const ExperimentConfig e = resolve_experiment(o);
  OutputDir out(o.out);
  RunManifest m;
  m.command = o.command;
  m.config = to_json(e);
  if (o.checkpoint) m.inputs["checkpoint"] = std::filesystem::absolute(*o.checkpoint).string();
  if (o.pairs) m.inputs["pairs"] = std::filesystem::absolute(*o.pairs).string();
  if (o.command == "stats") m.inputs["metric"] = o.metric;
  if (o.command != "stats") {
    std::set<std::uint64_t> seeds(e.seeds.begin(), e.seeds.end());
    if (o.command == "search") seeds = {e.search.seeds.begin(), e.search.seeds.end()};
    if (o.command == "gen-data") seeds = {e.seeds.front()};
    for (std::uint64_t s : seeds) m.dataset_hashes[std::to_string(s)] = dataset_hash(data::generate(e.dataset_for(s)));
  }

  if (o.command == "gen-data") detail::cmd_gen_data(e, out, log);
  else if (o.command == "train") detail::cmd_train(e, out, log);
  else if (o.command == "eval") detail::cmd_eval(e, o, out, log);
  else if (o.command == "search") detail::cmd_search(e, out, log);
  else if (o.command == "ablate") detail::cmd_ablate(e, out, log);
  else if (o.command == "base-to-new") detail::cmd_base_to_new(e, out, log);
  else if (o.command == "stats") detail::cmd_stats(o, out, log);
  else if (o.command == "landscape") detail::cmd_landscape(e, out, log);

  m.outputs = out.written();
  m.outputs.push_back("manifest.json");
  out.json("manifest.json", to_json(m));
  return m;
}

/// Re-executes the run a manifest describes into a new output directory.
inline RunManifest rerun(const RunManifest& m, const std::filesystem::path& out, std::ostream& log) {
  CommandOptions o;
  o.command = m.command;
  o.config = m.config;
  o.out = out;
  if (auto it = m.inputs.find("checkpoint"); it != m.inputs.end()) o.checkpoint = it->second;
  if (auto it = m.inputs.find("pairs"); it != m.inputs.end()) o.pairs = it->second;
  if (auto it = m.inputs.find("metric"); it != m.inputs.end()) o.metric = it->second;
  return run_command(o, log);
}

}  // namespace bayescal::harness
