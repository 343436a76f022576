#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "bayescal/harness.hpp"

namespace bh = bayescal::harness;
namespace fs = std::filesystem;
using bayescal::Rng;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("bayescal_test_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

const std::string kResultsHeader =
    "config_id,seed,dataset,strategy,acc,acc_star,retention,iid_acc,ood_acc,iid_acc_star,ood_acc_star";

// Scores a config by how close log10(lambda2) is to -1; the optimum is lambda2 = 0.1.
bh::TrialScore lambda2_oracle(const bayescal::train::TrainConfig& c, std::uint64_t seed) {
  const double d = std::log10(c.objective.lambda2) + 1.0;
  bh::TrialScore s;
  s.validation = 1.0 - d * d;
  s.row.dataset = "oracle";
  s.row.strategy = "test-domain";
  s.row.acc = s.validation + 0.001 * static_cast<double>(seed);
  return s;
}

}  // namespace

TEST(SearchSpace, LambdaSamplesStayInRange) {
  bh::SearchSpace space;
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto h = bh::sample_hyperparams(space, rng);
    for (double v : {*h.lambda1, *h.lambda2, *h.lambda3}) {
      EXPECT_GE(v, 1e-4);
      EXPECT_LE(v, 1e-1);
    }
  }
}

TEST(SearchSpace, DegenerateRangeGivesExactPower) {
  Rng rng(3);
  EXPECT_EQ(bh::sample_log_uniform({-1.0, -1.0}, rng), 0.1);
  EXPECT_EQ(bh::sample_log_uniform({0.0, 0.0}, rng), 1.0);
}

TEST(SearchSpace, ExponentIsUniformByKolmogorovSmirnov) {
  const int n = 10000;
  Rng rng(2024);
  std::vector<double> e(n);
  for (auto& x : e) x = std::log10(bh::sample_log_uniform({-4.0, -1.0}, rng));
  std::sort(e.begin(), e.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = (e[i] + 4.0) / 3.0;
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  // 1% critical value of the one-sample KS statistic
  EXPECT_LT(d, 1.63 / std::sqrt(static_cast<double>(n)));
}

TEST(SearchSpace, CategoricalChoicesBothAppear) {
  bh::SearchSpace space;
  Rng rng(5);
  int middle = 0, csc = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const auto h = bh::sample_hyperparams(space, rng);
    middle += h.class_token_position == bayescal::model::TokenPosition::middle;
    csc += h.class_specific_context;
  }
  EXPECT_NEAR(middle / double(n), 0.5, 0.05);
  EXPECT_NEAR(csc / double(n), 0.5, 0.05);
}

TEST(SearchSpace, UnsetRangeKeepsBaseValue) {
  bh::SearchSpace space;
  space.lambda2.reset();
  bayescal::train::TrainConfig base;
  base.objective.lambda2 = 0.37;
  for (const auto& c : bh::sample_candidates(space, base)) EXPECT_EQ(c.objective.lambda2, 0.37);
}

TEST(SearchSpace, TrialDrawsIndependentOfTrialCount) {
  bh::SearchSpace small, large;
  small.trials = 3;
  large.trials = 10;
  const bayescal::train::TrainConfig base;
  const auto a = bh::sample_candidates(small, base);
  const auto b = bh::sample_candidates(large, base);
  ASSERT_EQ(a.size(), 3u);
  ASSERT_EQ(b.size(), 10u);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].objective.lambda1, b[t].objective.lambda1);
    EXPECT_EQ(a[t].objective.lambda3, b[t].objective.lambda3);
  }
  small.master_seed = 1;
  EXPECT_NE(bh::sample_candidates(small, base)[0].objective.lambda1, a[0].objective.lambda1);
}

TEST(SearchSpace, ValidationRejectsBadSpaces) {
  bh::SearchSpace s;
  s.lambda1 = bh::LogUniform{-1.0, -4.0};
  EXPECT_THROW(s.validate(), bayescal::ConfigError);
  s = {};
  s.trials = 0;
  EXPECT_THROW(s.validate(), bayescal::ConfigError);
  s = {};
  s.seeds.clear();
  EXPECT_THROW(s.validate(), bayescal::ConfigError);
  EXPECT_THROW(bh::search_space_from_json({{"lambda2", {-3.0}}}), bayescal::ConfigError);
}

TEST(SearchSpace, JsonRoundTrip) {
  bh::SearchSpace s;
  s.lambda3.reset();
  s.class_token_position = {bayescal::model::TokenPosition::middle};
  s.trials = 7;
  s.master_seed = 99;
  const auto back = bh::search_space_from_json(bh::to_json(s));
  EXPECT_EQ(bh::to_json(back), bh::to_json(s));
  EXPECT_FALSE(back.lambda3.has_value());
}

TEST(Search, TwoPointOraclePicksTheOptimum) {
  bayescal::train::TrainConfig far, best;
  far.objective.lambda2 = 1e-3;
  best.objective.lambda2 = 0.1;
  const auto r = bh::run_search({far, best}, {1, 2, 3}, lambda2_oracle);
  EXPECT_EQ(r.best, 1u);
  EXPECT_DOUBLE_EQ(r.best_validation, 1.0);
  EXPECT_DOUBLE_EQ(r.best_config().objective.lambda2, 0.1);
  EXPECT_DOUBLE_EQ(r.mean_validation[0], -3.0);
  EXPECT_EQ(r.runs, 6u);
  EXPECT_EQ(r.table.size(), 6u);
  EXPECT_EQ(r.table[3].config_id, "trial_1");
  EXPECT_EQ(r.table[3].seed, "1");
}

TEST(Search, SingleTrialRunsEverySeedOnce) {
  bh::SearchSpace s;
  s.trials = 1;
  const auto r = bh::run_search(s, bayescal::train::TrainConfig{}, lambda2_oracle);
  EXPECT_EQ(r.candidates.size(), 1u);
  EXPECT_EQ(r.runs, 3u);
  EXPECT_EQ(r.best, 0u);
}

TEST(Search, RunCountIsTrialsTimesSeedsAndDeterministic) {
  bh::SearchSpace s;
  s.trials = 5;
  s.seeds = {4, 5};
  const auto a = bh::run_search(s, bayescal::train::TrainConfig{}, lambda2_oracle);
  const auto b = bh::run_search(s, bayescal::train::TrainConfig{}, lambda2_oracle);
  EXPECT_EQ(a.runs, 10u);
  EXPECT_EQ(a.best, b.best);
  std::ostringstream ca, cb;
  bayescal::evalstats::write_results_csv(ca, a.table);
  bayescal::evalstats::write_results_csv(cb, b.table);
  EXPECT_EQ(ca.str(), cb.str());
}

TEST(Search, TiesGoToTheEarlierCandidate) {
  bayescal::train::TrainConfig c;
  c.objective.lambda2 = 0.01;
  const auto r = bh::run_search({c, c, c}, {1}, lambda2_oracle);
  EXPECT_EQ(r.best, 0u);
}

TEST(Search, FailedRunsAreSkipped) {
  bayescal::train::TrainConfig a, b;
  a.objective.lambda2 = 0.1;
  b.objective.lambda2 = 0.01;
  const auto flaky = [](const bayescal::train::TrainConfig& c, std::uint64_t seed) {
    if (c.objective.lambda2 == 0.1 && seed == 2) throw bayescal::NumericError("loss became NaN");
    return lambda2_oracle(c, seed);
  };
  const auto r = bh::run_search({a, b}, {1, 2, 3}, flaky);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].trial, 0u);
  EXPECT_EQ(r.failures[0].seed, 2u);
  EXPECT_EQ(r.table.size(), 5u);
  EXPECT_EQ(r.runs, 6u);
  EXPECT_EQ(r.best, 0u);
}

TEST(Search, AllRunsFailingIsAProtocolError) {
  const auto broken = [](const bayescal::train::TrainConfig&, std::uint64_t) -> bh::TrialScore {
    throw bayescal::NumericError("diverged");
  };
  EXPECT_THROW(bh::run_search({bayescal::train::TrainConfig{}}, {1, 2}, broken), bayescal::ProtocolError);
}

TEST(Ablation, FourVariantsOverEverySeed) {
  bayescal::train::TrainConfig base;
  base.objective.lambda1 = 0.5;
  base.objective.lambda2 = 0.25;
  base.objective.lambda3 = 0.125;
  const auto score = [](const bayescal::train::TrainConfig& c, std::uint64_t seed) {
    bh::TrialScore s;
    s.row.dataset = "oracle";
    s.row.strategy = "test-domain";
    s.row.acc = c.objective.lambda1 + c.objective.lambda2 + c.objective.lambda3 + 0.01 * static_cast<double>(seed);
    return s;
  };
  const auto r = bh::run_ablation(base, {1, 2, 3}, score);
  ASSERT_EQ(r.table.size(), 12u);
  EXPECT_NEAR(r.mean_acc("full"), 0.875 + 0.02, 1e-12);
  EXPECT_NEAR(r.mean_acc("no_lambda1"), 0.375 + 0.02, 1e-12);
  EXPECT_NEAR(r.mean_acc("no_lambda2"), 0.625 + 0.02, 1e-12);
  EXPECT_NEAR(r.mean_acc("no_lambda3"), 0.75 + 0.02, 1e-12);
  EXPECT_THROW((void)r.mean_acc("no_kl"), bayescal::ProtocolError);

  std::ostringstream a, b;
  bayescal::evalstats::write_aggregate_csv(a, r.aggregates);
  bayescal::evalstats::write_aggregate_csv(b, bayescal::evalstats::aggregate_trials(r.table));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Ablation, VariantsZeroExactlyOneWeight) {
  bayescal::train::TrainConfig base;
  base.objective.lambda1 = base.objective.lambda2 = base.objective.lambda3 = 0.3;
  const auto v = bh::ablation_variants(base);
  ASSERT_EQ(v.size(), 4u);
  EXPECT_EQ(v[0].first, "full");
  for (std::size_t i = 1; i < 4; ++i) {
    const auto& o = v[i].second.objective;
    const double w[3] = {o.lambda1, o.lambda2, o.lambda3};
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(w[k], k + 1 == i ? 0.0 : 0.3) << v[i].first;
  }
}

TEST(Ablation, RunErrorsPropagate) {
  const auto broken = [](const bayescal::train::TrainConfig&, std::uint64_t) -> bh::TrialScore {
    throw bayescal::NumericError("diverged");
  };
  EXPECT_THROW(bh::run_ablation(bayescal::train::TrainConfig{}, {1}, broken), bayescal::NumericError);
}

TEST(Experiment, JsonRoundTrip) {
  auto e = bh::experiment_from_json(
      {{"id", "rt"}, {"preset", "base-to-new"}, {"baseline", "cal"}, {"seeds", {7, 8}}, {"train", {{"epochs", 4}}}});
  EXPECT_EQ(e.dataset.n_classes, 8u);
  EXPECT_FALSE(e.train.variational);
  EXPECT_EQ(e.train.epochs, 4u);
  const auto j = bh::to_json(e);
  EXPECT_EQ(bh::to_json(bh::experiment_from_json(j)), j);
}

TEST(Experiment, BaselinePresets) {
  const auto base = bh::benchmark_train_config();
  const auto coop = bh::apply_baseline(base, bh::Baseline::coop);
  EXPECT_EQ(coop.objective.lambda1 + coop.objective.lambda2 + coop.objective.lambda3, 0.0);
  EXPECT_FALSE(coop.variational);
  const auto cal = bh::apply_baseline(base, bh::Baseline::cal);
  EXPECT_FALSE(cal.variational);
  EXPECT_EQ(cal.objective.lambda2, base.objective.lambda2);
  EXPECT_TRUE(bh::apply_baseline(base, bh::Baseline::bayes_cal).variational);
  for (auto b : {bh::Baseline::zero_shot, bh::Baseline::coop, bh::Baseline::cal, bh::Baseline::bayes_cal}) {
    EXPECT_EQ(bh::parse_baseline(bh::to_string(b)), b);
  }
  EXPECT_THROW(bh::parse_baseline("clip"), bayescal::ConfigError);
}

TEST(Experiment, InvalidConfigsAreRejected) {
  EXPECT_THROW(bh::experiment_from_json({{"train", {{"epochs", 0}}}}), bayescal::ConfigError);
  EXPECT_THROW(bh::experiment_from_json({{"preset", "mnist"}}), bayescal::ConfigError);
}

TEST(Experiment, PerSeedDatasetsDiffer) {
  bh::ExperimentConfig e;
  EXPECT_NE(bh::dataset_hash(bayescal::data::generate(e.dataset_for(1))),
            bh::dataset_hash(bayescal::data::generate(e.dataset_for(2))));
  EXPECT_EQ(bh::dataset_hash(bayescal::data::generate(e.dataset_for(1))),
            bh::dataset_hash(bayescal::data::generate(e.dataset_for(1))));
  e.dataset_per_seed = false;
  EXPECT_EQ(e.dataset_for(1).seed, e.dataset_for(2).seed);
}

TEST(Manifest, JsonRoundTrip) {
  bh::RunManifest m;
  m.command = "stats";
  m.config = {{"id", "x"}};
  m.dataset_hashes["1"] = "00ff";
  m.inputs["pairs"] = "/tmp/results.csv";
  m.outputs = {"stats.csv", "manifest.json"};
  EXPECT_EQ(bh::to_json(bh::manifest_from_json(bh::to_json(m))), bh::to_json(m));
  EXPECT_THROW(bh::manifest_from_json({{"command", "train"}}), bayescal::ParseError);
}

TEST(Commands, TrainRerunReproducesResultsByteForByte) {
  const auto first = fresh_dir("train_a");
  const auto second = fresh_dir("train_b");
  bh::CommandOptions o;
  o.command = "train";
  o.config = {{"id", "repro"}, {"seeds", {1}}, {"train", {{"epochs", 2}}}};
  o.out = first;
  std::ostringstream log;
  const auto m = bh::run_command(o, log);
  bh::rerun(bh::read_manifest(first / "manifest.json"), second, log);

  for (const char* f : {"results.csv", "trajectory_seed_1.csv", "metrics_seed_1.jsonl"}) {
    ASSERT_TRUE(fs::exists(first / f)) << f;
    EXPECT_EQ(slurp(first / f), slurp(second / f)) << f;
  }
  EXPECT_EQ(first_line(slurp(first / "results.csv")), kResultsHeader);
  EXPECT_EQ(m.dataset_hashes.size(), 1u);
  for (const auto& rel : m.outputs) EXPECT_TRUE(fs::exists(first / rel)) << rel;
}

TEST(Commands, StatsTableSchema) {
  const auto dir = fresh_dir("stats");
  fs::create_directories(dir);
  bayescal::evalstats::TrialTable t;
  for (const char* id : {"a", "b"}) {
    for (int s = 1; s <= 6; ++s) {
      bayescal::evalstats::TrialRow r;
      r.config_id = id;
      r.seed = std::to_string(s);
      r.dataset = "colored";
      r.strategy = "test-domain";
      r.acc = (id[0] == 'a' ? 0.5 : 0.4) + 0.01 * s;
      t.push_back(r);
    }
  }
  {
    std::ofstream out(dir / "pairs.csv");
    bayescal::evalstats::write_results_csv(out, t);
  }
  bh::CommandOptions o;
  o.command = "stats";
  o.pairs = dir / "pairs.csv";
  o.out = dir / "out";
  std::ostringstream log;
  bh::run_command(o, log);
  const auto csv = slurp(dir / "out" / "stats.csv");
  EXPECT_EQ(first_line(csv), "config_a,config_b,metric,n,w_plus,p,degenerate");
  EXPECT_NE(csv.find("a,b,acc,6,21"), std::string::npos) << csv;
  EXPECT_NE(csv.find("0.03125"), std::string::npos) << csv;
}

TEST(Commands, UnknownCommandIsAConfigError) {
  bh::CommandOptions o;
  o.command = "fit";
  std::ostringstream log;
  EXPECT_THROW(bh::run_command(o, log), bayescal::ConfigError);
}
