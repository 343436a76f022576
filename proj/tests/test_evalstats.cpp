#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "bayescal/data.hpp"
#include "bayescal/evalstats.hpp"
#include "oracles.hpp"

using namespace bayescal;
using evalstats::PartitionTag;
using evalstats::PredictionRecord;

namespace {

std::vector<PredictionRecord> correct_with(std::initializer_list<double> conf) {
  std::vector<PredictionRecord> out;
  for (double c : conf) out.push_back({1, 1, c, PartitionTag::test});
  return out;
}

evalstats::TrialRow row(const std::string& config, const std::string& seed, double acc) {
  evalstats::TrialRow r;
  r.config_id = config;
  r.seed = seed;
  r.dataset = "colored";
  r.strategy = "test-domain";
  r.acc = acc;
  return r;
}

}  // namespace

TEST(Accuracy, SimpleCases) {
  EXPECT_EQ(evalstats::accuracy(correct_with({0.9, 0.8})), 1.0);
  const std::vector<PredictionRecord> half{{0, 0, 0.9, PartitionTag::test}, {0, 1, 0.9, PartitionTag::test}};
  EXPECT_EQ(evalstats::accuracy(half), 0.5);
  EXPECT_THROW(evalstats::accuracy(std::vector<PredictionRecord>{}), ProtocolError);
}

TEST(Accuracy, TwentyRecordsHandCount) {
  EXPECT_DOUBLE_EQ(evalstats::accuracy(oracle::twenty_records()), 13.0 / 20.0);
}

TEST(Threshold, NearestRankExample) {
  EXPECT_EQ(evalstats::confidence_threshold(correct_with({0.6, 1.0, 0.2, 0.8, 0.4})), 0.2);
}

TEST(Threshold, Boundaries) {
  EXPECT_EQ(evalstats::confidence_threshold(correct_with({0.7, 0.7, 0.7})), 0.7);
  EXPECT_EQ(evalstats::confidence_threshold(correct_with({0.9, 0.3, 0.5}), {.retention = 1.0}), 0.3);
  EXPECT_THROW(evalstats::confidence_threshold(std::vector<PredictionRecord>{{0, 1, 0.9, PartitionTag::test}}),
               DegeneracyError);
  EXPECT_THROW(evalstats::confidence_threshold(correct_with({0.5}), {.retention = 0.0}), ConfigError);
}

TEST(Threshold, HandValuesOnTwentyRecords) {
  const auto recs = oracle::twenty_records();
  // correct confidences ascending: .38 .42 .45 .50 .52 .55 .60 .65 .70 .75 .85 .90 .95
  EXPECT_EQ(evalstats::confidence_threshold(recs), 0.38);
  EXPECT_EQ(evalstats::confidence_threshold(recs, {.retention = 0.5}), 0.60);
  EXPECT_EQ(evalstats::confidence_threshold(recs, {.retention = 0.95, .quantile_literal = true}), 0.95);
}

TEST(Threshold, MatchesCountingOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.3, 1.0);
  std::bernoulli_distribution right(0.7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PredictionRecord> v;
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 23);
    for (std::size_t i = 0; i < n; ++i) v.push_back({0, right(rng) ? 0u : 1u, u(rng), PartitionTag::test});
    v.push_back({2, 2, u(rng), PartitionTag::test});
    for (int pct : {50, 80, 90, 95, 100}) {
      EXPECT_EQ(evalstats::confidence_threshold(v, {.retention = pct / 100.0}), oracle::threshold_by_counting(v, pct));
    }
  }
}

TEST(Threshold, IgnoresNonConfidenceFields) {
  auto recs = oracle::twenty_records();
  const double before = evalstats::confidence_threshold(recs);
  for (auto& r : recs) {
    r.label = r.label * 7 + 3;
    r.predicted = r.predicted * 7 + 3;
    r.tag = PartitionTag::base;
  }
  EXPECT_EQ(evalstats::confidence_threshold(recs), before);
}

TEST(AccStar, ThresholdZeroIsAccuracy) {
  const auto recs = oracle::twenty_records();
  const auto s = evalstats::acc_star(recs, 0.0);
  EXPECT_EQ(*s.value, evalstats::accuracy(recs));
  EXPECT_EQ(s.retention, 1.0);
}

TEST(AccStar, TwentyRecordsAgainstFilterOracle) {
  const auto recs = oracle::twenty_records();
  const auto s = evalstats::acc_star(recs, 0.7);
  const auto o = oracle::filter_and_count(recs, 0.7);
  EXPECT_EQ(o.kept, 7u);
  EXPECT_EQ(o.right, 5u);
  EXPECT_EQ(s.retained, o.kept);
  EXPECT_EQ(*s.value, static_cast<double>(o.right) / static_cast<double>(o.kept));
  EXPECT_EQ(s.retention, 7.0 / 20.0);

  for (int pct : {50, 80, 95}) {
    const double t = evalstats::confidence_threshold(recs, {.retention = pct / 100.0});
    EXPECT_EQ(t, oracle::threshold_by_counting(recs, pct));
    const auto got = evalstats::acc_star(recs, t);
    const auto want = oracle::filter_and_count(recs, t);
    EXPECT_EQ(got.retained, want.kept);
    EXPECT_EQ(*got.value, static_cast<double>(want.right) / static_cast<double>(want.kept));
  }
}

TEST(AccStar, RetainedAllCorrectAndEmpty) {
  const auto recs = oracle::twenty_records();
  EXPECT_EQ(*evalstats::acc_star(recs, 0.82).value, 1.0);
  const auto none = evalstats::acc_star(recs, 0.99);
  EXPECT_FALSE(none.defined());
  EXPECT_EQ(none.retained, 0u);
  EXPECT_EQ(none.retention, 0.0);
}

TEST(Predict, UniformGuessingNearChance) {
  std::mt19937_64 rng(5);
  const std::size_t n = 4000, k = 4;
  diff::Array probs(diff::Shape{n, k});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> lab(0, k - 1);
  std::vector<std::size_t> labels(n);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += probs(r, c) = u(rng);
    for (std::size_t c = 0; c < k; ++c) probs(r, c) /= s;
    labels[r] = lab(rng);
  }
  const auto recs = evalstats::records_from_probabilities(probs, labels, PartitionTag::ood_new);
  const double p = 1.0 / static_cast<double>(k);
  EXPECT_NEAR(evalstats::accuracy(recs), p, 3.0 * std::sqrt(p * (1 - p) / static_cast<double>(n)));
}

TEST(Predict, TiesGoToLowestIndex) {
  const diff::Array probs = diff::Array::matrix({{0.4, 0.4, 0.2}});
  const std::vector<std::size_t> labels{1};
  const auto recs = evalstats::records_from_probabilities(probs, labels, PartitionTag::test);
  EXPECT_EQ(recs[0].predicted, 0u);
  EXPECT_EQ(recs[0].confidence, 0.4);
}

TEST(Wilcoxon, SixPositive) {
  const std::vector<double> d{0.5, 1.2, 0.3, 2.0, 0.8, 1.5};
  const auto r = evalstats::wilcoxon_signed_rank(d);
  EXPECT_EQ(r.p, 2.0 / 64.0);
  EXPECT_EQ(r.n, 6u);
  EXPECT_EQ(r.w_plus, 21.0);
}

TEST(Wilcoxon, FivePositive) {
  const std::vector<double> d{1, 2, 3, 4, 5};
  EXPECT_EQ(evalstats::wilcoxon_signed_rank(d).p, 2.0 / 32.0);
}

TEST(Wilcoxon, NegationSymmetry) {
  const std::vector<double> d{0.4, -1.1, 2.5, 0.7, -0.2, 3.1, 1.4};
  std::vector<double> neg(d.size());
  std::transform(d.begin(), d.end(), neg.begin(), [](double x) { return -x; });
  EXPECT_EQ(evalstats::wilcoxon_signed_rank(d).p, evalstats::wilcoxon_signed_rank(neg).p);
}

TEST(Wilcoxon, RankBasedStrengthening) {
  const std::vector<double> d{0.4, -1.1, 2.5, 0.7, -0.2, 3.1, 1.4};
  // A strictly increasing map of |d| keeps every rank and sign.
  std::vector<double> mono(d.size());
  std::transform(d.begin(), d.end(), mono.begin(), [](double x) { return std::copysign(std::exp(std::abs(x)), x); });
  EXPECT_EQ(evalstats::wilcoxon_signed_rank(d).p, evalstats::wilcoxon_signed_rank(mono).p);
}

TEST(Wilcoxon, ZerosDroppedAndDegenerate) {
  const std::vector<double> zeros{0, 0, 0};
  const auto r = evalstats::wilcoxon_signed_rank(zeros);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p, 1.0);
  const std::vector<double> with_zero{0, 1, 2, 3, 4, 5};
  EXPECT_EQ(evalstats::wilcoxon_signed_rank(with_zero).p, 2.0 / 32.0);
  EXPECT_THROW(evalstats::wilcoxon_signed_rank(std::vector<double>(21, 1.0)), ProtocolError);
}

TEST(Wilcoxon, MatchesBruteForceIncludingTies) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> small(-4, 4);
  std::normal_distribution<double> gauss(0.3, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 10);
    std::vector<double> d(n);
    for (auto& x : d) x = trial % 2 ? gauss(rng) : static_cast<double>(small(rng));
    const auto r = evalstats::wilcoxon_signed_rank(d);
    const double want = oracle::wilcoxon_brute_force(d);
    EXPECT_NEAR(r.p, want, 1e-12) << "trial " << trial;
    EXPECT_GT(r.p, 0.0);
    EXPECT_LE(r.p, 1.0);
  }
}

TEST(Aggregate, HandComputation) {
  const evalstats::TrialTable t{row("a", "1", 1.0), row("a", "2", 2.0), row("a", "3", 3.0)};
  const auto agg = evalstats::aggregate_trials(t);
  ASSERT_EQ(agg.size(), 1u);
  EXPECT_EQ(agg[0].n, 3u);
  EXPECT_DOUBLE_EQ(*agg[0].mean.acc, 2.0);
  EXPECT_NEAR(*agg[0].standard_error.acc, 1.0 / std::sqrt(3.0), 1e-15);
  EXPECT_FALSE(agg[0].mean.acc_star.has_value());
}

TEST(Aggregate, SingleSeedHasZeroError) {
  const auto agg = evalstats::aggregate_trials({row("a", "1", 0.7)});
  EXPECT_EQ(*agg[0].standard_error.acc, 0.0);
}

TEST(Aggregate, RowOrderIrrelevant) {
  evalstats::TrialTable t{row("b", "1", 0.2), row("a", "1", 0.5), row("a", "2", 0.9), row("b", "2", 0.4)};
  std::ostringstream first;
  evalstats::write_aggregate_csv(first, evalstats::aggregate_trials(t));
  std::reverse(t.begin(), t.end());
  std::ostringstream second;
  evalstats::write_aggregate_csv(second, evalstats::aggregate_trials(t));
  EXPECT_EQ(first.str(), second.str());
}

TEST(Aggregate, DuplicateSeedIsProtocolError) {
  EXPECT_THROW(evalstats::aggregate_trials({row("a", "1", 0.1), row("a", "1", 0.2)}), ProtocolError);
}

TEST(ResultsCsv, GoldenSchema) {
  auto r = row("full", "1", 0.5);
  r.acc_star = 0.75;
  r.retention = 0.25;
  std::ostringstream out;
  evalstats::write_results_csv(out, {r});
  EXPECT_EQ(out.str(),
            "config_id,seed,dataset,strategy,acc,acc_star,retention,iid_acc,ood_acc,iid_acc_star,ood_acc_star\n"
            "full,1,colored,test-domain,0.500000,0.750000,0.250000,,,,\n");
  std::ostringstream agg;
  evalstats::write_aggregate_csv(agg, evalstats::aggregate_trials({r}));
  EXPECT_EQ(agg.str(),
            "config_id,seed,dataset,strategy,acc,acc_star,retention,iid_acc,ood_acc,iid_acc_star,ood_acc_star\n"
            "full,mean,colored,test-domain,0.500000,0.750000,0.250000,,,,\n"
            "full,stderr,colored,test-domain,0.000000,0.000000,0.000000,,,,\n");
}

TEST(ResultsCsv, RoundTripAndErrors) {
  auto r = row("x", "3", 0.125);
  r.ood_acc_star = 1.0;
  std::ostringstream out;
  evalstats::write_results_csv(out, {r, row("y", "1", 0.5)});
  std::istringstream in(out.str());
  const auto back = evalstats::read_results_csv(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(*back[0].acc, 0.125);
  EXPECT_EQ(*back[0].ood_acc_star, 1.0);
  EXPECT_FALSE(back[0].iid_acc.has_value());
  std::istringstream bad("config_id,seed\n");
  EXPECT_THROW(evalstats::read_results_csv(bad), ParseError);
  std::istringstream bad_number(out.str().substr(0, out.str().find('\n') + 1) + "x,1,d,s,abc,,,,,,\n");
  EXPECT_THROW(evalstats::read_results_csv(bad_number), ParseError);
}

namespace {

double quadratic(const std::vector<double>& p) {
  double s = 0.0;
  for (double v : p) s += v * v;
  return s;
}

/// Trajectory x_t = c + a_t u + b_t v in R^P for orthonormal u, v.
std::vector<std::vector<double>> planar_trajectory(std::size_t p, std::size_t t, std::uint64_t seed,
                                                   std::vector<double>* u_out = nullptr) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  std::vector<double> c(p), u(p), v(p);
  for (auto* w : {&c, &u, &v}) std::generate(w->begin(), w->end(), [&] { return n(rng); });
  const auto dot = [](const std::vector<double>& x, const std::vector<double>& y) {
    return std::inner_product(x.begin(), x.end(), y.begin(), 0.0);
  };
  const double nu = std::sqrt(dot(u, u));
  for (auto& x : u) x /= nu;
  const double proj = dot(u, v);
  for (std::size_t i = 0; i < p; ++i) v[i] -= proj * u[i];
  const double nv = std::sqrt(dot(v, v));
  for (auto& x : v) x /= nv;
  if (u_out) *u_out = u;
  std::vector<std::vector<double>> traj;
  for (std::size_t k = 0; k < t; ++k) {
    const double s = static_cast<double>(k) / static_cast<double>(t - 1);
    const double a = 3.0 * std::cos(2.5 * s), b = std::sin(4.0 * s);
    std::vector<double> x(p);
    for (std::size_t i = 0; i < p; ++i) x[i] = c[i] + a * u[i] + b * v[i];
    traj.push_back(std::move(x));
  }
  return traj;
}

}  // namespace

TEST(Landscape, SingleAxisTrajectory) {
  std::vector<std::vector<double>> traj;
  for (double x : {0.0, 1.0, 3.0, 4.0}) traj.push_back({5.0, x, -2.0});
  const auto l = evalstats::pca_landscape(traj, quadratic, {.resolution = 5});
  EXPECT_NEAR(std::abs(l.components[0][1]), 1.0, 1e-12);
  EXPECT_NEAR(l.explained[0], 1.0, 1e-12);
  const double sign = l.components[0][1];
  for (std::size_t i = 0; i < traj.size(); ++i) EXPECT_NEAR(sign * l.projection[i][0], traj[i][1] - 2.0, 1e-10);
  EXPECT_EQ(l.grid.size(), 25u);
}

TEST(Landscape, PlanarTrajectoryInFiftyDimensions) {
  const auto traj = planar_trajectory(50, 30, 9);
  const auto l = evalstats::pca_landscape(traj, quadratic);
  EXPECT_TRUE(l.converged);
  EXPECT_GE(l.captured(), 0.999);
  for (const auto& g : l.grid) EXPECT_TRUE(std::isfinite(g.loss));
  // orthonormal components
  const auto& a = l.components[0];
  const auto& b = l.components[1];
  EXPECT_NEAR(std::inner_product(a.begin(), a.end(), a.begin(), 0.0), 1.0, 1e-8);
  EXPECT_NEAR(std::inner_product(b.begin(), b.end(), b.begin(), 0.0), 1.0, 1e-8);
  EXPECT_NEAR(std::inner_product(a.begin(), a.end(), b.begin(), 0.0), 0.0, 1e-8);
  // rank-2 reconstruction
  double worst = 0.0;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    for (std::size_t i = 0; i < 50; ++i) {
      const double rec = l.center[i] + l.projection[t][0] * a[i] + l.projection[t][1] * b[i];
      worst = std::max(worst, std::abs(rec - traj[t][i]));
    }
  }
  EXPECT_LT(worst, 1e-8);
}

TEST(Landscape, MoreSnapshotsThanParameters) {
  const auto traj = planar_trajectory(4, 40, 3);
  const auto l = evalstats::pca_landscape(traj, quadratic);
  EXPECT_GE(l.captured(), 0.999);
}

TEST(Landscape, GridCentresOnTheMean) {
  const auto traj = planar_trajectory(6, 10, 4);
  const auto l = evalstats::pca_landscape(traj, quadratic, {.resolution = 3, .margin = 0.0});
  // with zero margin the grid corners are the projected extremes
  double lo = 1e300, hi = -1e300;
  for (const auto& p : l.projection) lo = std::min(lo, p[0]), hi = std::max(hi, p[0]);
  EXPECT_NEAR(l.grid.front().a, lo, 1e-12);
  EXPECT_NEAR(l.grid.back().a, hi, 1e-12);
}

TEST(Landscape, DegenerateInputs) {
  const std::vector<std::vector<double>> same(4, std::vector<double>{1.0, 2.0});
  EXPECT_THROW(evalstats::pca_landscape(same, quadratic), DegeneracyError);
  EXPECT_THROW(evalstats::pca_landscape({{1.0}, {2.0}}, quadratic), ProtocolError);
}

TEST(Landscape, CsvShapes) {
  std::vector<std::vector<double>> traj{{0.0, 0.0}, {1.0, 0.0}, {1.0, 1.0}};
  const auto l = evalstats::pca_landscape(traj, quadratic, {.resolution = 2});
  std::ostringstream g, t;
  evalstats::write_landscape_grid_csv(g, l);
  evalstats::write_landscape_trajectory_csv(t, l);
  const std::string grid = g.str(), path = t.str();
  EXPECT_EQ(grid.substr(0, grid.find('\n')), "pc1,pc2,loss");
  EXPECT_EQ(std::count(grid.begin(), grid.end(), '\n'), 5);
  EXPECT_EQ(path.substr(0, path.find('\n')), "epoch,pc1,pc2");
  EXPECT_EQ(std::count(path.begin(), path.end(), '\n'), 4);
}

namespace {

data::DatasetSpec eight_class_spec() {
  data::DatasetSpec s;
  s.mode = data::ShiftMode::diversity;
  s.n_classes = 8;
  s.feature_dim = 16;
  s.domains = {{"domain_0", data::DomainRole::train}, {"domain_1", data::DomainRole::train},
               {"domain_2", data::DomainRole::test}};
  s.style_offsets = {{"domain_0", {1.0, 0.0}}, {"domain_1", {-1.0, 0.0}}, {"domain_2", {0.0, 1.0}}};
  s.label_noise = 0.0;
  s.noise_sigma = 0.3;
  s.samples_per_class_per_env = 60;
  s.seed = 21;
  return s;
}

}  // namespace

TEST(BaseToNew, UntrainedModelIsSymmetricAcrossDomains) {
  const auto spec = eight_class_spec();
  const auto ds = data::generate(spec);
  model::ModelConfig mc;
  mc.feature_dim = spec.feature_dim;
  const model::BayesCalModel m(mc, spec.category_prototypes(), spec.environment_prototypes(), spec.seed, 1);
  const std::vector<std::size_t> base{0, 1, 2, 3, 4, 5}, novel{6, 7};
  const auto splits = data::prepare_splits(ds, 4, 1, std::set<std::size_t>(base.begin(), base.end()));
  const auto r = evalstats::base_to_new_eval(m, ds, base, novel, splits.val);
  EXPECT_EQ(r.iid_count, 2u * 2u * 60u);
  EXPECT_EQ(r.ood_count, 2u * 60u);
  const double se = std::sqrt(0.25 / static_cast<double>(r.ood_count)) + std::sqrt(0.25 / static_cast<double>(r.iid_count));
  EXPECT_NEAR(r.iid_acc, r.ood_acc, 4.0 * se);
  ASSERT_TRUE(r.iid_acc_star.defined());
  EXPECT_GT(r.threshold, 0.0);
  EXPECT_LE(r.threshold, 1.0);
}

TEST(BaseToNew, OverlapIsProtocolError) {
  const auto spec = eight_class_spec();
  const auto ds = data::generate(spec);
  model::ModelConfig mc;
  mc.feature_dim = spec.feature_dim;
  const model::BayesCalModel m(mc, spec.category_prototypes(), spec.environment_prototypes(), spec.seed, 1);
  const std::vector<std::size_t> base{0, 1, 2}, novel{2, 3};
  const std::vector<std::size_t> val{0, 1};
  EXPECT_THROW(evalstats::base_to_new_eval(m, ds, base, novel, val), ProtocolError);
}
