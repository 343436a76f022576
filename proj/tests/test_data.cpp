#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "bayescal/data.hpp"

using namespace bayescal;
using data::DatasetSpec;
using data::DomainRole;

namespace {

DatasetSpec correlation_spec(double rho_train, double label_noise, std::size_t per_cell) {
  DatasetSpec s;
  s.domains = {{"domain_0", DomainRole::train}, {"domain_1", DomainRole::train}, {"domain_2", DomainRole::test}};
  s.corr = {{"domain_0", rho_train}, {"domain_1", rho_train}, {"domain_2", 0.1}};
  s.label_noise = label_noise;
  s.samples_per_class_per_env = per_cell;
  s.seed = 7;
  return s;
}

DatasetSpec diversity_spec(double noise_sigma, std::size_t per_cell) {
  DatasetSpec s;
  s.mode = data::ShiftMode::diversity;
  s.n_classes = 3;
  s.domains = {{"domain_0", DomainRole::train}, {"domain_1", DomainRole::train}, {"domain_2", DomainRole::test}};
  s.style_offsets = {{"domain_0", {1.0, 0.0}}, {"domain_1", {-1.0, 0.0}}, {"domain_2", {0.0, 1.0}}};
  s.noise_sigma = noise_sigma;
  s.label_noise = 0.0;
  s.samples_per_class_per_env = per_cell;
  s.seed = 3;
  return s;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Two-class logistic regression on a feature vector, fitted by plain gradient descent.
struct LinearProbe {
  std::vector<double> w;
  double b = 0.0;

  void fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y, int epochs = 500, double lr = 0.5) {
    w.assign(x.front().size(), 0.0);
    for (int e = 0; e < epochs; ++e) {
      std::vector<double> gw(w.size(), 0.0);
      double gb = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-score(x[i])));
        for (std::size_t k = 0; k < w.size(); ++k) gw[k] += (p - y[i]) * x[i][k];
        gb += p - y[i];
      }
      for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gw[k] / static_cast<double>(x.size());
      b -= lr * gb / static_cast<double>(x.size());
    }
  }
  [[nodiscard]] double score(const std::vector<double>& v) const {
    double s = b;
    for (std::size_t k = 0; k < w.size(); ++k) s += w[k] * v[k];
    return s;
  }
  [[nodiscard]] int predict(const std::vector<double>& v) const { return score(v) > 0.0 ? 1 : 0; }
};

}  // namespace

TEST(CorrelationShift, PerfectCorrelationAlignsColor) {
  auto s = correlation_spec(1.0, 0.0, 50);
  s.corr["domain_2"] = 1.0;
  s.noise_sigma = 0.0;
  const auto ds = data::generate_correlation_shift(s);
  for (const auto& x : ds.samples) {
    EXPECT_EQ(x.y_env, x.y_cat);
    EXPECT_EQ(argmax(x.environment_signal), x.y_cat);
    EXPECT_EQ(argmax(x.category_signal), x.y_cat);
  }
}

TEST(CorrelationShift, HalfCorrelationAgreementWithinBinomialBound) {
  const auto ds = data::generate_correlation_shift(correlation_spec(0.5, 0.25, 2000));
  std::size_t n = 0, agree = 0;
  for (const auto& x : ds.samples) {
    if (x.domain == 2) continue;
    ++n;
    agree += x.y_env == x.y_cat ? 1 : 0;
  }
  EXPECT_NEAR(static_cast<double>(agree) / static_cast<double>(n), 0.5, 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST(CorrelationShift, CellCountsAreExact) {
  const auto ds = data::generate_correlation_shift(correlation_spec(0.9, 0.25, 37));
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
  for (const auto& x : ds.samples) ++counts[{x.y_cat, x.domain}];
  EXPECT_EQ(counts.size(), 6u);
  for (const auto& [_, c] : counts) EXPECT_EQ(c, 37u);
}

TEST(CorrelationShift, LabelNoiseRateWithinBinomialBound) {
  const auto ds = data::generate_correlation_shift(correlation_spec(0.9, 0.25, 2000));
  std::size_t flipped = 0;
  for (const auto& x : ds.samples) flipped += argmax(x.category_signal) != x.y_cat ? 1 : 0;
  // With noise_sigma 0.3 the signal argmax equals the true class almost always.
  const double n = static_cast<double>(ds.size());
  EXPECT_NEAR(static_cast<double>(flipped) / n, 0.25, 3.0 * std::sqrt(0.25 * 0.75 / n) + 0.01);
}

TEST(CorrelationShift, MissingCorrelationIsConfigError) {
  auto s = correlation_spec(0.9, 0.25, 10);
  s.corr.erase("domain_1");
  EXPECT_THROW(data::generate_correlation_shift(s), ConfigError);
}

TEST(CorrelationShift, SpuriousColorMisleadsOnTest) {
  const auto ds = data::generate_correlation_shift(correlation_spec(0.85, 0.25, 1000));
  std::vector<std::vector<double>> xtr, xte;
  std::vector<int> ytr, yte;
  for (const auto& x : ds.samples) {
    auto& X = x.domain == 2 ? xte : xtr;
    auto& Y = x.domain == 2 ? yte : ytr;
    X.push_back(x.environment_signal);
    Y.push_back(static_cast<int>(x.y_cat));
  }
  LinearProbe probe;
  probe.fit(xtr, ytr);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < xte.size(); ++i) wrong += probe.predict(xte[i]) != yte[i] ? 1 : 0;
  const double err = static_cast<double>(wrong) / static_cast<double>(xte.size());
  // A color-only rule errs exactly when color and label disagree: expected error 1 - rho_test.
  EXPECT_GE(err, 0.9 - 3.0 * std::sqrt(0.09 / static_cast<double>(xte.size())));
}

TEST(Generators, SameSpecGivesIdenticalJsonl) {
  const auto spec = correlation_spec(0.9, 0.25, 20);
  std::ostringstream a, b;
  data::write_dataset(data::generate(spec), a);
  data::write_dataset(data::generate(spec), b);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_FALSE(a.str().empty());
}

TEST(DiversityShift, ZeroNoiseSharesEnvironmentSignal) {
  const auto ds = data::generate_diversity_shift(diversity_spec(0.0, 10));
  std::map<std::size_t, std::vector<double>> seen;
  for (const auto& x : ds.samples) {
    auto [it, fresh] = seen.emplace(x.domain, x.environment_signal);
    if (!fresh) EXPECT_EQ(it->second, x.environment_signal);
    EXPECT_EQ(x.y_env, x.domain);
  }
}

TEST(DiversityShift, EnvironmentLinearlySeparable) {
  const auto ds = data::generate_diversity_shift(diversity_spec(0.1, 300));
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (const auto& s : ds.samples) {
    if (s.domain > 1) continue;
    x.push_back(s.environment_signal);
    y.push_back(static_cast<int>(s.domain));
  }
  LinearProbe probe;
  probe.fit(x, y);
  std::size_t right = 0;
  for (std::size_t i = 0; i < x.size(); ++i) right += probe.predict(x[i]) == y[i] ? 1 : 0;
  EXPECT_GT(static_cast<double>(right) / static_cast<double>(x.size()), 0.99);
}

TEST(DiversityShift, CategoryIndependentOfEnvironment) {
  // Plug-in mutual information between the category signal's argmax class and the domain.
  const auto ds = data::generate_diversity_shift(diversity_spec(0.3, 400));
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> pc, pe;
  const double n = static_cast<double>(ds.size());
  for (const auto& s : ds.samples) {
    const std::size_t c = argmax(s.category_signal);
    joint[{c, s.domain}] += 1.0 / n;
    pc[c] += 1.0 / n;
    pe[s.domain] += 1.0 / n;
  }
  double mi = 0.0;
  for (const auto& [k, p] : joint) mi += p * std::log(p / (pc[k.first] * pe[k.second]));
  // Plug-in bias is about (|C|-1)(|E|-1) / (2n) nats; allow a few times that.
  EXPECT_LT(mi, 5.0 * 4.0 / (2.0 * n));
}

TEST(DiversityShift, DuplicateOffsetsAreConfigError) {
  auto s = diversity_spec(0.1, 5);
  s.style_offsets["domain_1"] = s.style_offsets["domain_0"];
  EXPECT_THROW(data::generate_diversity_shift(s), ConfigError);
}

TEST(FewShot, SixteenShotOverFourDomains) {
  DatasetSpec s;
  s.mode = data::ShiftMode::diversity;
  s.n_classes = 3;
  s.feature_dim = 8;
  for (int d = 0; d < 5; ++d) {
    s.domains.push_back({"domain_" + std::to_string(d), d < 4 ? DomainRole::train : DomainRole::test});
    s.style_offsets["domain_" + std::to_string(d)] = {static_cast<double>(d), 1.0};
  }
  s.samples_per_class_per_env = 10;
  const auto ds = data::generate(s);
  for (auto [k, per_domain] : {std::pair{16u, 4u}, std::pair{8u, 2u}}) {
    const auto fs = data::sample_few_shot(ds, k, 1);
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
    for (std::size_t i : fs.train) ++counts[{ds.samples[i].y_cat, ds.samples[i].domain}];
    EXPECT_EQ(counts.size(), 12u);
    for (const auto& [_, c] : counts) EXPECT_EQ(c, per_domain);
    EXPECT_EQ(fs.train.size(), 3u * k);
    EXPECT_EQ(fs.val.size(), 3u * k);
    std::set<std::size_t> both(fs.train.begin(), fs.train.end());
    for (std::size_t i : fs.val) EXPECT_FALSE(both.contains(i));
    for (std::size_t i : fs.train) EXPECT_EQ(ds.samples[i].split, data::Split::train);
  }
}

TEST(FewShot, RemainderGoesToLowestDomainsFirst) {
  const auto ds = data::generate(correlation_spec(0.9, 0.25, 10));
  const auto fs = data::sample_few_shot(ds, 3, 4);
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
  for (std::size_t i : fs.train) ++counts[{ds.samples[i].y_cat, ds.samples[i].domain}];
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ((counts[{c, 0}]), 2u);
    EXPECT_EQ((counts[{c, 1}]), 1u);
  }
}

TEST(FewShot, DeterministicAndSeedSensitive) {
  const auto ds = data::generate(correlation_spec(0.9, 0.25, 30));
  const auto a = data::sample_few_shot(ds, 8, 5);
  const auto b = data::sample_few_shot(ds, 8, 5);
  const auto c = data::sample_few_shot(ds, 8, 6);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_NE(a.train, c.train);
}

TEST(FewShot, CapacityErrorNamesTheCell) {
  const auto ds = data::generate(correlation_spec(0.9, 0.25, 5));
  try {
    data::sample_few_shot(ds, 8, 1);
    FAIL() << "expected a capacity error";
  } catch (const CapacityError& e) {
    EXPECT_NE(std::string(e.what()).find("(class_0, domain_0)"), std::string::npos) << e.what();
  }
}

TEST(Splits, PartsAreDisjointAndTagged) {
  auto spec = data::colored_benchmark_spec(2);
  spec.samples_per_class_per_env = 60;
  const auto ds = data::generate(spec);
  const auto sp = data::prepare_splits(ds, 16, 1);
  std::set<std::size_t> all;
  for (const auto* part : {&sp.train, &sp.val, &sp.test_val, &sp.ood_val, &sp.test}) {
    for (std::size_t i : *part) EXPECT_TRUE(all.insert(i).second);
  }
  for (std::size_t i : sp.test_val) EXPECT_EQ(ds.samples[i].split, data::Split::test);
  for (std::size_t i : sp.ood_val) EXPECT_EQ(ds.samples[i].split, data::Split::val);
  EXPECT_EQ(sp.test_val.size(), 32u);
  EXPECT_EQ(sp.ood_val.size(), 32u);
  EXPECT_EQ(sp.test.size(), 120u - 32u);
}

TEST(BaseNew, Cardinalities) {
  const auto ids = [](std::size_t n) { return data::iota_indices(n); };
  const auto pacs = data::split_base_new(ids(7), 5.0 / 7.0, 1);
  EXPECT_EQ(pacs.base.size(), 5u);
  EXPECT_EQ(pacs.novel.size(), 2u);
  const auto nico = data::split_base_new(ids(19), 13.0 / 19.0, 1);
  EXPECT_EQ(nico.base.size(), 13u);
  EXPECT_EQ(nico.novel.size(), 6u);

  std::set<std::size_t> all(nico.base.begin(), nico.base.end());
  for (std::size_t c : nico.novel) EXPECT_TRUE(all.insert(c).second);
  EXPECT_EQ(all.size(), 19u);

  const auto again = data::split_base_new(ids(19), 13.0 / 19.0, 1);
  EXPECT_EQ(again.base, nico.base);
  EXPECT_THROW(data::split_base_new({3}, 0.5, 1), ProtocolError);
  EXPECT_THROW(data::split_base_new(ids(4), 1.0, 1), ConfigError);
}

TEST(DatasetIo, RoundTrip) {
  const auto ds = data::generate(data::colored_benchmark_spec(4));
  std::stringstream buf;
  data::write_dataset(ds, buf);
  EXPECT_EQ(data::read_dataset(buf), ds);
}

TEST(DatasetIo, EmptyDataset) {
  data::Dataset empty;
  std::stringstream buf;
  data::write_dataset(empty, buf);
  EXPECT_TRUE(buf.str().empty());
  EXPECT_EQ(data::read_dataset(buf).size(), 0u);
}

TEST(DatasetIo, MissingFieldReportsLine) {
  auto spec = correlation_spec(0.9, 0.25, 1);
  const auto ds = data::generate(spec);
  std::ostringstream out;
  data::write_dataset(ds, out);
  std::istringstream lines(out.str());
  std::string l1, l2, l3;
  std::getline(lines, l1);
  std::getline(lines, l2);
  std::getline(lines, l3);
  auto j = nlohmann::json::parse(l3);
  j.erase("y_env");
  std::istringstream broken(l1 + "\n" + l2 + "\n" + j.dump() + "\n");
  try {
    data::read_dataset(broken);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("line 3:", 0), 0u) << e.what();
  }
}

TEST(Batch, LabelsArePositionsAndPartitionIsByDomain) {
  const auto ds = data::generate(correlation_spec(0.9, 0.25, 4));
  const model::FrozenImageEncoder enc(16, 1);
  const std::vector<std::size_t> rows{0, 5, 9, 13};
  const std::vector<std::size_t> cats{1, 0};
  const std::vector<std::size_t> envs{0, 1};
  const auto b = data::make_batch(enc, ds, rows, cats, envs);
  b.validate();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    EXPECT_EQ(cats[b.y_cat[r]], ds.samples[rows[r]].y_cat);
    EXPECT_EQ(envs[b.y_env[r]], ds.samples[rows[r]].y_env);
  }
  EXPECT_EQ(b.env_partition.size(), 2u);
  const std::vector<std::size_t> only_zero{0};
  EXPECT_THROW(data::make_batch(enc, ds, rows, only_zero, envs), VocabularyError);
}
