#include "hinet/datagen.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <tuple>
#include <vector>

namespace hinet {
namespace {

// Two-scenario config with flat latent structure; cheap to generate and its
// click/order rates have a closed form (the affinities are all zero).
GeneratorConfig flat_config() {
  GeneratorConfig cfg;
  cfg.users = 200;
  cfg.items = 100;
  cfg.latent_dim = 4;
  cfg.noise = 0.0;
  cfg.impressions = 20000;
  cfg.seed = 7;
  cfg.context_buckets = {10, 10};
  cfg.scenarios = {
      {0, 0.7, 0.20, 0.30, {0, 0, 0, 0}},
      {1, 0.3, 0.05, 0.10, {0, 0, 0, 0}},
  };
  return cfg;
}

GeneratorConfig small_structured_config() {
  GeneratorConfig cfg;
  cfg.users = 300;
  cfg.items = 150;
  cfg.latent_dim = 4;
  cfg.noise = 0.5;
  cfg.impressions = 10000;
  cfg.seed = 3;
  cfg.context_buckets = {8, 5};
  cfg.scenarios = {
      {0, 0.5, 0.15, 0.2, {3, 3, 0, 0}},
      {1, 0.3, 0.25, 0.3, {3, 3, 0, 0}},
      {2, 0.2, 0.10, 0.1, {0, 0, 3, 3}},
  };
  return cfg;
}

std::string temp_path(const std::string& name) { return testing::TempDir() + name; }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

auto record_key(const ExampleRecord& r) {
  return std::make_tuple(r.scenario_id, r.user_id, r.item_id, r.context, r.click, r.order);
}

// ---------------------------------------------------------------------------
// Config validation
// ---------------------------------------------------------------------------

TEST(GeneratorConfigTest, ValidatesHappyPath) {
  EXPECT_NO_THROW(flat_config().validate());
  EXPECT_NO_THROW(small_structured_config().validate());
  EXPECT_NO_THROW(default_generator_config().validate());
}

TEST(GeneratorConfigTest, RejectsBadConfigs) {
  {
    GeneratorConfig c = flat_config();
    c.scenarios.clear();
    EXPECT_THROW(c.validate(), ConfigError);
  }
  {
    GeneratorConfig c = flat_config();
    c.scenarios[1].scenario_id = 5;
    EXPECT_THROW(c.validate(), ConfigError);
  }
  {
    GeneratorConfig c = flat_config();
    c.scenarios[0].traffic_share = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
  }
  {
    GeneratorConfig c = flat_config();
    c.scenarios[0].base_ctr = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
  }
  {
    GeneratorConfig c = flat_config();
    c.scenarios[0].base_cvr_given_click = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
  }
  {
    GeneratorConfig c = flat_config();
    c.scenarios[0].affinity = {0, 0};
    EXPECT_THROW(c.validate(), ConfigError);
  }
  {
    GeneratorConfig c = flat_config();
    c.scenarios[0].traffic_share = 0.6;  // shares now sum to 0.9
    EXPECT_THROW(c.validate(), ConfigError);
  }
  {
    GeneratorConfig c = flat_config();
    c.noise = -0.1;
    EXPECT_THROW(c.validate(), ConfigError);
  }
  {
    GeneratorConfig c = flat_config();
    c.context_buckets = {10, 0};
    EXPECT_THROW(c.validate(), ConfigError);
  }
  {
    GeneratorConfig c = flat_config();
    c.impressions = 0;
    EXPECT_THROW(c.validate(), ConfigError);
  }
}

// ---------------------------------------------------------------------------
// Calibration and bucketing primitives
// ---------------------------------------------------------------------------

TEST(CalibrateBiasTest, ZeroScoresRecoverTheLogit) {
  const std::vector<double> zs(100, 0.0);
  for (double target : {0.05, 0.2, 0.5, 0.9}) {
    const double b = detail::calibrate_bias(zs, target);
    const double logit = std::log(target / (1.0 - target));
    EXPECT_NEAR(b, logit, 1e-9) << "target " << target;
  }
}

TEST(CalibrateBiasTest, HitsTheTargetMeanOnRandomScores) {
  Rng rng = make_rng(5, 0);
  std::normal_distribution<double> dist(0.0, 1.5);
  std::vector<double> zs(2000);
  for (double& z : zs) z = dist(rng);
  for (double target : {0.04, 0.13, 0.42}) {
    const double b = detail::calibrate_bias(zs, target);
    double mean = 0.0;
    for (double z : zs) mean += detail::sigmoid_scalar(b + z);
    mean /= static_cast<double>(zs.size());
    EXPECT_NEAR(mean, target, 1e-9) << "target " << target;
  }
}

TEST(BucketizeTest, SplitsIntoEqualFrequencyBuckets) {
  std::vector<double> scores(100);
  Rng rng = make_rng(5, 1);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& s : scores) s = dist(rng);
  const int buckets = 10;
  std::vector<int> b = detail::bucketize(scores, buckets);
  std::vector<int> counts(buckets, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    ASSERT_GE(b[i], 0);
    ASSERT_LT(b[i], buckets);
    counts[b[i]]++;
    // monotone: a strictly smaller score never lands in a higher bucket
    for (std::size_t j = 0; j < scores.size(); ++j)
      if (scores[i] < scores[j]) EXPECT_LE(b[i], b[j]);
  }
  for (int c : counts) EXPECT_EQ(c, 10);
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

TEST(GenerateTest, IsDeterministicForTheSameConfig) {
  const GeneratorConfig cfg = small_structured_config();
  std::vector<ExampleRecord> a = generate(cfg);
  std::vector<ExampleRecord> b = generate(cfg);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_TRUE(a == b);
}

TEST(GenerateTest, DifferentSeedsDiffer) {
  GeneratorConfig cfg = small_structured_config();
  std::vector<ExampleRecord> a = generate(cfg);
  cfg.seed = 4;
  std::vector<ExampleRecord> b = generate(cfg);
  EXPECT_FALSE(a == b);
}

TEST(GenerateTest, FieldsStayInRangeAndLabelsAreHierarchical) {
  const GeneratorConfig cfg = small_structured_config();
  std::vector<ExampleRecord> recs = generate(cfg);
  ASSERT_EQ(recs.size(), static_cast<std::size_t>(cfg.impressions));
  for (const ExampleRecord& r : recs) {
    ASSERT_GE(r.scenario_id, 0);
    ASSERT_LT(r.scenario_id, static_cast<int>(cfg.scenarios.size()));
    ASSERT_GE(r.user_id, 0);
    ASSERT_LT(r.user_id, cfg.users);
    ASSERT_GE(r.item_id, 0);
    ASSERT_LT(r.item_id, cfg.items);
    ASSERT_EQ(r.context.size(), cfg.context_buckets.size());
    for (std::size_t f = 0; f < r.context.size(); ++f) {
      ASSERT_GE(r.context[f], 0);
      ASSERT_LT(r.context[f], cfg.context_buckets[f]);
    }
    ASSERT_TRUE(r.click == 0 || r.click == 1);
    ASSERT_TRUE(r.order == 0 || r.order == 1);
    ASSERT_FALSE(r.order == 1 && r.click == 0) << "order without click";
  }
}

TEST(GenerateTest, TrafficSharesMatchTheConfig) {
  const GeneratorConfig cfg = flat_config();
  std::vector<ExampleRecord> recs = generate(cfg);
  std::vector<int> counts(cfg.scenarios.size(), 0);
  for (const ExampleRecord& r : recs) counts[r.scenario_id]++;
  for (std::size_t i = 0; i < cfg.scenarios.size(); ++i) {
    const double share = static_cast<double>(counts[i]) / cfg.impressions;
    EXPECT_NEAR(share, cfg.scenarios[i].traffic_share, 0.02) << "scenario " << i;
  }
}

TEST(GenerateTest, FlatConfigHitsTheTargetRates) {
  // With zero affinity and zero noise every impression has click probability
  // exactly base_ctr and order|click probability exactly base_cvr_given_click.
  const GeneratorConfig cfg = flat_config();
  std::vector<ExampleRecord> recs = generate(cfg);
  for (std::size_t i = 0; i < cfg.scenarios.size(); ++i) {
    long long n = 0, clicks = 0, orders = 0;
    for (const ExampleRecord& r : recs) {
      if (r.scenario_id != static_cast<int>(i)) continue;
      ++n;
      clicks += r.click;
      orders += r.order;
    }
    ASSERT_GT(n, 1000);
    const double ctr = static_cast<double>(clicks) / n;
    const double cvr = static_cast<double>(orders) / std::max<long long>(clicks, 1);
    EXPECT_NEAR(ctr, cfg.scenarios[i].base_ctr, 0.02) << "scenario " << i;
    EXPECT_NEAR(cvr, cfg.scenarios[i].base_cvr_given_click, 0.05) << "scenario " << i;
  }
}

TEST(GenerateTest, AffinityStructureSeparatesClickRates) {
  // With a strong affinity the per-pair click probabilities spread out, so
  // the clicked population has a higher interaction score than the rest.
  GeneratorConfig cfg = small_structured_config();
  cfg.impressions = 20000;
  std::vector<ExampleRecord> recs = generate(cfg);
  long long clicks = 0;
  for (const ExampleRecord& r : recs) clicks += r.click;
  ASSERT_GT(clicks, 500);

  // Bucketed context features carry signal: click rate in the top user
  // bucket differs from the bottom bucket for the aligned scenarios.
  double hi_rate = 0, lo_rate = 0;
  long long hi_n = 0, lo_n = 0;
  for (const ExampleRecord& r : recs) {
    if (r.scenario_id > 1) continue;  // scenarios 0,1 share user-latent alignment
    if (r.context[0] == cfg.context_buckets[0] - 1) {
      hi_rate += r.click;
      ++hi_n;
    } else if (r.context[0] == 0) {
      lo_rate += r.click;
      ++lo_n;
    }
  }
  ASSERT_GT(hi_n, 100);
  ASSERT_GT(lo_n, 100);
  hi_rate /= static_cast<double>(hi_n);
  lo_rate /= static_cast<double>(lo_n);
  EXPECT_NE(hi_rate, lo_rate);
}

// ---------------------------------------------------------------------------
// Dataset file I/O
// ---------------------------------------------------------------------------

TEST(DatasetIoTest, RoundTripPreservesEveryRecord) {
  const GeneratorConfig cfg = small_structured_config();
  std::vector<ExampleRecord> recs = generate(cfg);
  const std::string path = temp_path("roundtrip.tsv");
  write_dataset(recs, path);
  std::vector<ExampleRecord> back = read_dataset(path);
  EXPECT_TRUE(recs == back);
  std::remove(path.c_str());
}

TEST(DatasetIoTest, RewriteIsByteIdentical) {
  const GeneratorConfig cfg = flat_config();
  std::vector<ExampleRecord> recs = generate(cfg);
  const std::string p1 = temp_path("bytes1.tsv");
  const std::string p2 = temp_path("bytes2.tsv");
  write_dataset(recs, p1);
  write_dataset(read_dataset(p1), p2);
  EXPECT_EQ(slurp(p1), slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST(DatasetIoTest, MissingFileThrows) {
  EXPECT_THROW(read_dataset(temp_path("does-not-exist.tsv")), IoError);
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const std::string& l : lines) out << l << '\n';
}

TEST(DatasetIoTest, ParseErrorsCarryLineNumbers) {
  const std::string path = temp_path("bad.tsv");

  write_lines(path, {"0 1 2 3 4 1 0", "0 1 2 x 4 1 0"});
  try {
    read_dataset(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }

  write_lines(path, {"0 1 2 3"});
  EXPECT_THROW(read_dataset(path), ParseError);

  write_lines(path, {"0 1 2 3 4 1 0", "0 1 2 1 0"});
  try {
    read_dataset(path);
    FAIL() << "expected ParseError for inconsistent field count";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }

  write_lines(path, {"0 1 -2 3 4 1 0"});
  EXPECT_THROW(read_dataset(path), ParseError);

  write_lines(path, {"0 1 2 3 4 2 0"});
  EXPECT_THROW(read_dataset(path), ParseError);

  write_lines(path, {"0 1 2 3 4 0 1"});
  try {
    read_dataset(path);
    FAIL() << "expected ParseError for order without click";
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("order"), std::string::npos) << msg;
  }

  std::remove(path.c_str());
}

TEST(DatasetIoTest, EmptyLinesAreSkipped) {
  const std::string path = temp_path("gaps.tsv");
  write_lines(path, {"0 1 2 3 4 1 0", "", "1 0 0 5 6 0 0"});
  std::vector<ExampleRecord> recs = read_dataset(path);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1].scenario_id, 1);
  std::remove(path.c_str());
}

TEST(DatasetIoTest, RecordsWithoutContextFieldsParse) {
  const std::string path = temp_path("noctx.tsv");
  write_lines(path, {"0 1 2 1 1", "1 3 4 0 0"});
  std::vector<ExampleRecord> recs = read_dataset(path);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_TRUE(recs[0].context.empty());
  EXPECT_EQ(recs[0].click, 1);
  EXPECT_EQ(recs[0].order, 1);
  std::remove(path.c_str());
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

TEST(SplitTest, StratifiesEveryScenario) {
  const GeneratorConfig cfg = small_structured_config();
  std::vector<ExampleRecord> recs = generate(cfg);
  auto [train, test] = split(recs, 0.8, 11);

  std::vector<long long> n_all(cfg.scenarios.size(), 0), n_train(cfg.scenarios.size(), 0),
      n_test(cfg.scenarios.size(), 0);
  for (const auto& r : recs) n_all[r.scenario_id]++;
  for (const auto& r : train) n_train[r.scenario_id]++;
  for (const auto& r : test) n_test[r.scenario_id]++;
  for (std::size_t i = 0; i < cfg.scenarios.size(); ++i) {
    EXPECT_EQ(n_train[i] + n_test[i], n_all[i]);
    EXPECT_GT(n_train[i], 0);
    EXPECT_GT(n_test[i], 0);
    EXPECT_EQ(n_train[i], std::llround(0.8 * static_cast<double>(n_all[i])));
  }
}

TEST(SplitTest, PreservesTheMultisetOfRecords) {
  const GeneratorConfig cfg = flat_config();
  std::vector<ExampleRecord> recs = generate(cfg);
  auto [train, test] = split(recs, 0.75, 13);
  std::vector<ExampleRecord> merged = train;
  merged.insert(merged.end(), test.begin(), test.end());
  ASSERT_EQ(merged.size(), recs.size());
  auto by_key = [](const ExampleRecord& a, const ExampleRecord& b) {
    return record_key(a) < record_key(b);
  };
  std::vector<ExampleRecord> a = recs, b = merged;
  std::sort(a.begin(), a.end(), by_key);
  std::sort(b.begin(), b.end(), by_key);
  EXPECT_TRUE(a == b);
}

TEST(SplitTest, IsDeterministicInTheSeed) {
  const GeneratorConfig cfg = flat_config();
  std::vector<ExampleRecord> recs = generate(cfg);
  auto [t1, v1] = split(recs, 0.8, 21);
  auto [t2, v2] = split(recs, 0.8, 21);
  EXPECT_TRUE(t1 == t2);
  EXPECT_TRUE(v1 == v2);
  auto [t3, v3] = split(recs, 0.8, 22);
  EXPECT_FALSE(t1 == t3);
}

TEST(SplitTest, RejectsBadFractionsAndTinyScenarios) {
  std::vector<ExampleRecord> recs = generate(flat_config());
  EXPECT_THROW(split(recs, 0.0, 1), ConfigError);
  EXPECT_THROW(split(recs, 1.0, 1), ConfigError);

  std::vector<ExampleRecord> tiny = {{0, 0, 0, {0, 0}, 0, 0},
                                     {0, 1, 1, {0, 0}, 1, 0},
                                     {1, 2, 2, {0, 0}, 0, 0}};
  EXPECT_THROW(split(tiny, 0.5, 1), ConfigError);  // scenario 1 has one record
}

// ---------------------------------------------------------------------------
// JSON round trip
// ---------------------------------------------------------------------------

TEST(GeneratorJsonTest, RoundTripsEveryField) {
  GeneratorConfig cfg = small_structured_config();
  cfg.user_bias_weight = 0.25;
  cfg.item_bias_weight = 1.5;
  cfg.scenarios[0].user_bias_gain = -1.0;
  cfg.scenarios[0].item_bias_gain = 2.0;
  cfg.scenarios[0].cvr_z_scale = -1.0;
  cfg.scenarios[1].affinity_alt = {1.0, -1.0, 0.5, 0.0};
  nlohmann::json j = cfg;
  GeneratorConfig back = j.get<GeneratorConfig>();
  EXPECT_EQ(back.users, cfg.users);
  EXPECT_EQ(back.items, cfg.items);
  EXPECT_EQ(back.latent_dim, cfg.latent_dim);
  EXPECT_EQ(back.noise, cfg.noise);
  EXPECT_EQ(back.impressions, cfg.impressions);
  EXPECT_EQ(back.seed, cfg.seed);
  EXPECT_EQ(back.context_buckets, cfg.context_buckets);
  ASSERT_EQ(back.scenarios.size(), cfg.scenarios.size());
  for (std::size_t i = 0; i < cfg.scenarios.size(); ++i) {
    EXPECT_EQ(back.scenarios[i].scenario_id, cfg.scenarios[i].scenario_id);
    EXPECT_EQ(back.scenarios[i].traffic_share, cfg.scenarios[i].traffic_share);
    EXPECT_EQ(back.scenarios[i].base_ctr, cfg.scenarios[i].base_ctr);
    EXPECT_EQ(back.scenarios[i].base_cvr_given_click, cfg.scenarios[i].base_cvr_given_click);
    EXPECT_EQ(back.scenarios[i].affinity, cfg.scenarios[i].affinity);
    EXPECT_EQ(back.scenarios[i].affinity_alt, cfg.scenarios[i].affinity_alt);
    EXPECT_EQ(back.scenarios[i].user_bias_gain, cfg.scenarios[i].user_bias_gain);
    EXPECT_EQ(back.scenarios[i].item_bias_gain, cfg.scenarios[i].item_bias_gain);
    EXPECT_EQ(back.scenarios[i].cvr_z_scale, cfg.scenarios[i].cvr_z_scale);
  }
  EXPECT_EQ(back.user_bias_weight, cfg.user_bias_weight);
  EXPECT_EQ(back.item_bias_weight, cfg.item_bias_weight);
  EXPECT_TRUE(generate(back) == generate(cfg));
}

TEST(GeneratorJsonTest, MissingOptionalFieldsUseDefaults) {
  nlohmann::json j = {{"scenarios", nlohmann::json::array()}};
  nlohmann::json s = ScenarioSpec{0, 1.0, 0.2, 0.3, {0, 0, 0, 0, 0, 0, 0, 0}};
  j["scenarios"].push_back(s);
  GeneratorConfig cfg = j.get<GeneratorConfig>();
  EXPECT_EQ(cfg.users, 2000);
  EXPECT_EQ(cfg.items, 1000);
  EXPECT_EQ(cfg.latent_dim, 8);
  EXPECT_EQ(cfg.impressions, 100000);
  EXPECT_NO_THROW(cfg.validate());
}

// ---------------------------------------------------------------------------
// Default config
// ---------------------------------------------------------------------------

TEST(DefaultConfigTest, MatchesThePublishedMarginals) {
  const GeneratorConfig cfg = default_generator_config();
  ASSERT_EQ(cfg.scenarios.size(), 6u);
  EXPECT_NO_THROW(cfg.validate());

  double share_sum = 0.0;
  for (const auto& s : cfg.scenarios) share_sum += s.traffic_share;
  EXPECT_NEAR(share_sum, 1.0, 1e-15);

  // Scenario 4 is the long-tail one: by far the smallest traffic share.
  for (std::size_t i = 0; i < 6; ++i)
    if (i != 4) EXPECT_LT(cfg.scenarios[4].traffic_share, cfg.scenarios[i].traffic_share);
  EXPECT_LT(cfg.scenarios[4].traffic_share, 0.005);

  const std::vector<double> ctr = {0.1256, 0.2250, 0.14, 0.1384, 0.0412, 0.1117};
  const std::vector<double> ctcvr = {0.0264, 0.0591, 0.0064, 0.0054, 0.0031, 0.0113};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_DOUBLE_EQ(cfg.scenarios[i].base_ctr, ctr[i]);
    EXPECT_NEAR(cfg.scenarios[i].base_cvr_given_click * ctr[i], ctcvr[i], 1e-12);
  }

  // Scenario 1 has the largest CTR and scenario 4 the smallest.
  for (std::size_t i = 0; i < 6; ++i) {
    if (i != 1) EXPECT_GT(cfg.scenarios[1].base_ctr, cfg.scenarios[i].base_ctr);
    if (i != 4) EXPECT_LT(cfg.scenarios[4].base_ctr, cfg.scenarios[i].base_ctr);
  }
}

}  // namespace
}  // namespace hinet
