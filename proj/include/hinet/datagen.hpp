#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hinet/common.hpp"

namespace hinet {

// Generator parameters for one scenario. The affinity vector rotates the
// shared user/item latent space; aligned affinities across two scenarios
// make their click signal transferable, orthogonal ones make it private.
// The gain fields scale (and may flip) how strongly the additive user and
// item propensity scores act inside this scenario, so two scenarios can
// respond to the same popular item in opposite ways.
// cvr_z_scale sets how the conversion head reads the same score: +1 keeps
// click and conversion aligned, -1 makes impressions that click easily
// convert poorly, which puts the two tasks in genuine conflict.
// affinity_alt, when non-empty, is the affinity used for users with a
// negative activity score, splitting the scenario into two user segments
// with different preference maps.
struct ScenarioSpec {
  int scenario_id = 0;
  double traffic_share = 0.0;
  double base_ctr = 0.0;
  double base_cvr_given_click = 0.0;
  std::vector<double> affinity;
  std::vector<double> affinity_alt;
  double user_bias_gain = 1.0;
  double item_bias_gain = 1.0;
  double cvr_z_scale = 1.0;
};

struct GeneratorConfig {
  std::vector<ScenarioSpec> scenarios;
  int users = 2000;
  int items = 1000;
  int latent_dim = 8;
  double noise = 0.5;
  int impressions = 100000;
  std::uint64_t seed = 1;
  std::vector<int> context_buckets{10, 10};
  // Additive propensity components: every user carries an activity score and
  // every item a popularity score, both standard normal, mixed into the click
  // score with these weights. They give the log-odds a marginal, per-id part
  // on top of the multiplicative factor interaction.
  double user_bias_weight = 0.5;
  double item_bias_weight = 1.0;

  void validate() const {
    if (scenarios.empty()) throw ConfigError("generator needs at least one scenario");
    if (users <= 0 || items <= 0 || latent_dim <= 0 || impressions <= 0)
      throw ConfigError("generator counts must be positive");
    if (noise < 0) throw ConfigError("noise must be non-negative");
    if (user_bias_weight < 0 || item_bias_weight < 0)
      throw ConfigError("bias weights must be non-negative");
    double share_sum = 0.0;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      const ScenarioSpec& s = scenarios[i];
      if (s.scenario_id != static_cast<int>(i))
        throw ConfigError("scenario ids must be 0..M-1 in order");
      if (!(s.traffic_share > 0.0)) throw ConfigError("traffic share must be positive");
      if (!(s.base_ctr > 0.0 && s.base_ctr < 1.0))
        throw ConfigError("base_ctr must be in (0,1)");
      if (!(s.base_cvr_given_click > 0.0 && s.base_cvr_given_click < 1.0))
        throw ConfigError("base_cvr_given_click must be in (0,1)");
      if (s.affinity.size() != static_cast<std::size_t>(latent_dim))
        throw ConfigError("affinity dim " + std::to_string(s.affinity.size()) +
                          " != latent_dim " + std::to_string(latent_dim));
      if (!s.affinity_alt.empty() &&
          s.affinity_alt.size() != static_cast<std::size_t>(latent_dim))
        throw ConfigError("affinity_alt dim " + std::to_string(s.affinity_alt.size()) +
                          " != latent_dim " + std::to_string(latent_dim));
      share_sum += s.traffic_share;
    }
    if (std::abs(share_sum - 1.0) > 1e-9)
      throw ConfigError("traffic shares sum to " + str(share_sum) + ", expected 1");
    for (int b : context_buckets)
      if (b <= 0) throw ConfigError("context bucket counts must be positive");
  }
};

// One impression. order implies click by construction.
struct ExampleRecord {
  int scenario_id = 0;
  int user_id = 0;
  int item_id = 0;
  std::vector<int> context;
  int click = 0;
  int order = 0;

  bool operator==(const ExampleRecord&) const = default;
};

namespace detail {

inline double sigmoid_scalar(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

// Bisects the bias b so that mean sigmoid(b + z) over the sample hits the
// target rate. Monotone in b, so plain bisection converges.
inline double calibrate_bias(const std::vector<double>& zs, double target) {
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0.0;
    for (double z : zs) mean += sigmoid_scalar(mid + z);
    mean /= static_cast<double>(zs.size());
    (mean < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Equal-frequency bucket index of score within the whole population.
inline std::vector<int> bucketize(const std::vector<double>& scores, int buckets) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r)
    out[order[r]] = static_cast<int>(r * static_cast<std::size_t>(buckets) / n);
  return out;
}

}  // namespace detail

// Draws the full impression log. Pure function of the config: identical
// configs produce identical record streams.
inline std::vector<ExampleRecord> generate(const GeneratorConfig& cfg) {
  cfg.validate();
  const int L = cfg.latent_dim;
  const std::size_t M = cfg.scenarios.size();

  // Latent user/item factors, shared by every scenario.
  Rng latent_rng = make_rng(cfg.seed, 1);
  std::normal_distribution<double> latent_dist(0.0, 1.0 / std::sqrt(static_cast<double>(L)));
  std::vector<std::vector<double>> users(cfg.users, std::vector<double>(L));
  std::vector<std::vector<double>> items(cfg.items, std::vector<double>(L));
  for (auto& u : users)
    for (double& v : u) v = latent_dist(latent_rng);
  for (auto& it : items)
    for (double& v : it) v = latent_dist(latent_rng);

  // Additive propensity scores: user activity and item popularity.
  std::normal_distribution<double> bias_dist(0.0, 1.0);
  std::vector<double> user_bias(cfg.users), item_bias(cfg.items);
  for (double& b : user_bias) b = bias_dist(latent_rng);
  for (double& b : item_bias) b = bias_dist(latent_rng);

  auto interaction = [&](const ScenarioSpec& s, int u, int v) {
    double z = cfg.user_bias_weight * s.user_bias_gain * user_bias[u] +
               cfg.item_bias_weight * s.item_bias_gain * item_bias[v];
    const std::vector<double>& aff =
        (!s.affinity_alt.empty() && user_bias[u] < 0.0) ? s.affinity_alt : s.affinity;
    for (int l = 0; l < L; ++l) z += aff[l] * users[u][l] * items[v][l];
    return z;
  };

  // Bucketized context features. Even-indexed fields describe the user,
  // odd-indexed ones the item. The first pair exposes the additive
  // propensity scores; later pairs expose successive latent coordinates
  // (wrapping around), so a config with enough context fields makes part of
  // the factor interaction observable through small-vocabulary features.
  std::vector<std::vector<int>> ctx_user, ctx_item;
  for (std::size_t f = 0; f < cfg.context_buckets.size(); ++f) {
    const int dim = f < 2 ? -1 : static_cast<int>((f - 2) / 2) % L;
    if (f % 2 == 0) {
      std::vector<double> score(cfg.users);
      for (int u = 0; u < cfg.users; ++u) score[u] = dim < 0 ? user_bias[u] : users[u][dim];
      ctx_user.push_back(detail::bucketize(score, cfg.context_buckets[f]));
    } else {
      std::vector<double> score(cfg.items);
      for (int v = 0; v < cfg.items; ++v) score[v] = dim < 0 ? item_bias[v] : items[v][dim];
      ctx_item.push_back(detail::bucketize(score, cfg.context_buckets[f]));
    }
  }
  auto context_of = [&](int u, int v) {
    std::vector<int> ctx(cfg.context_buckets.size());
    std::size_t ui = 0, ii = 0;
    for (std::size_t f = 0; f < ctx.size(); ++f)
      ctx[f] = (f % 2 == 0) ? ctx_user[ui++][u] : ctx_item[ii++][v];
    return ctx;
  };

  // Per-scenario bias calibration against the target CTR and CVR|click.
  const std::size_t kCalSamples = 32768;
  std::vector<double> click_bias(M), order_bias(M);
  Rng cal_rng = make_rng(cfg.seed, 2);
  std::uniform_int_distribution<int> pick_user(0, cfg.users - 1);
  std::uniform_int_distribution<int> pick_item(0, cfg.items - 1);
  std::normal_distribution<double> unit_normal(0.0, 1.0);
  for (std::size_t i = 0; i < M; ++i) {
    const ScenarioSpec& s = cfg.scenarios[i];
    std::vector<double> zs(kCalSamples);
    for (double& z : zs)
      z = interaction(s, pick_user(cal_rng), pick_item(cal_rng)) + cfg.noise * unit_normal(cal_rng);
    click_bias[i] = detail::calibrate_bias(zs, s.base_ctr);

    // CVR bias is calibrated on the click-conditioned population.
    std::vector<double> zs2;
    zs2.reserve(kCalSamples / 4);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t max_attempts = kCalSamples * 64;
    for (std::size_t a = 0; a < max_attempts && zs2.size() < kCalSamples / 4; ++a) {
      const int u = pick_user(cal_rng);
      const int v = pick_item(cal_rng);
      const double z = interaction(s, u, v);
      const double p_click = detail::sigmoid_scalar(click_bias[i] + z + cfg.noise * unit_normal(cal_rng));
      if (unif(cal_rng) < p_click)
        zs2.push_back(s.cvr_z_scale * z + cfg.noise * unit_normal(cal_rng));
    }
    if (zs2.size() < 64) throw ConfigError("cvr calibration starved for scenario " + std::to_string(i));
    order_bias[i] = detail::calibrate_bias(zs2, s.base_cvr_given_click);
  }

  // Impression stream.
  std::vector<double> share_cdf(M);
  double acc = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    acc += cfg.scenarios[i].traffic_share;
    share_cdf[i] = acc;
  }
  share_cdf.back() = 1.0;

  Rng rng = make_rng(cfg.seed, 3);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<ExampleRecord> out;
  out.reserve(cfg.impressions);
  for (int n = 0; n < cfg.impressions; ++n) {
    const double su = unif(rng);
    std::size_t sid = std::lower_bound(share_cdf.begin(), share_cdf.end(), su) - share_cdf.begin();
    if (sid >= M) sid = M - 1;
    const ScenarioSpec& s = cfg.scenarios[sid];
    const int u = pick_user(rng);
    const int v = pick_item(rng);
    const double z = interaction(s, u, v);
    const double p_click = detail::sigmoid_scalar(click_bias[sid] + z + cfg.noise * unit_normal(rng));
    ExampleRecord rec;
    rec.scenario_id = static_cast<int>(sid);
    rec.user_id = u;
    rec.item_id = v;
    rec.context = context_of(u, v);
    rec.click = unif(rng) < p_click ? 1 : 0;
    if (rec.click) {
      const double p_order = detail::sigmoid_scalar(order_bias[sid] + s.cvr_z_scale * z +
                                                    cfg.noise * unit_normal(rng));
      rec.order = unif(rng) < p_order ? 1 : 0;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset file I/O
//
// One record per line, space separated:
//   scenario_id user_id item_id ctx_0 ... ctx_k click order
// All fields are non-negative integers; order=1 requires click=1.
// ---------------------------------------------------------------------------

inline void write_dataset(const std::vector<ExampleRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const ExampleRecord& r : records) {
    out << r.scenario_id << ' ' << r.user_id << ' ' << r.item_id;
    for (int c : r.context) out << ' ' << c;
    out << ' ' << r.click << ' ' << r.order << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

inline std::vector<ExampleRecord> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<ExampleRecord> out;
  std::string line;
  std::size_t line_no = 0;
  std::ptrdiff_t ctx_count = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::vector<long long> fields;
    long long v;
    while (is >> v) fields.push_back(v);
    if (!is.eof())
      throw ParseError("line " + std::to_string(line_no) + ": non-integer field");
    if (fields.size() < 5)
      throw ParseError("line " + std::to_string(line_no) + ": expected at least 5 fields, got " +
                       std::to_string(fields.size()));
    if (ctx_count < 0)
      ctx_count = static_cast<std::ptrdiff_t>(fields.size()) - 5;
    else if (static_cast<std::ptrdiff_t>(fields.size()) - 5 != ctx_count)
      throw ParseError("line " + std::to_string(line_no) + ": inconsistent field count");
    for (long long f : fields)
      if (f < 0) throw ParseError("line " + std::to_string(line_no) + ": negative field");
    ExampleRecord r;
    r.scenario_id = static_cast<int>(fields[0]);
    r.user_id = static_cast<int>(fields[1]);
    r.item_id = static_cast<int>(fields[2]);
    for (std::ptrdiff_t c = 0; c < ctx_count; ++c)
      r.context.push_back(static_cast<int>(fields[3 + c]));
    r.click = static_cast<int>(fields[fields.size() - 2]);
    r.order = static_cast<int>(fields[fields.size() - 1]);
    if (r.click > 1 || r.order > 1)
      throw ParseError("line " + std::to_string(line_no) + ": labels must be 0/1");
    if (r.order == 1 && r.click == 0)
      throw ParseError("line " + std::to_string(line_no) + ": order=1 with click=0");
    out.push_back(std::move(r));
  }
  return out;
}

// Deterministic stratified split: every scenario contributes to both sides.
inline std::pair<std::vector<ExampleRecord>, std::vector<ExampleRecord>> split(
    const std::vector<ExampleRecord>& records, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw ConfigError("train_frac must be in (0,1)");
  int max_scenario = -1;
  for (const auto& r : records) max_scenario = std::max(max_scenario, r.scenario_id);
  std::vector<std::vector<std::size_t>> by_scenario(max_scenario + 1);
  for (std::size_t i = 0; i < records.size(); ++i)
    by_scenario[records[i].scenario_id].push_back(i);

  std::vector<ExampleRecord> train, test;
  Rng rng = make_rng(seed, 4);
  for (auto& idx : by_scenario) {
    if (idx.empty()) continue;
    if (idx.size() < 2)
      throw ConfigError("scenario " + std::to_string(records[idx[0]].scenario_id) +
                        " has fewer than 2 records; cannot stratify");
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(
        std::llround(train_frac * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    for (std::size_t k = 0; k < idx.size(); ++k)
      (k < n_train ? train : test).push_back(records[idx[k]]);
  }
  return {std::move(train), std::move(test)};
}

inline void to_json(nlohmann::json& j, const ScenarioSpec& s) {
  j = {{"scenario_id", s.scenario_id},
       {"traffic_share", s.traffic_share},
       {"base_ctr", s.base_ctr},
       {"base_cvr_given_click", s.base_cvr_given_click},
       {"affinity", s.affinity},
       {"affinity_alt", s.affinity_alt},
       {"user_bias_gain", s.user_bias_gain},
       {"item_bias_gain", s.item_bias_gain},
       {"cvr_z_scale", s.cvr_z_scale}};
}

inline void from_json(const nlohmann::json& j, ScenarioSpec& s) {
  j.at("scenario_id").get_to(s.scenario_id);
  j.at("traffic_share").get_to(s.traffic_share);
  j.at("base_ctr").get_to(s.base_ctr);
  j.at("base_cvr_given_click").get_to(s.base_cvr_given_click);
  j.at("affinity").get_to(s.affinity);
  s.affinity_alt = j.value("affinity_alt", s.affinity_alt);
  s.user_bias_gain = j.value("user_bias_gain", s.user_bias_gain);
  s.item_bias_gain = j.value("item_bias_gain", s.item_bias_gain);
  s.cvr_z_scale = j.value("cvr_z_scale", s.cvr_z_scale);
}

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"scenarios", c.scenarios},           {"users", c.users},
       {"items", c.items},                   {"latent_dim", c.latent_dim},
       {"noise", c.noise},                   {"impressions", c.impressions},
       {"seed", c.seed},                     {"context_buckets", c.context_buckets},
       {"user_bias_weight", c.user_bias_weight}, {"item_bias_weight", c.item_bias_weight}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  j.at("scenarios").get_to(c.scenarios);
  c.users = j.value("users", c.users);
  c.items = j.value("items", c.items);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.noise = j.value("noise", c.noise);
  c.impressions = j.value("impressions", c.impressions);
  c.seed = j.value("seed", c.seed);
  c.context_buckets = j.value("context_buckets", c.context_buckets);
  c.user_bias_weight = j.value("user_bias_weight", c.user_bias_weight);
  c.item_bias_weight = j.value("item_bias_weight", c.item_bias_weight);
}

// Six scenarios with the published traffic and label marginals. Affinity
// groups: {a,b}, {c,d}, {e,f} share latent directions; the tail scenario e
// rides on f's traffic through their shared dims.
inline GeneratorConfig default_generator_config() {
  GeneratorConfig cfg;
  cfg.users = 2000;
  cfg.items = 1000;
  cfg.latent_dim = 8;
  cfg.noise = 0.5;
  cfg.impressions = 100000;
  cfg.seed = 1;
  cfg.context_buckets = {10, 10};

  const std::vector<double> exposures = {11.5e6, 6.3e6, 1.5e6, 1.7e6, 89e3, 1.7e6};
  const std::vector<double> ctr = {0.1256, 0.2250, 0.14, 0.1384, 0.0412, 0.1117};
  const std::vector<double> ctcvr = {0.0264, 0.0591, 0.0064, 0.0054, 0.0031, 0.0113};
  const std::vector<std::vector<double>> affinity = {
      {3, 3, 0, 0, 0, 0, 1, 0}, {3, 3, 0, 0, 0, 0, -1, 0},
      {0, 0, 3, 3, 0, 0, 0, 1}, {0, 0, 3, 3, 0, 0, 0, -1},
      {0, 0, 0, 0, 3, 3, 1, 0}, {0, 0, 0, 0, 3, 3, 0, -1},
  };
  const double total = std::accumulate(exposures.begin(), exposures.end(), 0.0);
  double used = 0.0;
  for (std::size_t i = 0; i < exposures.size(); ++i) {
    ScenarioSpec s;
    s.scenario_id = static_cast<int>(i);
    s.traffic_share = i + 1 < exposures.size() ? exposures[i] / total : 1.0 - used;
    used += s.traffic_share;
    s.base_ctr = ctr[i];
    s.base_cvr_given_click = ctcvr[i] / ctr[i];
    s.affinity = affinity[i];
    cfg.scenarios.push_back(std::move(s));
  }
  return cfg;
}

}  // namespace hinet
