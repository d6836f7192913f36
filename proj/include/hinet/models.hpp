#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hinet/common.hpp"
#include "hinet/datagen.hpp"
#include "hinet/layers.hpp"
#include "hinet/optim.hpp"
#include "hinet/tensor.hpp"

namespace hinet {

// ---------------------------------------------------------------------------
// Feature schema helpers
// ---------------------------------------------------------------------------

struct EmbeddingDims {
  std::size_t user = 16;
  std::size_t item = 16;
  std::size_t scenario = 8;
  std::size_t context = 8;
};

inline void to_json(nlohmann::json& j, const EmbeddingDims& d) {
  j = {{"user", d.user}, {"item", d.item}, {"scenario", d.scenario}, {"context", d.context}};
}

inline void from_json(const nlohmann::json& j, EmbeddingDims& d) {
  d.user = j.value("user", d.user);
  d.item = j.value("item", d.item);
  d.scenario = j.value("scenario", d.scenario);
  d.context = j.value("context", d.context);
}

inline void to_json(nlohmann::json& j, const FieldSpec& f) {
  j = {{"name", f.name}, {"vocab", f.vocab}, {"dim", f.dim}};
}

inline void from_json(const nlohmann::json& j, FieldSpec& f) {
  j.at("name").get_to(f.name);
  j.at("vocab").get_to(f.vocab);
  j.at("dim").get_to(f.dim);
}

// Canonical field order: user, item, scenario, ctx0..ctxK.
inline FeatureSchema build_schema(int users, int items, int scenarios,
                                  const std::vector<int>& context_vocabs,
                                  const EmbeddingDims& dims = {}) {
  FeatureSchema schema;
  schema.push_back({"user", users, static_cast<int>(dims.user)});
  schema.push_back({"item", items, static_cast<int>(dims.item)});
  schema.push_back({"scenario", scenarios, static_cast<int>(dims.scenario)});
  for (std::size_t k = 0; k < context_vocabs.size(); ++k)
    schema.push_back(
        {"ctx" + std::to_string(k), context_vocabs[k], static_cast<int>(dims.context)});
  return schema;
}

inline FeatureSchema schema_for(const GeneratorConfig& cfg, const EmbeddingDims& dims = {}) {
  return build_schema(cfg.users, cfg.items, static_cast<int>(cfg.scenarios.size()),
                      cfg.context_buckets, dims);
}

// Vocabulary sizes taken from the data itself (max id + 1).
inline FeatureSchema infer_schema(const std::vector<ExampleRecord>& records,
                                  const EmbeddingDims& dims = {}) {
  if (records.empty()) throw ConfigError("cannot infer schema from empty dataset");
  int users = 0, items = 0, scenarios = 0;
  std::vector<int> ctx(records.front().context.size(), 0);
  for (const ExampleRecord& r : records) {
    users = std::max(users, r.user_id + 1);
    items = std::max(items, r.item_id + 1);
    scenarios = std::max(scenarios, r.scenario_id + 1);
    if (r.context.size() != ctx.size()) throw ConfigError("ragged context fields in dataset");
    for (std::size_t k = 0; k < ctx.size(); ++k)
      ctx[k] = std::max(ctx[k], r.context[k] + 1);
  }
  return build_schema(users, items, scenarios, ctx, dims);
}

// Rows must all belong to the same scenario when fed to scenario-routed
// models; this function itself only packs ids in schema order.
inline FeatureBatch make_feature_batch(const std::vector<const ExampleRecord*>& rows,
                                       const FeatureSchema& schema) {
  FeatureBatch batch;
  batch.size = rows.size();
  batch.ids.resize(schema.size());
  for (std::size_t f = 0; f < schema.size(); ++f) {
    const std::string& name = schema[f].name;
    std::vector<int>& col = batch.ids[f];
    col.reserve(rows.size());
    for (const ExampleRecord* r : rows) {
      int id = 0;
      if (name == "user") {
        id = r->user_id;
      } else if (name == "item") {
        id = r->item_id;
      } else if (name == "scenario") {
        id = r->scenario_id;
      } else if (name.rfind("ctx", 0) == 0) {
        const std::size_t k = static_cast<std::size_t>(std::stoul(name.substr(3)));
        if (k >= r->context.size()) throw ConfigError("record has no context field " + name);
        id = r->context[k];
      } else {
        throw ConfigError("unknown schema field " + name);
      }
      col.push_back(id);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Model configuration
// ---------------------------------------------------------------------------

struct HiNetConfig {
  std::size_t scenario_count = 0;
  std::size_t tasks_per_scenario = 2;

  std::size_t shared_sub_experts = 5;          // K in the shared extractor
  std::size_t specific_sub_experts = 5;        // K per scenario extractor
  std::size_t expert_width = 32;               // output width of every sub-expert
  std::vector<std::size_t> expert_hidden{32};  // hidden widths inside each sub-expert

  std::size_t cgc_shared_experts = 2;          // m per scenario
  std::size_t cgc_task_experts = 2;            // n per task
  std::vector<std::size_t> cgc_hidden{32};

  std::vector<std::size_t> tower_hidden{16};
  std::size_t scenario_emb_dim = 8;            // indicator embedding for attention

  bool hierarchy = true;        // scenario extraction layer present
  bool san = true;              // cross-scenario attention present
  bool scenario_gating = true;  // learned gates in the extraction layer
  bool task_gating = true;      // learned gates in the per-task combiner

  void validate() const {
    if (scenario_count == 0) throw ConfigError("scenario_count must be positive");
    if (tasks_per_scenario == 0) throw ConfigError("tasks_per_scenario must be positive");
    if (expert_width == 0) throw ConfigError("expert_width must be positive");
    if (hierarchy && shared_sub_experts == 0)
      throw ConfigError("shared_sub_experts must be positive");
    if (hierarchy && specific_sub_experts == 0)
      throw ConfigError("specific_sub_experts must be positive");
    if (cgc_shared_experts + cgc_task_experts == 0)
      throw ConfigError("combiner needs at least one expert");
    if (san && scenario_emb_dim == 0) throw ConfigError("scenario_emb_dim must be positive");
  }
};

inline void to_json(nlohmann::json& j, const HiNetConfig& c) {
  j = {{"scenario_count", c.scenario_count},
       {"tasks_per_scenario", c.tasks_per_scenario},
       {"shared_sub_experts", c.shared_sub_experts},
       {"specific_sub_experts", c.specific_sub_experts},
       {"expert_width", c.expert_width},
       {"expert_hidden", c.expert_hidden},
       {"cgc_shared_experts", c.cgc_shared_experts},
       {"cgc_task_experts", c.cgc_task_experts},
       {"cgc_hidden", c.cgc_hidden},
       {"tower_hidden", c.tower_hidden},
       {"scenario_emb_dim", c.scenario_emb_dim},
       {"hierarchy", c.hierarchy},
       {"san", c.san},
       {"scenario_gating", c.scenario_gating},
       {"task_gating", c.task_gating}};
}

inline void from_json(const nlohmann::json& j, HiNetConfig& c) {
  c.scenario_count = j.value("scenario_count", c.scenario_count);
  c.tasks_per_scenario = j.value("tasks_per_scenario", c.tasks_per_scenario);
  c.shared_sub_experts = j.value("shared_sub_experts", c.shared_sub_experts);
  c.specific_sub_experts = j.value("specific_sub_experts", c.specific_sub_experts);
  c.expert_width = j.value("expert_width", c.expert_width);
  c.expert_hidden = j.value("expert_hidden", c.expert_hidden);
  c.cgc_shared_experts = j.value("cgc_shared_experts", c.cgc_shared_experts);
  c.cgc_task_experts = j.value("cgc_task_experts", c.cgc_task_experts);
  c.cgc_hidden = j.value("cgc_hidden", c.cgc_hidden);
  c.tower_hidden = j.value("tower_hidden", c.tower_hidden);
  c.scenario_emb_dim = j.value("scenario_emb_dim", c.scenario_emb_dim);
  c.hierarchy = j.value("hierarchy", c.hierarchy);
  c.san = j.value("san", c.san);
  c.scenario_gating = j.value("scenario_gating", c.scenario_gating);
  c.task_gating = j.value("task_gating", c.task_gating);
}

// Named ablation variants of the full architecture.
enum class Variant {
  kFull,
  kNoHierarchy,
  kNoSan,
  kNoTaskGating,
  kNoScenarioGating,
  kNoBothGating,
};

inline const std::vector<std::pair<Variant, std::string>>& variant_names() {
  static const std::vector<std::pair<Variant, std::string>> names = {
      {Variant::kFull, "full"},
      {Variant::kNoHierarchy, "no_hierarchy"},
      {Variant::kNoSan, "no_san"},
      {Variant::kNoTaskGating, "no_task_gating"},
      {Variant::kNoScenarioGating, "no_scenario_gating"},
      {Variant::kNoBothGating, "no_both_gating"},
  };
  return names;
}

inline std::string variant_name(Variant v) {
  for (const auto& [k, n] : variant_names())
    if (k == v) return n;
  throw ConfigError("unknown variant");
}

inline Variant variant_from(const std::string& name) {
  for (const auto& [k, n] : variant_names())
    if (n == name) return k;
  throw ConfigError("unknown variant '" + name + "'");
}

inline HiNetConfig apply_variant(HiNetConfig cfg, Variant v) {
  switch (v) {
    case Variant::kFull:
      break;
    case Variant::kNoHierarchy:
      cfg.hierarchy = false;
      break;
    case Variant::kNoSan:
      cfg.san = false;
      break;
    case Variant::kNoTaskGating:
      cfg.task_gating = false;
      break;
    case Variant::kNoScenarioGating:
      cfg.scenario_gating = false;
      break;
    case Variant::kNoBothGating:
      cfg.scenario_gating = false;
      cfg.task_gating = false;
      break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Model interface
// ---------------------------------------------------------------------------

class Model {
 public:
  virtual ~Model() = default;

  // Per-task probability columns [B x 1]; all rows must belong to scenario_id.
  virtual std::vector<Tensor> forward(const FeatureBatch& batch, std::size_t scenario_id,
                                      GateTrace* trace = nullptr) = 0;

  virtual std::size_t scenario_count() const = 0;
  virtual std::size_t task_count() const = 0;
  virtual ParameterSet& params() = 0;
  const ParameterSet& params() const { return const_cast<Model*>(this)->params(); }

  // Everything needed to rebuild the same architecture (not the weights).
  virtual nlohmann::json architecture() const = 0;
};

namespace detail {

inline void check_scenario(std::size_t scenario_id, std::size_t count) {
  if (scenario_id >= count)
    throw IndexError("scenario " + std::to_string(scenario_id) + " out of range [0," +
                     std::to_string(count) + ")");
}

inline std::vector<EmbeddingTable> make_tables(ParameterSet& params, const FeatureSchema& schema,
                                               Rng& rng) {
  std::vector<EmbeddingTable> tables;
  tables.reserve(schema.size());
  for (const FieldSpec& f : schema) tables.emplace_back(params, "emb." + f.name, f, rng);
  return tables;
}

inline nlohmann::json schema_json(const FeatureSchema& schema) { return nlohmann::json(schema); }

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
  return j.get<FeatureSchema>();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Hierarchical model: shared + scenario-specific extraction, cross-scenario
// attention, then a per-scenario multi-task combiner and task towers.
// ---------------------------------------------------------------------------

class HiNetModel : public Model {
 public:
  HiNetModel(HiNetConfig cfg, FeatureSchema schema, std::uint64_t seed)
      : cfg_(std::move(cfg)), schema_(std::move(schema)) {
    cfg_.validate();
    if (schema_.empty()) throw ConfigError("feature schema is empty");
    Rng rng = make_rng(seed, 10);
    tables_ = detail::make_tables(params_, schema_, rng);
    const std::size_t x_width = input_width(schema_);

    std::vector<std::size_t> expert_widths;
    expert_widths.push_back(x_width);
    for (std::size_t h : cfg_.expert_hidden) expert_widths.push_back(h);
    expert_widths.push_back(cfg_.expert_width);

    std::size_t combiner_in = x_width;
    if (cfg_.hierarchy) {
      scenario_layer_.emplace(params_, cfg_.scenario_count, cfg_.shared_sub_experts,
                              cfg_.specific_sub_experts, expert_widths, cfg_.san,
                              cfg_.scenario_gating, cfg_.scenario_emb_dim, rng);
      combiner_in = scenario_layer_->out_width();
    }

    std::vector<std::size_t> cgc_widths;
    cgc_widths.push_back(combiner_in);
    for (std::size_t h : cfg_.cgc_hidden) cgc_widths.push_back(h);
    cgc_widths.push_back(cfg_.expert_width);

    std::vector<std::size_t> tower_widths;
    tower_widths.push_back(cfg_.expert_width);
    for (std::size_t h : cfg_.tower_hidden) tower_widths.push_back(h);
    tower_widths.push_back(1);

    for (std::size_t i = 0; i < cfg_.scenario_count; ++i) {
      combiners_.emplace_back(params_, "combine." + std::to_string(i), cfg_.tasks_per_scenario,
                              cfg_.cgc_shared_experts, cfg_.cgc_task_experts, cgc_widths,
                              cfg_.task_gating, rng);
      towers_.emplace_back();
      for (std::size_t j = 0; j < cfg_.tasks_per_scenario; ++j)
        towers_.back().emplace_back(params_,
                                    "tower." + std::to_string(i) + "." + std::to_string(j),
                                    tower_widths, /*activate_last=*/false, rng);
    }
  }

  std::vector<Tensor> forward(const FeatureBatch& batch, std::size_t scenario_id,
                              GateTrace* trace = nullptr) override {
    detail::check_scenario(scenario_id, cfg_.scenario_count);
    Tensor x = embed_features(batch, tables_);
    Tensor c = cfg_.hierarchy ? scenario_layer_->forward(x, scenario_id, trace) : x;
    std::vector<Tensor> out;
    out.reserve(cfg_.tasks_per_scenario);
    for (std::size_t j = 0; j < cfg_.tasks_per_scenario; ++j) {
      Tensor t = combiners_[scenario_id].forward(c, j, trace);
      out.push_back(tower_forward(towers_[scenario_id][j], t));
    }
    return out;
  }

  // Attention mixture over the other scenarios' extractors, given the
  // querying scenario. Row m of the result is scenario m's weight vector.
  Tensor attention_weights(std::size_t scenario_id) {
    if (!cfg_.hierarchy) throw ContractError("attention requires the hierarchical layer");
    detail::check_scenario(scenario_id, cfg_.scenario_count);
    return scenario_layer_->attention_weights(scenario_id);
  }

  std::size_t scenario_count() const override { return cfg_.scenario_count; }
  std::size_t task_count() const override { return cfg_.tasks_per_scenario; }
  ParameterSet& params() override { return params_; }
  const HiNetConfig& config() const { return cfg_; }
  const FeatureSchema& schema() const { return schema_; }

  nlohmann::json architecture() const override {
    return {{"kind", "hinet"}, {"config", cfg_}, {"schema", detail::schema_json(schema_)}};
  }

 private:
  HiNetConfig cfg_;
  FeatureSchema schema_;
  ParameterSet params_;
  std::vector<EmbeddingTable> tables_;
  std::optional<ScenarioLayer> scenario_layer_;
  std::vector<CgcModule> combiners_;
  std::vector<std::vector<Mlp>> towers_;
};

// ---------------------------------------------------------------------------
// Baseline: one shared trunk, per scenario-task towers.
// ---------------------------------------------------------------------------

struct BaselineConfig {
  std::size_t scenario_count = 0;
  std::size_t tasks_per_scenario = 2;
  std::vector<std::size_t> trunk_hidden{64, 32};  // shared-bottom trunk
  std::size_t experts = 10;                       // expert count (mixture baseline)
  std::vector<std::size_t> expert_hidden{32};
  std::size_t expert_width = 32;
  std::vector<std::size_t> tower_hidden{16};

  void validate() const {
    if (scenario_count == 0) throw ConfigError("scenario_count must be positive");
    if (tasks_per_scenario == 0) throw ConfigError("tasks_per_scenario must be positive");
  }
};

inline void to_json(nlohmann::json& j, const BaselineConfig& c) {
  j = {{"scenario_count", c.scenario_count},
       {"tasks_per_scenario", c.tasks_per_scenario},
       {"trunk_hidden", c.trunk_hidden},
       {"experts", c.experts},
       {"expert_hidden", c.expert_hidden},
       {"expert_width", c.expert_width},
       {"tower_hidden", c.tower_hidden}};
}

inline void from_json(const nlohmann::json& j, BaselineConfig& c) {
  c.scenario_count = j.value("scenario_count", c.scenario_count);
  c.tasks_per_scenario = j.value("tasks_per_scenario", c.tasks_per_scenario);
  c.trunk_hidden = j.value("trunk_hidden", c.trunk_hidden);
  c.experts = j.value("experts", c.experts);
  c.expert_hidden = j.value("expert_hidden", c.expert_hidden);
  c.expert_width = j.value("expert_width", c.expert_width);
  c.tower_hidden = j.value("tower_hidden", c.tower_hidden);
}

class SharedBottomModel : public Model {
 public:
  SharedBottomModel(BaselineConfig cfg, FeatureSchema schema, std::uint64_t seed)
      : cfg_(std::move(cfg)), schema_(std::move(schema)) {
    cfg_.validate();
    if (cfg_.trunk_hidden.empty()) throw ConfigError("trunk needs at least one layer");
    Rng rng = make_rng(seed, 11);
    tables_ = detail::make_tables(params_, schema_, rng);

    std::vector<std::size_t> trunk_widths;
    trunk_widths.push_back(input_width(schema_));
    for (std::size_t h : cfg_.trunk_hidden) trunk_widths.push_back(h);
    trunk_ = Mlp(params_, "trunk", trunk_widths, /*activate_last=*/true, rng);

    std::vector<std::size_t> tower_widths;
    tower_widths.push_back(cfg_.trunk_hidden.back());
    for (std::size_t h : cfg_.tower_hidden) tower_widths.push_back(h);
    tower_widths.push_back(1);
    for (std::size_t i = 0; i < cfg_.scenario_count; ++i) {
      towers_.emplace_back();
      for (std::size_t j = 0; j < cfg_.tasks_per_scenario; ++j)
        towers_.back().emplace_back(params_,
                                    "tower." + std::to_string(i) + "." + std::to_string(j),
                                    tower_widths, /*activate_last=*/false, rng);
    }
  }

  std::vector<Tensor> forward(const FeatureBatch& batch, std::size_t scenario_id,
                              GateTrace* trace = nullptr) override {
    (void)trace;
    detail::check_scenario(scenario_id, cfg_.scenario_count);
    Tensor x = embed_features(batch, tables_);
    Tensor h = trunk_.forward(x);
    std::vector<Tensor> out;
    for (std::size_t j = 0; j < cfg_.tasks_per_scenario; ++j)
      out.push_back(tower_forward(towers_[scenario_id][j], h));
    return out;
  }

  std::size_t scenario_count() const override { return cfg_.scenario_count; }
  std::size_t task_count() const override { return cfg_.tasks_per_scenario; }
  ParameterSet& params() override { return params_; }

  nlohmann::json architecture() const override {
    return {{"kind", "shared_bottom"}, {"config", cfg_}, {"schema", detail::schema_json(schema_)}};
  }

 private:
  BaselineConfig cfg_;
  FeatureSchema schema_;
  ParameterSet params_;
  std::vector<EmbeddingTable> tables_;
  Mlp trunk_;
  std::vector<std::vector<Mlp>> towers_;
};

// ---------------------------------------------------------------------------
// Baseline: flat mixture of experts with one softmax gate per scenario-task.
// ---------------------------------------------------------------------------

class MmoeModel : public Model {
 public:
  MmoeModel(BaselineConfig cfg, FeatureSchema schema, std::uint64_t seed)
      : cfg_(std::move(cfg)), schema_(std::move(schema)) {
    cfg_.validate();
    if (cfg_.experts == 0) throw ConfigError("mixture needs at least one expert");
    Rng rng = make_rng(seed, 12);
    tables_ = detail::make_tables(params_, schema_, rng);
    const std::size_t x_width = input_width(schema_);

    std::vector<std::size_t> expert_widths;
    expert_widths.push_back(x_width);
    for (std::size_t h : cfg_.expert_hidden) expert_widths.push_back(h);
    expert_widths.push_back(cfg_.expert_width);
    for (std::size_t e = 0; e < cfg_.experts; ++e)
      experts_.emplace_back(params_, "expert." + std::to_string(e), expert_widths,
                            /*activate_last=*/true, rng);

    std::vector<std::size_t> tower_widths;
    tower_widths.push_back(cfg_.expert_width);
    for (std::size_t h : cfg_.tower_hidden) tower_widths.push_back(h);
    tower_widths.push_back(1);
    for (std::size_t i = 0; i < cfg_.scenario_count; ++i) {
      gates_.emplace_back();
      towers_.emplace_back();
      for (std::size_t j = 0; j < cfg_.tasks_per_scenario; ++j) {
        const std::string tag = std::to_string(i) + "." + std::to_string(j);
        gates_.back().emplace_back(params_, "gate." + tag, cfg_.experts, x_width, rng);
        towers_.back().emplace_back(params_, "tower." + tag, tower_widths,
                                    /*activate_last=*/false, rng);
      }
    }
  }

  std::vector<Tensor> forward(const FeatureBatch& batch, std::size_t scenario_id,
                              GateTrace* trace = nullptr) override {
    detail::check_scenario(scenario_id, cfg_.scenario_count);
    Tensor x = embed_features(batch, tables_);
    std::vector<Tensor> expert_out;
    expert_out.reserve(experts_.size());
    for (Mlp& e : experts_) expert_out.push_back(e.forward(x));
    std::vector<Tensor> out;
    for (std::size_t j = 0; j < cfg_.tasks_per_scenario; ++j) {
      Tensor g = gates_[scenario_id][j].forward(x);
      if (trace) trace->note(g);
      Tensor mixed = scale_rows(expert_out[0], column(g, 0));
      for (std::size_t e = 1; e < experts_.size(); ++e)
        mixed = add(mixed, scale_rows(expert_out[e], column(g, e)));
      out.push_back(tower_forward(towers_[scenario_id][j], mixed));
    }
    return out;
  }

  std::size_t scenario_count() const override { return cfg_.scenario_count; }
  std::size_t task_count() const override { return cfg_.tasks_per_scenario; }
  ParameterSet& params() override { return params_; }

  nlohmann::json architecture() const override {
    return {{"kind", "mmoe"}, {"config", cfg_}, {"schema", detail::schema_json(schema_)}};
  }

 private:
  BaselineConfig cfg_;
  FeatureSchema schema_;
  ParameterSet params_;
  std::vector<EmbeddingTable> tables_;
  std::vector<Mlp> experts_;
  std::vector<std::vector<GatingNetwork>> gates_;
  std::vector<std::vector<Mlp>> towers_;
};

// ---------------------------------------------------------------------------
// Factory + weight bundles
// ---------------------------------------------------------------------------

inline std::unique_ptr<Model> build_model(const nlohmann::json& arch, std::uint64_t seed) {
  const std::string kind = arch.at("kind").get<std::string>();
  FeatureSchema schema = detail::schema_from_json(arch.at("schema"));
  if (kind == "hinet")
    return std::make_unique<HiNetModel>(arch.at("config").get<HiNetConfig>(), schema, seed);
  if (kind == "shared_bottom")
    return std::make_unique<SharedBottomModel>(arch.at("config").get<BaselineConfig>(), schema,
                                               seed);
  if (kind == "mmoe")
    return std::make_unique<MmoeModel>(arch.at("config").get<BaselineConfig>(), schema, seed);
  throw ConfigError("unknown model kind '" + kind + "'");
}

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64(std::istream& in, const char* what) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw IoError(std::string("truncated file while reading ") + what);
  return v;
}

inline void write_bytes(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_bytes(std::istream& in, const char* what) {
  const std::uint64_t n = read_u64(in, what);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError(std::string("truncated file while reading ") + what);
  return s;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
  write_u64(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline std::vector<double> read_doubles(std::istream& in, const char* what) {
  const std::uint64_t n = read_u64(in, what);
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IoError(std::string("truncated file while reading ") + what);
  return v;
}

constexpr std::uint64_t kBundleMagic = 0x48494e4254454e53ull;  // "HINBTENS"
constexpr std::uint64_t kBundleVersion = 1;

inline void write_params(std::ostream& out, const ParameterSet& params) {
  write_u64(out, params.items().size());
  for (const Parameter& p : params.items()) {
    write_bytes(out, p.name);
    write_u64(out, p.tensor.rank());
    for (std::size_t d : p.tensor.shape()) write_u64(out, d);
    write_doubles(out, p.tensor.values());
  }
}

inline void read_params(std::istream& in, ParameterSet& params) {
  const std::uint64_t count = read_u64(in, "parameter count");
  if (count != params.items().size())
    throw IoError("parameter count mismatch: file has " + std::to_string(count) +
                  ", model has " + std::to_string(params.items().size()));
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::string name = read_bytes(in, "parameter name");
    Parameter* p = params.find(name);
    if (!p) throw IoError("file parameter '" + name + "' not present in model");
    const std::uint64_t rank = read_u64(in, "parameter rank");
    Shape shape(rank);
    for (std::uint64_t d = 0; d < rank; ++d) shape[d] = read_u64(in, "parameter dim");
    if (shape != p->tensor.shape())
      throw IoError("shape mismatch for parameter '" + name + "'");
    std::vector<double> vals = read_doubles(in, "parameter values");
    if (vals.size() != p->tensor.size())
      throw IoError("value count mismatch for parameter '" + name + "'");
    p->tensor.values() = std::move(vals);
  }
}

}  // namespace detail

// Architecture JSON + raw weights; loading rebuilds the model and verifies
// every name and shape. Round-trips are bit-exact.
inline void save_bundle(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  detail::write_u64(out, detail::kBundleMagic);
  detail::write_u64(out, detail::kBundleVersion);
  detail::write_bytes(out, model.architecture().dump());
  detail::write_params(out, model.params());
  if (!out) throw IoError("write failed for " + path);
}

inline std::unique_ptr<Model> load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  if (detail::read_u64(in, "magic") != detail::kBundleMagic)
    throw IoError(path + " is not a model bundle");
  const std::uint64_t version = detail::read_u64(in, "version");
  if (version != detail::kBundleVersion)
    throw IoError("unsupported bundle version " + std::to_string(version));
  nlohmann::json arch;
  try {
    arch = nlohmann::json::parse(detail::read_bytes(in, "architecture"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt architecture block: ") + e.what());
  }
  std::unique_ptr<Model> model = build_model(arch, /*seed=*/0);
  detail::read_params(in, model->params());
  return model;
}

}  // namespace hinet
