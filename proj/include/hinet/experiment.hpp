#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hinet/common.hpp"
#include "hinet/datagen.hpp"
#include "hinet/metrics.hpp"
#include "hinet/models.hpp"
#include "hinet/trainer.hpp"

namespace hinet {

// Errors surfaced by the runner carry the pipeline stage that failed.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& msg)
      : Error("stage '" + stage + "': " + msg), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

constexpr int kConfigSchemaVersion = 1;

// Fully describes one training run: data source, model, training recipe.
struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;

  // Exactly one data source: an inline generator config or a dataset file.
  std::optional<GeneratorConfig> generator;
  std::string dataset_path;
  double train_frac = 0.8;

  std::string model_kind = "hinet";  // hinet | shared_bottom | mmoe
  std::string variant = "full";      // ablation variant, hinet only
  HiNetConfig hinet;                 // scenario_count filled from the data
  BaselineConfig baseline;
  EmbeddingDims dims;

  TrainConfig train;
  std::uint64_t seed = 1;    // master seed: split, init, and shuffle streams
  std::size_t repeats = 5;   // suite repeat count
  std::size_t workers = 1;   // parallel runs in suites
  std::string output_dir;    // empty = no files written

  void validate() const {
    if (schema_version != kConfigSchemaVersion)
      throw ConfigError("unsupported config schema_version " + std::to_string(schema_version));
    if (generator.has_value() == !dataset_path.empty())
      throw ConfigError("config needs exactly one of generator / dataset_path");
    if (!(train_frac > 0.0 && train_frac < 1.0))
      throw ConfigError("train_frac must be in (0,1)");
    if (model_kind != "hinet" && model_kind != "shared_bottom" && model_kind != "mmoe")
      throw ConfigError("unknown model_kind '" + model_kind + "'");
    if (model_kind == "hinet") variant_from(variant);  // throws on unknown names
    if (repeats == 0) throw ConfigError("repeats must be positive");
    if (workers == 0) throw ConfigError("workers must be positive");
    train.validate();
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"schema_version", c.schema_version},
       {"train_frac", c.train_frac},
       {"model_kind", c.model_kind},
       {"variant", c.variant},
       {"hinet", c.hinet},
       {"baseline", c.baseline},
       {"dims", c.dims},
       {"train", c.train},
       {"seed", c.seed},
       {"repeats", c.repeats},
       {"workers", c.workers},
       {"output_dir", c.output_dir}};
  if (c.generator) j["generator"] = *c.generator;
  if (!c.dataset_path.empty()) j["dataset_path"] = c.dataset_path;
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c.schema_version = j.value("schema_version", c.schema_version);
  if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorConfig>();
  c.dataset_path = j.value("dataset_path", c.dataset_path);
  c.train_frac = j.value("train_frac", c.train_frac);
  c.model_kind = j.value("model_kind", c.model_kind);
  c.variant = j.value("variant", c.variant);
  if (j.contains("hinet")) j.at("hinet").get_to(c.hinet);
  if (j.contains("baseline")) j.at("baseline").get_to(c.baseline);
  if (j.contains("dims")) j.at("dims").get_to(c.dims);
  if (j.contains("train")) j.at("train").get_to(c.train);
  c.seed = j.value("seed", c.seed);
  c.repeats = j.value("repeats", c.repeats);
  c.workers = j.value("workers", c.workers);
  c.output_dir = j.value("output_dir", c.output_dir);
}

// Loads a config file; the schema_version field is mandatory there so stale
// files fail loudly rather than silently reinterpreting fields.
inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (!j.contains("schema_version"))
    throw ConfigError(path + " is missing schema_version");
  ExperimentConfig cfg = j.get<ExperimentConfig>();
  cfg.validate();
  return cfg;
}

namespace detail {

template <typename F>
auto stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const StageError&) {
    throw;  // keep the innermost stage tag
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

// Runs jobs[0..n) on up to `workers` threads; each job owns its output slot.
// The first exception (by job index) is rethrown after all threads finish.
inline void run_parallel(std::vector<std::function<void()>>& jobs, std::size_t workers) {
  if (workers <= 1 || jobs.size() <= 1) {
    for (auto& job : jobs) job();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs.size());
  auto worker = [&]() {
    while (true) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size()) return;
      try {
        jobs[k]();
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n = std::min(workers, jobs.size());
  pool.reserve(n);
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Single run
// ---------------------------------------------------------------------------

struct RunArtifacts {
  nlohmann::json resolved_config;
  TrainLog log;
  EvalReport report;
  std::unique_ptr<Model> model;
};

// Materializes the data source. Generated data is a pure function of the
// generator config; file data is parsed and validated.
inline std::vector<ExampleRecord> load_records(const ExperimentConfig& cfg) {
  return detail::stage("data", [&] {
    if (cfg.generator) return generate(*cfg.generator);
    if (!std::filesystem::exists(cfg.dataset_path))
      throw ConfigError("dataset_path '" + cfg.dataset_path + "' does not exist");
    return read_dataset(cfg.dataset_path);
  });
}

inline FeatureSchema schema_for_run(const ExperimentConfig& cfg,
                                    const std::vector<ExampleRecord>& records) {
  if (cfg.generator) return schema_for(*cfg.generator, cfg.dims);
  return infer_schema(records, cfg.dims);
}

inline std::unique_ptr<Model> make_model(const ExperimentConfig& cfg, const FeatureSchema& schema,
                                         std::size_t scenario_count, std::uint64_t seed) {
  return detail::stage("model", [&]() -> std::unique_ptr<Model> {
    if (cfg.model_kind == "hinet") {
      HiNetConfig hc = apply_variant(cfg.hinet, variant_from(cfg.variant));
      hc.scenario_count = scenario_count;
      return std::make_unique<HiNetModel>(hc, schema, seed);
    }
    BaselineConfig bc = cfg.baseline;
    bc.scenario_count = scenario_count;
    if (cfg.model_kind == "shared_bottom")
      return std::make_unique<SharedBottomModel>(bc, schema, seed);
    return std::make_unique<MmoeModel>(bc, schema, seed);
  });
}

// Generate-or-load, split, train, evaluate; optionally writes every artifact
// (config echo, training log, timings, eval tables, checkpoint, status).
inline RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  detail::stage("config", [&] { cfg.validate(); });

  namespace fs = std::filesystem;
  const bool writing = !cfg.output_dir.empty();
  if (writing) detail::stage("config", [&] { fs::create_directories(cfg.output_dir); });
  auto out_path = [&](const std::string& name) {
    return (fs::path(cfg.output_dir) / name).string();
  };

  try {
    RunArtifacts art;
    ExperimentConfig resolved = cfg;
    resolved.train.seed = cfg.seed;

    std::vector<ExampleRecord> records = load_records(resolved);
    FeatureSchema schema = schema_for_run(resolved, records);
    auto [train_set, test_set] =
        detail::stage("split", [&] { return split(records, resolved.train_frac, resolved.seed); });

    std::size_t scenario_count = 0;
    for (const FieldSpec& f : schema)
      if (f.name == "scenario") scenario_count = static_cast<std::size_t>(f.vocab);
    if (scenario_count == 0) throw StageError("model", "schema has no scenario field");
    resolved.hinet.scenario_count = scenario_count;
    resolved.baseline.scenario_count = scenario_count;

    art.model = make_model(resolved, schema, scenario_count, resolved.seed);
    art.resolved_config = resolved;

    Optimizer optimizer(resolved.train.optimizer);
    Trainer trainer(*art.model, optimizer, schema, resolved.train);
    art.log = detail::stage("train", [&] { return trainer.fit(train_set, test_set); });

    art.report = detail::stage("evaluate", [&] { return evaluate(*art.model, test_set, schema); });
    art.report.meta = {{"model_kind", resolved.model_kind},
                       {"variant", resolved.model_kind == "hinet" ? resolved.variant : ""},
                       {"seed", resolved.seed},
                       {"train_rows", train_set.size()},
                       {"test_rows", test_set.size()}};

    if (writing) {
      detail::stage("write", [&] {
        detail::write_text(out_path("config.json"), art.resolved_config.dump(2) + "\n");
        art.log.write_tsv(out_path("trainlog.tsv"));
        art.log.write_timings(out_path("timings.tsv"));
        art.report.write_tsv(out_path("eval.tsv"));
        art.report.write_json(out_path("eval.json"));
        save_checkpoint(out_path("model.ckpt"), *art.model, optimizer, trainer.rng(),
                        trainer.epochs_done());
        detail::write_text(out_path("status.json"), nlohmann::json{{"status", "ok"}}.dump() + "\n");
      });
    }
    return art;
  } catch (const std::exception& e) {
    if (writing) {
      const StageError* se = dynamic_cast<const StageError*>(&e);
      nlohmann::json status = {{"status", "failed"},
                               {"stage", se ? se->stage() : std::string("unknown")},
                               {"error", e.what()}};
      std::ofstream out(out_path("status.json"));
      if (out) out << status.dump() << '\n';
    }
    throw;
  }
}

// ---------------------------------------------------------------------------
// Suites: ablation grid and capacity sweeps
// ---------------------------------------------------------------------------

struct SuiteRun {
  std::string label;      // variant name or axis value
  std::uint64_t seed = 0;
  double mean_auc = 0.0;
  double final_train_loss = 0.0;
  std::size_t parameter_values = 0;
  EvalReport report;
};

struct AblationOutcome {
  std::vector<std::string> variants;
  std::size_t repeats = 0;
  std::vector<std::vector<double>> mean_auc;  // [repeat][variant]
  FriedmanResult overall;                     // on mean AUC
  // Per (scenario, task) cell: a rank test over the runs where every variant
  // has a defined value; cells with gaps are skipped.
  std::vector<std::pair<std::string, FriedmanResult>> per_cell;
  std::vector<SuiteRun> runs;  // row-major: repeat * variants + variant
};

namespace detail {

// Repeat r shifts both the run seed (init/split/shuffle) and, when the data
// is generated, the generator seed — so repeats are true replications while
// every variant inside one repeat still sees identical data and seeds.
inline SuiteRun one_suite_run(const ExperimentConfig& base, const std::string& label,
                              std::uint64_t repeat) {
  ExperimentConfig cfg = base;
  cfg.seed = base.seed + repeat;
  if (cfg.generator) cfg.generator->seed += repeat;
  cfg.output_dir.clear();  // suites collect results in memory, files come later
  RunArtifacts art = run_experiment(cfg);
  SuiteRun run;
  run.label = label;
  run.seed = cfg.seed;
  run.mean_auc = art.report.mean_auc();
  run.final_train_loss = art.log.rows.empty() ? 0.0 : art.log.rows.back().train_loss;
  run.parameter_values = art.model->params().value_count();
  run.report = std::move(art.report);
  return run;
}

inline std::string cell_label(std::size_t scenario, const std::string& task) {
  return "s" + std::to_string(scenario) + ":" + task;
}

}  // namespace detail

// Trains every requested variant across `repeats` paired seeds. Repeat r
// presents the same split/init/shuffle seed to every variant, so ranks are
// paired the way the rank test expects.
inline AblationOutcome ablation_suite(const ExperimentConfig& base,
                                      std::vector<std::string> variants = {}) {
  base.validate();
  if (base.model_kind != "hinet")
    throw ConfigError("ablation grid is defined for the hierarchical model");
  if (variants.empty())
    for (const auto& [v, name] : variant_names()) variants.push_back(name);
  for (const std::string& v : variants) variant_from(v);
  if (base.repeats < 2) throw ConfigError("ablation needs at least 2 repeats");

  AblationOutcome out;
  out.variants = variants;
  out.repeats = base.repeats;
  out.runs.resize(base.repeats * variants.size());

  std::vector<std::function<void()>> jobs;
  for (std::size_t r = 0; r < base.repeats; ++r)
    for (std::size_t v = 0; v < variants.size(); ++v) {
      jobs.push_back([&, r, v] {
        ExperimentConfig cfg = base;
        cfg.variant = variants[v];
        out.runs[r * variants.size() + v] = detail::one_suite_run(cfg, variants[v], r);
      });
    }
  detail::run_parallel(jobs, base.workers);

  out.mean_auc.assign(base.repeats, std::vector<double>(variants.size()));
  for (std::size_t r = 0; r < base.repeats; ++r)
    for (std::size_t v = 0; v < variants.size(); ++v)
      out.mean_auc[r][v] = out.runs[r * variants.size() + v].mean_auc;
  out.overall = friedman(out.mean_auc);

  const EvalReport& probe = out.runs.front().report;
  const std::vector<std::string> tasks = task_names(probe.task_count);
  for (std::size_t i = 0; i < probe.scenario_count; ++i)
    for (std::size_t j = 0; j < probe.task_count; ++j) {
      std::vector<std::vector<double>> cell_matrix;
      bool complete = true;
      for (std::size_t r = 0; r < base.repeats && complete; ++r) {
        std::vector<double> row;
        for (std::size_t v = 0; v < variants.size(); ++v) {
          const auto& c = out.runs[r * variants.size() + v].report.cells[i][j];
          if (!c.auc) {
            complete = false;
            break;
          }
          row.push_back(*c.auc);
        }
        if (complete) cell_matrix.push_back(std::move(row));
      }
      if (complete)
        out.per_cell.emplace_back(detail::cell_label(i, tasks[j]), friedman(cell_matrix));
    }

  if (!base.output_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(base.output_dir);
    auto path = [&](const std::string& n) { return (fs::path(base.output_dir) / n).string(); };

    std::string runs_tsv = "variant\tseed\tmean_auc\tfinal_train_loss\tparameter_values\n";
    for (const SuiteRun& run : out.runs)
      runs_tsv += run.label + "\t" + std::to_string(run.seed) + "\t" + str17(run.mean_auc) +
                  "\t" + str17(run.final_train_loss) + "\t" +
                  std::to_string(run.parameter_values) + "\n";
    detail::write_text(path("runs.tsv"), runs_tsv);

    std::string fr = "cell\tstatistic";
    for (const std::string& v : variants) fr += "\trank_" + v;
    fr += "\n";
    auto add_row = [&](const std::string& label, const FriedmanResult& res) {
      fr += label + "\t" + str17(res.statistic);
      for (double rank : res.mean_ranks) fr += "\t" + str17(rank);
      fr += "\n";
    };
    add_row("mean_auc", out.overall);
    for (const auto& [label, res] : out.per_cell) add_row(label, res);
    detail::write_text(path("friedman.tsv"), fr);
    detail::write_text(path("config.json"), nlohmann::json(base).dump(2) + "\n");
  }
  return out;
}

enum class SweepAxis { kSubExperts, kCgcExperts };

inline std::string sweep_axis_name(SweepAxis a) {
  return a == SweepAxis::kSubExperts ? "sub_experts" : "cgc_experts";
}

inline SweepAxis sweep_axis_from(const std::string& s) {
  if (s == "sub_experts") return SweepAxis::kSubExperts;
  if (s == "cgc_experts") return SweepAxis::kCgcExperts;
  throw ConfigError("unknown sweep axis '" + s + "'");
}

inline std::vector<std::size_t> default_sweep_values(SweepAxis axis) {
  return axis == SweepAxis::kSubExperts ? std::vector<std::size_t>{1, 3, 5, 7}
                                        : std::vector<std::size_t>{1, 2, 3, 4, 5};
}

struct SweepOutcome {
  SweepAxis axis = SweepAxis::kSubExperts;
  std::vector<std::size_t> values;
  std::size_t repeats = 0;
  // [value][repeat]
  std::vector<std::vector<SuiteRun>> runs;
  std::vector<double> mean_auc;          // averaged over repeats, per value
  std::vector<double> final_train_loss;  // averaged over repeats, per value
  std::vector<std::size_t> parameter_values;
};

// One knob, several values, repeats per value. The expert-count knob scales
// both the shared and the per-scenario extractor; the combiner knob scales
// both the task-shared and task-specific expert groups.
inline SweepOutcome sweep(const ExperimentConfig& base, SweepAxis axis,
                          std::vector<std::size_t> values = {}) {
  base.validate();
  if (base.model_kind != "hinet")
    throw ConfigError("sweep axes are defined for the hierarchical model");
  if (values.empty()) values = default_sweep_values(axis);
  for (std::size_t v : values)
    if (v == 0) throw ConfigError("sweep values must be positive");

  SweepOutcome out;
  out.axis = axis;
  out.values = values;
  out.repeats = base.repeats;
  out.runs.assign(values.size(), std::vector<SuiteRun>(base.repeats));

  std::vector<std::function<void()>> jobs;
  for (std::size_t k = 0; k < values.size(); ++k)
    for (std::size_t r = 0; r < base.repeats; ++r) {
      jobs.push_back([&, k, r] {
        ExperimentConfig cfg = base;
        if (axis == SweepAxis::kSubExperts) {
          cfg.hinet.shared_sub_experts = values[k];
          cfg.hinet.specific_sub_experts = values[k];
        } else {
          cfg.hinet.cgc_shared_experts = values[k];
          cfg.hinet.cgc_task_experts = values[k];
        }
        out.runs[k][r] = detail::one_suite_run(cfg, std::to_string(values[k]), r);
      });
    }
  detail::run_parallel(jobs, base.workers);

  for (std::size_t k = 0; k < values.size(); ++k) {
    double auc_sum = 0.0, loss_sum = 0.0;
    for (const SuiteRun& run : out.runs[k]) {
      auc_sum += run.mean_auc;
      loss_sum += run.final_train_loss;
    }
    out.mean_auc.push_back(auc_sum / static_cast<double>(base.repeats));
    out.final_train_loss.push_back(loss_sum / static_cast<double>(base.repeats));
    out.parameter_values.push_back(out.runs[k].front().parameter_values);
  }

  if (!base.output_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(base.output_dir);
    std::string tsv = sweep_axis_name(axis) +
                      "\tmean_auc\tfinal_train_loss\tparameter_values\trepeats\n";
    for (std::size_t k = 0; k < values.size(); ++k)
      tsv += std::to_string(values[k]) + "\t" + str17(out.mean_auc[k]) + "\t" +
             str17(out.final_train_loss[k]) + "\t" + std::to_string(out.parameter_values[k]) +
             "\t" + std::to_string(base.repeats) + "\n";
    detail::write_text((fs::path(base.output_dir) / "sweep.tsv").string(), tsv);
    detail::write_text((fs::path(base.output_dir) / "config.json").string(),
                       nlohmann::json(base).dump(2) + "\n");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention export
// ---------------------------------------------------------------------------

// Entry (i, m): weight scenario i's attention assigns to scenario m's
// representation; the diagonal is structurally zero. Rows sum to 1 over the
// off-diagonal entries.
struct AttentionMap {
  std::vector<std::vector<double>> weights;

  std::size_t scenario_count() const { return weights.size(); }

  void validate() const {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i].size() != weights.size()) throw ShapeError("attention map must be square");
      if (weights[i][i] != 0.0) throw ContractError("attention diagonal must be zero");
      double sum = 0.0;
      for (double w : weights[i]) sum += w;
      if (std::abs(sum - 1.0) > 1e-9)
        throw ContractError("attention row " + std::to_string(i) + " sums to " + str17(sum));
    }
  }
};

// The trained attention weights depend only on the scenario-indicator
// embedding, so they are constants of the model; no probe data is needed.
inline AttentionMap attention_map(HiNetModel& model) {
  const std::size_t M = model.scenario_count();
  AttentionMap map;
  map.weights.assign(M, std::vector<double>(M, 0.0));
  for (std::size_t i = 0; i < M; ++i) {
    const std::vector<double> row = model.attention_weights(i).values();  // M-1 entries
    std::size_t k = 0;
    for (std::size_t m = 0; m < M; ++m) {
      if (m == i) continue;
      map.weights[i][m] = row[k++];
    }
  }
  map.validate();
  return map;
}

inline void write_attention(const AttentionMap& map, const std::string& path) {
  std::string tsv = "from";
  for (std::size_t m = 0; m < map.scenario_count(); ++m) tsv += "\tto" + std::to_string(m);
  tsv += "\n";
  for (std::size_t i = 0; i < map.scenario_count(); ++i) {
    tsv += std::to_string(i);
    for (double w : map.weights[i]) tsv += "\t" + str17(w);
    tsv += "\n";
  }
  detail::write_text(path, tsv);
}

}  // namespace hinet
