#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hinet/common.hpp"
#include "hinet/datagen.hpp"
#include "hinet/metrics.hpp"
#include "hinet/models.hpp"
#include "hinet/optim.hpp"

namespace hinet {

inline void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = {{"kind", optimizer_kind_name(c.kind)},
       {"lr", c.lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps}};
}

inline void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  if (j.contains("kind")) c.kind = optimizer_kind_from(j.at("kind").get<std::string>());
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
}

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;      // consecutive non-improving epochs tolerated
  bool restore_best = true;      // rewind to the best validation epoch at the end
  std::uint64_t seed = 1;
  std::vector<double> loss_weights;  // per scenario; empty = reciprocal train share

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (optimizer.lr <= 0) throw ConfigError("learning rate must be positive");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"optimizer", c.optimizer}, {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs}, {"patience", c.patience},
       {"restore_best", c.restore_best}, {"seed", c.seed},
       {"loss_weights", c.loss_weights}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("optimizer")) j.at("optimizer").get_to(c.optimizer);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.restore_best = j.value("restore_best", c.restore_best);
  c.seed = j.value("seed", c.seed);
  c.loss_weights = j.value("loss_weights", c.loss_weights);
}

// Reciprocal of each scenario's share of the training stream: scenario i
// with share p_i contributes weight 1/p_i, so sparse scenarios are not
// drowned out. Every scenario must appear at least once.
inline std::vector<double> compute_loss_weights(const std::vector<ExampleRecord>& records,
                                                std::size_t scenario_count) {
  if (records.empty()) throw ConfigError("cannot derive loss weights from an empty split");
  std::vector<std::size_t> counts(scenario_count, 0);
  for (const ExampleRecord& r : records) {
    if (r.scenario_id < 0 || static_cast<std::size_t>(r.scenario_id) >= scenario_count)
      throw IndexError("record scenario " + std::to_string(r.scenario_id) +
                       " outside range " + std::to_string(scenario_count));
    ++counts[r.scenario_id];
  }
  std::vector<double> weights(scenario_count);
  const double total = static_cast<double>(records.size());
  for (std::size_t i = 0; i < scenario_count; ++i) {
    if (counts[i] == 0)
      throw ConfigError("scenario " + std::to_string(i) + " absent from the training split");
    weights[i] = total / static_cast<double>(counts[i]);
  }
  return weights;
}

struct EpochRow {
  std::size_t epoch = 0;  // 0-based, contiguous, cumulative across resumed runs
  double train_loss = 0.0;
  double valid_loss = 0.0;
  std::vector<std::vector<std::optional<double>>> valid_auc;  // [scenario][task]
};

struct TrainLog {
  std::vector<EpochRow> rows;
  std::vector<double> loss_weights;
  std::size_t best_epoch = 0;  // 0-based; meaningful only when best_valid_loss is finite
  double best_valid_loss = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
  std::vector<double> epoch_seconds;  // wall clock, kept out of the deterministic dump

  // Deterministic per-epoch table; byte-identical for identical runs.
  void write_tsv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    std::size_t M = 0, T = 0;
    if (!rows.empty()) {
      M = rows.front().valid_auc.size();
      T = M ? rows.front().valid_auc.front().size() : 0;
    }
    const std::vector<std::string> tasks = task_names(T);
    out << "epoch\ttrain_loss\tvalid_loss";
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < T; ++j) out << "\tauc_s" << i << '_' << tasks[j];
    out << '\n';
    for (const EpochRow& r : rows) {
      out << r.epoch << '\t' << str17(r.train_loss) << '\t' << str17(r.valid_loss);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < T; ++j)
          out << '\t' << (r.valid_auc[i][j] ? str17(*r.valid_auc[i][j]) : "NA");
      out << '\n';
    }
    if (!out) throw IoError("write failed for " + path);
  }

  // Wall-clock timings live in their own file so the log above stays
  // reproducible byte for byte.
  void write_timings(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "epoch\tseconds\n";
    for (std::size_t k = 0; k < epoch_seconds.size(); ++k)
      out << (rows.size() > k ? rows[k].epoch : k + 1) << '\t' << str17(epoch_seconds[k]) << '\n';
  }
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

class Trainer {
 public:
  Trainer(Model& model, Optimizer& optimizer, FeatureSchema schema, TrainConfig cfg)
      : model_(model),
        optimizer_(optimizer),
        schema_(std::move(schema)),
        cfg_(std::move(cfg)),
        rng_(make_rng(cfg_.seed, 5)) {
    cfg_.validate();
  }

  std::size_t epochs_done() const { return epochs_done_; }
  Rng& rng() { return rng_; }
  void set_epochs_done(std::size_t e) { epochs_done_ = e; }

  // Runs up to cfg.max_epochs epochs (counted from this call) with early
  // stopping on validation loss. Weighted objective: mean over the batch of
  // sum_tasks lambda(scenario) * cross-entropy.
  TrainLog fit(const std::vector<ExampleRecord>& train_set,
               const std::vector<ExampleRecord>& valid_set) {
    if (train_set.empty()) throw ContractError("training split is empty");
    if (valid_set.empty()) throw ContractError("validation split is empty");
    const std::size_t M = model_.scenario_count();
    const std::size_t T = model_.task_count();

    TrainLog log;
    log.loss_weights = cfg_.loss_weights.empty() ? compute_loss_weights(train_set, M)
                                                 : cfg_.loss_weights;
    if (log.loss_weights.size() != M)
      throw ConfigError("expected " + std::to_string(M) + " loss weights, got " +
                        std::to_string(log.loss_weights.size()));
    const std::vector<double>& lambda = log.loss_weights;

    std::vector<std::size_t> index(train_set.size());

    std::vector<std::vector<double>> best_params;
    std::size_t bad_streak = 0;

    for (std::size_t e = 0; e < cfg_.max_epochs; ++e) {
      const auto t0 = std::chrono::steady_clock::now();
      // Fresh identity permutation each epoch: the visit order is then a pure
      // function of the rng state, which is what lets checkpoints resume
      // bit-exactly.
      std::iota(index.begin(), index.end(), 0);
      std::shuffle(index.begin(), index.end(), rng_);
      double loss_sum = 0.0;

      for (std::size_t start = 0; start < index.size(); start += cfg_.batch_size) {
        const std::size_t stop = std::min(index.size(), start + cfg_.batch_size);
        loss_sum += train_batch(train_set, index, start, stop, lambda, e);
      }
      ++epochs_done_;

      EpochRow row;
      row.epoch = epochs_done_ - 1;
      row.train_loss = loss_sum / static_cast<double>(train_set.size());

      EvalReport report = evaluate(model_, valid_set, schema_);
      row.valid_loss = weighted_loss(report, lambda, valid_set.size());
      row.valid_auc.assign(M, std::vector<std::optional<double>>(T));
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < T; ++j) row.valid_auc[i][j] = report.cells[i][j].auc;
      log.rows.push_back(std::move(row));
      log.epoch_seconds.push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

      if (log.rows.back().valid_loss < log.best_valid_loss) {
        log.best_valid_loss = log.rows.back().valid_loss;
        log.best_epoch = epochs_done_ - 1;
        bad_streak = 0;
        if (cfg_.restore_best) best_params = model_.params().snapshot_values();
      } else if (++bad_streak >= cfg_.patience) {
        log.stopped_early = true;
        break;
      }
    }

    if (cfg_.restore_best && !best_params.empty()) model_.params().restore_values(best_params);
    return log;
  }

 private:
  // One optimizer step over rows [start, stop) of the shuffled index.
  // Returns the summed (pre-normalization) weighted loss for the batch.
  double train_batch(const std::vector<ExampleRecord>& train_set,
                     const std::vector<std::size_t>& index, std::size_t start, std::size_t stop,
                     const std::vector<double>& lambda, std::size_t epoch) {
    const std::size_t batch_rows = stop - start;
    std::map<int, std::vector<const ExampleRecord*>> groups;
    for (std::size_t k = start; k < stop; ++k) {
      const ExampleRecord& r = train_set[index[k]];
      groups[r.scenario_id].push_back(&r);
    }

    Tape tape;
    Tape::Scope scope(tape);
    std::optional<Tensor> total;
    for (const auto& [sid, rows] : groups) {
      FeatureBatch batch = make_feature_batch(rows, schema_);
      std::vector<Tensor> probs = model_.forward(batch, static_cast<std::size_t>(sid));
      for (std::size_t j = 0; j < probs.size(); ++j) {
        std::vector<double> labels(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r)
          labels[r] = static_cast<double>(task_label(*rows[r], j));
        Tensor y = Tensor::from({rows.size(), 1}, std::move(labels));
        Tensor term = scale(bce_sum(probs[j], y), lambda[static_cast<std::size_t>(sid)]);
        total = total ? add(*total, term) : term;
      }
    }
    Tensor loss = scale(*total, 1.0 / static_cast<double>(batch_rows));
    const double loss_value = loss.item();
    if (!is_finite(loss_value))
      throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                         ", batch starting at row " + std::to_string(start));
    tape.backward(loss);
    optimizer_.step(model_.params());
    model_.params().zero_grad_all();
    return loss_value * static_cast<double>(batch_rows);
  }

  // Reconstructs the weighted objective from per-cell mean losses:
  // (1/N) * sum_i lambda_i * n_i * sum_j logloss_ij.
  static double weighted_loss(const EvalReport& report, const std::vector<double>& lambda,
                              std::size_t total_rows) {
    double loss = 0.0;
    for (std::size_t i = 0; i < report.scenario_count; ++i) {
      const std::size_t n_i = report.cells[i].empty() ? 0 : report.cells[i][0].count();
      if (n_i == 0) continue;
      double per_row = 0.0;
      for (std::size_t j = 0; j < report.task_count; ++j) per_row += report.cells[i][j].logloss;
      loss += lambda[i] * static_cast<double>(n_i) * per_row;
    }
    return loss / static_cast<double>(total_rows);
  }

  Model& model_;
  Optimizer& optimizer_;
  FeatureSchema schema_;
  TrainConfig cfg_;
  Rng rng_;
  std::size_t epochs_done_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: model bundle + optimizer state + shuffle RNG, so a resumed
// run continues exactly where the original left off.
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::uint64_t kCheckpointMagic = 0x48494e4243484b31ull;
constexpr std::uint64_t kCheckpointVersion = 1;

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Model& model,
                            const Optimizer& optimizer, const Rng& rng,
                            std::size_t epochs_done) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  detail::write_u64(out, detail::kCheckpointMagic);
  detail::write_u64(out, detail::kCheckpointVersion);
  detail::write_bytes(out, model.architecture().dump());
  detail::write_params(out, model.params());

  nlohmann::json opt_meta = optimizer.config();
  detail::write_bytes(out, opt_meta.dump());
  detail::write_u64(out, static_cast<std::uint64_t>(optimizer.step_count()));
  detail::write_u64(out, optimizer.state().size());
  for (const auto& [name, slot] : optimizer.state()) {
    detail::write_bytes(out, name);
    detail::write_doubles(out, slot.m);
    detail::write_doubles(out, slot.v);
  }

  std::ostringstream rng_state;
  rng_state << rng;
  detail::write_bytes(out, rng_state.str());
  detail::write_u64(out, epochs_done);
  if (!out) throw IoError("write failed for " + path);
}

struct Checkpoint {
  std::unique_ptr<Model> model;
  OptimizerConfig optimizer_config;
  std::int64_t step_count = 0;
  std::map<std::string, Optimizer::Slot> optimizer_state;
  std::string rng_state;
  std::size_t epochs_done = 0;

  Optimizer make_optimizer() const {
    Optimizer opt(optimizer_config);
    opt.set_step_count(step_count);
    opt.state() = optimizer_state;
    return opt;
  }

  Rng make_restored_rng() const {
    Rng rng;
    std::istringstream in(rng_state);
    in >> rng;
    if (!in) throw IoError("corrupt rng state in checkpoint");
    return rng;
  }
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  if (detail::read_u64(in, "magic") != detail::kCheckpointMagic)
    throw IoError(path + " is not a training checkpoint");
  const std::uint64_t version = detail::read_u64(in, "version");
  if (version != detail::kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  nlohmann::json arch;
  try {
    arch = nlohmann::json::parse(detail::read_bytes(in, "architecture"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt architecture block: ") + e.what());
  }
  ck.model = build_model(arch, /*seed=*/0);
  detail::read_params(in, ck.model->params());

  try {
    ck.optimizer_config =
        nlohmann::json::parse(detail::read_bytes(in, "optimizer config")).get<OptimizerConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt optimizer config: ") + e.what());
  }
  ck.step_count = static_cast<std::int64_t>(detail::read_u64(in, "step count"));
  const std::uint64_t slots = detail::read_u64(in, "optimizer slots");
  for (std::uint64_t k = 0; k < slots; ++k) {
    const std::string name = detail::read_bytes(in, "slot name");
    Optimizer::Slot slot;
    slot.m = detail::read_doubles(in, "slot m");
    slot.v = detail::read_doubles(in, "slot v");
    ck.optimizer_state.emplace(name, std::move(slot));
  }
  ck.rng_state = detail::read_bytes(in, "rng state");
  ck.epochs_done = detail::read_u64(in, "epochs done");
  return ck;
}

}  // namespace hinet
