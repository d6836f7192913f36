#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hinet/optim.hpp"
#include "hinet/tensor.hpp"

namespace hinet {

struct FieldSpec {
  std::string name;
  int vocab = 0;
  int dim = 0;
};
using FeatureSchema = std::vector<FieldSpec>;

// Width of the concatenated embedding vector.
inline std::size_t input_width(const FeatureSchema& schema) {
  std::size_t w = 0;
  for (const FieldSpec& f : schema) w += static_cast<std::size_t>(f.dim);
  return w;
}

// Categorical ids for a batch, one id list per schema field.
struct FeatureBatch {
  std::size_t size = 0;
  std::vector<std::vector<int>> ids;  // [field][row]
};

namespace init {

inline Tensor glorot(ParameterSet& params, const std::string& name, std::size_t rows,
                     std::size_t cols, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> data(rows * cols);
  for (double& v : data) v = dist(rng);
  return params.add(name, Tensor::from({rows, cols}, std::move(data)));
}

inline Tensor zeros_vec(ParameterSet& params, const std::string& name, std::size_t n) {
  return params.add(name, Tensor::zeros({n}));
}

inline Tensor embedding(ParameterSet& params, const std::string& name, std::size_t vocab,
                        std::size_t dim, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> data(vocab * dim);
  for (double& v : data) v = dist(rng);
  return params.add(name, Tensor::from({vocab, dim}, std::move(data)));
}

}  // namespace init

// Records every gate probability row produced during a forward pass.
// Tests and the acceptance suite use it to audit normalization.
struct GateTrace {
  std::vector<Tensor> gates;
  void note(const Tensor& g) { gates.push_back(g); }
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(ParameterSet& params, const std::string& name, const FieldSpec& field, Rng& rng)
      : field_(field.name), vocab_(field.vocab), dim_(field.dim) {
    if (field.vocab <= 0 || field.dim <= 0)
      throw ConfigError("field '" + field.name + "' needs positive vocab and dim");
    weights_ = init::embedding(params, name, static_cast<std::size_t>(field.vocab),
                               static_cast<std::size_t>(field.dim), rng);
  }

  Tensor lookup(const std::vector<int>& ids) const {
    for (int id : ids)
      if (id < 0 || id >= vocab_)
        throw IndexError("field '" + field_ + "': id " + std::to_string(id) +
                         " out of vocab " + std::to_string(vocab_));
    return embed_rows(weights_, ids);
  }

  const std::string& field() const { return field_; }
  int vocab() const { return vocab_; }
  int dim() const { return dim_; }
  const Tensor& weights() const { return weights_; }

 private:
  std::string field_;
  int vocab_ = 0;
  int dim_ = 0;
  Tensor weights_;
};

// Concatenated embedding rows for all fields: [batch, sum of field dims].
inline Tensor embed_features(const FeatureBatch& batch, const std::vector<EmbeddingTable>& tables) {
  if (batch.ids.size() != tables.size())
    throw ShapeError("batch has " + std::to_string(batch.ids.size()) + " fields, schema has " +
                     std::to_string(tables.size()));
  std::vector<Tensor> parts;
  parts.reserve(tables.size());
  for (std::size_t f = 0; f < tables.size(); ++f) parts.push_back(tables[f].lookup(batch.ids[f]));
  return concat(parts);
}

class Mlp {
 public:
  Mlp() = default;
  // widths = {in, hidden..., out}; relu after every layer except optionally the last
  Mlp(ParameterSet& params, const std::string& prefix, const std::vector<std::size_t>& widths,
      bool activate_last, Rng& rng)
      : activate_last_(activate_last) {
    if (widths.size() < 2) throw ConfigError("mlp '" + prefix + "' needs at least two widths");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const std::string lname = prefix + ".l" + std::to_string(l);
      w_.push_back(init::glorot(params, lname + ".W", widths[l], widths[l + 1], rng));
      b_.push_back(init::zeros_vec(params, lname + ".b", widths[l + 1]));
    }
    in_width_ = widths.front();
    out_width_ = widths.back();
  }

  Tensor forward(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t l = 0; l < w_.size(); ++l) {
      h = linear(h, w_[l], b_[l]);
      if (l + 1 < w_.size() || activate_last_) h = relu(h);
    }
    return h;
  }

  std::size_t in_width() const { return in_width_; }
  std::size_t out_width() const { return out_width_; }
  std::size_t layer_count() const { return w_.size(); }

 private:
  std::vector<Tensor> w_, b_;
  bool activate_last_ = true;
  std::size_t in_width_ = 0, out_width_ = 0;
};

// Bias-free linear transform with a softmax; weight kept as
// [n_outputs x n_inputs] so batched logits are x * W^T.
class GatingNetwork {
 public:
  GatingNetwork() = default;
  GatingNetwork(ParameterSet& params, const std::string& name, std::size_t n_outputs,
                std::size_t n_inputs, Rng& rng)
      : w_(init::glorot(params, name, n_outputs, n_inputs, rng)),
        outputs_(n_outputs),
        inputs_(n_inputs) {}

  Tensor forward(const Tensor& x) const { return softmax(matmul_nt(x, w_)); }

  std::size_t outputs() const { return outputs_; }
  std::size_t inputs() const { return inputs_; }
  const Tensor& weight() const { return w_; }

 private:
  Tensor w_;
  std::size_t outputs_ = 0, inputs_ = 0;
};

// Sub-Expert Integration: a softmax gate over the raw input weighting K
// sub-expert MLP outputs. With gating disabled the experts are averaged
// uniformly and no gate parameters exist.
class SeiModule {
 public:
  SeiModule() = default;
  SeiModule(ParameterSet& params, const std::string& prefix, std::size_t k,
            const std::vector<std::size_t>& expert_widths, bool gated, Rng& rng)
      : gated_(gated) {
    if (k == 0) throw ConfigError("sei '" + prefix + "' needs at least one sub-expert");
    for (std::size_t e = 0; e < k; ++e)
      experts_.emplace_back(params, prefix + ".expert." + std::to_string(e), expert_widths,
                            /*activate_last=*/true, rng);
    if (gated_ && k > 1)
      gate_ = GatingNetwork(params, prefix + ".gate.W", k, expert_widths.front(), rng);
  }

  Tensor forward(const Tensor& x, GateTrace* trace = nullptr) const {
    const std::size_t k = experts_.size();
    std::vector<Tensor> outs;
    outs.reserve(k);
    for (const Mlp& e : experts_) outs.push_back(e.forward(x));
    if (k == 1) return outs[0];
    if (!gated_) {
      Tensor acc = outs[0];
      for (std::size_t e = 1; e < k; ++e) acc = add(acc, outs[e]);
      return scale(acc, 1.0 / static_cast<double>(k));
    }
    Tensor g = gate_->forward(x);
    if (trace) trace->note(g);
    Tensor acc = scale_rows(outs[0], column(g, 0));
    for (std::size_t e = 1; e < k; ++e) acc = add(acc, scale_rows(outs[e], column(g, e)));
    return acc;
  }

  std::size_t sub_expert_count() const { return experts_.size(); }
  std::size_t out_width() const { return experts_.front().out_width(); }
  bool gated() const { return gated_; }
  const std::optional<GatingNetwork>& gate() const { return gate_; }

 private:
  std::vector<Mlp> experts_;
  std::optional<GatingNetwork> gate_;
  bool gated_ = true;
};

// Attention weights over the other scenarios, driven only by the scenario
// indicator embedding: softmax(W_a * emb) as a [1, M-1] row.
inline Tensor san_weights(const GatingNetwork& gate, const Tensor& scenario_emb,
                          GateTrace* trace = nullptr) {
  Tensor w = gate.forward(scenario_emb);
  if (trace) trace->note(w);
  return w;
}

// Convex combination of the other scenarios' representations. others[k] is
// the representation of the k-th scenario in ascending index order with the
// current scenario removed; weights follow that same order.
inline Tensor san_forward(const GatingNetwork& gate, const Tensor& scenario_emb,
                          const std::vector<Tensor>& others, GateTrace* trace = nullptr) {
  if (others.size() != gate.outputs())
    throw ShapeError("san got " + std::to_string(others.size()) + " representations for a gate of width " +
                     std::to_string(gate.outputs()));
  Tensor w = san_weights(gate, scenario_emb, trace);
  Tensor acc = mul(column(w, 0), others[0]);
  for (std::size_t m = 1; m < others.size(); ++m)
    acc = add(acc, mul(column(w, m), others[m]));
  return acc;
}

// Scenario extraction layer: shared SEI, per-scenario specific SEIs, and the
// per-scenario SAN over the other scenarios' specific representations.
class ScenarioLayer {
 public:
  ScenarioLayer() = default;
  ScenarioLayer(ParameterSet& params, std::size_t scenario_count, std::size_t shared_sub_experts,
                std::size_t specific_sub_experts, const std::vector<std::size_t>& expert_widths,
                bool san, bool gated, std::size_t san_emb_dim, Rng& rng)
      : scenario_count_(scenario_count),
        san_enabled_(san && scenario_count > 1),
        expert_width_(expert_widths.back()) {
    shared_ = SeiModule(params, "scenario.shared", shared_sub_experts, expert_widths, gated, rng);
    for (std::size_t i = 0; i < scenario_count; ++i)
      specific_.emplace_back(params, "scenario.specific." + std::to_string(i),
                             specific_sub_experts, expert_widths, gated, rng);
    if (san_enabled_) {
      san_emb_ = init::embedding(params, "san.emb.W", scenario_count, san_emb_dim, rng);
      for (std::size_t i = 0; i < scenario_count; ++i)
        san_gates_.emplace_back(params, "san." + std::to_string(i) + ".gate.W",
                                scenario_count - 1, san_emb_dim, rng);
    }
  }

  // C_i for a batch drawn entirely from scenario_id.
  Tensor forward(const Tensor& x, std::size_t scenario_id, GateTrace* trace = nullptr) const {
    if (scenario_id >= scenario_count_)
      throw IndexError("scenario " + std::to_string(scenario_id) + " out of " +
                       std::to_string(scenario_count_));
    Tensor g = shared_.forward(x, trace);
    Tensor s_own = specific_[scenario_id].forward(x, trace);
    if (!san_enabled_) return concat({g, s_own});

    std::vector<Tensor> others;
    others.reserve(scenario_count_ - 1);
    for (std::size_t m = 0; m < scenario_count_; ++m)
      if (m != scenario_id) others.push_back(specific_[m].forward(x, trace));
    Tensor emb = embed_rows(san_emb_, {static_cast<int>(scenario_id)});
    Tensor a = san_forward(san_gates_[scenario_id], emb, others, trace);
    return concat({g, s_own, a});
  }

  // Trained attention row for scenario i (constant after training).
  Tensor attention_weights(std::size_t scenario_id, GateTrace* trace = nullptr) const {
    if (!san_enabled_) throw ContractError("attention weights requested but san is disabled");
    Tensor emb = embed_rows(san_emb_, {static_cast<int>(scenario_id)});
    return san_weights(san_gates_[scenario_id], emb, trace);
  }

  std::size_t out_width() const { return (san_enabled_ ? 3 : 2) * expert_width_; }
  std::size_t scenario_count() const { return scenario_count_; }
  bool san_enabled() const { return san_enabled_; }
  const SeiModule& shared() const { return shared_; }
  const SeiModule& specific(std::size_t i) const { return specific_.at(i); }

 private:
  std::size_t scenario_count_ = 0;
  bool san_enabled_ = false;
  std::size_t expert_width_ = 0;
  SeiModule shared_;
  std::vector<SeiModule> specific_;
  Tensor san_emb_;
  std::vector<GatingNetwork> san_gates_;
};

// Customized gate control for one scenario: task-shared plus task-specific
// experts combined by a per-task softmax gate over the scenario
// representation. Shared experts stack first, task experts after.
class CgcModule {
 public:
  CgcModule() = default;
  CgcModule(ParameterSet& params, const std::string& prefix, std::size_t task_count,
            std::size_t shared_experts, std::size_t task_experts,
            const std::vector<std::size_t>& expert_widths, bool gated, Rng& rng)
      : gated_(gated) {
    if (shared_experts + task_experts == 0)
      throw ConfigError("cgc '" + prefix + "' needs at least one expert");
    for (std::size_t e = 0; e < shared_experts; ++e)
      shared_.emplace_back(params, prefix + ".shared." + std::to_string(e), expert_widths,
                           /*activate_last=*/true, rng);
    for (std::size_t j = 0; j < task_count; ++j) {
      task_experts_.emplace_back();
      for (std::size_t e = 0; e < task_experts; ++e)
        task_experts_.back().emplace_back(
            params, prefix + ".task." + std::to_string(j) + ".expert." + std::to_string(e),
            expert_widths, /*activate_last=*/true, rng);
      if (gated_ && shared_experts + task_experts > 1)
        gates_.emplace_back(params, prefix + ".task." + std::to_string(j) + ".gate.W",
                            shared_experts + task_experts, expert_widths.front(), rng);
    }
  }

  Tensor forward(const Tensor& c, std::size_t task, GateTrace* trace = nullptr) const {
    if (task >= task_experts_.size())
      throw IndexError("task " + std::to_string(task) + " out of " +
                       std::to_string(task_experts_.size()));
    std::vector<Tensor> outs;
    for (const Mlp& e : shared_) outs.push_back(e.forward(c));
    for (const Mlp& e : task_experts_[task]) outs.push_back(e.forward(c));
    if (outs.size() == 1) return outs[0];
    if (!gated_) {
      Tensor acc = outs[0];
      for (std::size_t e = 1; e < outs.size(); ++e) acc = add(acc, outs[e]);
      return scale(acc, 1.0 / static_cast<double>(outs.size()));
    }
    Tensor delta = gates_[task].forward(c);
    if (trace) trace->note(delta);
    Tensor acc = scale_rows(outs[0], column(delta, 0));
    for (std::size_t e = 1; e < outs.size(); ++e)
      acc = add(acc, scale_rows(outs[e], column(delta, e)));
    return acc;
  }

  std::size_t task_count() const { return task_experts_.size(); }
  std::size_t shared_expert_count() const { return shared_.size(); }
  std::size_t task_expert_count() const {
    return task_experts_.empty() ? 0 : task_experts_[0].size();
  }
  bool gated() const { return gated_; }

 private:
  std::vector<Mlp> shared_;
  std::vector<std::vector<Mlp>> task_experts_;
  std::vector<GatingNetwork> gates_;
  bool gated_ = true;
};

// Task tower: MLP ending in a single logit, squashed to a probability.
inline Tensor tower_forward(const Mlp& tower, const Tensor& t) {
  if (tower.out_width() != 1) throw ConfigError("tower must end in width 1");
  return sigmoid(tower.forward(t));
}

}  // namespace hinet
