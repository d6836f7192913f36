#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hinet/tensor.hpp"

namespace hinet {

struct Parameter {
  std::string name;
  Tensor tensor;
};

// Ordered collection of named parameters; names are unique within a model.
class ParameterSet {
 public:
  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = items_.size();
    items_.push_back({name, t});
    return t;
  }

  std::vector<Parameter>& items() { return items_; }
  const std::vector<Parameter>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  Parameter* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second];
  }
  const Parameter* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &items_[it->second];
  }

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.size();
    return n;
  }

  void zero_grad_all() {
    for (auto& p : items_) p.tensor.zero_grad();
  }

  // Snapshot/restore of the raw values, used by early stopping.
  std::vector<std::vector<double>> snapshot_values() const {
    std::vector<std::vector<double>> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.push_back(p.tensor.values());
    return out;
  }
  void restore_values(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != items_.size()) throw ContractError("snapshot size mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) {
      if (snap[i].size() != items_[i].tensor.size())
        throw ContractError("snapshot tensor size mismatch for " + items_[i].name);
      items_[i].tensor.values() = snap[i];
    }
  }

 private:
  std::vector<Parameter> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct OptimizerConfig {
  enum class Kind { kSgd, kAdam };
  Kind kind = Kind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline std::string optimizer_kind_name(OptimizerConfig::Kind k) {
  return k == OptimizerConfig::Kind::kSgd ? "sgd" : "adam";
}

inline OptimizerConfig::Kind optimizer_kind_from(const std::string& s) {
  if (s == "sgd") return OptimizerConfig::Kind::kSgd;
  if (s == "adam") return OptimizerConfig::Kind::kAdam;
  throw ConfigError("unknown optimizer kind: " + s);
}

// SGD or Adam with bias correction. Moment state is keyed by parameter name
// so it survives checkpointing.
class Optimizer {
 public:
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
  };

  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_; }

  void step(ParameterSet& params) {
    ++step_;
    for (auto& p : params.items()) {
      if (!p.tensor.has_grad()) continue;  // disconnected parameter: leave untouched
      auto& val = p.tensor.values();
      const auto& g = p.tensor.grad_view();
      for (double gv : g)
        if (!is_finite(gv))
          throw NumericError("non-finite gradient in parameter " + p.name);
      if (cfg_.kind == OptimizerConfig::Kind::kSgd) {
        for (std::size_t i = 0; i < val.size(); ++i) val[i] -= cfg_.lr * g[i];
      } else {
        Slot& slot = state_[p.name];
        if (slot.m.empty()) {
          slot.m.assign(val.size(), 0.0);
          slot.v.assign(val.size(), 0.0);
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < val.size(); ++i) {
          slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
          slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
          const double mhat = slot.m[i] / bc1;
          const double vhat = slot.v[i] / bc2;
          val[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
      }
    }
  }

  std::map<std::string, Slot>& state() { return state_; }
  const std::map<std::string, Slot>& state() const { return state_; }
  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  OptimizerConfig cfg_;
  std::int64_t step_ = 0;
  std::map<std::string, Slot> state_;
};

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

// Central-difference check of d f / d p against the analytic gradient.
// f must rebuild its forward pass on every call; analytic grads are taken
// from one taped evaluation, numeric ones from untaped perturbed reruns.
// coords limits how many elements are probed (0 = all), sampled with rng.
inline double grad_check(const std::function<Tensor()>& f, Parameter& p, double eps,
                         std::size_t coords = 0, Rng* rng = nullptr) {
  Tape tape;
  std::vector<double> analytic;
  {
    Tape::Scope scope(tape);
    p.tensor.zero_grad();
    Tensor loss = f();
    tape.backward(loss);
    analytic = p.tensor.has_grad() ? p.tensor.grad_view() : std::vector<double>(p.tensor.size(), 0.0);
  }

  std::vector<std::size_t> index(p.tensor.size());
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
  if (coords > 0 && coords < index.size()) {
    if (!rng) throw ContractError("grad_check coordinate sampling needs an rng");
    for (std::size_t i = 0; i < coords; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, index.size() - 1);
      std::swap(index[i], index[pick(*rng)]);
    }
    index.resize(coords);
  }

  double max_err = 0.0;
  auto& val = p.tensor.values();
  for (std::size_t i : index) {
    const double orig = val[i];
    val[i] = orig + eps;
    const double lp = f().item();
    val[i] = orig - eps;
    const double lm = f().item();
    val[i] = orig;
    const double numeric = (lp - lm) / (2.0 * eps);
    max_err = std::max(max_err, rel_error(analytic[i], numeric));
  }
  return max_err;
}

}  // namespace hinet
