#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hinet/common.hpp"
#include "hinet/models.hpp"

namespace hinet {

// Thrown when a metric has no defined value on the given sample, e.g.
// ranking quality on a single-class label set.
class MetricUndefinedError : public Error {
 public:
  explicit MetricUndefinedError(const std::string& msg) : Error("metric: " + msg) {}
};

// Probability that a random positive outranks a random negative, with ties
// counted half. Computed from midranks in O(n log n).
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw ShapeError("auc got " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ContractError("auc labels must be 0/1");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0)
    throw MetricUndefinedError("ranking needs both classes, got " + std::to_string(pos) +
                               " positives / " + std::to_string(neg) + " negatives");
  for (double s : scores)
    if (!is_finite(s)) throw NumericError("auc got a non-finite score");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q);
}

// Mean cross entropy with probabilities clamped away from 0 and 1.
inline double logloss(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw ShapeError("logloss got " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(labels.size()) + " labels");
  if (scores.empty()) throw ContractError("logloss on empty sample");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ContractError("logloss labels must be 0/1");
    const double p = std::clamp(scores[i], kProbClampLo, kProbClampHi);
    total += labels[i] == 1 ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Rank test across repeated runs
// ---------------------------------------------------------------------------

struct FriedmanResult {
  std::size_t runs = 0;
  std::size_t variants = 0;
  std::vector<double> mean_ranks;  // rank 1 = best (highest metric)
  double statistic = 0.0;
};

// matrix[run][variant] holds a metric where higher is better. Each run is
// ranked with midranks for ties; the statistic is the rank-based chi-square.
inline FriedmanResult friedman(const std::vector<std::vector<double>>& matrix) {
  if (matrix.empty()) throw ContractError("rank test needs at least one run");
  const std::size_t R = matrix.size();
  const std::size_t V = matrix.front().size();
  if (V < 2) throw ContractError("rank test needs at least two variants");
  for (const auto& row : matrix)
    if (row.size() != V) throw ShapeError("ragged run matrix");

  std::vector<double> rank_sum(V, 0.0);
  for (const auto& row : matrix) {
    std::vector<std::size_t> order(V);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    std::size_t i = 0;
    while (i < V) {
      std::size_t j = i;
      while (j < V && row[order[j]] == row[order[i]]) ++j;
      const double midrank = 0.5 * static_cast<double>(i + 1 + j);
      for (std::size_t k = i; k < j; ++k) rank_sum[order[k]] += midrank;
      i = j;
    }
  }

  FriedmanResult res;
  res.runs = R;
  res.variants = V;
  res.mean_ranks.resize(V);
  double sq = 0.0;
  for (std::size_t v = 0; v < V; ++v) {
    res.mean_ranks[v] = rank_sum[v] / static_cast<double>(R);
    sq += res.mean_ranks[v] * res.mean_ranks[v];
  }
  const double Vd = static_cast<double>(V);
  res.statistic = 12.0 * static_cast<double>(R) / (Vd * (Vd + 1.0)) *
                  (sq - Vd * (Vd + 1.0) * (Vd + 1.0) / 4.0);
  return res;
}

// ---------------------------------------------------------------------------
// Model evaluation over a labeled impression log
// ---------------------------------------------------------------------------

struct CellMetrics {
  std::optional<double> auc;  // absent when the cell has a single class
  double logloss = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t count() const { return positives + negatives; }
};

inline std::vector<std::string> task_names(std::size_t task_count) {
  if (task_count == 2) return {"ctr", "ctcvr"};
  std::vector<std::string> names;
  for (std::size_t j = 0; j < task_count; ++j) names.push_back("task" + std::to_string(j));
  return names;
}

struct EvalReport {
  std::size_t scenario_count = 0;
  std::size_t task_count = 0;
  std::vector<std::vector<CellMetrics>> cells;  // [scenario][task]
  nlohmann::json meta;                          // free-form provenance (seed, model, dataset)

  const CellMetrics& cell(std::size_t scenario, std::size_t task) const {
    return cells.at(scenario).at(task);
  }

  // Mean ranking quality over the cells where it is defined.
  double mean_auc() const {
    double total = 0.0;
    std::size_t defined = 0;
    for (const auto& row : cells)
      for (const CellMetrics& c : row)
        if (c.auc) {
          total += *c.auc;
          ++defined;
        }
    if (defined == 0) throw MetricUndefinedError("no cell has a defined ranking metric");
    return total / static_cast<double>(defined);
  }

  // One row per scenario x task x metric, tab separated, stable order.
  void write_tsv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const std::vector<std::string> tasks = task_names(task_count);
    out << "scenario\ttask\tmetric\tvalue\n";
    for (std::size_t i = 0; i < scenario_count; ++i)
      for (std::size_t j = 0; j < task_count; ++j) {
        const CellMetrics& c = cells[i][j];
        out << i << '\t' << tasks[j] << "\tauc\t" << (c.auc ? str17(*c.auc) : "NA") << '\n';
        out << i << '\t' << tasks[j] << "\tlogloss\t" << str17(c.logloss) << '\n';
        out << i << '\t' << tasks[j] << "\tpositives\t" << c.positives << '\n';
        out << i << '\t' << tasks[j] << "\tnegatives\t" << c.negatives << '\n';
      }
    if (!out) throw IoError("write failed for " + path);
  }

  nlohmann::json to_json() const {
    const std::vector<std::string> tasks = task_names(task_count);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < scenario_count; ++i)
      for (std::size_t j = 0; j < task_count; ++j) {
        const CellMetrics& c = cells[i][j];
        nlohmann::json row = {{"scenario", i},
                              {"task", tasks[j]},
                              {"logloss", c.logloss},
                              {"positives", c.positives},
                              {"negatives", c.negatives}};
        row["auc"] = c.auc ? nlohmann::json(*c.auc) : nlohmann::json(nullptr);
        rows.push_back(std::move(row));
      }
    nlohmann::json j = {{"cells", rows}, {"meta", meta}};
    bool any = false;
    for (const auto& row : cells)
      for (const CellMetrics& c : row) any = any || c.auc.has_value();
    if (any) j["mean_auc"] = mean_auc();
    return j;
  }

  void write_json(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << to_json().dump(2) << '\n';
    if (!out) throw IoError("write failed for " + path);
  }
};

// Labels for the two ranking tasks: click, and order over all impressions
// (order implies click, so the second task's label is just the order bit).
inline int task_label(const ExampleRecord& r, std::size_t task) {
  if (task == 0) return r.click;
  if (task == 1) return r.order;
  throw ContractError("no label source for task " + std::to_string(task));
}

// Scores every record with the model (no gradient bookkeeping) and reduces
// per-cell metrics. Records may arrive in any scenario order.
inline EvalReport evaluate(Model& model, const std::vector<ExampleRecord>& records,
                           const FeatureSchema& schema, std::size_t chunk_rows = 512) {
  if (records.empty()) throw ContractError("evaluate on empty dataset");
  if (model.task_count() > 2)
    throw ContractError("evaluation defines labels for at most two tasks");
  const std::size_t M = model.scenario_count();
  const std::size_t T = model.task_count();

  std::vector<std::vector<const ExampleRecord*>> by_scenario(M);
  for (const ExampleRecord& r : records) {
    if (r.scenario_id < 0 || static_cast<std::size_t>(r.scenario_id) >= M)
      throw IndexError("record scenario " + std::to_string(r.scenario_id) +
                       " outside model range " + std::to_string(M));
    by_scenario[r.scenario_id].push_back(&r);
  }

  EvalReport report;
  report.scenario_count = M;
  report.task_count = T;
  report.cells.assign(M, std::vector<CellMetrics>(T));
  for (std::size_t i = 0; i < M; ++i) {
    const auto& rows = by_scenario[i];
    if (rows.empty()) continue;
    std::vector<std::vector<double>> scores(T);
    std::vector<std::vector<int>> labels(T);
    for (std::size_t start = 0; start < rows.size(); start += chunk_rows) {
      const std::size_t stop = std::min(rows.size(), start + chunk_rows);
      std::vector<const ExampleRecord*> part(rows.begin() + start, rows.begin() + stop);
      FeatureBatch batch = make_feature_batch(part, schema);
      std::vector<Tensor> probs = model.forward(batch, i);
      for (std::size_t j = 0; j < T; ++j) {
        const std::vector<double>& col = probs[j].values();
        for (std::size_t r = 0; r < part.size(); ++r) {
          scores[j].push_back(col[r]);
          labels[j].push_back(task_label(*part[r], j));
        }
      }
    }
    for (std::size_t j = 0; j < T; ++j) {
      CellMetrics& c = report.cells[i][j];
      for (int y : labels[j]) ++(y == 1 ? c.positives : c.negatives);
      c.logloss = logloss(scores[j], labels[j]);
      if (c.positives > 0 && c.negatives > 0) c.auc = auc(scores[j], labels[j]);
    }
  }
  return report;
}

}  // namespace hinet
