#pragma once

// Metric trajectories across epochs: Spearman similarity, checkpoint
// selection and the trade-off between two selected checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mpcs/baselines.hpp"
#include "mpcs/core.hpp"

namespace mpcs {

enum class Direction { LowerIsBetter, HigherIsBetter };

struct MetricTrajectory {
  std::string name;
  std::vector<double> values;
  Direction direction = Direction::LowerIsBetter;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"accuracy", "precision", "recall", "f1", "mcc",
                                              "ms",       "ce",        "mpcs",   "dangerous_count"};
  return names;
}

inline bool is_metric(const std::string& name) {
  const auto& n = metric_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

inline Direction metric_direction(const std::string& name) {
  if (name == "accuracy" || name == "precision" || name == "recall" || name == "f1" ||
      name == "mcc") {
    return Direction::HigherIsBetter;
  }
  if (name == "ms" || name == "ce" || name == "mpcs" || name == "dangerous_count") {
    return Direction::LowerIsBetter;
  }
  throw ValidationError("unknown metric: " + name);
}

inline double metric_value(const MetricReport& r, const std::string& name) {
  if (name == "accuracy") return r.accuracy;
  if (name == "precision") return r.macro_precision;
  if (name == "recall") return r.macro_recall;
  if (name == "f1") return r.macro_f1;
  if (name == "mcc") return r.mcc;
  if (name == "ms") return r.ms_loss;
  if (name == "ce") return r.ce_loss;
  if (name == "mpcs") return r.mpcs;
  if (name == "dangerous_count") return static_cast<double>(r.dangerous_count);
  throw ValidationError("unknown metric: " + name);
}

// 1-based ranks; tied values share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<size_t> order(v.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t m = i; m <= j; ++m) ranks[order[m]] = rank;
    i = j + 1;
  }
  return ranks;
}

// Spearman's rho as the Pearson correlation of average ranks. Empty when
// either series has zero rank variance.
inline std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("spearman: series lengths differ");
  if (a.size() < 2) throw ValidationError("spearman: need at least two points");
  for (size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw ValidationError("spearman: non-finite value");
    }
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

using SimilarityTable = std::map<std::string, std::optional<double>>;

inline SimilarityTable similarity_table(std::span<const MetricTrajectory> trajectories,
                                        const std::string& target) {
  auto it = std::find_if(trajectories.begin(), trajectories.end(),
                         [&](const auto& t) { return t.name == target; });
  if (it == trajectories.end()) throw ValidationError("no trajectory named " + target);
  SimilarityTable out;
  for (const auto& t : trajectories) {
    if (t.name == target) continue;
    if (t.values.size() != it->values.size()) {
      throw ValidationError("trajectory " + t.name + " is not aligned with " + target);
    }
    out[t.name] = spearman(it->values, t.values);
  }
  return out;
}

struct CheckpointRecord {
  int epoch = 0;
  std::vector<LabeledPrediction> predictions;
  MetricReport report;
  std::string dump_path;
};

inline MetricTrajectory trajectory(std::span<const CheckpointRecord> records,
                                   const std::string& metric) {
  MetricTrajectory t{metric, {}, metric_direction(metric)};
  t.values.reserve(records.size());
  for (const auto& r : records) t.values.push_back(metric_value(r.report, metric));
  return t;
}

// Best record for the metric; ties resolve to the earliest epoch.
inline const CheckpointRecord& select_checkpoint(std::span<const CheckpointRecord> records,
                                                 const std::string& metric) {
  if (records.empty()) throw ValidationError("no checkpoints to select from");
  const auto dir = metric_direction(metric);
  const CheckpointRecord* best = &records.front();
  for (const auto& r : records) {
    const double v = metric_value(r.report, metric);
    const double b = metric_value(best->report, metric);
    const bool better = dir == Direction::HigherIsBetter ? v > b : v < b;
    if (better || (v == b && r.epoch < best->epoch)) best = &r;
  }
  return *best;
}

struct CheckpointSummary {
  int epoch = 0;
  std::int64_t total = 0;
  std::int64_t errors = 0;
  std::int64_t dangerous = 0;

  double accuracy() const {
    return total == 0 ? 0.0 : 1.0 - static_cast<double>(errors) / static_cast<double>(total);
  }
  // Share of errors that are dangerous.
  double destructive_rate() const {
    return errors == 0 ? 0.0 : static_cast<double>(dangerous) / static_cast<double>(errors);
  }
};

inline CheckpointSummary summarize(const CheckpointRecord& record, const ReleaseList& release) {
  if (record.predictions.empty()) {
    throw ValidationError("checkpoint for epoch " + std::to_string(record.epoch) +
                          " carries no prediction dump");
  }
  CheckpointSummary s;
  s.epoch = record.epoch;
  s.total = static_cast<std::int64_t>(record.predictions.size());
  for (const auto& p : record.predictions) {
    if (p.probs.argmax() != p.true_label) ++s.errors;
  }
  s.dangerous = dangerous_count(record.predictions, release);
  return s;
}

// Deltas are b minus a.
struct TradeoffReport {
  CheckpointSummary a;
  CheckpointSummary b;
  double accuracy_delta = 0.0;
  std::int64_t error_delta = 0;
  std::int64_t dangerous_delta = 0;
  double destructive_rate_delta = 0.0;
};

inline TradeoffReport tradeoff_report(const CheckpointSummary& a, const CheckpointSummary& b) {
  TradeoffReport r{a, b};
  r.accuracy_delta = b.accuracy() - a.accuracy();
  r.error_delta = b.errors - a.errors;
  r.dangerous_delta = b.dangerous - a.dangerous;
  r.destructive_rate_delta = b.destructive_rate() - a.destructive_rate();
  return r;
}

inline TradeoffReport tradeoff_report(const CheckpointRecord& a, const CheckpointRecord& b,
                                      const ReleaseList& release) {
  return tradeoff_report(summarize(a, release), summarize(b, release));
}

}  // namespace mpcs
