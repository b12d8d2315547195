#pragma once

// Confusion-matrix measures and the squared-error / cross-entropy losses
// that MPCS is compared against.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mpcs/core.hpp"
#include "mpcs/scoring.hpp"

namespace mpcs {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int class_count)
      : c_(class_count), counts_(static_cast<size_t>(class_count * class_count), 0) {
    if (class_count < 1) throw ValidationError("confusion matrix needs at least one class");
  }

  // rows[i][j]: samples of actual class i predicted as j.
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
    ConfusionMatrix m(static_cast<int>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size()) throw ValidationError("confusion matrix must be square");
      for (size_t j = 0; j < rows.size(); ++j) {
        if (rows[i][j] < 0) throw ValidationError("negative confusion count");
        m.at(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
      }
    }
    return m;
  }

  int classes() const noexcept { return c_; }
  std::int64_t& at(int actual, int predicted) { return counts_[index(actual, predicted)]; }
  std::int64_t at(int actual, int predicted) const { return counts_[index(actual, predicted)]; }

  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : counts_) s += v;
    return s;
  }
  std::int64_t trace() const {
    std::int64_t s = 0;
    for (int i = 0; i < c_; ++i) s += at(i, i);
    return s;
  }
  std::int64_t row_sum(int actual) const {
    std::int64_t s = 0;
    for (int j = 0; j < c_; ++j) s += at(actual, j);
    return s;
  }
  std::int64_t col_sum(int predicted) const {
    std::int64_t s = 0;
    for (int i = 0; i < c_; ++i) s += at(i, predicted);
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  size_t index(int i, int j) const {
    return static_cast<size_t>(i) * static_cast<size_t>(c_) + static_cast<size_t>(j);
  }

  int c_;
  std::vector<std::int64_t> counts_;
};

inline ConfusionMatrix confusion_matrix(std::span<const LabeledPrediction> preds) {
  if (preds.empty()) throw ValidationError("confusion matrix of an empty dataset");
  const int c = static_cast<int>(preds.front().probs.size());
  ConfusionMatrix m(c);
  for (const auto& p : preds) {
    if (static_cast<int>(p.probs.size()) != c || p.true_label < 0 || p.true_label >= c) {
      throw ValidationError("sample " + std::to_string(p.sample_id) + " does not fit a " +
                            std::to_string(c) + "-class matrix");
    }
    ++m.at(p.true_label, p.probs.argmax());
  }
  return m;
}

struct ClassStats {
  std::int64_t tp = 0;
  std::int64_t fn = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;

  friend bool operator==(const ClassStats&, const ClassStats&) = default;
};

inline ClassStats per_class_stats(const ConfusionMatrix& m, Label r) {
  if (r < 0 || r >= m.classes()) throw ValidationError("class index out of range");
  const auto diag = m.at(r, r);
  const auto row = m.row_sum(r);
  const auto col = m.col_sum(r);
  return {diag, row - diag, col - diag, m.total() - row - col + diag};
}

struct MetricReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double mcc = 0.0;
  double ms_loss = 0.0;
  double ce_loss = 0.0;
  double mpcs = 0.0;
  std::int64_t dangerous_count = 0;
  std::int64_t total = 0;
  std::int64_t errors = 0;
};

namespace detail {
inline double ratio_or_zero(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
}  // namespace detail

// Accuracy, macro one-vs-rest precision/recall/F1 and the multi-class MCC.
// Loss fields and dangerous_count are left at zero.
inline MetricReport measures(const ConfusionMatrix& m) {
  MetricReport r;
  r.total = m.total();
  r.errors = r.total - m.trace();
  if (r.total == 0) return r;
  const int c = m.classes();
  const double n = static_cast<double>(r.total);
  r.accuracy = static_cast<double>(m.trace()) / n;

  double p_sum = 0.0, r_sum = 0.0, f_sum = 0.0;
  for (int k = 0; k < c; ++k) {
    const auto s = per_class_stats(m, k);
    const double precision = detail::ratio_or_zero(static_cast<double>(s.tp),
                                                   static_cast<double>(s.tp + s.fp));
    const double recall = detail::ratio_or_zero(static_cast<double>(s.tp),
                                                static_cast<double>(s.tp + s.fn));
    p_sum += precision;
    r_sum += recall;
    f_sum += detail::ratio_or_zero(2.0 * precision * recall, precision + recall);
  }
  r.macro_precision = p_sum / c;
  r.macro_recall = r_sum / c;
  r.macro_f1 = f_sum / c;

  // Gorodkin's R_K statistic; reduces to the binary MCC for c = 2.
  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (int k = 0; k < c; ++k) {
    const double t_k = static_cast<double>(m.row_sum(k));
    const double p_k = static_cast<double>(m.col_sum(k));
    pt += p_k * t_k;
    pp += p_k * p_k;
    tt += t_k * t_k;
  }
  const double cov = static_cast<double>(m.trace()) * n - pt;
  const double den = std::sqrt((n * n - pp) * (n * n - tt));
  r.mcc = detail::ratio_or_zero(cov, den);
  return r;
}

// The binary formula, kept for cross-checking the multi-class route.
inline double binary_mcc(const ClassStats& s) {
  const double tp = static_cast<double>(s.tp), tn = static_cast<double>(s.tn);
  const double fp = static_cast<double>(s.fp), fn = static_cast<double>(s.fn);
  const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  return detail::ratio_or_zero(tp * tn - fp * fn, den);
}

// Half the summed squared error against one-hot targets, averaged over samples.
inline double ms_loss(std::span<const LabeledPrediction> preds) {
  if (preds.empty()) throw ValidationError("ms loss of an empty dataset");
  double total = 0.0;
  for (size_t idx : detail::sample_order(preds)) {
    const auto& p = preds[idx];
    double s = 0.0;
    for (size_t j = 0; j < p.probs.size(); ++j) {
      const double target = static_cast<Label>(j) == p.true_label ? 1.0 : 0.0;
      const double d = p.probs[j] - target;
      s += d * d;
    }
    total += s;
  }
  return total / (2.0 * static_cast<double>(preds.size()));
}

inline constexpr double kProbabilityFloor = 1e-12;

inline double ce_loss(std::span<const LabeledPrediction> preds, LogBase base = LogBase::E,
                      Reduction reduction = Reduction::Mean) {
  if (preds.empty()) throw ValidationError("ce loss of an empty dataset");
  double total = 0.0;
  for (size_t idx : detail::sample_order(preds)) {
    const auto& p = preds[idx];
    const double q = std::max(p.probs[static_cast<size_t>(p.true_label)], kProbabilityFloor);
    total -= base == LogBase::Ten ? std::log10(q) : std::log(q);
  }
  return reduction == Reduction::Mean ? total / static_cast<double>(preds.size()) : total;
}

inline bool is_dangerous(const LabeledPrediction& p, const ReleaseList& release) {
  const Label predicted = p.probs.argmax();
  return predicted != p.true_label && !release.released(p.true_label, predicted);
}

inline std::int64_t dangerous_count(std::span<const LabeledPrediction> preds,
                                    const ReleaseList& release) {
  std::int64_t n = 0;
  for (const auto& p : preds) n += is_dangerous(p, release) ? 1 : 0;
  return n;
}

// Full report: confusion measures, both losses, MPCS and the dangerous count.
inline MetricReport evaluate(std::span<const LabeledPrediction> preds, const Settings& settings,
                             unsigned threads = 1) {
  auto report = measures(confusion_matrix(preds));
  report.ms_loss = ms_loss(preds);
  report.ce_loss = ce_loss(preds, settings.log_base, settings.ce_reduction);
  report.mpcs = dataset_mpcs(preds, settings.mpcs, threads);
  report.dangerous_count = dangerous_count(preds, settings.mpcs.release_list);
  return report;
}

}  // namespace mpcs
