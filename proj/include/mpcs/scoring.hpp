#pragma once

// Concern degrees, interval punishments, per-sample scores and the
// dataset-level Meta Pattern Concern Score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include "mpcs/core.hpp"
#include "mpcs/metapattern.hpp"

namespace mpcs {

// Substitute for a zero confidence level before taking the log.
inline constexpr double kZeroLevel = 1e-7;

struct ConcernDegree {
  std::vector<double> weights;
  std::vector<double> normalized;
};

struct SampleScore {
  double value = 0.0;
  std::vector<double> punishments;
};

namespace detail {

// Fills weights (length k) for a pattern whose true label sits at
// correct_index (or nowhere when correct_index < 0).
inline void fill_weights(std::span<const Label> pattern, std::ptrdiff_t correct_index,
                         const MpcsConfig& cfg, std::span<double> weights) {
  std::fill(weights.begin(), weights.end(), 1.0);
  if (correct_index < 0) return;
  const auto i = static_cast<size_t>(correct_index);
  if (const auto* released = cfg.release_list.find(pattern[i])) {
    for (size_t j = 0; j < pattern.size(); ++j) {
      if (j != i && released->contains(pattern[j])) weights[j] = cfg.release_factor;
    }
  }
  double others = 0.0;
  for (size_t j = 0; j < pattern.size(); ++j) {
    if (j != i) others += weights[j];
  }
  weights[i] = others;
}

// A zero total happens for k = 1 with a correct prediction, or when every
// incorrect label is released with factor 0. Both take the f -> 0+ limit:
// the correct position keeps half (all of it when alone) and the incorrect
// positions share the rest evenly.
inline void fill_normalized(std::span<const double> weights, std::ptrdiff_t correct_index,
                            std::span<double> normalized) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (total > 0.0) {
    for (size_t j = 0; j < weights.size(); ++j) normalized[j] = weights[j] / total;
    return;
  }
  const size_t k = weights.size();
  if (k == 1) {
    normalized[0] = 1.0;
    return;
  }
  for (size_t j = 0; j < k; ++j) {
    normalized[j] = static_cast<std::ptrdiff_t>(j) == correct_index
                        ? 0.5
                        : 0.5 / static_cast<double>(k - 1);
  }
}

inline double interval_punishment(int level, int t) {
  const double lv = level == 0 ? kZeroLevel : static_cast<double>(level);
  return -std::log(lv / static_cast<double>(t - 1));
}

// Per-thread working memory for the fused scoring kernel.
class ScoringKernel {
 public:
  static constexpr int kMaxTabulatedT = 1 << 16;

  ScoringKernel(const MpcsConfig& cfg, int class_count)
      : cfg_(cfg),
        classes_(static_cast<size_t>(class_count)),
        pattern_(static_cast<size_t>(cfg.k)),
        ranks_(static_cast<size_t>(class_count)),
        ranked_(static_cast<size_t>(class_count)),
        levels_(static_cast<size_t>(cfg.k)),
        weights_(static_cast<size_t>(cfg.k)),
        normalized_(static_cast<size_t>(cfg.k)),
        released_(static_cast<size_t>(class_count) * static_cast<size_t>(class_count), 0) {
    for (const auto& rule : cfg.release_list.rules()) {
      if (rule.true_label >= class_count) continue;
      for (Label r : rule.released_predictions) {
        if (r < class_count) released_[index(rule.true_label, r)] = 1;
      }
    }
    if (cfg.t <= kMaxTabulatedT) {
      table_.resize(static_cast<size_t>(cfg.t));
      for (int level = 0; level < cfg.t; ++level) {
        table_[static_cast<size_t>(level)] = interval_punishment(level, cfg.t);
      }
    }
  }

  double score(const LabeledPrediction& pred) {
    const auto probs = pred.probs.values();
    if (probs.size() != classes_) {
      throw ValidationError("sample " + std::to_string(pred.sample_id) +
                            ": class count differs from the rest of the dataset");
    }
    ranked_top_k(probs);
    std::ptrdiff_t correct = -1;
    for (size_t j = 0; j < pattern_.size(); ++j) {
      const bool is_correct = pattern_[j] == pred.true_label;
      if (is_correct) correct = static_cast<std::ptrdiff_t>(j);
      const int raw = raw_level(probs[static_cast<size_t>(pattern_[j])], cfg_.t);
      levels_[j] = is_correct ? flip_level(raw, cfg_.t) : raw;
    }
    // Same arithmetic as fill_weights, with the release lookup tabulated.
    std::fill(weights_.begin(), weights_.end(), 1.0);
    if (correct >= 0) {
      const auto i = static_cast<size_t>(correct);
      const Label truth = pattern_[i];
      double others = 0.0;
      for (size_t j = 0; j < pattern_.size(); ++j) {
        if (j == i) continue;
        if (released_[index(truth, pattern_[j])]) weights_[j] = cfg_.release_factor;
        others += weights_[j];
      }
      weights_[i] = others;
    }
    fill_normalized(weights_, correct, normalized_);
    double value = 0.0;
    for (size_t j = 0; j < pattern_.size(); ++j) value += punishment(levels_[j]) * normalized_[j];
    return value;
  }

 private:
  size_t index(Label truth, Label predicted) const {
    return static_cast<size_t>(truth) * classes_ + static_cast<size_t>(predicted);
  }

  // Top-k by rank counting. A label's rank is the number of labels that
  // precede it: larger probability, or equal probability and lower label.
  // One comparison per pair settles both ranks, and since ranks form a
  // permutation the scatter needs no branches.
  void ranked_top_k(std::span<const double> probs) {
    const size_t c = probs.size();
    const double* p = probs.data();
    std::fill(ranks_.begin(), ranks_.end(), size_t{0});
    for (size_t i = 0; i < c; ++i) {
      const double pi = p[i];
      size_t rank = ranks_[i];
      for (size_t j = i + 1; j < c; ++j) {
        const size_t later_wins = p[j] > pi;
        ranks_[j] += 1 - later_wins;
        rank += later_wins;
      }
      ranked_[rank] = static_cast<Label>(i);
    }
    std::copy_n(ranked_.begin(), pattern_.size(), pattern_.begin());
  }

  double punishment(int level) const {
    return table_.empty() ? interval_punishment(level, cfg_.t) : table_[static_cast<size_t>(level)];
  }

  const MpcsConfig& cfg_;
  size_t classes_;
  std::vector<Label> pattern_;
  std::vector<size_t> ranks_;
  std::vector<Label> ranked_;
  std::vector<int> levels_;
  std::vector<double> weights_;
  std::vector<double> normalized_;
  std::vector<unsigned char> released_;  // c x c, row = true label
  std::vector<double> table_;
};

// Evaluation order for dataset reductions: ascending sample_id, stable.
inline std::vector<size_t> sample_order(std::span<const LabeledPrediction> preds) {
  std::vector<size_t> order(preds.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const bool sorted = std::is_sorted(preds.begin(), preds.end(), [](const auto& a, const auto& b) {
    return a.sample_id < b.sample_id;
  });
  if (!sorted) {
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return preds[a].sample_id < preds[b].sample_id;
    });
  }
  return order;
}

}  // namespace detail

inline ConcernDegree concern_degree(const MetaPattern& pattern, const MpcsConfig& cfg) {
  const size_t k = pattern.pred.size();
  ConcernDegree d{std::vector<double>(k), std::vector<double>(k)};
  const std::ptrdiff_t correct =
      pattern.correct_index ? static_cast<std::ptrdiff_t>(*pattern.correct_index) : -1;
  detail::fill_weights(pattern.pred, correct, cfg, d.weights);
  detail::fill_normalized(d.weights, correct, d.normalized);
  return d;
}

inline SampleScore sample_score(const MetaPattern& pattern, const ConcernDegree& degree,
                                const MpcsConfig& cfg) {
  SampleScore s;
  s.punishments.resize(pattern.conf.size());
  for (size_t j = 0; j < pattern.conf.size(); ++j) {
    s.punishments[j] = detail::interval_punishment(pattern.conf[j], cfg.t);
    s.value += s.punishments[j] * degree.normalized[j];
  }
  return s;
}

// Convenience: meta pattern, concern degree and score of a single sample.
inline double score_sample(const LabeledPrediction& pred, const MpcsConfig& cfg) {
  const auto pattern = build_meta_pattern(pred, cfg);
  return sample_score(pattern, concern_degree(pattern, cfg), cfg).value;
}

// Per-sample scores in ascending sample_id order.
inline std::vector<double> sample_scores(std::span<const LabeledPrediction> preds,
                                         const MpcsConfig& cfg, unsigned threads = 1) {
  validate_config(cfg);
  std::vector<double> out(preds.size());
  if (preds.empty()) return out;
  const int c = static_cast<int>(preds.front().probs.size());
  if (cfg.k > c) {
    throw ValidationError("k = " + std::to_string(cfg.k) + " exceeds class count " +
                          std::to_string(c));
  }
  const auto order = detail::sample_order(preds);

  auto work = [&](size_t begin, size_t end) {
    detail::ScoringKernel kernel(cfg, c);
    for (size_t pos = begin; pos < end; ++pos) out[pos] = kernel.score(preds[order[pos]]);
  };

  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(preds.size())));
  if (threads == 1) {
    work(0, preds.size());
    return out;
  }
  std::vector<std::jthread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const size_t chunk = (preds.size() + threads - 1) / threads;
  for (unsigned w = 0; w < threads; ++w) {
    const size_t begin = w * chunk;
    const size_t end = std::min(preds.size(), begin + chunk);
    pool.emplace_back([&, w, begin, end] {
      try {
        if (begin < end) work(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

inline double dataset_mpcs(std::span<const LabeledPrediction> preds, const MpcsConfig& cfg,
                           unsigned threads = 1) {
  if (preds.empty()) throw ValidationError("cannot score an empty dataset");
  const auto scores = sample_scores(preds, cfg, threads);
  double total = 0.0;
  for (double s : scores) total += s;
  return total / static_cast<double>(preds.size());
}

struct CeLimitPair {
  std::int64_t sample_id = 0;
  double mpcs = 0.0;
  double ce = 0.0;
};

struct CeLimitResult {
  std::vector<CeLimitPair> pairs;
  // Samples whose top-1 label is wrong; the limit equivalence does not cover them.
  std::vector<std::int64_t> excluded;
};

inline CeLimitResult ce_limit_check(std::span<const LabeledPrediction> preds, int t) {
  MpcsConfig cfg;
  cfg.k = 1;
  cfg.t = t;
  cfg.release_factor = 1.0;
  validate_config(cfg);
  CeLimitResult result;
  for (const auto& p : preds) {
    if (p.probs.argmax() != p.true_label) {
      result.excluded.push_back(p.sample_id);
      continue;
    }
    const double correct = p.probs[static_cast<size_t>(p.true_label)];
    result.pairs.push_back({p.sample_id, score_sample(p, cfg), -std::log(correct)});
  }
  return result;
}

}  // namespace mpcs
