#pragma once

// Meta pattern construction: the top-k prediction pattern and the matching
// discretised confidence pattern of a single prediction.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "mpcs/core.hpp"

namespace mpcs {

struct MetaPattern {
  std::vector<Label> pred;
  std::vector<int> conf;
  std::optional<size_t> correct_index;

  friend bool operator==(const MetaPattern&, const MetaPattern&) = default;
};

namespace detail {

// Writes the indices of the k largest entries of probs, descending, into out.
// Equal probabilities are ordered by ascending label.
inline void top_k(std::span<const double> probs, std::span<Label> out, std::span<Label> scratch) {
  std::iota(scratch.begin(), scratch.end(), 0);
  const auto k = static_cast<std::ptrdiff_t>(out.size());
  std::partial_sort(scratch.begin(), scratch.begin() + k, scratch.end(), [&](Label a, Label b) {
    const double pa = probs[static_cast<size_t>(a)];
    const double pb = probs[static_cast<size_t>(b)];
    return pa > pb || (pa == pb && a < b);
  });
  std::copy_n(scratch.begin(), k, out.begin());
}

// Level before the correct-label flip, with the c == 1 case clamped to 0.
inline int raw_level(double confidence, int t) {
  // Truncate then correct, so the floor stays inline.
  const double scaled = static_cast<double>(t) * confidence;
  long long floored = static_cast<long long>(scaled);
  if (static_cast<double>(floored) > scaled) --floored;
  long long raw = static_cast<long long>(t) - floored - 1;
  if (raw < 0) raw = 0;
  if (raw > t - 1) raw = t - 1;
  return static_cast<int>(raw);
}

inline int flip_level(int level, int t) { return t - level - 1; }

}  // namespace detail

inline std::vector<Label> build_prediction_pattern(const LabeledPrediction& pred, int k) {
  const auto c = static_cast<int>(pred.probs.size());
  if (k < 1 || k > c) {
    throw ValidationError("k = " + std::to_string(k) + " must lie in [1, " + std::to_string(c) + "]");
  }
  std::vector<Label> out(static_cast<size_t>(k));
  std::vector<Label> scratch(static_cast<size_t>(c));
  detail::top_k(pred.probs.values(), out, scratch);
  return out;
}

// Level in [0, t-1]; higher is better for both correct and incorrect labels.
inline int confidence_level(double confidence, int t, bool is_correct) {
  const int raw = detail::raw_level(confidence, t);
  return is_correct ? detail::flip_level(raw, t) : raw;
}

inline MetaPattern build_meta_pattern(const LabeledPrediction& pred, const MpcsConfig& cfg) {
  MetaPattern mp;
  mp.pred = build_prediction_pattern(pred, cfg.k);
  mp.conf.resize(mp.pred.size());
  for (size_t j = 0; j < mp.pred.size(); ++j) {
    const bool correct = mp.pred[j] == pred.true_label;
    if (correct) mp.correct_index = j;
    mp.conf[j] = confidence_level(pred.probs[static_cast<size_t>(mp.pred[j])], cfg.t, correct);
  }
  return mp;
}

}  // namespace mpcs
