#include <gtest/gtest.h>

#include <random>

#include "mpcs/metapattern.hpp"
#include "oracles.hpp"

using namespace mpcs;

namespace {

LabeledPrediction make(std::vector<double> p, Label y = 0) {
  return {0, y, ProbabilityVector(std::move(p))};
}

MpcsConfig cfg(int k, int t) {
  MpcsConfig c;
  c.k = k;
  c.t = t;
  return c;
}

}  // namespace

TEST(PredictionPattern, Examples) {
  EXPECT_EQ(build_prediction_pattern(make({0.7, 0.2, 0.1}), 2), (std::vector<Label>{0, 1}));
  EXPECT_EQ(build_prediction_pattern(make({1.0 / 3, 1.0 / 3, 1.0 / 3}), 3),
            (std::vector<Label>{0, 1, 2}));
  EXPECT_EQ(build_prediction_pattern(make({0.2, 0.5, 0.3}), 2), (std::vector<Label>{1, 2}));
  EXPECT_THROW(build_prediction_pattern(make({0.2, 0.5, 0.3}), 4), ValidationError);
}

TEST(PredictionPattern, MatchesSelectionOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5000; ++trial) {
    const int c = 2 + trial % 9;
    const int k = 1 + trial % c;
    const auto p = oracle::random_probs(rng, c);
    ASSERT_EQ(build_prediction_pattern(make(p), k), oracle::top_k_by_selection(p, k));
  }
}

TEST(ConfidenceLevel, Examples) {
  EXPECT_EQ(confidence_level(0.7, 10, true), 7);
  EXPECT_EQ(confidence_level(1.0, 10, true), 9);
  EXPECT_EQ(confidence_level(0.2, 10, false), 7);
  // Direct form: correct -> floor(t c); incorrect -> t - floor(t c) - 1.
  EXPECT_EQ(confidence_level(0.7, 10, false), 10 - 7 - 1);
  EXPECT_EQ(confidence_level(1.0, 10, false), 0);
  EXPECT_EQ(confidence_level(0.0, 10, true), 0);
  EXPECT_EQ(confidence_level(0.0, 10, false), 9);
}

TEST(ConfidenceLevel, RangeMonotonicityAndTopLevel) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> ts(2, 500);
  for (int trial = 0; trial < 20000; ++trial) {
    const int t = ts(rng);
    double a = unit(rng), b = unit(rng);
    if (trial % 50 == 0) a = 1.0;
    if (a > b) std::swap(a, b);
    for (bool correct : {true, false}) {
      const int la = confidence_level(a, t, correct);
      const int lb = confidence_level(b, t, correct);
      ASSERT_GE(la, 0);
      ASSERT_LE(la, t - 1);
      if (correct) {
        ASSERT_LE(la, lb);
      } else {
        ASSERT_GE(la, lb);
      }
    }
    // Top level: correct iff t c >= t - 1, incorrect iff t c < 1.
    const double tc = static_cast<double>(t) * a;
    ASSERT_EQ(confidence_level(a, t, true) == t - 1, tc >= t - 1);
    ASSERT_EQ(confidence_level(a, t, false) == t - 1, tc < 1.0);
    // Flipping twice restores the level, except at the clamped c == 1 point.
    if (a < 1.0) {
      const int raw = confidence_level(a, t, false);
      ASSERT_EQ(t - (t - raw - 1) - 1, raw);
      ASSERT_EQ(confidence_level(a, t, true), t - raw - 1);
    }
  }
}

TEST(MetaPattern, Examples) {
  const auto a = build_meta_pattern(make({0.7, 0.2, 0.1}), cfg(2, 10));
  EXPECT_EQ(a.pred, (std::vector<Label>{0, 1}));
  EXPECT_EQ(a.conf, (std::vector<int>{7, 7}));
  EXPECT_EQ(a.correct_index, std::optional<size_t>(0));

  const auto b = build_meta_pattern(make({0.2, 0.5, 0.3}), cfg(2, 10));
  EXPECT_EQ(b.pred, (std::vector<Label>{1, 2}));
  EXPECT_EQ(b.conf, (std::vector<int>{4, 6}));
  EXPECT_FALSE(b.correct_index.has_value());

  const auto c = build_meta_pattern(make({1.0, 0.0, 0.0}), cfg(1, 10));
  EXPECT_EQ(c.pred, (std::vector<Label>{0}));
  EXPECT_EQ(c.conf, (std::vector<int>{9}));
  EXPECT_EQ(c.correct_index, std::optional<size_t>(0));
}

TEST(MetaPattern, Invariants) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5000; ++trial) {
    const int c = 2 + trial % 9;
    const int k = 1 + (trial / 9) % c;
    const int t = 2 + trial % 300;
    const auto p = oracle::random_probs(rng, c);
    const Label y = static_cast<Label>(trial % c);
    const auto mp = build_meta_pattern(make(p, y), cfg(k, t));
    ASSERT_EQ(mp.pred.size(), static_cast<size_t>(k));
    std::set<Label> distinct(mp.pred.begin(), mp.pred.end());
    ASSERT_EQ(distinct.size(), mp.pred.size());
    for (int lv : mp.conf) {
      ASSERT_GE(lv, 0);
      ASSERT_LE(lv, t - 1);
    }
    const bool present = distinct.contains(y);
    ASSERT_EQ(mp.correct_index.has_value(), present);
    if (present) {
      ASSERT_EQ(mp.pred[*mp.correct_index], y);
    }
  }
}
