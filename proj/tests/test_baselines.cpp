#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mpcs/baselines.hpp"
#include "oracles.hpp"

using namespace mpcs;

namespace {

LabeledPrediction make(std::vector<double> p, Label y = 0, std::int64_t id = 0) {
  return {id, y, ProbabilityVector(std::move(p))};
}

// Two-class samples with the given true/predicted pair.
LabeledPrediction hard(Label y, Label pred, std::int64_t id) {
  return make(pred == 0 ? std::vector<double>{0.8, 0.2} : std::vector<double>{0.2, 0.8}, y, id);
}

}  // namespace

TEST(ConfusionMatrix, CountsTwelveSamples) {
  std::vector<LabeledPrediction> preds;
  std::int64_t id = 0;
  for (int i = 0; i < 5; ++i) preds.push_back(hard(0, 0, id++));
  preds.push_back(hard(0, 1, id++));
  for (int i = 0; i < 2; ++i) preds.push_back(hard(1, 0, id++));
  for (int i = 0; i < 4; ++i) preds.push_back(hard(1, 1, id++));
  EXPECT_EQ(confusion_matrix(preds), ConfusionMatrix::from_rows({{5, 1}, {2, 4}}));
}

TEST(ConfusionMatrix, UniformRowPredictsLowestLabel) {
  const std::vector<LabeledPrediction> preds{make({1.0 / 3, 1.0 / 3, 1.0 / 3}, 2)};
  const auto m = confusion_matrix(preds);
  EXPECT_EQ(m.at(2, 0), 1);
  EXPECT_EQ(m.total(), 1);
  EXPECT_THROW(confusion_matrix(std::vector<LabeledPrediction>{}), ValidationError);
  EXPECT_THROW(ConfusionMatrix::from_rows({{1, 2}, {3}}), ValidationError);
}

TEST(ClassStats, Examples) {
  const auto m = ConfusionMatrix::from_rows({{5, 1}, {2, 4}});
  EXPECT_EQ(per_class_stats(m, 0), (ClassStats{5, 1, 2, 4}));
  const auto z = ConfusionMatrix::from_rows({{0, 3}, {0, 0}});
  EXPECT_EQ(per_class_stats(z, 0), (ClassStats{0, 3, 0, 0}));
  EXPECT_THROW(per_class_stats(m, 2), ValidationError);
}

TEST(Measures, Examples) {
  const auto r = measures(ConfusionMatrix::from_rows({{5, 1}, {2, 4}}));
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  const double p0 = 5.0 / 7, r0 = 5.0 / 6, p1 = 4.0 / 5, r1 = 4.0 / 6;
  EXPECT_NEAR(2 * p0 * r0 / (p0 + r0), 0.769231, 5e-7);
  EXPECT_NEAR(r.macro_precision, (p0 + p1) / 2, 1e-15);
  EXPECT_NEAR(r.macro_recall, (r0 + r1) / 2, 1e-15);
  EXPECT_NEAR(r.macro_f1, (2 * p0 * r0 / (p0 + r0) + 2 * p1 * r1 / (p1 + r1)) / 2, 1e-15);
  EXPECT_EQ(r.errors, 3);

  const auto perfect = measures(ConfusionMatrix::from_rows({{3, 0, 0}, {0, 4, 0}, {0, 0, 2}}));
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(perfect.macro_f1, 1.0);
  EXPECT_DOUBLE_EQ(perfect.mcc, 1.0);

  // Everything predicted as one class: MCC has a zero denominator.
  const auto single = measures(ConfusionMatrix::from_rows({{3, 0}, {5, 0}}));
  EXPECT_EQ(single.mcc, 0.0);
  EXPECT_DOUBLE_EQ(single.macro_precision, 3.0 / 8 / 2);
}

TEST(Measures, MulticlassMccMatchesBinaryFormula) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> cell(0, 50);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto m = ConfusionMatrix::from_rows({{cell(rng), cell(rng)}, {cell(rng), cell(rng)}});
    if (m.total() == 0) continue;
    ASSERT_NEAR(measures(m).mcc, binary_mcc(per_class_stats(m, 0)), 1e-12);
  }
}

TEST(Losses, MsLoss) {
  const std::vector<LabeledPrediction> one{make({0.5, 0.5}, 0)};
  EXPECT_DOUBLE_EQ(ms_loss(one), 0.25);
  const std::vector<LabeledPrediction> perfect{make({0, 1, 0}, 1)};
  EXPECT_EQ(ms_loss(perfect), 0.0);

  // Duplicating the dataset leaves the mean unchanged.
  std::mt19937_64 rng(12);
  std::vector<LabeledPrediction> a;
  for (int i = 0; i < 50; ++i) a.push_back(make(oracle::random_probs(rng, 5), i % 5, i));
  auto aa = a;
  for (const auto& p : a) aa.push_back({p.sample_id + 100, p.true_label, p.probs});
  EXPECT_NEAR(ms_loss(aa), ms_loss(a), 1e-14);
  EXPECT_THROW(ms_loss(std::vector<LabeledPrediction>{}), ValidationError);
}

TEST(Losses, CeLoss) {
  const std::vector<LabeledPrediction> one{make({0.5, 0.5}, 1)};
  EXPECT_NEAR(ce_loss(one), 0.693147, 5e-7);
  const std::vector<LabeledPrediction> zero{make({1.0, 0.0}, 1)};
  EXPECT_NEAR(ce_loss(zero), -std::log(1e-12), 1e-9);
}

TEST(Losses, CeReproducesSummedBaseTenTable) {
  std::vector<LabeledPrediction> a, b;
  for (int i = 0; i < 99; ++i) a.push_back(make({0.99, 0.01}, 0, i));
  a.push_back(make({0.49, 0.51}, 0, 99));
  for (int i = 0; i < 100; ++i) b.push_back(make({0.98, 0.02}, 0, i));
  EXPECT_NEAR(ce_loss(a, LogBase::Ten, Reduction::Sum), 0.741920, 5e-7);
  EXPECT_NEAR(ce_loss(b, LogBase::Ten, Reduction::Sum), 0.877392, 5e-7);
  EXPECT_NEAR(ce_loss(b, LogBase::Ten, Reduction::Mean), 0.00877392, 5e-9);
}

TEST(Dangerous, Examples) {
  const ReleaseList rel(std::vector<ReleaseRule>{{0, {1}}});
  const std::vector<LabeledPrediction> preds{
      make({0.2, 0.7, 0.1}, 0, 0),  // released
      make({0.7, 0.2, 0.1}, 1, 1),  // reverse direction is not released
      make({0.2, 0.1, 0.7}, 0, 2),  // not in the rule
      make({0.7, 0.2, 0.1}, 0, 3),  // correct
  };
  EXPECT_EQ(dangerous_count(preds, rel), 2);
  EXPECT_EQ(dangerous_count(preds, ReleaseList{}), 3);
}

TEST(Dangerous, BoundedByErrorsAndEqualWithoutRules) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<LabeledPrediction> preds;
    for (int i = 0; i < 30; ++i) preds.push_back(make(oracle::random_probs(rng, 4), i % 4, i));
    const auto errors = measures(confusion_matrix(preds)).errors;
    ASSERT_LE(dangerous_count(preds, ReleaseList(std::vector<ReleaseRule>{{0, {1, 2}}, {3, {0}}})), errors);
    ASSERT_EQ(dangerous_count(preds, ReleaseList{}), errors);
  }
}

TEST(Evaluate, FillsEveryField) {
  Settings s;
  s.mpcs.k = 2;
  s.mpcs.t = 10;
  s.mpcs.release_factor = 0.5;
  s.mpcs.release_list = ReleaseList(std::vector<ReleaseRule>{{0, {1}}});
  const std::vector<LabeledPrediction> preds{make({0.7, 0.2, 0.1}, 0, 0), make({0.2, 0.5, 0.3}, 0, 1)};
  const auto r = evaluate(preds, s);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);
  EXPECT_EQ(r.total, 2);
  EXPECT_EQ(r.errors, 1);
  EXPECT_EQ(r.dangerous_count, 0);
  EXPECT_DOUBLE_EQ(r.ms_loss, ms_loss(preds));
  EXPECT_DOUBLE_EQ(r.ce_loss, ce_loss(preds));
  EXPECT_DOUBLE_EQ(r.mpcs, dataset_mpcs(preds, s.mpcs));
}
