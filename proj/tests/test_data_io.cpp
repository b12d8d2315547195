#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "mpcs/baselines.hpp"
#include "mpcs/data_io.hpp"
#include "mpcs/trainer.hpp"

using namespace mpcs;

namespace {

std::string be32(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
          static_cast<char>(v)};
}

std::string idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w, const std::string& pixels) {
  return be32(0x803) + be32(n) + be32(h) + be32(w) + pixels;
}

std::string idx_labels(std::uint32_t n, const std::string& labels) {
  return be32(0x801) + be32(n) + labels;
}

TabularDataset csv(const std::string& text, CsvSchema schema = {}) {
  std::istringstream in(text);
  return parse_csv_dataset(in, schema);
}

}  // namespace

TEST(Csv, ParsesRowsAndLabels) {
  const auto ds = csv("x,y,label\n0.5,1.5,0\n2,3,1\n-1,0,2\n", {.has_header = true});
  EXPECT_EQ(ds.rows, 3u);
  EXPECT_EQ(ds.dims, 2u);
  EXPECT_EQ(ds.classes, 3);
  EXPECT_EQ(ds.features, (std::vector<double>{0.5, 1.5, 2, 3, -1, 0}));
  EXPECT_EQ(ds.labels, (std::vector<Label>{0, 1, 2}));

  const auto first = csv("1,0.5,1.5\n0,2,3\n", {.label_column = 0});
  EXPECT_EQ(first.labels, (std::vector<Label>{1, 0}));
  EXPECT_EQ(first.features, (std::vector<double>{0.5, 1.5, 2, 3}));
}

TEST(Csv, Errors) {
  try {
    csv("1,2,0\n3,4,1\n5,1\n");
    FAIL() << "ragged row accepted";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  EXPECT_THROW(csv("1,abc,0\n2,3,1\n"), ValidationError);
  EXPECT_THROW(csv("1,2,0\n2,3,5\n", {.class_count = 3}), ValidationError);
  EXPECT_THROW(csv("1,2,-1\n2,3,1\n"), ValidationError);
  EXPECT_THROW(csv(""), ValidationError);
  EXPECT_THROW(load_csv_dataset("/nonexistent/data.csv"), IoError);
}

TEST(Csv, NormalisesColumns) {
  const auto ds = csv("1,7,0\n2,7,1\n3,7,0\n", {.normalize = true});
  for (size_t i = 0; i < ds.rows; ++i) EXPECT_EQ(ds.row(i)[1], 0.0);
  const double sd = std::sqrt(2.0 / 3.0);
  EXPECT_DOUBLE_EQ(ds.row(0)[0], -1.0 / sd);
  EXPECT_DOUBLE_EQ(ds.row(1)[0], 0.0);
  EXPECT_DOUBLE_EQ(ds.row(2)[0], 1.0 / sd);
}

TEST(Idx, ParsesSmallFixture) {
  const std::string px{static_cast<char>(0), static_cast<char>(255), static_cast<char>(128),
                       static_cast<char>(64), static_cast<char>(1), static_cast<char>(2),
                       static_cast<char>(3), static_cast<char>(4)};
  std::istringstream images(idx_images(2, 2, 2, px)), labels(idx_labels(2, std::string{'\x03', '\x01'}));
  const auto ds = parse_idx(images, labels);
  EXPECT_EQ(ds.rows, 2u);
  EXPECT_EQ(ds.dims, 4u);
  EXPECT_EQ(ds.classes, 4);
  EXPECT_EQ(ds.labels, (std::vector<Label>{3, 1}));
  EXPECT_DOUBLE_EQ(ds.row(0)[1], 1.0);
  EXPECT_DOUBLE_EQ(ds.row(0)[2], 128.0 / 255.0);
  EXPECT_DOUBLE_EQ(ds.row(0)[3], 64.0 / 255.0);
}

TEST(Idx, Errors) {
  {
    std::istringstream images(idx_images(2, 1, 1, "ab")), labels(idx_labels(3, "abc"));
    EXPECT_THROW(parse_idx(images, labels), ValidationError);
  }
  {
    std::istringstream images(""), labels(idx_labels(1, "a"));
    EXPECT_THROW(parse_idx(images, labels), ValidationError);
  }
  {
    std::istringstream images(idx_images(2, 2, 2, "abc")), labels(idx_labels(2, "ab"));
    EXPECT_THROW(parse_idx(images, labels), ValidationError);
  }
  {
    std::istringstream images(be32(0x801) + be32(0)), labels(idx_labels(0, ""));
    EXPECT_THROW(parse_idx(images, labels), ValidationError);
  }
  EXPECT_THROW(load_idx("/nonexistent/images", "/nonexistent/labels"), IoError);
}

TEST(Synthetic, DeterministicAndCounted) {
  SyntheticSpec spec{.seed = 42, .classes = 4, .per_class = 25, .dims = 3};
  const auto a = generate_synthetic(spec), b = generate_synthetic(spec);
  EXPECT_EQ(a.data.features, b.data.features);
  EXPECT_EQ(a.data.labels, b.data.labels);
  EXPECT_EQ(a.data.rows, 100u);
  for (Label c = 0; c < 4; ++c) EXPECT_EQ(std::count(a.data.labels.begin(), a.data.labels.end(), c), 25);
  spec.seed = 43;
  EXPECT_NE(generate_synthetic(spec).data.features, a.data.features);
  EXPECT_THROW(generate_synthetic({.classes = 1}), ValidationError);
  EXPECT_THROW(generate_synthetic({.classes = 3, .confusable_pairs = {{0, 3}}}), ValidationError);
}

TEST(Synthetic, ZeroNoiseIsSeparableByNearestCentre) {
  const auto s = generate_synthetic({.seed = 3, .classes = 5, .per_class = 10, .dims = 2, .noise = 0.0});
  for (size_t i = 0; i < s.data.rows; ++i) {
    const auto x = s.data.row(i);
    const auto& c = s.centers[static_cast<size_t>(s.data.labels[i])];
    EXPECT_EQ(x[0], c[0]);
    EXPECT_EQ(x[1], c[1]);
  }
}

TEST(Synthetic, SampleMeansTrackCentres) {
  const int n = 2000;
  const double noise = 1.5;
  const auto s = generate_synthetic({.seed = 11, .classes = 3, .per_class = n, .dims = 2, .noise = noise});
  for (int c = 0; c < 3; ++c) {
    for (size_t j = 0; j < 2; ++j) {
      double mean = 0;
      for (size_t i = 0; i < s.data.rows; ++i) {
        if (s.data.labels[i] == c) mean += s.data.row(i)[j];
      }
      mean /= n;
      EXPECT_LE(std::abs(mean - s.centers[static_cast<size_t>(c)][j]), 3 * noise / std::sqrt(n));
    }
  }
}

TEST(Synthetic, ConfusablePairDominatesErrors) {
  const auto s = generate_synthetic({.seed = 5, .classes = 4, .per_class = 200, .dims = 2, .spread = 5.0,
                                     .noise = 1.0, .confusable_pairs = {{0, 1}}});
  TrainConfig tc;
  tc.epochs = 20;
  tc.learning_rate = 1e-2;
  tc.seed = 5;
  tc.measure_mpcs = false;
  Settings settings;
  settings.mpcs.k = 1;
  settings.mpcs.t = 10;
  const auto result = train(s.data, {}, tc, settings);
  const auto& preds = result.records.back().predictions;
  const auto m = confusion_matrix(preds);
  const auto errors = m.total() - m.trace();
  ASSERT_GT(errors, 0);
  EXPECT_GE(static_cast<double>(m.at(0, 1) + m.at(1, 0)) / static_cast<double>(errors), 0.6);
}

TEST(Dump, RoundTripIsBitExact) {
  PredictionDump d{3, "run", 7, {}};
  d.rows.push_back({0, 2, ProbabilityVector({1.0 / 3, 1.0 / 3, 1.0 / 3})});
  d.rows.push_back({5, 0, ProbabilityVector({0.1, 0.7, 0.2})});
  std::ostringstream out;
  write_dump(out, d);
  std::istringstream in(out.str());
  const auto back = read_dump(in);
  EXPECT_EQ(back.classes, 3);
  EXPECT_EQ(back.tag, "run");
  EXPECT_EQ(back.epoch, 7);
  EXPECT_EQ(back.rows, d.rows);

  std::ostringstream again;
  write_dump(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(Dump, FileRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "mpcs_dump_roundtrip.csv").string();
  PredictionDump d{2, "", 0, {{1, 1, ProbabilityVector({0.25, 0.75})}}};
  write_dump(path, d);
  EXPECT_EQ(read_dump(path).rows, d.rows);
  std::filesystem::remove(path);
  EXPECT_THROW(read_dump(path), IoError);
}

TEST(Dump, Errors) {
  auto parse = [](const std::string& text, InputMode mode = InputMode::Probs) {
    std::istringstream in(text);
    return read_dump(in, mode);
  };
  EXPECT_THROW(parse("0,0,0.5,0.5\n"), ValidationError);
  EXPECT_THROW(parse("#c=3\n0,0,0.5,0.5\n"), ValidationError);
  EXPECT_THROW(parse("#c=2\n0,0,0.5,0.4\n"), ValidationError);
  EXPECT_THROW(parse("#c=2\n0,x,0.5,0.5\n"), ValidationError);
  EXPECT_THROW(parse("#c=1\n"), ValidationError);
  const auto logits = parse("#c=2\n0,1,0,0\n", InputMode::Logits);
  EXPECT_DOUBLE_EQ(logits.rows[0].probs[0], 0.5);
  PredictionDump bad{3, "", 0, {{0, 0, ProbabilityVector({0.5, 0.5})}}};
  std::ostringstream out;
  EXPECT_THROW(write_dump(out, bad), ValidationError);
}
