#pragma once

// Dataset ingestion (CSV, IDX), the seeded synthetic blob generator and the
// prediction-dump CSV format.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mpcs/core.hpp"

namespace mpcs {

struct TabularDataset {
  size_t rows = 0;
  size_t dims = 0;
  int classes = 0;
  std::vector<double> features;  // row-major rows x dims
  std::vector<Label> labels;

  std::span<const double> row(size_t i) const {
    return std::span<const double>(features).subspan(i * dims, dims);
  }
  LabelSpace label_space() const { return LabelSpace(classes); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::optional<double> parse_double(const std::string& raw) {
  const auto s = trim(raw);
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_integer(const std::string& raw) {
  const auto s = trim(raw);
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

inline std::ifstream open_input(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

}  // namespace detail

struct CsvSchema {
  int label_column = -1;  // negative counts from the end
  bool has_header = false;
  std::optional<int> class_count;  // inferred as max label + 1 when absent
  bool normalize = false;
};

// Per-column z-scores; the standard deviation is clamped at 1e-12 so a
// constant column maps to zeros.
inline void zscore_normalize(TabularDataset& ds) {
  if (ds.rows == 0) return;
  for (size_t j = 0; j < ds.dims; ++j) {
    double mean = 0.0;
    for (size_t i = 0; i < ds.rows; ++i) mean += ds.features[i * ds.dims + j];
    mean /= static_cast<double>(ds.rows);
    double var = 0.0;
    for (size_t i = 0; i < ds.rows; ++i) {
      const double d = ds.features[i * ds.dims + j] - mean;
      var += d * d;
    }
    const double sd = std::max(std::sqrt(var / static_cast<double>(ds.rows)), 1e-12);
    for (size_t i = 0; i < ds.rows; ++i) {
      auto& x = ds.features[i * ds.dims + j];
      x = (x - mean) / sd;
    }
  }
}

inline TabularDataset parse_csv_dataset(std::istream& in, const CsvSchema& schema = {}) {
  TabularDataset ds;
  std::string line;
  size_t line_no = 0;
  size_t width = 0;
  Label max_label = -1;
  if (schema.has_header) {
    std::getline(in, line);
    ++line_no;
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (width == 0) {
      width = cells.size();
      if (width < 2) throw ValidationError("line " + std::to_string(line_no) + ": need a label and at least one feature");
      ds.dims = width - 1;
    } else if (cells.size() != width) {
      throw ValidationError("line " + std::to_string(line_no) + ": ragged row with " +
                            std::to_string(cells.size()) + " fields, expected " +
                            std::to_string(width));
    }
    const int lc = schema.label_column < 0 ? static_cast<int>(width) + schema.label_column
                                           : schema.label_column;
    if (lc < 0 || lc >= static_cast<int>(width)) {
      throw ValidationError("label column out of range");
    }
    for (size_t j = 0; j < width; ++j) {
      if (static_cast<int>(j) == lc) {
        const auto label = detail::parse_integer(cells[j]);
        if (!label || *label < 0 ||
            (schema.class_count && *label >= *schema.class_count)) {
          throw ValidationError("line " + std::to_string(line_no) + ": unknown label '" +
                                detail::trim(cells[j]) + "'");
        }
        ds.labels.push_back(static_cast<Label>(*label));
        max_label = std::max(max_label, static_cast<Label>(*label));
        continue;
      }
      const auto v = detail::parse_double(cells[j]);
      if (!v || !std::isfinite(*v)) {
        throw ValidationError("line " + std::to_string(line_no) + ": non-numeric feature '" +
                              detail::trim(cells[j]) + "'");
      }
      ds.features.push_back(*v);
    }
    ++ds.rows;
  }
  if (ds.rows == 0) throw ValidationError("dataset has no rows");
  ds.classes = schema.class_count.value_or(max_label + 1);
  if (ds.classes < 2) throw ValidationError("dataset needs at least two classes");
  if (schema.normalize) zscore_normalize(ds);
  return ds;
}

inline TabularDataset load_csv_dataset(const std::string& path, const CsvSchema& schema = {}) {
  auto in = detail::open_input(path);
  return parse_csv_dataset(in, schema);
}

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw ValidationError(std::string("truncated IDX file while reading ") + what);
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

inline TabularDataset parse_idx(std::istream& images, std::istream& labels) {
  if (detail::read_be32(images, "image magic") != kIdxImageMagic) {
    throw ValidationError("bad IDX image magic");
  }
  const auto count = detail::read_be32(images, "image count");
  const auto height = detail::read_be32(images, "image rows");
  const auto width = detail::read_be32(images, "image columns");
  if (detail::read_be32(labels, "label magic") != kIdxLabelMagic) {
    throw ValidationError("bad IDX label magic");
  }
  const auto label_count = detail::read_be32(labels, "label count");
  if (count != label_count) {
    throw ValidationError("IDX count mismatch: " + std::to_string(count) + " images vs " +
                          std::to_string(label_count) + " labels");
  }

  TabularDataset ds;
  ds.rows = count;
  ds.dims = static_cast<size_t>(height) * width;
  std::vector<unsigned char> pixels(ds.rows * ds.dims);
  if (!images.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()))) {
    throw ValidationError("truncated IDX image data");
  }
  std::vector<unsigned char> raw_labels(ds.rows);
  if (!labels.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(raw_labels.size()))) {
    throw ValidationError("truncated IDX label data");
  }
  ds.features.resize(pixels.size());
  std::transform(pixels.begin(), pixels.end(), ds.features.begin(),
                 [](unsigned char p) { return static_cast<double>(p) / 255.0; });
  ds.labels.assign(raw_labels.begin(), raw_labels.end());
  const Label top = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end());
  ds.classes = std::max(top + 1, 2);
  return ds;
}

inline TabularDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  auto images = detail::open_input(images_path, std::ios::binary);
  auto labels = detail::open_input(labels_path, std::ios::binary);
  return parse_idx(images, labels);
}

struct SyntheticSpec {
  std::uint64_t seed = 0;
  int classes = 3;
  int per_class = 100;
  int dims = 2;
  double spread = 3.0;  // std-dev of the class centres around the origin
  double noise = 1.0;   // std-dev of samples around their centre
  std::vector<std::pair<Label, Label>> confusable_pairs;
  double pair_separation = 0.3;  // pair distance as a multiple of spread
};

struct SyntheticDataset {
  TabularDataset data;
  std::vector<std::vector<double>> centers;
};

// Gaussian blobs; the second label of each confusable pair is re-centred at
// pair_separation * spread from the first, in a seeded random direction.
inline SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ValidationError("synthetic data needs at least two classes");
  if (spec.per_class < 1 || spec.dims < 1) throw ValidationError("invalid synthetic counts");
  if (!(spec.spread > 0.0) || !(spec.noise >= 0.0) || !(spec.pair_separation > 0.0)) {
    throw ValidationError("invalid synthetic spread/noise");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  const auto d = static_cast<size_t>(spec.dims);

  SyntheticDataset out;
  out.centers.assign(static_cast<size_t>(spec.classes), std::vector<double>(d));
  for (auto& c : out.centers) {
    for (auto& x : c) x = spec.spread * unit(rng);
  }
  for (const auto& [a, b] : spec.confusable_pairs) {
    if (a < 0 || b < 0 || a >= spec.classes || b >= spec.classes || a == b) {
      throw ValidationError("invalid confusable pair");
    }
    std::vector<double> dir(d);
    double norm = 0.0;
    for (auto& x : dir) {
      x = unit(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (size_t j = 0; j < d; ++j) {
      out.centers[static_cast<size_t>(b)][j] =
          out.centers[static_cast<size_t>(a)][j] + spec.pair_separation * spec.spread * dir[j] / norm;
    }
  }

  auto& ds = out.data;
  ds.classes = spec.classes;
  ds.dims = d;
  ds.rows = static_cast<size_t>(spec.classes) * static_cast<size_t>(spec.per_class);
  ds.features.reserve(ds.rows * d);
  ds.labels.reserve(ds.rows);
  for (int c = 0; c < spec.classes; ++c) {
    for (int i = 0; i < spec.per_class; ++i) {
      for (size_t j = 0; j < d; ++j) {
        ds.features.push_back(out.centers[static_cast<size_t>(c)][j] + spec.noise * unit(rng));
      }
      ds.labels.push_back(c);
    }
  }
  return out;
}

struct PredictionDump {
  int classes = 0;
  std::string tag;
  int epoch = 0;
  std::vector<LabeledPrediction> rows;
};

inline void write_dump(std::ostream& out, const PredictionDump& dump) {
  if (dump.tag.find_first_of(",=\n\r") != std::string::npos) {
    throw ValidationError("dump tag may not contain ',', '=' or newlines");
  }
  out << "#c=" << dump.classes << ",tag=" << dump.tag << ",epoch=" << dump.epoch << '\n';
  char buf[40];
  for (const auto& r : dump.rows) {
    if (static_cast<int>(r.probs.size()) != dump.classes) {
      throw ValidationError("sample " + std::to_string(r.sample_id) + " has wrong arity");
    }
    out << r.sample_id << ',' << r.true_label;
    for (double p : r.probs.values()) {
      std::snprintf(buf, sizeof buf, "%.17g", p);
      out << ',' << buf;
    }
    out << '\n';
  }
}

inline void write_dump(const std::string& path, const PredictionDump& dump) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_dump(out, dump);
  if (!out) throw IoError("failed writing " + path);
}

// Rows are validated under the given input mode; logits rows come back as
// softmax probabilities.
inline PredictionDump read_dump(std::istream& in, InputMode mode = InputMode::Probs) {
  PredictionDump dump;
  std::string line;
  if (!std::getline(in, line) || line.rfind("#c=", 0) != 0) {
    throw ValidationError("prediction dump is missing its '#c=...' header");
  }
  bool have_c = false;
  for (const auto& field : detail::split_csv_line(line.substr(1))) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ValidationError("malformed dump header field: " + field);
    const auto key = field.substr(0, eq);
    const auto value = detail::trim(field.substr(eq + 1));
    if (key == "c") {
      const auto c = detail::parse_integer(value);
      if (!c || *c < 2) throw ValidationError("dump header has invalid class count");
      dump.classes = static_cast<int>(*c);
      have_c = true;
    } else if (key == "tag") {
      dump.tag = value;
    } else if (key == "epoch") {
      const auto e = detail::parse_integer(value);
      if (!e) throw ValidationError("dump header has invalid epoch");
      dump.epoch = static_cast<int>(*e);
    }
  }
  if (!have_c) throw ValidationError("dump header lacks c=");

  const LabelSpace space(dump.classes);
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    const auto where = "dump line " + std::to_string(line_no) + ": ";
    if (cells.size() != static_cast<size_t>(dump.classes) + 2) {
      throw ValidationError(where + "expected " + std::to_string(dump.classes + 2) +
                            " fields, got " + std::to_string(cells.size()));
    }
    const auto id = detail::parse_integer(cells[0]);
    const auto label = detail::parse_integer(cells[1]);
    if (!id || !label) throw ValidationError(where + "malformed sample id or label");
    std::vector<double> probs;
    probs.reserve(static_cast<size_t>(dump.classes));
    for (size_t j = 2; j < cells.size(); ++j) {
      const auto v = detail::parse_double(cells[j]);
      if (!v) throw ValidationError(where + "non-numeric probability");
      probs.push_back(*v);
    }
    try {
      dump.rows.push_back(validate_prediction(
          {*id, static_cast<Label>(*label), ProbabilityVector(std::move(probs))}, space, mode));
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  return dump;
}

inline PredictionDump read_dump(const std::string& path, InputMode mode = InputMode::Probs) {
  auto in = detail::open_input(path);
  return read_dump(in, mode);
}

}  // namespace mpcs
