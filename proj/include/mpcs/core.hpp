#pragma once

// Shared domain types for the MPCS toolkit: label spaces, probability vectors,
// labelled predictions, release rules and the scoring configuration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace mpcs {

// Error categories map one-to-one onto the CLI exit codes (1, 2, 3).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int epoch = -1)
      : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

using Label = int;

class LabelSpace {
 public:
  explicit LabelSpace(int class_count, std::vector<std::string> names = {})
      : class_count_(class_count), names_(std::move(names)) {
    if (class_count_ < 2) {
      throw ValidationError("label space needs at least 2 classes, got " +
                            std::to_string(class_count_));
    }
    if (!names_.empty() && static_cast<int>(names_.size()) != class_count_) {
      throw ValidationError("class name count does not match class count");
    }
  }

  int size() const noexcept { return class_count_; }
  bool contains(Label l) const noexcept { return l >= 0 && l < class_count_; }

  std::string name(Label l) const {
    if (!names_.empty()) return names_.at(static_cast<size_t>(l));
    return std::to_string(l);
  }

 private:
  int class_count_;
  std::vector<std::string> names_;
};

class ProbabilityVector {
 public:
  ProbabilityVector() = default;
  explicit ProbabilityVector(std::vector<double> probs) : probs_(std::move(probs)) {}

  size_t size() const noexcept { return probs_.size(); }
  double operator[](size_t i) const { return probs_[i]; }
  std::span<const double> values() const noexcept { return probs_; }

  // Index of the largest entry; ties go to the lowest label.
  Label argmax() const noexcept {
    size_t best = 0;
    for (size_t i = 1; i < probs_.size(); ++i) {
      if (probs_[i] > probs_[best]) best = i;
    }
    return static_cast<Label>(best);
  }

  friend bool operator==(const ProbabilityVector&, const ProbabilityVector&) = default;

 private:
  std::vector<double> probs_;
};

struct LabeledPrediction {
  std::int64_t sample_id = 0;
  Label true_label = 0;
  ProbabilityVector probs;

  friend bool operator==(const LabeledPrediction&, const LabeledPrediction&) = default;
};

enum class InputMode { Logits, Probs };
enum class LogBase { E, Ten };
enum class Reduction { Mean, Sum };

// Sums within this distance of 1 are accepted as-is; between this and
// kRenormWindow they are rescaled; beyond that the row is rejected.
inline constexpr double kExactSumTolerance = 1e-12;
inline constexpr double kRenormWindow = 1e-3;

inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

inline LabeledPrediction validate_prediction(const LabeledPrediction& pred, const LabelSpace& space,
                                             InputMode mode) {
  const auto id = std::to_string(pred.sample_id);
  if (static_cast<int>(pred.probs.size()) != space.size()) {
    throw ValidationError("sample " + id + ": expected " + std::to_string(space.size()) +
                          " entries, got " + std::to_string(pred.probs.size()));
  }
  if (!space.contains(pred.true_label)) {
    throw ValidationError("sample " + id + ": true label " + std::to_string(pred.true_label) +
                          " out of range");
  }
  for (double v : pred.probs.values()) {
    if (!std::isfinite(v)) throw ValidationError("sample " + id + ": non-finite entry");
  }

  LabeledPrediction out{pred.sample_id, pred.true_label, {}};
  if (mode == InputMode::Logits) {
    out.probs = ProbabilityVector(softmax(pred.probs.values()));
    return out;
  }

  double sum = 0.0;
  for (double v : pred.probs.values()) {
    if (v < 0.0 || v > 1.0 + kRenormWindow) {
      throw ValidationError("sample " + id + ": probability outside [0,1]");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kRenormWindow) {
    throw ValidationError("sample " + id + ": probabilities sum to " + std::to_string(sum));
  }
  if (std::abs(sum - 1.0) <= kExactSumTolerance) {
    out.probs = pred.probs;
    return out;
  }
  std::vector<double> scaled(pred.probs.values().begin(), pred.probs.values().end());
  for (auto& v : scaled) v /= sum;
  out.probs = ProbabilityVector(std::move(scaled));
  return out;
}

struct ReleaseRule {
  Label true_label = 0;
  std::set<Label> released_predictions;

  friend bool operator==(const ReleaseRule&, const ReleaseRule&) = default;
};

// Release rules are asymmetric: a rule for true label 0 releasing 1 says
// nothing about true label 1 predicted as 0.
class ReleaseList {
 public:
  ReleaseList() = default;

  explicit ReleaseList(const std::vector<ReleaseRule>& rules) {
    for (const auto& r : rules) add(r);
  }

  void add(const ReleaseRule& rule) {
    if (rule.released_predictions.empty()) {
      throw ValidationError("release rule for label " + std::to_string(rule.true_label) +
                            " releases nothing");
    }
    if (rule.released_predictions.contains(rule.true_label)) {
      throw ValidationError("release rule for label " + std::to_string(rule.true_label) +
                            " releases its own label");
    }
    if (rule.true_label < 0 ||
        std::any_of(rule.released_predictions.begin(), rule.released_predictions.end(),
                    [](Label l) { return l < 0; })) {
      throw ValidationError("release rule contains a negative label");
    }
    auto& slot = rules_[rule.true_label];
    slot.insert(rule.released_predictions.begin(), rule.released_predictions.end());
  }

  bool released(Label truth, Label predicted) const {
    auto it = rules_.find(truth);
    return it != rules_.end() && it->second.contains(predicted);
  }

  // Released predictions for a true label, or nullptr when no rule matches.
  const std::set<Label>* find(Label truth) const {
    auto it = rules_.find(truth);
    return it == rules_.end() ? nullptr : &it->second;
  }

  std::vector<ReleaseRule> rules() const {
    std::vector<ReleaseRule> out;
    for (const auto& [truth, released] : rules_) out.push_back({truth, released});
    return out;
  }

  bool empty() const noexcept { return rules_.empty(); }

  Label max_label() const {
    Label m = -1;
    for (const auto& [truth, released] : rules_) {
      m = std::max(m, truth);
      if (!released.empty()) m = std::max(m, *released.rbegin());
    }
    return m;
  }

  friend bool operator==(const ReleaseList&, const ReleaseList&) = default;

 private:
  std::map<Label, std::set<Label>> rules_;
};

struct MpcsConfig {
  int k = 1;
  int t = 2;
  double release_factor = 1.0;
  ReleaseList release_list;

  friend bool operator==(const MpcsConfig&, const MpcsConfig&) = default;
};

// Checks the label-space independent invariants of a configuration.
inline void validate_config(const MpcsConfig& cfg) {
  if (cfg.k < 1) throw ValidationError("k must be >= 1, got " + std::to_string(cfg.k));
  if (cfg.t < 2) throw ValidationError("t must be >= 2, got " + std::to_string(cfg.t));
  if (!(cfg.release_factor >= 0.0 && cfg.release_factor <= 1.0)) {
    throw ValidationError("release_factor must lie in [0,1]");
  }
}

inline void validate_config(const MpcsConfig& cfg, const LabelSpace& space) {
  validate_config(cfg);
  if (cfg.k > space.size()) {
    throw ValidationError("k = " + std::to_string(cfg.k) + " exceeds class count " +
                          std::to_string(space.size()));
  }
  if (cfg.release_list.max_label() >= space.size()) {
    throw ValidationError("release list refers to label " +
                          std::to_string(cfg.release_list.max_label()) + " but only " +
                          std::to_string(space.size()) + " classes exist");
  }
}

// Everything a config document carries: the scoring parameters plus the
// input and loss-reporting modes.
struct Settings {
  MpcsConfig mpcs;
  InputMode input_mode = InputMode::Probs;
  LogBase log_base = LogBase::E;
  Reduction ce_reduction = Reduction::Mean;

  friend bool operator==(const Settings&, const Settings&) = default;
};

namespace detail {

inline ReleaseList parse_release_list(const nlohmann::json& j) {
  if (!j.is_array()) throw ValidationError("release_list must be an array");
  ReleaseList list;
  for (const auto& row : j) {
    if (!row.is_array() || row.size() < 2) {
      throw ValidationError("release_list entries need a true label and at least one release");
    }
    ReleaseRule rule;
    rule.true_label = row[0].get<int>();
    for (size_t i = 1; i < row.size(); ++i) rule.released_predictions.insert(row[i].get<int>());
    list.add(rule);
  }
  return list;
}

template <typename Enum>
Enum parse_choice(const nlohmann::json& doc, const char* key, Enum fallback,
                  std::initializer_list<std::pair<std::string_view, Enum>> choices) {
  if (!doc.contains(key)) return fallback;
  const auto value = doc.at(key).get<std::string>();
  for (const auto& [name, e] : choices) {
    if (value == name) return e;
  }
  throw ValidationError(std::string("unknown value for ") + key + ": " + value);
}

}  // namespace detail

inline Settings load_settings(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config must be a JSON object");

  Settings s;
  try {
    s.mpcs.k = doc.at("k").get<int>();
    s.mpcs.t = doc.at("t").get<int>();
    s.mpcs.release_factor = doc.value("release_factor", 1.0);
    if (doc.contains("release_list")) {
      s.mpcs.release_list = detail::parse_release_list(doc.at("release_list"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  s.input_mode = detail::parse_choice(doc, "input_mode", InputMode::Probs,
                                      {{"probs", InputMode::Probs}, {"logits", InputMode::Logits}});
  s.log_base = detail::parse_choice(doc, "log_base", LogBase::E,
                                    {{"e", LogBase::E}, {"10", LogBase::Ten}});
  s.ce_reduction = detail::parse_choice(doc, "ce_reduction", Reduction::Mean,
                                        {{"mean", Reduction::Mean}, {"sum", Reduction::Sum}});
  validate_config(s.mpcs);
  return s;
}

inline MpcsConfig load_config(std::string_view text) { return load_settings(text).mpcs; }

inline std::string serialize_settings(const Settings& s) {
  nlohmann::json doc;
  doc["k"] = s.mpcs.k;
  doc["t"] = s.mpcs.t;
  doc["release_factor"] = s.mpcs.release_factor;
  auto rules = nlohmann::json::array();
  for (const auto& r : s.mpcs.release_list.rules()) {
    auto row = nlohmann::json::array({r.true_label});
    for (Label l : r.released_predictions) row.push_back(l);
    rules.push_back(row);
  }
  doc["release_list"] = rules;
  doc["input_mode"] = s.input_mode == InputMode::Logits ? "logits" : "probs";
  doc["log_base"] = s.log_base == LogBase::Ten ? "10" : "e";
  doc["ce_reduction"] = s.ce_reduction == Reduction::Sum ? "sum" : "mean";
  return doc.dump(2);
}

inline std::string serialize_config(const MpcsConfig& cfg) {
  Settings s;
  s.mpcs = cfg;
  return serialize_settings(s);
}

// Default worker count for per-sample evaluation, from MPCS_THREADS.
inline unsigned default_thread_count() {
  if (const char* env = std::getenv("MPCS_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n > 0) return static_cast<unsigned>(n);
  }
  return 1;
}

}  // namespace mpcs
