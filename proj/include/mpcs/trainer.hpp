#pragma once

// Desk-scale MLP softmax classifier trained on cross entropy, with optional
// learning-rate modulation driven by the training-set MPCS.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mpcs/analysis.hpp"
#include "mpcs/baselines.hpp"
#include "mpcs/core.hpp"
#include "mpcs/data_io.hpp"

namespace mpcs {

// Fully connected ReLU network with a softmax output. Parameters live in one
// flat buffer: for each layer, the row-major weight matrix (out x in)
// followed by the bias vector.
class MlpModel {
 public:
  MlpModel() = default;

  explicit MlpModel(std::vector<int> sizes) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw ValidationError("an MLP needs input and output sizes");
    for (int s : sizes_) {
      if (s < 1) throw ValidationError("layer sizes must be positive");
    }
    size_t offset = 0;
    for (size_t l = 0; l + 1 < sizes_.size(); ++l) {
      weight_offset_.push_back(offset);
      offset += static_cast<size_t>(sizes_[l]) * static_cast<size_t>(sizes_[l + 1]);
      bias_offset_.push_back(offset);
      offset += static_cast<size_t>(sizes_[l + 1]);
    }
    params_.assign(offset, 0.0);
  }

  // He-scaled normal weights, zero biases.
  void initialize(std::mt19937_64& rng) {
    for (size_t l = 0; l < layers(); ++l) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / sizes_[l]));
      auto w = weights(l);
      for (auto& x : w) x = dist(rng);
      auto b = biases(l);
      std::fill(b.begin(), b.end(), 0.0);
    }
  }

  const std::vector<int>& sizes() const noexcept { return sizes_; }
  size_t layers() const noexcept { return sizes_.size() - 1; }
  int inputs() const { return sizes_.front(); }
  int outputs() const { return sizes_.back(); }
  size_t parameter_count() const noexcept { return params_.size(); }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  std::span<double> weights(size_t l) {
    return std::span<double>(params_).subspan(weight_offset_[l], fan_out(l) * fan_in(l));
  }
  std::span<const double> weights(size_t l) const {
    return std::span<const double>(params_).subspan(weight_offset_[l], fan_out(l) * fan_in(l));
  }
  std::span<double> biases(size_t l) {
    return std::span<double>(params_).subspan(bias_offset_[l], fan_out(l));
  }
  std::span<const double> biases(size_t l) const {
    return std::span<const double>(params_).subspan(bias_offset_[l], fan_out(l));
  }

  size_t weight_offset(size_t l) const { return weight_offset_[l]; }
  size_t bias_offset(size_t l) const { return bias_offset_[l]; }
  size_t fan_in(size_t l) const { return static_cast<size_t>(sizes_[l]); }
  size_t fan_out(size_t l) const { return static_cast<size_t>(sizes_[l + 1]); }

  bool finite() const {
    return std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); });
  }

  // Output logits for one input row.
  std::vector<double> logits(std::span<const double> x) const {
    std::vector<double> a(x.begin(), x.end());
    for (size_t l = 0; l < layers(); ++l) a = affine(l, a, l + 1 < layers());
    return a;
  }

  std::vector<double> predict(std::span<const double> x) const { return softmax(logits(x)); }

  // Pre-activation of layer l applied to a, optionally passed through ReLU.
  std::vector<double> affine(size_t l, std::span<const double> a, bool relu) const {
    const auto w = weights(l);
    const auto b = biases(l);
    const size_t in = fan_in(l);
    std::vector<double> z(fan_out(l));
    for (size_t i = 0; i < z.size(); ++i) {
      double s = b[i];
      const double* row = w.data() + i * in;
      for (size_t j = 0; j < in; ++j) s += row[j] * a[j];
      z[i] = relu ? std::max(s, 0.0) : s;
    }
    return z;
  }

 private:
  std::vector<int> sizes_;
  std::vector<size_t> weight_offset_;
  std::vector<size_t> bias_offset_;
  std::vector<double> params_;
};

struct Batch {
  const TabularDataset* data = nullptr;
  std::span<const size_t> indices;
};

namespace detail {

inline double log_sum_exp(std::span<const double> z) {
  const double top = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - top);
  return top + std::log(s);
}

}  // namespace detail

// Mean cross entropy over the batch; accumulates its gradient into grad
// (which must be zeroed and sized like the parameters).
inline double loss_and_gradient(const MlpModel& model, const Batch& batch, std::span<double> grad) {
  const size_t L = model.layers();
  const double scale = 1.0 / static_cast<double>(batch.indices.size());
  double loss = 0.0;
  std::vector<std::vector<double>> acts(L + 1);
  for (size_t idx : batch.indices) {
    const auto x = batch.data->row(idx);
    const Label y = batch.data->labels[idx];
    acts[0].assign(x.begin(), x.end());
    for (size_t l = 0; l < L; ++l) acts[l + 1] = model.affine(l, acts[l], l + 1 < L);

    const auto& z = acts[L];
    const double lse = detail::log_sum_exp(z);
    loss += (lse - z[static_cast<size_t>(y)]) * scale;

    std::vector<double> delta(z.size());
    for (size_t i = 0; i < z.size(); ++i) {
      delta[i] = (std::exp(z[i] - lse) - (static_cast<Label>(i) == y ? 1.0 : 0.0)) * scale;
    }
    for (size_t l = L; l-- > 0;) {
      const size_t in = model.fan_in(l);
      const auto w = model.weights(l);
      double* gw = grad.data() + model.weight_offset(l);
      double* gb = grad.data() + model.bias_offset(l);
      const auto& a = acts[l];
      for (size_t i = 0; i < delta.size(); ++i) {
        gb[i] += delta[i];
        for (size_t j = 0; j < in; ++j) gw[i * in + j] += delta[i] * a[j];
      }
      if (l == 0) break;
      std::vector<double> prev(in, 0.0);
      for (size_t i = 0; i < delta.size(); ++i) {
        for (size_t j = 0; j < in; ++j) prev[j] += w[i * in + j] * delta[i];
      }
      // ReLU derivative, read off the stored post-activation.
      for (size_t j = 0; j < in; ++j) {
        if (a[j] <= 0.0) prev[j] = 0.0;
      }
      delta = std::move(prev);
    }
  }
  return loss;
}

inline double batch_loss(const MlpModel& model, const Batch& batch) {
  double loss = 0.0;
  for (size_t idx : batch.indices) {
    const auto z = model.logits(batch.data->row(idx));
    loss += detail::log_sum_exp(z) - z[static_cast<size_t>(batch.data->labels[idx])];
  }
  return loss / static_cast<double>(batch.indices.size());
}

namespace detail {

// Batch loss with the forward pass in long double, so finite differences are
// not swamped by double round-off.
inline long double precise_batch_loss(const MlpModel& model, const Batch& batch) {
  long double total = 0.0L;
  for (size_t idx : batch.indices) {
    const auto x = batch.data->row(idx);
    std::vector<long double> a(x.begin(), x.end());
    for (size_t l = 0; l < model.layers(); ++l) {
      const auto w = model.weights(l);
      const auto b = model.biases(l);
      const size_t in = model.fan_in(l);
      std::vector<long double> z(model.fan_out(l));
      for (size_t i = 0; i < z.size(); ++i) {
        long double s = b[i];
        for (size_t j = 0; j < in; ++j) s += static_cast<long double>(w[i * in + j]) * a[j];
        z[i] = l + 1 < model.layers() ? std::max(s, 0.0L) : s;
      }
      a = std::move(z);
    }
    const long double top = *std::max_element(a.begin(), a.end());
    long double sum = 0.0L;
    for (long double v : a) sum += std::exp(v - top);
    total += top + std::log(sum) - a[static_cast<size_t>(batch.data->labels[idx])];
  }
  return total / static_cast<long double>(batch.indices.size());
}

}  // namespace detail

// Central finite differences against the analytic gradient; returns the
// largest |a - n| / max(|a|, |n|, 1e-6) over all parameters.
inline double gradient_check(MlpModel model, const Batch& batch, double h = 1e-5) {
  std::vector<double> analytic(model.parameter_count(), 0.0);
  loss_and_gradient(model, batch, analytic);
  auto params = model.parameters();
  double worst = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    const double saved = params[p];
    const double hi = saved + h, lo = saved - h;
    params[p] = hi;
    const long double up = detail::precise_batch_loss(model, batch);
    params[p] = lo;
    const long double down = detail::precise_batch_loss(model, batch);
    params[p] = saved;
    const double numeric = static_cast<double>((up - down) / (static_cast<long double>(hi) - lo));
    const double denom = std::max({std::abs(analytic[p]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[p] - numeric) / denom);
  }
  return worst;
}

enum class Optimizer { Sgd, Adam };
enum class LrModulation { Off, Mpcs };

struct TrainConfig {
  int epochs = 150;
  double learning_rate = 1e-3;
  int batch_size = 32;
  Optimizer optimizer = Optimizer::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  LrModulation modulation = LrModulation::Off;
  double floor_ratio = 0.1;
  double cap_ratio = 1.0;
  bool measure_mpcs = true;
  bool keep_predictions = true;
  unsigned threads = 1;
};

struct ModelConfig {
  std::vector<int> hidden{16};
};

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ValidationError("epochs must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (cfg.batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (!(cfg.floor_ratio > 0.0) || cfg.floor_ratio > cfg.cap_ratio) {
    throw ValidationError("modulation needs 0 < floor <= cap");
  }
  if (cfg.modulation == LrModulation::Mpcs && !cfg.measure_mpcs) {
    throw ValidationError("MPCS modulation requires MPCS measurement");
  }
}

// base * clamp(previous / reference, floor, cap).
inline double modulated_lr(double base, double s_prev, double s_ref, double floor, double cap) {
  if (!(s_ref > 0.0)) throw ValidationError("reference MPCS must be positive");
  return base * std::clamp(s_prev / s_ref, floor, cap);
}

struct TrainLogRow {
  int epoch = 0;
  double lr = 0.0;
  double ce = 0.0;
  double mpcs = 0.0;
  double accuracy = 0.0;
  std::int64_t dangerous_count = 0;
};

struct TrainResult {
  MlpModel model;
  double reference_mpcs = 0.0;
  std::vector<CheckpointRecord> records;
  std::vector<TrainLogRow> log;
};

inline std::vector<LabeledPrediction> predict_all(const MlpModel& model, const TabularDataset& ds) {
  std::vector<LabeledPrediction> out;
  out.reserve(ds.rows);
  for (size_t i = 0; i < ds.rows; ++i) {
    out.push_back({static_cast<std::int64_t>(i), ds.labels[i],
                   ProbabilityVector(model.predict(ds.row(i)))});
  }
  return out;
}

namespace detail {

class AdamState {
 public:
  explicit AdamState(size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad, double lr,
            const TrainConfig& cfg) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg.beta1 * m_[i] + (1.0 - cfg.beta1) * grad[i];
      v_[i] = cfg.beta2 * v_[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg.epsilon);
    }
  }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  long long t_ = 0;
};

inline MetricReport epoch_report(std::span<const LabeledPrediction> preds, const Settings& settings,
                                 const TrainConfig& cfg) {
  if (cfg.measure_mpcs) return evaluate(preds, settings, cfg.threads);
  auto report = measures(confusion_matrix(preds));
  report.ms_loss = ms_loss(preds);
  report.ce_loss = ce_loss(preds, settings.log_base, settings.ce_reduction);
  report.dangerous_count = dangerous_count(preds, settings.mpcs.release_list);
  return report;
}

}  // namespace detail

using CheckpointCallback = std::function<void(const CheckpointRecord&, const TrainLogRow&)>;

// Minibatch training on mean cross entropy. One checkpoint per epoch
// (epochs numbered from 1); epoch 0 is the initialised model and only
// provides the modulation reference.
inline TrainResult train(const TabularDataset& data, const ModelConfig& model_cfg,
                         const TrainConfig& cfg, const Settings& settings,
                         const CheckpointCallback& on_checkpoint = {}) {
  validate_train_config(cfg);
  validate_config(settings.mpcs, data.label_space());
  if (data.rows == 0) throw ValidationError("cannot train on an empty dataset");
  if (!std::all_of(data.features.begin(), data.features.end(),
                   [](double v) { return std::isfinite(v); })) {
    throw ValidationError("dataset contains non-finite features");
  }
  for (Label y : data.labels) {
    if (y < 0 || y >= data.classes) throw ValidationError("dataset label out of range");
  }

  std::vector<int> sizes{static_cast<int>(data.dims)};
  sizes.insert(sizes.end(), model_cfg.hidden.begin(), model_cfg.hidden.end());
  sizes.push_back(data.classes);

  std::seed_seq init_seq{cfg.seed, std::uint64_t{0}};
  std::seed_seq shuffle_seq{cfg.seed, std::uint64_t{1}};
  std::mt19937_64 init_rng(init_seq);
  std::mt19937_64 shuffle_rng(shuffle_seq);

  TrainResult result;
  result.model = MlpModel(sizes);
  result.model.initialize(init_rng);
  auto& model = result.model;

  double previous_mpcs = 0.0;
  if (cfg.measure_mpcs) {
    const auto initial = predict_all(model, data);
    result.reference_mpcs = dataset_mpcs(initial, settings.mpcs, cfg.threads);
    previous_mpcs = result.reference_mpcs;
  }

  std::vector<size_t> order(data.rows);
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<double> grad(model.parameter_count());
  detail::AdamState adam(model.parameter_count());
  const auto batch_size = static_cast<size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.modulation == LrModulation::Mpcs
                          ? modulated_lr(cfg.learning_rate, previous_mpcs, result.reference_mpcs,
                                         cfg.floor_ratio, cfg.cap_ratio)
                          : cfg.learning_rate;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (size_t start = 0; start < order.size(); start += batch_size) {
      const size_t len = std::min(batch_size, order.size() - start);
      Batch batch{&data, std::span<const size_t>(order).subspan(start, len)};
      std::fill(grad.begin(), grad.end(), 0.0);
      const double loss = loss_and_gradient(model, batch, grad);
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged (non-finite loss) in epoch " + std::to_string(epoch),
                           epoch);
      }
      if (cfg.optimizer == Optimizer::Adam) {
        adam.step(model.parameters(), grad, lr, cfg);
      } else {
        auto params = model.parameters();
        for (size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
      }
    }
    if (!model.finite()) {
      throw NumericError("training diverged (non-finite parameters) in epoch " +
                             std::to_string(epoch),
                         epoch);
    }

    CheckpointRecord record;
    record.epoch = epoch;
    record.predictions = predict_all(model, data);
    record.report = detail::epoch_report(record.predictions, settings, cfg);
    if (!std::isfinite(record.report.ce_loss) || !std::isfinite(record.report.mpcs)) {
      throw NumericError("non-finite metrics in epoch " + std::to_string(epoch), epoch);
    }
    const TrainLogRow row{epoch,
                          lr,
                          record.report.ce_loss,
                          record.report.mpcs,
                          record.report.accuracy,
                          record.report.dangerous_count};
    previous_mpcs = record.report.mpcs;
    if (on_checkpoint) on_checkpoint(record, row);
    if (!cfg.keep_predictions) record.predictions.clear();
    result.records.push_back(std::move(record));
    result.log.push_back(row);
  }
  return result;
}

}  // namespace mpcs
