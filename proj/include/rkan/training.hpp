#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rkan/backbone.hpp"
#include "rkan/checkpoint.hpp"
#include "rkan/data.hpp"
#include "rkan/ops.hpp"

namespace rkan {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double base_lr = 0.005;
  double peak_lr = 0.05;
  double final_lr = 1e-5;
  std::size_t warmup_epochs = 10;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  bool flip = false;
  double grad_clip = 0.0;  // global L2 norm cap on the loss gradient; 0 disables

  void validate() const {
    std::vector<std::string> problems;
    if (!(base_lr > 0.0 && base_lr <= peak_lr)) problems.push_back("require 0 < base_lr <= peak_lr");
    if (!(final_lr <= peak_lr)) problems.push_back("require final_lr <= peak_lr");
    if (final_lr < 0.0) problems.push_back("final_lr must be nonnegative");
    if (epochs > 0 && warmup_epochs >= epochs)
      problems.push_back("warmup_epochs " + std::to_string(warmup_epochs) +
                         " must be less than epochs " + std::to_string(epochs));
    if (batch_size == 0) problems.push_back("batch_size must be positive");
    if (momentum < 0.0 || momentum >= 1.0) problems.push_back("momentum must be in [0, 1)");
    if (weight_decay < 0.0) problems.push_back("weight_decay must be nonnegative");
    if (!(grad_clip >= 0.0)) problems.push_back("grad_clip must be nonnegative");
    if (!problems.empty()) {
      std::string msg = "invalid train config:";
      for (const auto& p : problems) msg += "\n  - " + p;
      throw ConfigError(msg);
    }
  }
};

/// Per-epoch schedule: linear warmup from base_lr to peak_lr, then cosine
/// annealing that lands on final_lr at the last epoch.
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch < cfg.warmup_epochs)
    return cfg.base_lr + (cfg.peak_lr - cfg.base_lr) * static_cast<double>(epoch) /
                             static_cast<double>(cfg.warmup_epochs);
  if (cfg.epochs <= cfg.warmup_epochs + 1) return cfg.peak_lr;
  const double span = static_cast<double>(cfg.epochs - 1 - cfg.warmup_epochs);
  const double tau = std::min(1.0, static_cast<double>(epoch - cfg.warmup_epochs) / span);
  return cfg.final_lr +
         (cfg.peak_lr - cfg.final_lr) * (1.0 + std::cos(std::numbers::pi * tau)) / 2.0;
}

/// Linear scaling rule 0.1 * B / 256.
inline double scaled_peak_lr(std::size_t batch_size) {
  return 0.1 * static_cast<double>(batch_size) / 256.0;
}

/// SGD with Nesterov momentum (no dampening) and L2 weight decay folded into
/// the gradient.
template <typename T>
class NesterovSgd {
 public:
  NesterovSgd(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  /// Throws NumericError without touching any parameter when a gradient is
  /// not finite.
  void step(const ParameterList<T>& params, double lr) {
    for (const auto* p : params)
      if (!p->grad.all_finite()) throw NumericError("non-finite gradient in " + p->name);
    if (velocity_.size() != params.size()) {
      velocity_.clear();
      for (const auto* p : params) velocity_.emplace_back(p->value.shape());
    }
    const T mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_);
    const T rate = static_cast<T>(lr);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& w = params[k]->value;
      const auto& grad = params[k]->grad;
      auto& v = velocity_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const T g = grad[i] + wd * w[i];
        v[i] = mu * v[i] + g;
        w[i] -= rate * (g + mu * v[i]);
      }
    }
  }

  const std::vector<Tensor<T>>& velocity() const { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor<T>> velocity_;
};

/// Rescales all gradients together so their joint L2 norm is at most
/// max_norm. Returns the norm before rescaling.
template <typename T>
double clip_grad_norm(const ParameterList<T>& params, double max_norm) {
  double ss = 0.0;
  for (const auto* p : params)
    for (std::size_t i = 0; i < p->grad.size(); ++i)
      ss += static_cast<double>(p->grad[i]) * static_cast<double>(p->grad[i]);
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && std::isfinite(norm) && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto* p : params)
      for (auto& g : p->grad.values()) g *= scale;
  }
  return norm;
}

/// sigma / mu * 100 with the population standard deviation.
inline double coefficient_of_variation(std::span<const double> values) {
  if (values.empty()) throw InputError("coefficient_of_variation: empty list");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (mean == 0.0) throw InputError("coefficient_of_variation: zero mean");
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / n) / mean * 100.0;
}

/// Images per second.
inline double throughput(double images, double seconds) {
  if (!(seconds > 0.0)) throw InputError("throughput: elapsed time must be positive");
  return images / seconds;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_top1 = 0.0;
  double lr = 0.0;
  double epoch_seconds = 0.0;
  double throughput = 0.0;
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;
  double best_top1 = 0.0;
  double cv_full = 0.0;
  double cv_last_half = 0.0;
  double init_val_top1 = 0.0;
  double final_train_top1 = 0.0;
  bool aborted = false;
  std::string abort_reason;

  void summarize() {
    best_top1 = 0.0;
    cv_full = cv_last_half = 0.0;
    if (epochs.empty()) return;
    std::vector<double> acc;
    for (const auto& e : epochs) acc.push_back(e.val_top1);
    best_top1 = *std::max_element(acc.begin(), acc.end());
    auto safe_cv = [](std::span<const double> v) {
      const double s = std::accumulate(v.begin(), v.end(), 0.0);
      return s == 0.0 ? 0.0 : coefficient_of_variation(v);
    };
    cv_full = safe_cv(acc);
    const std::size_t half = (acc.size() + 1) / 2;
    cv_last_half = safe_cv(std::span<const double>(acc).subspan(acc.size() - half));
  }
};

inline std::string metrics_csv(const RunMetrics& m) {
  std::ostringstream os;
  os << "epoch,train_loss,val_top1,lr,epoch_seconds,throughput\n";
  os << std::setprecision(6);
  for (const auto& e : m.epochs)
    os << e.epoch << ',' << e.train_loss << ',' << e.val_top1 << ',' << e.lr << ','
       << e.epoch_seconds << ',' << e.throughput << '\n';
  return os.str();
}

inline void write_metrics_csv(const std::string& path, const RunMetrics& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path);
  out << metrics_csv(m);
}

/// Fraction of images whose arg-max logit equals the label.
template <typename T>
double evaluate_top1(Model<T>& model, const Dataset& ds, const Preprocessor& pre,
                     std::size_t batch_size = 128) {
  if (ds.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(ds.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<T> logits = model.forward(pre.apply<T>(ds, idx));
    const std::size_t k = logits.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const T* row = logits.ptr() + b * k;
      const auto pred = static_cast<int>(std::max_element(row, row + k) - row);
      if (pred == ds.labels[idx[b]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  bool measure_init_val = true;
  bool measure_final_train = true;
};

/// Epoch loop. Shuffling and flips are driven by seeded generators, so two
/// runs with equal seeds produce identical loss sequences. On a numeric error
/// the model is rolled back to the last completed epoch and the run stops.
template <typename T>
RunMetrics train_run(Model<T>& model, const Dataset& train, const Dataset& val,
                     const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  RunMetrics metrics;
  if (cfg.epochs == 0) return metrics;
  if (train.size() == 0) throw InputError("train_run: empty training set");
  train.validate();
  const Preprocessor pre = Preprocessor::fit(train);
  if (hooks.measure_init_val) metrics.init_val_top1 = evaluate_top1(model, val, pre);

  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 flip_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  NesterovSgd<T> opt(cfg.momentum, cfg.weight_decay);
  const auto params = model.parameters();
  auto last_good = snapshot(params);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at(epoch, cfg);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        const std::span<const std::size_t> idx(order.data() + start, end - start);
        std::vector<int> labels(idx.size());
        for (std::size_t b = 0; b < idx.size(); ++b) labels[b] = train.labels[idx[b]];
        const Tensor<T> x = pre.apply<T>(train, idx, cfg.flip ? &flip_rng : nullptr);
        model.zero_grad();
        const Tensor<T> logits = model.forward(x);
        auto loss = softmax_cross_entropy<T>(logits, labels);
        if (!std::isfinite(static_cast<double>(loss.loss)))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
        model.backward(loss.grad);
        if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
        opt.step(params, rec.lr);
        loss_sum += static_cast<double>(loss.loss) * static_cast<double>(idx.size());
      }
    } catch (const NumericError& e) {
      restore(params, last_good);
      metrics.aborted = true;
      metrics.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }
    rec.epoch_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.epoch_seconds = std::max(rec.epoch_seconds, 1e-9);
    rec.throughput = throughput(static_cast<double>(train.size()), rec.epoch_seconds);
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.val_top1 = evaluate_top1(model, val, pre);
    metrics.epochs.push_back(rec);
    last_good = snapshot(params);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  if (hooks.measure_final_train) metrics.final_train_top1 = evaluate_top1(model, train, pre);
  metrics.summarize();
  return metrics;
}

}  // namespace rkan
