#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"
#include "model.hpp"

namespace charcnn {

enum class StopMode { early_stop, fixed_epochs };

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon_hat = 1e-8;
  std::size_t patience = 10;
  std::size_t max_epochs = 500;
  std::uint64_t seed = 42;
  StopMode mode = StopMode::early_stop;
  std::size_t epochs = 0; // used by fixed_epochs

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
    if (!(epsilon_hat > 0.0)) throw ConfigError("epsilon_hat must be positive");
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
    if (mode == StopMode::fixed_epochs && epochs < 1)
      throw ConfigError("fixed_epochs mode needs epochs >= 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

template <class T>
struct AdamState {
  ModelParams<T> m;
  ModelParams<T> v;
  std::size_t t = 0;

  explicit AdamState(const ModelConfig& cfg)
      : m(ModelParams<T>::zeros(cfg)), v(ModelParams<T>::zeros(cfg)) {}
};

/// One bias-corrected Adam update of a flat parameter block. `step` is the
/// already-incremented timestep (>= 1).
template <class T>
void adam_update(std::span<T> theta, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::size_t step, const TrainConfig& tc) {
  const double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(tc.beta1), b2 = static_cast<T>(tc.beta2);
  const T lr = static_cast<T>(tc.learning_rate), eps = static_cast<T>(tc.epsilon_hat);
  const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const T g = grad[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const T mhat = m[i] * inv_c1;
    const T vhat = v[i] * inv_c2;
    theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// Applies one Adam step to every tensor. Non-finite gradients are rejected
/// before any parameter changes.
template <class T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state,
               const TrainConfig& tc) {
  for_each_tensor(grads, [](const std::string& name, const Tensor<T>& g) {
    for (const T x : g.data)
      if (!std::isfinite(static_cast<double>(x)))
        throw DataError("non-finite gradient in tensor '" + name + "'");
  });
  ++state.t;
  std::vector<Tensor<T>*> ps, ms, vs;
  std::vector<const Tensor<T>*> gs;
  for_each_tensor(params, [&](const std::string&, Tensor<T>& t) { ps.push_back(&t); });
  for_each_tensor(state.m, [&](const std::string&, Tensor<T>& t) { ms.push_back(&t); });
  for_each_tensor(state.v, [&](const std::string&, Tensor<T>& t) { vs.push_back(&t); });
  for_each_tensor(grads, [&](const std::string&, const Tensor<T>& t) { gs.push_back(&t); });
  if (ps.size() != gs.size() || ms.size() != ps.size()) throw ConfigError("gradient layout mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i]->size() != gs[i]->size()) throw ConfigError("gradient shape mismatch");
    adam_update<T>(ps[i]->span(), gs[i]->span(), ms[i]->span(), vs[i]->span(), state.t, tc);
  }
}

/// Tracks the best loss; stop after `patience` consecutive epochs without a
/// strict improvement.
class EarlyStopping {
public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when `loss` is a new best.
  bool update(std::size_t epoch, double loss) {
    if (loss < best_loss_) {
      best_loss_ = loss;
      best_epoch_ = epoch;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }

  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0; // 1-based
  double train_loss = 0.0;
  double dev_loss = std::numeric_limits<double>::quiet_NaN();
  double dev_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t stopped_epoch = 0;
};

template <class T>
struct TrainResult {
  ModelParams<T> params;
  TrainHistory history;
  std::size_t optimizer_steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean cross-entropy and accuracy in inference mode.
template <class T>
LossAccuracy evaluate_loss(const ModelParams<T>& params, const ModelConfig& cfg,
                           std::span<const EncodedExample> data, std::size_t chunk = 256) {
  if (data.empty()) throw DataError("cannot evaluate on an empty dataset");
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const auto part = data.subspan(start, std::min(chunk, data.size() - start));
    const auto b = as_batch(part);
    const auto r = forward(params, cfg, b, false);
    loss_sum += static_cast<double>(cross_entropy(r.probabilities, std::span<const std::size_t>(b.labels))) *
                static_cast<double>(part.size());
    const auto k = cfg.num_classes;
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto row = r.probabilities.span().subspan(i * k, k);
      if (argmax_index(row.begin(), row.end()) == b.labels[i]) ++correct;
    }
  }
  return {loss_sum / static_cast<double>(data.size()),
          static_cast<double>(correct) / static_cast<double>(data.size())};
}

namespace detail {

/// One pass over shuffled batches. Returns the example-weighted mean loss.
template <class T>
double run_epoch(ModelParams<T>& params, AdamState<T>& adam, const ModelConfig& cfg,
                 const TrainConfig& tc, std::span<const EncodedExample> train, std::size_t epoch) {
  const auto bs = batches(train, tc.batch_size, tc.seed + epoch);
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < bs.size(); ++i) {
    const auto& b = bs[i];
    const auto fwd = forward(params, cfg, b, true, mix_seed(mix_seed(tc.seed, epoch), i));
    loss_sum += static_cast<double>(cross_entropy(fwd.probabilities, std::span<const std::size_t>(b.labels))) *
                static_cast<double>(b.size());
    const auto grads = backward(params, cfg, fwd.cache, std::span<const std::size_t>(b.labels));
    adam_step(params, grads, adam, tc);
  }
  return loss_sum / static_cast<double>(train.size());
}

} // namespace detail

/// Trains with dev-loss early stopping and returns the parameters of the
/// epoch with the lowest dev loss. Epoch e shuffles with seed + e.
template <class T = float>
TrainResult<T> train_model(std::span<const EncodedExample> train, std::span<const EncodedExample> dev,
                           const ModelConfig& cfg, const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  tc.validate();
  if (train.empty()) throw DataError("training data is empty");
  if (dev.empty()) throw DataError("early stopping needs a non-empty dev set");

  auto params = init_params<T>(cfg, tc.seed);
  AdamState<T> adam(cfg);
  EarlyStopping stopper(tc.patience);
  TrainResult<T> result{params, {}, 0};

  for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = detail::run_epoch(params, adam, cfg, tc, train, epoch);
    const auto dev_eval = evaluate_loss(params, cfg, dev);
    rec.dev_loss = dev_eval.loss;
    rec.dev_accuracy = dev_eval.accuracy;
    result.history.epochs.push_back(rec);
    result.history.stopped_epoch = epoch;
    if (on_epoch) on_epoch(rec);
    if (stopper.update(epoch, rec.dev_loss)) result.params = params;
    if (stopper.should_stop()) break;
  }
  result.history.best_epoch = stopper.best_epoch();
  result.optimizer_steps = adam.t;
  return result;
}

template <class T = float>
TrainResult<T> train_model(const std::vector<EncodedExample>& train, const std::vector<EncodedExample>& dev,
                           const ModelConfig& cfg, const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
  return train_model<T>(std::span<const EncodedExample>(train), std::span<const EncodedExample>(dev), cfg, tc,
                        on_epoch);
}

/// Trains on all data for exactly tc.epochs epochs without a dev set and
/// returns the final parameters.
template <class T = float>
TrainResult<T> train_fixed_epochs(std::span<const EncodedExample> train, const ModelConfig& cfg,
                                  const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  tc.validate();
  if (tc.mode != StopMode::fixed_epochs) throw ConfigError("train_fixed_epochs needs mode fixed_epochs");
  if (train.empty()) throw DataError("training data is empty");

  auto params = init_params<T>(cfg, tc.seed);
  AdamState<T> adam(cfg);
  TrainResult<T> result;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = detail::run_epoch(params, adam, cfg, tc, train, epoch);
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.history.best_epoch = tc.epochs;
  result.history.stopped_epoch = tc.epochs;
  result.params = std::move(params);
  result.optimizer_steps = adam.t;
  return result;
}

template <class T = float>
TrainResult<T> train_fixed_epochs(const std::vector<EncodedExample>& train, const ModelConfig& cfg,
                                  const TrainConfig& tc, const EpochCallback& on_epoch = {}) {
  return train_fixed_epochs<T>(std::span<const EncodedExample>(train), cfg, tc, on_epoch);
}

} // namespace charcnn
