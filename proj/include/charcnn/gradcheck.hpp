#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "model.hpp"

namespace charcnn {

/// Wide type used for finite-difference checks.
using wide_t = long double;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t parameters_checked = 0;
};

/// The small configuration used by the built-in check (and the `gradcheck`
/// command): 10 characters, L=12, d=5, widths {2:3, 3:4}, fc=7, 4 classes.
inline ModelConfig tiny_check_config(std::size_t fc_dim = 7) {
  ModelConfig cfg;
  cfg.alphabet_size = 10;
  cfg.num_classes = 4;
  cfg.max_len = 12;
  cfg.embed_dim = 5;
  cfg.filters = {{2, 3}, {3, 4}};
  cfg.fc_dim = fc_dim;
  cfg.dropout_embed = 0.0;
  cfg.dropout_fc = 0.0;
  return cfg;
}

/// Random batch for the check; texts have varying real length and a PAD tail.
inline Batch random_check_batch(const ModelConfig& cfg, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  for (std::size_t i = 0; i < size; ++i) {
    const auto len = 1 + static_cast<std::size_t>(uniform_index(rng, cfg.max_len));
    EncodedText e(cfg.max_len, Alphabet::pad_index);
    for (std::size_t t = 0; t < len; ++t)
      e[t] = static_cast<std::uint32_t>(1 + uniform_index(rng, cfg.alphabet_size - 1));
    b.inputs.push_back(std::move(e));
    b.labels.push_back(static_cast<std::size_t>(uniform_index(rng, cfg.num_classes)));
  }
  return b;
}

template <class T>
T batch_loss(const ModelParams<T>& params, const ModelConfig& cfg, const Batch& batch) {
  const auto r = forward(params, cfg, batch, false);
  return cross_entropy(r.probabilities, std::span<const std::size_t>(batch.labels));
}

/// Compares analytic gradients with central differences at the given
/// parameters. Dropout is forced off. Relative error per scalar is
/// |a - n| / max(1e-8, |a| + |n|).
template <class T>
GradCheckResult gradient_check(ModelParams<T> params, ModelConfig cfg, const Batch& batch,
                               T epsilon = T(1e-5)) {
  cfg.dropout_embed = 0.0;
  cfg.dropout_fc = 0.0;
  const auto fwd = forward(params, cfg, batch, true);
  const auto grads = backward(params, cfg, fwd.cache, std::span<const std::size_t>(batch.labels));

  std::vector<const Tensor<T>*> grad_tensors;
  for_each_tensor(grads, [&](const std::string&, const Tensor<T>& t) { grad_tensors.push_back(&t); });

  GradCheckResult result;
  std::size_t ti = 0;
  for_each_tensor(params, [&](const std::string& name, Tensor<T>& tensor) {
    const auto& g = *grad_tensors[ti++];
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const T saved = tensor[i];
      tensor[i] = saved + epsilon;
      const T up = batch_loss(params, cfg, batch);
      tensor[i] = saved - epsilon;
      const T down = batch_loss(params, cfg, batch);
      tensor[i] = saved;
      const T numeric = (up - down) / (T(2) * epsilon);
      const T analytic = g[i];
      const T denom = std::max(T(1e-8), std::abs(analytic) + std::abs(numeric));
      const auto rel = static_cast<double>(std::abs(analytic - numeric) / denom);
      ++result.parameters_checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_tensor = name;
        result.worst_index = i;
      }
    }
  });
  return result;
}

/// init_params leaves biases and the PAD row at exactly zero, which puts
/// every all-PAD convolution window on the ReLU kink. This moves them to
/// small random values so the check runs at a differentiable point.
template <class T>
void jitter_zero_init(ModelParams<T>& params, std::uint64_t seed, double scale = 0.05) {
  Rng rng(seed);
  auto jitter = [&](Tensor<T>& t) {
    for (auto& v : t.data) v = static_cast<T>(uniform(rng, -scale, scale));
  };
  const auto d = params.embedding.shape.at(1);
  for (std::size_t c = 0; c < d; ++c) params.embedding[Alphabet::pad_index * d + c] = static_cast<T>(uniform(rng, -scale, scale));
  for (auto& b : params.conv_biases) jitter(b);
  if (params.has_fc()) jitter(params.fc_bias);
  jitter(params.out_bias);
}

/// init_params(seed) plus jitter_zero_init, on a random batch of batch_size.
template <class T = wide_t>
GradCheckResult gradient_check(const ModelConfig& cfg, std::uint64_t seed, T epsilon = T(1e-5),
                               std::size_t batch_size = 3) {
  auto params = init_params<T>(cfg, seed);
  jitter_zero_init(params, mix_seed(seed, 2));
  const auto batch = random_check_batch(cfg, batch_size, mix_seed(seed, 1));
  return gradient_check<T>(std::move(params), cfg, batch, epsilon);
}

} // namespace charcnn
