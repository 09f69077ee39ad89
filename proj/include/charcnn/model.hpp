#pragma once

// Character-level CNN classifier: embedding -> dropout -> parallel
// multi-width convolutions with ReLU -> max-over-time pooling ->
// concatenation -> optional dense+ReLU+dropout -> dense -> softmax.
// Forward and backward passes are written out per layer; the scalar type is
// a template parameter so the same code runs in float for training and in a
// wide type for finite-difference checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace charcnn {

struct FilterSpec {
  std::size_t width = 1;
  std::size_t count = 1;

  friend bool operator==(const FilterSpec&, const FilterSpec&) = default;
};

struct ModelConfig {
  std::size_t alphabet_size = 2;
  std::size_t num_classes = 2;
  std::size_t max_len = 400;
  std::size_t embed_dim = 50;
  std::vector<FilterSpec> filters;
  std::size_t fc_dim = 250; // 0 drops the hidden dense layer
  double dropout_embed = 0.2;
  double dropout_fc = 0.5;

  std::size_t total_filters() const {
    std::size_t n = 0;
    for (const auto& f : filters) n += f.count;
    return n;
  }

  /// Width of the vector that feeds the output layer.
  std::size_t hidden_dim() const { return fc_dim > 0 ? fc_dim : total_filters(); }

  std::size_t max_width() const {
    std::size_t w = 0;
    for (const auto& f : filters) w = std::max(w, f.width);
    return w;
  }

  void validate() const {
    if (alphabet_size < 1) throw ConfigError("alphabet_size must be at least 1");
    if (num_classes < 1) throw ConfigError("num_classes must be at least 1");
    if (max_len < 1) throw ConfigError("max_len must be at least 1");
    if (embed_dim < 1) throw ConfigError("embed_dim must be at least 1");
    if (filters.empty()) throw ConfigError("filter_spec must name at least one filter width");
    for (const auto& f : filters) {
      if (f.width < 1 || f.width > max_len)
        throw ConfigError("filter width " + std::to_string(f.width) + " must lie in [1, max_len=" +
                          std::to_string(max_len) + "]");
      if (f.count < 1) throw ConfigError("filter count must be at least 1");
    }
    auto check_rate = [](double p, const char* name) {
      if (!(p >= 0.0 && p < 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1)");
    };
    check_rate(dropout_embed, "dropout_embed");
    check_rate(dropout_fc, "dropout_fc");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// All learned tensors. Gradients and Adam moments reuse this layout.
///   embedding      [alphabet_size x embed_dim]
///   conv_weights[i] [width x embed_dim x count], conv_biases[i] [count]
///   fc_weights     [total_filters x fc_dim], fc_bias [fc_dim]   (empty when fc_dim == 0)
///   out_weights    [hidden_dim x num_classes], out_bias [num_classes]
template <class T>
struct ModelParams {
  Tensor<T> embedding;
  std::vector<Tensor<T>> conv_weights;
  std::vector<Tensor<T>> conv_biases;
  Tensor<T> fc_weights;
  Tensor<T> fc_bias;
  Tensor<T> out_weights;
  Tensor<T> out_bias;

  bool has_fc() const { return !fc_weights.shape.empty(); }

  static ModelParams zeros(const ModelConfig& cfg) {
    ModelParams p;
    p.embedding = Tensor<T>({cfg.alphabet_size, cfg.embed_dim});
    for (const auto& f : cfg.filters) {
      p.conv_weights.emplace_back(std::vector<std::size_t>{f.width, cfg.embed_dim, f.count});
      p.conv_biases.emplace_back(std::vector<std::size_t>{f.count});
    }
    if (cfg.fc_dim > 0) {
      p.fc_weights = Tensor<T>({cfg.total_filters(), cfg.fc_dim});
      p.fc_bias = Tensor<T>({cfg.fc_dim});
    }
    p.out_weights = Tensor<T>({cfg.hidden_dim(), cfg.num_classes});
    p.out_bias = Tensor<T>({cfg.num_classes});
    return p;
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.embedding = embedding.template cast<U>();
    for (const auto& t : conv_weights) out.conv_weights.push_back(t.template cast<U>());
    for (const auto& t : conv_biases) out.conv_biases.push_back(t.template cast<U>());
    out.fc_weights = fc_weights.template cast<U>();
    out.fc_bias = fc_bias.template cast<U>();
    out.out_weights = out_weights.template cast<U>();
    out.out_bias = out_bias.template cast<U>();
    return out;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Visits every tensor in canonical order: embedding, then (weight, bias)
/// per filter width in filter_spec order, then the hidden dense pair if
/// present, then the output pair. The serialized layout follows this order.
template <class Params, class Fn>
void for_each_tensor(Params& params, Fn&& fn) {
  fn(std::string("embedding"), params.embedding);
  for (std::size_t i = 0; i < params.conv_weights.size(); ++i) {
    fn("conv" + std::to_string(i) + ".weight", params.conv_weights[i]);
    fn("conv" + std::to_string(i) + ".bias", params.conv_biases[i]);
  }
  if (params.has_fc()) {
    fn(std::string("fc.weight"), params.fc_weights);
    fn(std::string("fc.bias"), params.fc_bias);
  }
  fn(std::string("output.weight"), params.out_weights);
  fn(std::string("output.bias"), params.out_bias);
}

/// Shapes of `params` match what `cfg` requires.
template <class T>
bool shapes_match(const ModelParams<T>& params, const ModelConfig& cfg) {
  if (params.conv_weights.size() != cfg.filters.size() ||
      params.conv_biases.size() != cfg.filters.size() || params.has_fc() != (cfg.fc_dim > 0))
    return false;
  const auto expected = ModelParams<T>::zeros(cfg);
  bool ok = true;
  std::vector<std::vector<std::size_t>> shapes;
  for_each_tensor(expected, [&](const std::string&, const Tensor<T>& t) { shapes.push_back(t.shape); });
  std::size_t i = 0;
  for_each_tensor(params, [&](const std::string&, const Tensor<T>& t) {
    ok = ok && i < shapes.size() && t.shape == shapes[i] && t.data.size() == Tensor<T>::element_count(t.shape);
    ++i;
  });
  return ok && i == shapes.size();
}

/// Glorot-uniform weights, zero biases, uniform(+-0.05) embedding rows with
/// a zero PAD row. Convolution fans follow the usual 1-D convention:
/// fan_in = width * embed_dim, fan_out = width * count.
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  auto p = ModelParams<T>::zeros(cfg);
  Rng rng(seed);
  auto glorot = [&](Tensor<T>& t, double fan_in, double fan_out) {
    const double s = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : t.data) v = static_cast<T>(uniform(rng, -s, s));
  };
  const auto d = cfg.embed_dim;
  for (std::size_t r = 1; r < cfg.alphabet_size; ++r)
    for (std::size_t c = 0; c < d; ++c)
      p.embedding[r * d + c] = static_cast<T>(uniform(rng, -0.05, 0.05));
  for (std::size_t i = 0; i < cfg.filters.size(); ++i) {
    const auto& f = cfg.filters[i];
    glorot(p.conv_weights[i], static_cast<double>(f.width * d), static_cast<double>(f.width * f.count));
  }
  if (cfg.fc_dim > 0)
    glorot(p.fc_weights, static_cast<double>(cfg.total_filters()), static_cast<double>(cfg.fc_dim));
  glorot(p.out_weights, static_cast<double>(cfg.hidden_dim()), static_cast<double>(cfg.num_classes));
  return p;
}

// ---------------------------------------------------------------------------
// Layer primitives

/// Valid 1-D convolution with stride 1 followed by ReLU.
/// x is [len x dim] row-major; weight is [width x dim x count]; the result
/// is [(len - width + 1) x count].
template <class T>
std::vector<T> conv_relu_forward(std::span<const T> x, std::size_t len, std::size_t dim,
                                 const Tensor<T>& weight, const Tensor<T>& bias) {
  const auto width = weight.shape.at(0);
  const auto count = weight.shape.at(2);
  if (width < 1 || width > len) throw ConfigError("convolution width exceeds sequence length");
  if (weight.shape.at(1) != dim || x.size() != len * dim)
    throw ConfigError("convolution input does not match the filter depth");
  const auto steps = len - width + 1;
  std::vector<T> out(steps * count);
  for (std::size_t t = 0; t < steps; ++t) {
    T* row = out.data() + t * count;
    std::copy(bias.data.begin(), bias.data.end(), row);
    for (std::size_t j = 0; j < width; ++j) {
      const T* xrow = x.data() + (t + j) * dim;
      const T* wj = weight.ptr() + j * dim * count;
      for (std::size_t c = 0; c < dim; ++c) {
        const T xv = xrow[c];
        const T* wjc = wj + c * count;
        for (std::size_t f = 0; f < count; ++f) row[f] += xv * wjc[f];
      }
    }
    for (std::size_t f = 0; f < count; ++f) row[f] = std::max(row[f], T(0));
  }
  return out;
}

template <class T>
struct PoolResult {
  std::vector<T> values;
  std::vector<std::size_t> argmax; // first maximal position per column
};

/// Column-wise max of h [steps x count].
template <class T>
PoolResult<T> max_pool_over_time(std::span<const T> h, std::size_t steps, std::size_t count) {
  if (steps == 0) throw ConfigError("max-over-time pooling needs at least one time step");
  PoolResult<T> r{std::vector<T>(h.begin(), h.begin() + count), std::vector<std::size_t>(count, 0)};
  for (std::size_t t = 1; t < steps; ++t)
    for (std::size_t f = 0; f < count; ++f) {
      const T v = h[t * count + f];
      if (v > r.values[f]) {
        r.values[f] = v;
        r.argmax[f] = t;
      }
    }
  return r;
}

/// In-place softmax with max subtraction.
template <class T>
void softmax_inplace(std::span<T> z) {
  const T m = *std::max_element(z.begin(), z.end());
  T sum(0);
  for (auto& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (auto& v : z) v /= sum;
}

inline constexpr double probability_floor = 1e-12;

/// Mean negative log-likelihood of the gold labels; probs is [B x K].
template <class T>
T cross_entropy(const Tensor<T>& probs, std::span<const std::size_t> labels) {
  const auto k = probs.shape.at(1);
  if (probs.shape.at(0) != labels.size()) throw ConfigError("label count does not match batch size");
  T total(0);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const T p = std::max(probs[b * k + labels[b]], static_cast<T>(probability_floor));
    total -= std::log(p);
  }
  return total / static_cast<T>(labels.size());
}

// ---------------------------------------------------------------------------
// Network

template <class T>
struct ExampleCache {
  EncodedText input;
  std::vector<T> embedded;                    // [L x d], after dropout
  std::vector<T> embed_mask;                  // [L x d] scale factors; empty when unused
  std::vector<std::vector<std::size_t>> argmax; // per width, per filter
  std::vector<T> pooled;                      // [F_total], post-ReLU maxima
  std::vector<T> fc_pre;                      // [fc_dim] pre-activation
  std::vector<T> hidden;                      // [H] input to the output layer
  std::vector<T> hidden_mask;                 // [H] scale factors; empty when unused
};

template <class T>
struct ForwardCache {
  std::vector<ExampleCache<T>> examples;
  Tensor<T> probabilities;
};

template <class T>
struct ForwardResult {
  Tensor<T> probabilities; // [B x K]
  std::optional<ForwardCache<T>> cache;
};

namespace detail {

template <class T>
std::vector<T> dropout_mask(std::size_t n, double rate, Rng& rng) {
  std::vector<T> mask(n);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask) m = uniform01(rng) < rate ? T(0) : keep_scale;
  return mask;
}

template <class T>
void forward_example(const ModelParams<T>& params, const ModelConfig& cfg, const EncodedText& input,
                     bool train_mode, Rng& rng, ExampleCache<T>& ec, std::span<T> probs_out) {
  const auto len = cfg.max_len;
  const auto d = cfg.embed_dim;
  if (input.size() != len)
    throw DataError("encoded text has length " + std::to_string(input.size()) + ", expected " +
                    std::to_string(len));

  ec.embedded.assign(len * d, T(0));
  for (std::size_t t = 0; t < len; ++t) {
    const auto idx = input[t];
    if (idx >= cfg.alphabet_size) throw DataError("character index outside the alphabet");
    std::copy_n(params.embedding.ptr() + idx * d, d, ec.embedded.data() + t * d);
  }
  if (train_mode && cfg.dropout_embed > 0.0) {
    ec.embed_mask = dropout_mask<T>(len * d, cfg.dropout_embed, rng);
    for (std::size_t i = 0; i < ec.embedded.size(); ++i) ec.embedded[i] *= ec.embed_mask[i];
  }

  const auto total = cfg.total_filters();
  ec.pooled.assign(total, T(0));
  ec.argmax.resize(cfg.filters.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < cfg.filters.size(); ++i) {
    const auto& f = cfg.filters[i];
    const auto h = conv_relu_forward<T>(ec.embedded, len, d, params.conv_weights[i], params.conv_biases[i]);
    auto pool = max_pool_over_time<T>(h, len - f.width + 1, f.count);
    std::copy(pool.values.begin(), pool.values.end(), ec.pooled.begin() + offset);
    ec.argmax[i] = std::move(pool.argmax);
    offset += f.count;
  }

  if (cfg.fc_dim > 0) {
    const auto fc = cfg.fc_dim;
    ec.fc_pre.assign(params.fc_bias.data.begin(), params.fc_bias.data.end());
    for (std::size_t p = 0; p < total; ++p) {
      const T v = ec.pooled[p];
      if (v == T(0)) continue;
      const T* urow = params.fc_weights.ptr() + p * fc;
      for (std::size_t j = 0; j < fc; ++j) ec.fc_pre[j] += v * urow[j];
    }
    ec.hidden.resize(fc);
    for (std::size_t j = 0; j < fc; ++j) ec.hidden[j] = std::max(ec.fc_pre[j], T(0));
  } else {
    ec.fc_pre.clear();
    ec.hidden = ec.pooled;
  }
  if (train_mode && cfg.dropout_fc > 0.0) {
    ec.hidden_mask = dropout_mask<T>(ec.hidden.size(), cfg.dropout_fc, rng);
    for (std::size_t j = 0; j < ec.hidden.size(); ++j) ec.hidden[j] *= ec.hidden_mask[j];
  }

  const auto k = cfg.num_classes;
  std::copy(params.out_bias.data.begin(), params.out_bias.data.end(), probs_out.begin());
  for (std::size_t j = 0; j < ec.hidden.size(); ++j) {
    const T v = ec.hidden[j];
    const T* vrow = params.out_weights.ptr() + j * k;
    for (std::size_t c = 0; c < k; ++c) probs_out[c] += v * vrow[c];
  }
  softmax_inplace(probs_out);
}

} // namespace detail

/// Runs the network over a batch. In train mode the dropout masks are drawn
/// from dropout_seed and a cache for backward() is returned.
template <class T>
ForwardResult<T> forward(const ModelParams<T>& params, const ModelConfig& cfg, const Batch& batch,
                         bool train_mode, std::uint64_t dropout_seed = 0) {
  const auto bsz = batch.inputs.size();
  if (!batch.labels.empty()) {
    if (batch.labels.size() != bsz) throw DataError("batch inputs and labels differ in length");
    for (auto l : batch.labels)
      if (l >= cfg.num_classes) throw DataError("label index " + std::to_string(l) + " out of range");
  }
  ForwardResult<T> result;
  result.probabilities = Tensor<T>({bsz, cfg.num_classes});
  Rng rng(dropout_seed);
  std::vector<ExampleCache<T>> caches(train_mode ? bsz : 0);
  ExampleCache<T> scratch;
  for (std::size_t b = 0; b < bsz; ++b) {
    auto& ec = train_mode ? caches[b] : scratch;
    auto row = std::span<T>(result.probabilities.data).subspan(b * cfg.num_classes, cfg.num_classes);
    detail::forward_example(params, cfg, batch.inputs[b], train_mode, rng, ec, row);
    if (train_mode) ec.input = batch.inputs[b];
  }
  if (train_mode) result.cache = ForwardCache<T>{std::move(caches), result.probabilities};
  return result;
}

/// Exact gradients of the batch-mean cross-entropy with respect to every
/// parameter tensor.
template <class T>
ModelParams<T> backward(const ModelParams<T>& params, const ModelConfig& cfg,
                        const std::optional<ForwardCache<T>>& cache,
                        std::span<const std::size_t> labels) {
  if (!cache) throw ConfigError("backward() needs the cache of a train-mode forward pass");
  const auto& examples = cache->examples;
  if (examples.size() != labels.size()) throw ConfigError("label count does not match the cached batch");
  auto grads = ModelParams<T>::zeros(cfg);
  const auto bsz = examples.size();
  const auto k = cfg.num_classes;
  const auto d = cfg.embed_dim;
  const auto total = cfg.total_filters();
  const auto hdim = cfg.hidden_dim();
  const T inv_b = T(1) / static_cast<T>(bsz);

  std::vector<T> dlogits(k), dhidden(hdim), dpooled(total), dfc(cfg.fc_dim), dx(cfg.max_len * d);
  for (std::size_t b = 0; b < bsz; ++b) {
    const auto& ec = examples[b];
    for (std::size_t c = 0; c < k; ++c)
      dlogits[c] = (cache->probabilities[b * k + c] - (c == labels[b] ? T(1) : T(0))) * inv_b;

    for (std::size_t c = 0; c < k; ++c) grads.out_bias[c] += dlogits[c];
    for (std::size_t j = 0; j < hdim; ++j) {
      const T hv = ec.hidden[j];
      const T* vrow = params.out_weights.ptr() + j * k;
      T* gvrow = grads.out_weights.ptr() + j * k;
      T acc(0);
      for (std::size_t c = 0; c < k; ++c) {
        gvrow[c] += hv * dlogits[c];
        acc += vrow[c] * dlogits[c];
      }
      dhidden[j] = ec.hidden_mask.empty() ? acc : acc * ec.hidden_mask[j];
    }

    if (cfg.fc_dim > 0) {
      const auto fc = cfg.fc_dim;
      for (std::size_t j = 0; j < fc; ++j) {
        dfc[j] = ec.fc_pre[j] > T(0) ? dhidden[j] : T(0);
        grads.fc_bias[j] += dfc[j];
      }
      for (std::size_t p = 0; p < total; ++p) {
        const T pv = ec.pooled[p];
        const T* urow = params.fc_weights.ptr() + p * fc;
        T* gurow = grads.fc_weights.ptr() + p * fc;
        T acc(0);
        for (std::size_t j = 0; j < fc; ++j) {
          gurow[j] += pv * dfc[j];
          acc += urow[j] * dfc[j];
        }
        dpooled[p] = acc;
      }
    } else {
      std::copy(dhidden.begin(), dhidden.end(), dpooled.begin());
    }

    std::fill(dx.begin(), dx.end(), T(0));
    std::size_t offset = 0;
    for (std::size_t i = 0; i < cfg.filters.size(); ++i) {
      const auto& spec = cfg.filters[i];
      const auto n = spec.count;
      const T* w = params.conv_weights[i].ptr();
      T* gw = grads.conv_weights[i].ptr();
      for (std::size_t f = 0; f < n; ++f) {
        // Pooled value is post-ReLU, so a zero maximum means the unit is inactive.
        if (!(ec.pooled[offset + f] > T(0))) continue;
        const T g = dpooled[offset + f];
        const auto t0 = ec.argmax[i][f];
        grads.conv_biases[i][f] += g;
        for (std::size_t j = 0; j < spec.width; ++j)
          for (std::size_t c = 0; c < d; ++c) {
            const auto xi = (t0 + j) * d + c;
            const auto wi = (j * d + c) * n + f;
            gw[wi] += ec.embedded[xi] * g;
            dx[xi] += w[wi] * g;
          }
      }
      offset += n;
    }

    for (std::size_t t = 0; t < cfg.max_len; ++t) {
      T* erow = grads.embedding.ptr() + ec.input[t] * d;
      for (std::size_t c = 0; c < d; ++c) {
        const auto xi = t * d + c;
        erow[c] += ec.embed_mask.empty() ? dx[xi] : dx[xi] * ec.embed_mask[xi];
      }
    }
  }
  return grads;
}

struct Prediction {
  std::vector<double> probabilities;
  std::size_t label = 0;
};

/// Index of the largest value; the lowest index wins ties.
template <class It>
std::size_t argmax_index(It first, It last) {
  std::size_t best = 0;
  std::size_t i = 0;
  for (auto it = first; it != last; ++it, ++i)
    if (*it > *(first + static_cast<std::ptrdiff_t>(best))) best = i;
  return best;
}

template <class T>
Prediction to_prediction(std::span<const T> row) {
  Prediction p;
  p.probabilities.assign(row.begin(), row.end());
  p.label = argmax_index(row.begin(), row.end());
  return p;
}

/// Inference-mode prediction for a single encoded text.
template <class T>
Prediction predict(const ModelParams<T>& params, const ModelConfig& cfg, const EncodedText& encoded) {
  Batch b;
  b.inputs.push_back(encoded);
  const auto r = forward(params, cfg, b, false);
  return to_prediction<T>(r.probabilities.span());
}

/// Inference-mode predictions for many texts.
template <class T>
std::vector<Prediction> predict_all(const ModelParams<T>& params, const ModelConfig& cfg,
                                    std::span<const EncodedText> encoded) {
  std::vector<Prediction> out;
  out.reserve(encoded.size());
  for (const auto& e : encoded) out.push_back(predict(params, cfg, e));
  return out;
}

} // namespace charcnn
