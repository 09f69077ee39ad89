#pragma once

// Reference implementations and data generators shared by the test suites.
// The oracles are written independently of the library code paths: nested
// vectors, different loop orders, no shared helpers beyond the RNG.

#include <charcnn/charcnn.hpp>

#include <unistd.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace charcnn::fixtures {

using Grid = std::vector<std::vector<double>>;

/// out[t][f] = max(0, b[f] + sum_j sum_c x[t+j][c] * w[j][c][f])
inline Grid brute_conv_relu(const Grid& x, const std::vector<Grid>& w, const std::vector<double>& b) {
  const auto len = x.size();
  const auto width = w.size();
  const auto dim = x[0].size();
  const auto n = b.size();
  Grid out(len - width + 1, std::vector<double>(n));
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t t = 0; t + width <= len; ++t) {
      long double s = b[f];
      for (std::size_t j = 0; j < width; ++j)
        for (std::size_t c = 0; c < dim; ++c) s += static_cast<long double>(x[t + j][c]) * w[j][c][f];
      out[t][f] = s > 0 ? static_cast<double>(s) : 0.0;
    }
  return out;
}

inline std::vector<double> brute_column_max(const Grid& h) {
  std::vector<double> out(h[0].size(), -INFINITY);
  for (const auto& row : h)
    for (std::size_t f = 0; f < row.size(); ++f)
      if (row[f] > out[f]) out[f] = row[f];
  return out;
}

inline std::vector<double> brute_softmax(const std::vector<double>& z) {
  long double total = 0;
  for (double v : z) total += std::exp(static_cast<long double>(v));
  std::vector<double> out;
  for (double v : z) out.push_back(static_cast<double>(std::exp(static_cast<long double>(v)) / total));
  return out;
}

inline double brute_cross_entropy(const Grid& probs, const std::vector<std::size_t>& labels) {
  long double s = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) s += -std::log(std::max<long double>(probs[i][labels[i]], 1e-12L));
  return static_cast<double>(s / labels.size());
}

/// Three classes whose texts use disjoint character ranges: a-h, i-p, q-x.
/// Examples cycle through the classes; lengths are uniform in [8, 30].
inline std::vector<LabeledExample> separable_corpus(std::size_t n, std::uint64_t seed) {
  static const char* names[] = {"alpha", "beta", "gamma"};
  Rng rng(seed);
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto cls = i % 3;
    const auto len = 8 + uniform_index(rng, 23);
    LabeledExample ex;
    ex.label = names[cls];
    for (std::size_t t = 0; t < len; ++t)
      ex.text.push_back(static_cast<char32_t>('a' + 8 * cls + uniform_index(rng, 8)));
    out.push_back(std::move(ex));
  }
  return out;
}

/// Small config matching the end-to-end scale-down: L=40, d=16,
/// widths {2:8, 3:8}, fc=32, dropout 0.2 / 0.5.
inline ModelConfig small_config(std::size_t alphabet_size, std::size_t classes) {
  ModelConfig cfg;
  cfg.alphabet_size = alphabet_size;
  cfg.num_classes = classes;
  cfg.max_len = 40;
  cfg.embed_dim = 16;
  cfg.filters = {{2, 8}, {3, 8}};
  cfg.fc_dim = 32;
  cfg.dropout_embed = 0.2;
  cfg.dropout_fc = 0.5;
  return cfg;
}

/// Random tiny config for property tests.
inline ModelConfig random_tiny_config(Rng& rng) {
  ModelConfig cfg;
  cfg.alphabet_size = 2 + uniform_index(rng, 8);
  cfg.num_classes = 1 + uniform_index(rng, 4);
  cfg.max_len = 4 + uniform_index(rng, 8);
  cfg.embed_dim = 1 + uniform_index(rng, 4);
  const auto banks = 1 + uniform_index(rng, 3);
  for (std::size_t i = 0; i < banks; ++i)
    cfg.filters.push_back({1 + uniform_index(rng, 4), 1 + uniform_index(rng, 4)});
  cfg.fc_dim = uniform_index(rng, 2) ? 1 + uniform_index(rng, 6) : 0;
  cfg.dropout_embed = 0.1;
  cfg.dropout_fc = 0.3;
  return cfg;
}

inline EncodedText random_encoded(const ModelConfig& cfg, Rng& rng) {
  EncodedText e(cfg.max_len);
  for (auto& x : e) x = static_cast<std::uint32_t>(uniform_index(rng, cfg.alphabet_size));
  return e;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("charcnn_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
  std::filesystem::path path_;
};

inline void write_dsl(const std::string& path, const std::vector<LabeledExample>& data) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& ex : data) out << utf8::encode(ex.text) << '\t' << ex.label << '\n';
}

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

} // namespace charcnn::fixtures
