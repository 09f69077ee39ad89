#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "error.hpp"
#include "random.hpp"
#include "utf8.hpp"

namespace charcnn {

struct LabeledExample {
  std::u32string text;
  std::string label;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

/// Character vocabulary. Index 0 is PAD, index 1 is UNK, and every index
/// from 2 upward maps to exactly one Unicode scalar, in code-point order.
class Alphabet {
public:
  static constexpr std::uint32_t pad_index = 0;
  static constexpr std::uint32_t unk_index = 1;

  Alphabet() = default;

  /// Builds from a set of characters; duplicates are dropped and the result
  /// is sorted by code point.
  explicit Alphabet(std::vector<char32_t> chars) {
    std::sort(chars.begin(), chars.end());
    chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
    chars_ = std::move(chars);
    for (std::size_t i = 0; i < chars_.size(); ++i)
      index_.emplace(chars_[i], static_cast<std::uint32_t>(i + 2));
  }

  std::size_t size() const { return chars_.size() + 2; }

  std::uint32_t index_of(char32_t c) const {
    const auto it = index_.find(c);
    return it == index_.end() ? unk_index : it->second;
  }

  bool contains(char32_t c) const { return index_.contains(c); }

  /// Character at an index >= 2.
  char32_t char_at(std::uint32_t index) const {
    if (index < 2 || index >= size()) throw std::out_of_range("alphabet index has no character");
    return chars_[index - 2];
  }

  /// Characters for indices 2..size()-1.
  const std::vector<char32_t>& characters() const { return chars_; }

  friend bool operator==(const Alphabet& a, const Alphabet& b) { return a.chars_ == b.chars_; }

private:
  std::vector<char32_t> chars_;
  std::map<char32_t, std::uint32_t> index_;
};

/// Class names sorted lexicographically; index = position.
class LabelSet {
public:
  LabelSet() = default;

  explicit LabelSet(std::vector<std::string> names) {
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    for (const auto& n : names)
      if (n.empty()) throw DataError("label names must be non-empty");
    names_ = std::move(names);
    for (std::size_t i = 0; i < names_.size(); ++i) index_.emplace(names_[i], i);
  }

  static LabelSet from_examples(std::span<const LabeledExample> corpus) {
    std::vector<std::string> names;
    names.reserve(corpus.size());
    for (const auto& ex : corpus) names.push_back(ex.label);
    return LabelSet(std::move(names));
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  std::size_t index_of(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown label '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  friend bool operator==(const LabelSet& a, const LabelSet& b) { return a.names_ == b.names_; }

private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

/// Exactly L alphabet indices.
using EncodedText = std::vector<std::uint32_t>;

struct EncodedExample {
  EncodedText text;
  std::size_t label = 0;
};

struct Batch {
  std::vector<EncodedText> inputs;
  std::vector<std::size_t> labels;

  std::size_t size() const { return inputs.size(); }
};

namespace detail {

inline void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline std::string trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\v\f";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

inline std::u32string decode_line(const std::string& bytes, const std::string& path,
                                  std::size_t line_no) {
  auto decoded = utf8::decode(bytes);
  if (!decoded)
    throw DataError(path + ":" + std::to_string(line_no) + ": invalid UTF-8");
  return std::move(*decoded);
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

} // namespace detail

/// Parses "text<TAB>label" records from a stream. The split happens on the
/// last tab; the label is whitespace-trimmed and the text kept verbatim.
inline std::vector<LabeledExample> parse_dsl(std::istream& in, bool allow_empty,
                                             const std::string& source = "<input>") {
  std::vector<LabeledExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos)
      throw DataError(source + ":" + std::to_string(line_no) + ": no tab separating text and label");
    LabeledExample ex;
    ex.text = detail::decode_line(line.substr(0, tab), source, line_no);
    const auto label_bytes = line.substr(tab + 1);
    if (!utf8::decode(label_bytes))
      throw DataError(source + ":" + std::to_string(line_no) + ": invalid UTF-8");
    ex.label = detail::trim(label_bytes);
    if (ex.label.empty())
      throw DataError(source + ":" + std::to_string(line_no) + ": empty label");
    if (ex.text.empty() && !allow_empty)
      throw DataError(source + ":" + std::to_string(line_no) + ": empty text");
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<LabeledExample> load_dsl_file(const std::string& path, bool allow_empty) {
  auto in = detail::open_input(path);
  return parse_dsl(in, allow_empty, path);
}

/// One text per line, no label.
inline std::vector<std::u32string> load_text_lines(const std::string& path) {
  auto in = detail::open_input(path);
  std::vector<std::u32string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    out.push_back(detail::decode_line(line, path, line_no));
  }
  return out;
}

inline Alphabet build_alphabet(std::span<const LabeledExample> corpus) {
  if (corpus.empty()) throw DataError("cannot build an alphabet from an empty corpus");
  std::vector<char32_t> chars;
  for (const auto& ex : corpus) chars.insert(chars.end(), ex.text.begin(), ex.text.end());
  return Alphabet(std::move(chars));
}

/// Keeps the first L characters, maps unseen characters to UNK and pads
/// the tail with PAD.
inline EncodedText encode(std::u32string_view text, const Alphabet& alphabet, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("encoding length must be at least 1");
  EncodedText out(max_len, Alphabet::pad_index);
  const auto n = std::min(text.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) out[i] = alphabet.index_of(text[i]);
  return out;
}

inline std::vector<EncodedExample> encode_corpus(std::span<const LabeledExample> corpus,
                                                 const Alphabet& alphabet, const LabelSet& labels,
                                                 std::size_t max_len) {
  std::vector<EncodedExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus)
    out.push_back({encode(ex.text, alphabet, max_len), labels.index_of(ex.label)});
  return out;
}

/// Seeded uniform permutation; the last max(1, floor(n * dev_fraction))
/// items become the dev set.
template <class T>
std::pair<std::vector<T>, std::vector<T>> split_train_dev(std::span<const T> corpus,
                                                          double dev_fraction, std::uint64_t seed) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0))
    throw ConfigError("dev fraction must lie strictly between 0 and 1");
  if (corpus.size() < 2) throw DataError("need at least two examples to split off a dev set");
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle(std::span(order), rng);

  const auto n = corpus.size();
  auto dev_size = static_cast<std::size_t>(std::floor(static_cast<double>(n) * dev_fraction + 1e-9));
  dev_size = std::clamp<std::size_t>(dev_size, 1, n - 1);

  std::pair<std::vector<T>, std::vector<T>> out;
  out.first.reserve(n - dev_size);
  out.second.reserve(dev_size);
  for (std::size_t i = 0; i < n - dev_size; ++i) out.first.push_back(corpus[order[i]]);
  for (std::size_t i = n - dev_size; i < n; ++i) out.second.push_back(corpus[order[i]]);
  return out;
}

template <class T>
std::pair<std::vector<T>, std::vector<T>> split_train_dev(const std::vector<T>& corpus,
                                                          double dev_fraction, std::uint64_t seed) {
  return split_train_dev(std::span<const T>(corpus), dev_fraction, seed);
}

/// Permutes the data under epoch_seed and chunks it; the final batch may be
/// short.
inline std::vector<Batch> batches(std::span<const EncodedExample> data, std::size_t batch_size,
                                  std::uint64_t epoch_seed) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (data.empty()) throw DataError("cannot batch an empty dataset");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(epoch_seed);
  shuffle(std::span(order), rng);

  std::vector<Batch> out;
  out.reserve((data.size() + batch_size - 1) / batch_size);
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    const auto end = std::min(order.size(), start + batch_size);
    b.inputs.reserve(end - start);
    b.labels.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      b.inputs.push_back(data[order[i]].text);
      b.labels.push_back(data[order[i]].label);
    }
    out.push_back(std::move(b));
  }
  return out;
}

/// All examples in their given order as one batch.
inline Batch as_batch(std::span<const EncodedExample> data) {
  Batch b;
  for (const auto& ex : data) {
    b.inputs.push_back(ex.text);
    b.labels.push_back(ex.label);
  }
  return b;
}

} // namespace charcnn
