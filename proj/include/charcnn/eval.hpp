#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "random.hpp"

namespace charcnn {

/// counts[gold][predicted].
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t num_classes() const { return counts.size(); }

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : counts)
      for (auto c : row) n += c;
    return n;
  }

  std::size_t row_sum(std::size_t gold) const {
    std::size_t n = 0;
    for (auto c : counts[gold]) n += c;
    return n;
  }

  std::size_t col_sum(std::size_t pred) const {
    std::size_t n = 0;
    for (const auto& row : counts) n += row[pred];
    return n;
  }

  std::size_t trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) n += counts[i][i];
    return n;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0; // gold count
};

struct EvalReport {
  double accuracy = 0.0;
  std::vector<ClassScores> per_class;
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  ConfusionMatrix confusion;
};

enum class MacroAverage {
  exclude_absent, // classes with no gold examples do not enter the macro mean
  include_absent,
};

/// Builds the matrix. When `labels` is empty, names are the class indices
/// and K is one more than the largest index seen.
inline ConfusionMatrix confusion(std::span<const std::size_t> gold, std::span<const std::size_t> pred,
                                 std::vector<std::string> labels = {}) {
  if (gold.size() != pred.size()) throw DataError("gold and predicted label lists differ in length");
  if (gold.empty()) throw DataError("cannot build a confusion matrix from no examples");
  std::size_t k = labels.size();
  if (k == 0) {
    for (std::size_t i = 0; i < gold.size(); ++i) k = std::max({k, gold[i] + 1, pred[i] + 1});
    for (std::size_t i = 0; i < k; ++i) labels.push_back(std::to_string(i));
  }
  ConfusionMatrix cm{std::move(labels), std::vector<std::vector<std::size_t>>(k, std::vector<std::size_t>(k, 0))};
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= k || pred[i] >= k) throw DataError("label index out of range for the confusion matrix");
    ++cm.counts[gold[i]][pred[i]];
  }
  return cm;
}

inline EvalReport report(const ConfusionMatrix& cm, MacroAverage macro = MacroAverage::exclude_absent) {
  const auto k = cm.num_classes();
  const auto total = cm.total();
  if (k == 0 || total == 0) throw DataError("cannot score an empty confusion matrix");
  EvalReport r;
  r.confusion = cm;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);

  auto ratio = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  auto harmonic = [](double p, double q) { return p + q > 0.0 ? 2.0 * p * q / (p + q) : 0.0; };

  double macro_sum = 0.0, weighted_sum = 0.0;
  std::size_t macro_n = 0, tp_all = 0, fp_all = 0, fn_all = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const auto tp = cm.counts[c][c];
    const auto rows = cm.row_sum(c);
    const auto cols = cm.col_sum(c);
    ClassScores s;
    s.support = rows;
    s.precision = ratio(tp, cols);
    s.recall = ratio(tp, rows);
    s.f1 = harmonic(s.precision, s.recall);
    r.per_class.push_back(s);
    tp_all += tp;
    fp_all += cols - tp;
    fn_all += rows - tp;
    if (rows > 0 || macro == MacroAverage::include_absent) {
      macro_sum += s.f1;
      ++macro_n;
    }
    weighted_sum += s.f1 * static_cast<double>(rows);
  }
  r.macro_f1 = macro_n ? macro_sum / static_cast<double>(macro_n) : 0.0;
  r.weighted_f1 = weighted_sum / static_cast<double>(total);
  r.micro_f1 = harmonic(ratio(tp_all, tp_all + fp_all), ratio(tp_all, tp_all + fn_all));
  return r;
}

/// Predicts the most frequent training label (lowest index on ties) for
/// every test item.
inline EvalReport majority_baseline(std::span<const std::size_t> train_labels, std::span<const std::size_t> test_gold,
                                    std::vector<std::string> labels = {},
                                    MacroAverage macro = MacroAverage::exclude_absent) {
  if (train_labels.empty() || test_gold.empty()) throw DataError("majority baseline needs non-empty label lists");
  std::size_t k = labels.size();
  for (auto l : train_labels) k = std::max(k, l + 1);
  for (auto l : test_gold) k = std::max(k, l + 1);
  std::vector<std::size_t> freq(k, 0);
  for (auto l : train_labels) ++freq[l];
  const auto majority = static_cast<std::size_t>(std::max_element(freq.begin(), freq.end()) - freq.begin());
  if (labels.empty())
    for (std::size_t i = 0; i < k; ++i) labels.push_back(std::to_string(i));
  const std::vector<std::size_t> pred(test_gold.size(), majority);
  return report(confusion(test_gold, pred, std::move(labels)), macro);
}

/// Uniformly random label per test item.
inline EvalReport random_baseline(std::size_t num_classes, std::span<const std::size_t> test_gold, std::uint64_t seed,
                                  std::vector<std::string> labels = {},
                                  MacroAverage macro = MacroAverage::exclude_absent) {
  if (num_classes < 1) throw ConfigError("random baseline needs at least one class");
  if (test_gold.empty()) throw DataError("random baseline needs test labels");
  Rng rng(seed);
  std::vector<std::size_t> pred(test_gold.size());
  for (auto& p : pred) p = static_cast<std::size_t>(uniform_index(rng, num_classes));
  if (labels.empty())
    for (std::size_t i = 0; i < num_classes; ++i) labels.push_back(std::to_string(i));
  return report(confusion(test_gold, pred, std::move(labels)), macro);
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw DataError("unterminated quote in CSV line");
  fields.push_back(std::move(cur));
  return fields;
}

inline double cell_value(const ConfusionMatrix& cm, std::size_t g, std::size_t p, bool normalize) {
  if (!normalize) return static_cast<double>(cm.counts[g][p]);
  const auto rs = cm.row_sum(g);
  return rs == 0 ? 0.0 : static_cast<double>(cm.counts[g][p]) / static_cast<double>(rs);
}

inline std::string format_cell(double v, bool normalize) {
  std::ostringstream os;
  if (normalize)
    os << std::fixed << std::setprecision(4) << v;
  else
    os << static_cast<std::size_t>(v);
  return os.str();
}

} // namespace detail

/// Aligned text table, rows = gold, columns = predicted. In normalized mode
/// each row is divided by its sum; empty rows print as zeros.
inline std::string render_confusion_text(const ConfusionMatrix& cm, bool normalize) {
  const auto k = cm.num_classes();
  std::vector<std::vector<std::string>> cells(k + 1, std::vector<std::string>(k + 1));
  cells[0][0] = "gold\\pred";
  for (std::size_t i = 0; i < k; ++i) {
    cells[0][i + 1] = cm.labels[i];
    cells[i + 1][0] = cm.labels[i];
    for (std::size_t j = 0; j < k; ++j) cells[i + 1][j + 1] = detail::format_cell(detail::cell_value(cm, i, j, normalize), normalize);
  }
  std::vector<std::size_t> widths(k + 1, 0);
  for (const auto& row : cells)
    for (std::size_t j = 0; j <= k; ++j) widths[j] = std::max(widths[j], row[j].size());
  std::ostringstream os;
  for (const auto& row : cells) {
    for (std::size_t j = 0; j <= k; ++j) {
      if (j) os << "  ";
      if (j == 0)
        os << std::left << std::setw(static_cast<int>(widths[j])) << row[j];
      else
        os << std::right << std::setw(static_cast<int>(widths[j])) << row[j];
    }
    os << '\n';
  }
  return os.str();
}

/// CSV with a quoted header row and header column of label names.
inline std::string render_confusion_csv(const ConfusionMatrix& cm, bool normalize) {
  std::ostringstream os;
  os << "\"\"";
  for (const auto& l : cm.labels) os << ',' << detail::csv_quote(l);
  os << '\n';
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    os << detail::csv_quote(cm.labels[i]);
    for (std::size_t j = 0; j < cm.num_classes(); ++j)
      os << ',' << detail::format_cell(detail::cell_value(cm, i, j, normalize), normalize);
    os << '\n';
  }
  return os.str();
}

/// Inverse of render_confusion_csv(cm, false).
inline ConfusionMatrix parse_confusion_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty confusion CSV");
  auto header = detail::csv_split(line);
  ConfusionMatrix cm;
  cm.labels.assign(header.begin() + 1, header.end());
  const auto k = cm.labels.size();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = detail::csv_split(line);
    if (fields.size() != k + 1) throw DataError("confusion CSV row has the wrong number of fields");
    if (cm.counts.size() >= k || fields[0] != cm.labels[cm.counts.size()])
      throw DataError("confusion CSV rows do not match the header labels");
    std::vector<std::size_t> row;
    for (std::size_t j = 1; j <= k; ++j) {
      std::size_t pos = 0;
      const auto v = std::stoull(fields[j], &pos);
      if (pos != fields[j].size()) throw DataError("confusion CSV cell is not a count: " + fields[j]);
      row.push_back(static_cast<std::size_t>(v));
    }
    cm.counts.push_back(std::move(row));
  }
  if (cm.counts.size() != k) throw DataError("confusion CSV is missing rows");
  return cm;
}

/// Tab-separated key/value lines.
inline std::string render_report(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  os << "accuracy\t" << r.accuracy << '\n';
  os << "f1_micro\t" << r.micro_f1 << '\n';
  os << "f1_macro\t" << r.macro_f1 << '\n';
  os << "f1_weighted\t" << r.weighted_f1 << '\n';
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& s = r.per_class[c];
    const auto& name = r.confusion.labels[c];
    os << "precision[" << name << "]\t" << s.precision << '\n';
    os << "recall[" << name << "]\t" << s.recall << '\n';
    os << "f1[" << name << "]\t" << s.f1 << '\n';
    os << "support[" << name << "]\t" << s.support << '\n';
  }
  return os.str();
}

} // namespace charcnn
