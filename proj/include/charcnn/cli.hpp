#pragma once

// Command-line front end. run() is the whole program; tools/charcnn.cpp only
// forwards argv and the standard streams.
//
// Exit status: 0 success, 1 usage or configuration error, 2 data/model error.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <tuple>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "corpus.hpp"
#include "ensemble.hpp"
#include "eval.hpp"
#include "gradcheck.hpp"
#include "model.hpp"
#include "persist.hpp"
#include "train.hpp"

namespace charcnn::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_usage = 1;
inline constexpr int exit_data = 2;
inline constexpr std::uint64_t default_seed = 42;
inline constexpr const char* seed_env_var = "CHARLID_SEED";

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Flags shared by the training commands; unset optionals leave the
/// config-file / preset value alone.
struct TrainingFlags {
  std::string data;
  std::string config_file;
  std::string preset_name;
  std::string out;
  std::string log;
  bool allow_empty = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_len, embed_dim, fc_dim, batch_size, patience, max_epochs;
  std::optional<std::string> filters;
  std::optional<double> dropout_embed, dropout_fc, learning_rate;
};

inline void add_training_flags(CLI::App* cmd, TrainingFlags& f) {
  cmd->add_option("--data", f.data, "Training file (text TAB label per line)")->required();
  cmd->add_option("--config", f.config_file, "JSON config with ModelConfig/TrainConfig field names");
  cmd->add_option("--preset", f.preset_name, "Named preset: dialect, languages-run1, languages-run2, languages-run3");
  cmd->add_option("--out", f.out, "Output model path")->required();
  cmd->add_option("--log", f.log, "Append the per-epoch log to this file");
  cmd->add_flag("--allow-empty", f.allow_empty, "Accept records with empty text");
  cmd->add_option("--seed", f.seed, "Random seed (default: $CHARLID_SEED or 42)");
  cmd->add_option("--max-len", f.max_len, "Maximum text length L");
  cmd->add_option("--embed-dim", f.embed_dim, "Character embedding size");
  cmd->add_option("--filters", f.filters, "Filter bank as width:count,width:count,...");
  cmd->add_option("--fc-dim", f.fc_dim, "Hidden dense layer size (0 removes it)");
  cmd->add_option("--dropout-embed", f.dropout_embed, "Dropout after the embedding");
  cmd->add_option("--dropout-fc", f.dropout_fc, "Dropout after the hidden dense layer");
  cmd->add_option("--batch-size", f.batch_size, "Mini-batch size");
  cmd->add_option("--lr", f.learning_rate, "Adam learning rate");
  cmd->add_option("--patience", f.patience, "Early-stopping patience in epochs");
  cmd->add_option("--max-epochs", f.max_epochs, "Epoch cap");
}

namespace detail {

inline void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::is_regular_file(path))
    throw DataError(std::string(what) + " '" + path + "' does not exist or is not a file");
}

inline void require_parent_dir(const std::string& path) {
  const auto parent = std::filesystem::absolute(path).parent_path();
  if (!std::filesystem::is_directory(parent))
    throw DataError("output directory '" + parent.string() + "' does not exist");
}

inline std::uint64_t parse_seed(const std::string& s, const char* origin) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::logic_error&) {
    throw UsageError(std::string(origin) + " is not an unsigned integer: '" + s + "'");
  }
}

inline std::uint64_t env_or_default_seed() {
  if (const char* env = std::getenv(seed_env_var); env && *env) return parse_seed(env, seed_env_var);
  return default_seed;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Precedence: flag > config file > preset > built-in defaults; seed falls
/// back to $CHARLID_SEED, then 42.
inline ExperimentConfig resolve_config(const TrainingFlags& f) {
  bool file_seed = false;
  ExperimentConfig cfg = preset_dialect();
  if (!f.preset_name.empty()) cfg = preset(f.preset_name);
  if (!f.config_file.empty()) {
    require_file(f.config_file, "config file");
    auto text = read_text(f.config_file);
    if (!f.preset_name.empty()) {
      // An explicit --preset is the base the file is applied to.
      auto j = nlohmann::json::parse(text, nullptr, false);
      if (j.is_object() && !j.contains("preset")) {
        j["preset"] = f.preset_name;
        text = j.dump();
      }
    }
    cfg = parse_experiment_config(text, &file_seed);
  }
  if (f.max_len) cfg.model.max_len = *f.max_len;
  if (f.embed_dim) cfg.model.embed_dim = *f.embed_dim;
  if (f.filters) cfg.model.filters = parse_filter_spec(*f.filters);
  if (f.fc_dim) cfg.model.fc_dim = *f.fc_dim;
  if (f.dropout_embed) cfg.model.dropout_embed = *f.dropout_embed;
  if (f.dropout_fc) cfg.model.dropout_fc = *f.dropout_fc;
  if (f.batch_size) cfg.train.batch_size = *f.batch_size;
  if (f.learning_rate) cfg.train.learning_rate = *f.learning_rate;
  if (f.patience) cfg.train.patience = *f.patience;
  if (f.max_epochs) cfg.train.max_epochs = *f.max_epochs;
  if (f.seed)
    cfg.train.seed = *f.seed;
  else if (!file_seed)
    cfg.train.seed = env_or_default_seed();
  return cfg;
}

inline std::string format_epoch(const EpochRecord& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(8) << r.epoch << '\t' << r.train_loss << '\t' << r.dev_loss << '\t'
     << r.dev_accuracy;
  return os.str();
}

/// Writes each epoch line to `out` and, when a log path is set, appends it there.
class EpochLogger {
public:
  EpochLogger(std::ostream& out, const std::string& log_path) : out_(out) {
    if (!log_path.empty()) {
      log_.open(log_path, std::ios::app);
      if (!log_) throw DataError("cannot open log file '" + log_path + "'");
    }
  }

  void operator()(const EpochRecord& r) {
    const auto line = format_epoch(r);
    out_ << line << '\n';
    if (log_.is_open()) log_ << line << '\n' << std::flush;
  }

private:
  std::ostream& out_;
  std::ofstream log_;
};

/// A single model or an ensemble directory behind one interface.
struct Classifier {
  std::optional<LoadedModel> single;
  std::optional<Ensemble> ensemble;

  static Classifier load(const std::string& path) {
    Classifier c;
    if (std::filesystem::is_directory(path))
      c.ensemble = load_ensemble(path);
    else
      c.single = load_model(path);
    return c;
  }

  const Alphabet& alphabet() const { return single ? single->alphabet : ensemble->alphabet; }
  const LabelSet& labels() const { return single ? single->labels : ensemble->labels; }
  std::size_t max_len() const { return single ? single->config.max_len : ensemble->max_len(); }

  /// Ensembles report the voted label and mean member probabilities.
  Prediction predict(const EncodedText& e) const {
    if (single) return charcnn::predict(single->params, single->config, e);
    const auto preds = ensemble->member_predictions(e);
    const auto v = vote(preds);
    Prediction p;
    p.label = v.label;
    p.probabilities = v.probability_sum;
    for (auto& x : p.probabilities) x /= static_cast<double>(preds.size());
    return p;
  }
};

inline void write_lines_atomic(const std::string& path, const std::string& text) {
  charcnn::detail::write_file_atomic(path, text);
}

struct PreparedData {
  Alphabet alphabet;
  LabelSet labels;
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> dev;
};

} // namespace detail

inline int run_train(const TrainingFlags& f, const std::optional<std::string>& dev_file, double dev_split,
                     std::ostream& out) {
  detail::require_file(f.data, "training file");
  if (dev_file) detail::require_file(*dev_file, "dev file");
  detail::require_parent_dir(f.out);
  auto cfg = detail::resolve_config(f);
  cfg.train.mode = StopMode::early_stop;
  out << "seed\t" << cfg.train.seed << '\n';

  const auto corpus = load_dsl_file(f.data, f.allow_empty);
  std::vector<LabeledExample> train_raw, dev_raw;
  if (dev_file) {
    train_raw = corpus;
    dev_raw = load_dsl_file(*dev_file, f.allow_empty);
  } else {
    std::tie(train_raw, dev_raw) = split_train_dev(corpus, dev_split, cfg.train.seed);
  }
  const auto alphabet = build_alphabet(train_raw);
  const auto labels = LabelSet::from_examples(train_raw);
  for (const auto& ex : dev_raw)
    if (!labels.contains(ex.label)) throw DataError("dev label '" + ex.label + "' does not occur in training data");
  cfg.model.alphabet_size = alphabet.size();
  cfg.model.num_classes = labels.size();
  cfg.model.validate();
  const auto train = encode_corpus(train_raw, alphabet, labels, cfg.model.max_len);
  const auto dev = encode_corpus(dev_raw, alphabet, labels, cfg.model.max_len);

  detail::EpochLogger logger(out, f.log);
  auto result = train_model<float>(train, dev, cfg.model, cfg.train, std::ref(logger));
  save_model(result.params, cfg.model, alphabet, labels, f.out, cfg.train.seed);
  out << "best_epoch\t" << result.history.best_epoch << '\n';
  out << "stopped_epoch\t" << result.history.stopped_epoch << '\n';
  out << "model\t" << f.out << '\n';
  return exit_ok;
}

inline int run_train_fixed(const TrainingFlags& f, std::size_t epochs, std::ostream& out) {
  detail::require_file(f.data, "training file");
  detail::require_parent_dir(f.out);
  auto cfg = detail::resolve_config(f);
  cfg.train.mode = StopMode::fixed_epochs;
  cfg.train.epochs = epochs;
  cfg.train.validate();
  out << "seed\t" << cfg.train.seed << '\n';

  const auto corpus = load_dsl_file(f.data, f.allow_empty);
  const auto alphabet = build_alphabet(corpus);
  const auto labels = LabelSet::from_examples(corpus);
  cfg.model.alphabet_size = alphabet.size();
  cfg.model.num_classes = labels.size();
  cfg.model.validate();
  const auto train = encode_corpus(corpus, alphabet, labels, cfg.model.max_len);

  detail::EpochLogger logger(out, f.log);
  auto result = train_fixed_epochs<float>(train, cfg.model, cfg.train, std::ref(logger));
  save_model(result.params, cfg.model, alphabet, labels, f.out, cfg.train.seed);
  out << "model\t" << f.out << '\n';
  return exit_ok;
}

inline int run_ensemble(const TrainingFlags& f, std::size_t k, std::size_t jobs, std::ostream& out) {
  detail::require_file(f.data, "training file");
  detail::require_parent_dir(f.out);
  auto cfg = detail::resolve_config(f);
  cfg.train.mode = StopMode::early_stop;
  out << "seed\t" << cfg.train.seed << '\n';

  const auto corpus = load_dsl_file(f.data, f.allow_empty);
  const auto alphabet = build_alphabet(corpus);
  const auto labels = LabelSet::from_examples(corpus);
  cfg.model.alphabet_size = alphabet.size();
  cfg.model.num_classes = labels.size();
  cfg.model.validate();
  const auto encoded = encode_corpus(corpus, alphabet, labels, cfg.model.max_len);

  const auto ens = train_ensemble(encoded, k, cfg.model, cfg.train, cfg.train.seed, alphabet, labels, jobs);
  save_ensemble(ens, f.out);
  std::unique_ptr<detail::EpochLogger> logger;
  if (!f.log.empty()) logger = std::make_unique<detail::EpochLogger>(out, f.log);
  for (std::size_t i = 0; i < ens.members.size(); ++i) {
    const auto& h = ens.members[i].history;
    out << "member\t" << i << "\tseed\t" << ens.members[i].seed << "\tbest_epoch\t" << h.best_epoch
        << "\tstopped_epoch\t" << h.stopped_epoch << '\n';
    if (logger)
      for (const auto& r : h.epochs) (*logger)(r);
  }
  out << "ensemble\t" << f.out << '\n';
  return exit_ok;
}

inline int run_predict(const std::string& model_path, const std::string& input, const std::string& out_path,
                       bool probs, bool labeled, std::ostream& out) {
  if (!std::filesystem::exists(model_path)) throw DataError("model '" + model_path + "' does not exist");
  detail::require_file(input, "input file");
  detail::require_parent_dir(out_path);
  const auto clf = detail::Classifier::load(model_path);
  std::vector<std::u32string> texts;
  if (labeled) {
    for (auto& ex : load_dsl_file(input, true)) texts.push_back(std::move(ex.text));
  } else {
    texts = load_text_lines(input);
  }
  std::ostringstream os;
  os << std::fixed << std::setprecision(6);
  for (const auto& t : texts) {
    const auto p = clf.predict(encode(t, clf.alphabet(), clf.max_len()));
    os << clf.labels().name(p.label);
    if (probs)
      for (double v : p.probabilities) os << '\t' << v;
    os << '\n';
  }
  detail::write_lines_atomic(out_path, os.str());
  out << "predictions\t" << texts.size() << '\t' << out_path << '\n';
  return exit_ok;
}

inline int run_evaluate(const std::string& model_path, const std::string& test, const std::string& confusion_out,
                        bool normalize, MacroAverage macro, std::ostream& out) {
  if (!std::filesystem::exists(model_path)) throw DataError("model '" + model_path + "' does not exist");
  detail::require_file(test, "test file");
  if (!confusion_out.empty()) detail::require_parent_dir(confusion_out);
  const auto clf = detail::Classifier::load(model_path);
  const auto data = load_dsl_file(test, true);
  if (data.empty()) throw DataError("test file '" + test + "' has no records");
  std::vector<std::size_t> gold, pred;
  for (const auto& ex : data) {
    gold.push_back(clf.labels().index_of(ex.label));
    pred.push_back(clf.predict(encode(ex.text, clf.alphabet(), clf.max_len())).label);
  }
  const auto rep = report(confusion(gold, pred, clf.labels().names()), macro);
  out << render_report(rep);
  out << render_confusion_text(rep.confusion, normalize);
  if (!confusion_out.empty()) detail::write_lines_atomic(confusion_out, render_confusion_csv(rep.confusion, normalize));
  return exit_ok;
}

inline int run_baseline(const std::string& kind, const std::string& train_path, const std::string& test_path,
                        std::optional<std::size_t> num_classes, std::optional<std::uint64_t> seed_flag,
                        MacroAverage macro, std::ostream& out) {
  detail::require_file(test_path, "test file");
  if (!train_path.empty()) detail::require_file(train_path, "training file");
  const auto test = load_dsl_file(test_path, true);
  if (test.empty()) throw DataError("test file '" + test_path + "' has no records");
  std::vector<LabeledExample> train;
  if (!train_path.empty()) train = load_dsl_file(train_path, true);

  std::vector<LabeledExample> all = train;
  all.insert(all.end(), test.begin(), test.end());
  const auto labels = LabelSet::from_examples(all);
  std::vector<std::size_t> gold;
  for (const auto& ex : test) gold.push_back(labels.index_of(ex.label));

  EvalReport rep;
  if (kind == "majority") {
    if (train.empty()) throw UsageError("majority baseline needs --train");
    std::vector<std::size_t> train_labels;
    for (const auto& ex : train) train_labels.push_back(labels.index_of(ex.label));
    rep = majority_baseline(train_labels, gold, labels.names(), macro);
  } else if (kind == "random") {
    const auto seed = seed_flag ? *seed_flag : detail::env_or_default_seed();
    out << "seed\t" << seed << '\n';
    auto names = labels.names();
    const auto k = num_classes.value_or(names.size());
    if (k < names.size()) throw UsageError("--num-classes is smaller than the number of labels in the data");
    for (std::size_t i = names.size(); i < k; ++i) names.push_back("class_" + std::to_string(i));
    rep = random_baseline(k, gold, seed, names, macro);
  } else {
    throw UsageError("--kind must be majority or random");
  }
  out << render_report(rep);
  return exit_ok;
}

inline int run_gradcheck(std::uint64_t base_seed, std::size_t seeds, double epsilon, std::ostream& out) {
  double worst = 0.0;
  out << std::scientific << std::setprecision(3);
  for (std::size_t fc : {std::size_t{7}, std::size_t{0}}) {
    const auto cfg = tiny_check_config(fc);
    for (std::size_t s = 0; s < seeds; ++s) {
      const auto r = gradient_check<wide_t>(cfg, base_seed + s, static_cast<wide_t>(epsilon));
      out << "fc_dim=" << fc << "\tseed=" << base_seed + s << "\tparams=" << r.parameters_checked
          << "\tmax_rel_error=" << r.max_relative_error << '\n';
      worst = std::max(worst, r.max_relative_error);
    }
  }
  out << "max_relative_error\t" << worst << '\n';
  return worst < 1e-6 ? exit_ok : exit_data;
}

/// Full program entry point.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Character-level CNN language and dialect identification"};
  app.require_subcommand(1);

  TrainingFlags train_flags, fixed_flags, ens_flags;
  std::optional<std::string> dev_file;
  double dev_split = 0.1;
  auto* train_cmd = app.add_subcommand("train", "Train with dev-loss early stopping");
  add_training_flags(train_cmd, train_flags);
  auto* dev_opt = train_cmd->add_option("--dev", dev_file, "Separate dev file");
  train_cmd->add_option("--dev-split", dev_split, "Fraction of --data held out as dev")->excludes(dev_opt);

  std::size_t epochs = 0;
  auto* fixed_cmd = app.add_subcommand("train-fixed", "Train on all data for a fixed number of epochs");
  add_training_flags(fixed_cmd, fixed_flags);
  fixed_cmd->add_option("--epochs", epochs, "Number of epochs")->required();

  std::size_t k = 10, jobs = 1;
  auto* ens_cmd = app.add_subcommand("ensemble", "Train k members on different 90/10 splits");
  add_training_flags(ens_cmd, ens_flags);
  ens_cmd->add_option("--k", k, "Number of members");
  ens_cmd->add_option("--jobs", jobs, "Members trained in parallel");

  std::string model_path, input, pred_out;
  bool probs = false, labeled = false;
  auto* pred_cmd = app.add_subcommand("predict", "Predict one label per input line");
  pred_cmd->add_option("--model", model_path, "Model file or ensemble directory")->required();
  pred_cmd->add_option("--input", input, "Input file, one text per line")->required();
  pred_cmd->add_option("--out", pred_out, "Output file, one label per line")->required();
  pred_cmd->add_flag("--probs", probs, "Append tab-separated class probabilities");
  pred_cmd->add_flag("--labeled", labeled, "Input lines are text TAB label; the label is ignored");

  std::string eval_model, eval_test, confusion_out, macro_mode = "exclude";
  bool normalize = false;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a model on a labeled test file");
  eval_cmd->add_option("--model", eval_model, "Model file or ensemble directory")->required();
  eval_cmd->add_option("--test", eval_test, "Labeled test file")->required();
  eval_cmd->add_option("--confusion-out", confusion_out, "Write the confusion matrix as CSV");
  eval_cmd->add_flag("--normalize", normalize, "Row-normalize the confusion matrix");
  eval_cmd->add_option("--macro", macro_mode, "Macro-F1 over gold-present classes (exclude) or all (include)")
      ->check(CLI::IsMember({"exclude", "include"}));

  std::string kind, base_train, base_test, base_macro = "exclude";
  std::optional<std::size_t> num_classes;
  std::optional<std::uint64_t> base_seed;
  auto* base_cmd = app.add_subcommand("baseline", "Majority or random baseline");
  base_cmd->add_option("--kind", kind, "majority or random")->required()->check(CLI::IsMember({"majority", "random"}));
  base_cmd->add_option("--train", base_train, "Training file (majority)");
  base_cmd->add_option("--test", base_test, "Labeled test file")->required();
  base_cmd->add_option("--num-classes", num_classes, "Number of classes for the random baseline");
  base_cmd->add_option("--seed", base_seed, "Random seed");
  base_cmd->add_option("--macro", base_macro, "exclude or include")->check(CLI::IsMember({"exclude", "include"}));

  std::uint64_t gc_seed = 1;
  std::size_t gc_seeds = 3;
  double gc_eps = 1e-5;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the hand-written gradients");
  gc_cmd->add_option("--seed", gc_seed, "First seed");
  gc_cmd->add_option("--seeds", gc_seeds, "Number of seeds per configuration");
  gc_cmd->add_option("--epsilon", gc_eps, "Central-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return exit_usage;
  }

  auto macro_of = [](const std::string& m) {
    return m == "include" ? MacroAverage::include_absent : MacroAverage::exclude_absent;
  };
  try {
    if (*train_cmd) return run_train(train_flags, dev_file, dev_split, out);
    if (*fixed_cmd) return run_train_fixed(fixed_flags, epochs, out);
    if (*ens_cmd) return run_ensemble(ens_flags, k, jobs, out);
    if (*pred_cmd) return run_predict(model_path, input, pred_out, probs, labeled, out);
    if (*eval_cmd) return run_evaluate(eval_model, eval_test, confusion_out, normalize, macro_of(macro_mode), out);
    if (*base_cmd) return run_baseline(kind, base_train, base_test, num_classes, base_seed, macro_of(base_macro), out);
    if (*gc_cmd) return run_gradcheck(gc_seed, gc_seeds, gc_eps, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return exit_usage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_data;
  }
  return exit_usage;
}

} // namespace charcnn::cli
