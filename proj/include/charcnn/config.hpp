#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "model.hpp"
#include "persist.hpp"
#include "train.hpp"

namespace charcnn {

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Best Arabic-dialect configuration: L=400, d=50, widths 1..7 with
/// {50,50,100,100,100,100,100} filters, fc=250, dropout 0.2 / 0.5,
/// batch 16, patience 10.
inline ExperimentConfig preset_dialect() {
  ExperimentConfig c;
  c.model.max_len = 400;
  c.model.embed_dim = 50;
  c.model.filters = {{1, 50}, {2, 50}, {3, 100}, {4, 100}, {5, 100}, {6, 100}, {7, 100}};
  c.model.fc_dim = 250;
  c.model.dropout_embed = 0.2;
  c.model.dropout_fc = 0.5;
  c.train.batch_size = 16;
  c.train.patience = 10;
  return c;
}

/// Similar-languages run 1: dialect settings with mini-batches of 64.
inline ExperimentConfig preset_languages_run1() {
  auto c = preset_dialect();
  c.train.batch_size = 64;
  return c;
}

/// Similar-languages run 2: wider filter banks.
inline ExperimentConfig preset_languages_run2() {
  auto c = preset_languages_run1();
  c.model.filters = {{1, 50}, {2, 100}, {3, 150}, {4, 200}, {5, 200}, {6, 200}, {7, 200}};
  return c;
}

/// Similar-languages run 3: run 2 with 500 hidden units and dropout 0.7.
inline ExperimentConfig preset_languages_run3() {
  auto c = preset_languages_run2();
  c.model.fc_dim = 500;
  c.model.dropout_fc = 0.7;
  return c;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"dialect", "languages-run1", "languages-run2", "languages-run3"};
  return names;
}

inline ExperimentConfig preset(const std::string& name) {
  if (name == "dialect") return preset_dialect();
  if (name == "languages-run1") return preset_languages_run1();
  if (name == "languages-run2") return preset_languages_run2();
  if (name == "languages-run3") return preset_languages_run3();
  throw ConfigError("unknown preset '" + name + "'");
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epsilon_hat", t.epsilon_hat},
          {"patience", t.patience},
          {"max_epochs", t.max_epochs},
          {"seed", t.seed},
          {"mode", t.mode == StopMode::early_stop ? "early_stop" : "fixed_epochs"},
          {"epochs", t.epochs}};
}

inline void merge_json(TrainConfig& t, const nlohmann::json& j) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("batch_size", t.batch_size);
  get("learning_rate", t.learning_rate);
  get("beta1", t.beta1);
  get("beta2", t.beta2);
  get("epsilon_hat", t.epsilon_hat);
  get("patience", t.patience);
  get("max_epochs", t.max_epochs);
  get("seed", t.seed);
  get("epochs", t.epochs);
  if (j.contains("mode")) {
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "early_stop")
      t.mode = StopMode::early_stop;
    else if (mode == "fixed_epochs")
      t.mode = StopMode::fixed_epochs;
    else
      throw ConfigError("unknown training mode '" + mode + "'");
  }
}

/// Parses a flat JSON object whose keys are ModelConfig / TrainConfig field
/// names, optionally starting from a named "preset". Unknown keys are
/// rejected. Returns whether the file set "seed".
inline ExperimentConfig parse_experiment_config(const std::string& text, bool* has_seed = nullptr) {
  static const std::set<std::string> known = {
      "preset",      "alphabet_size", "num_classes", "max_len",   "embed_dim",  "filter_spec",
      "fc_dim",      "dropout_embed", "dropout_fc",  "batch_size", "learning_rate", "beta1",
      "beta2",       "epsilon_hat",   "patience",    "max_epochs", "seed",       "mode",
      "epochs"};
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw ConfigError("unknown config field '" + key + "'");
  try {
    auto cfg = j.contains("preset") ? preset(j.at("preset").get<std::string>()) : preset_dialect();
    merge_json(cfg.model, j);
    merge_json(cfg.train, j);
    if (has_seed) *has_seed = j.contains("seed");
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

} // namespace charcnn
