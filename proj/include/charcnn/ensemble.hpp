#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"
#include "model.hpp"
#include "train.hpp"

namespace charcnn {

inline constexpr double ensemble_dev_fraction = 0.1;

struct EnsembleMember {
  ModelParams<float> params;
  ModelConfig config;
  std::uint64_t seed = 0;
  TrainHistory history;
};

struct VoteResult {
  std::size_t label = 0;
  std::vector<std::size_t> tally;    // first-place votes per class
  std::vector<double> probability_sum; // summed member probabilities per class
};

/// Plurality vote over member predictions. Ties on the vote count go to the
/// larger summed probability, then to the lower class index.
inline VoteResult vote(std::span<const Prediction> predictions) {
  if (predictions.empty()) throw DataError("cannot vote over an empty prediction list");
  const auto k = predictions.front().probabilities.size();
  VoteResult r;
  r.tally.assign(k, 0);
  r.probability_sum.assign(k, 0.0);
  std::vector<std::vector<double>> per_class(k);
  for (const auto& p : predictions) {
    if (p.probabilities.size() != k || p.label >= k)
      throw DataError("ensemble predictions disagree on the number of classes");
    ++r.tally[p.label];
    for (std::size_t c = 0; c < k; ++c) per_class[c].push_back(p.probabilities[c]);
  }
  // Summing in sorted order makes the sums independent of member order.
  for (std::size_t c = 0; c < k; ++c) {
    std::sort(per_class[c].begin(), per_class[c].end());
    for (double v : per_class[c]) r.probability_sum[c] += v;
  }
  r.label = 0;
  for (std::size_t c = 1; c < k; ++c) {
    if (r.tally[c] > r.tally[r.label] ||
        (r.tally[c] == r.tally[r.label] && r.probability_sum[c] > r.probability_sum[r.label]))
      r.label = c;
  }
  return r;
}

inline VoteResult vote(const std::vector<Prediction>& predictions) {
  return vote(std::span<const Prediction>(predictions));
}

struct Ensemble {
  std::vector<EnsembleMember> members;
  Alphabet alphabet;
  LabelSet labels;

  std::size_t max_len() const { return members.at(0).config.max_len; }

  std::vector<Prediction> member_predictions(const EncodedText& encoded) const {
    std::vector<Prediction> out;
    out.reserve(members.size());
    for (const auto& m : members) out.push_back(predict(m.params, m.config, encoded));
    return out;
  }

  VoteResult predict_one(const EncodedText& encoded) const { return vote(member_predictions(encoded)); }

  void validate() const {
    if (members.empty()) throw ConfigError("an ensemble needs at least one member");
    for (const auto& m : members) {
      if (m.config.max_len != members[0].config.max_len)
        throw ConfigError("ensemble members disagree on max_len");
      if (m.config.alphabet_size != alphabet.size() || m.config.num_classes != labels.size())
        throw ConfigError("ensemble member does not match the shared alphabet or label set");
    }
  }
};

inline std::uint64_t member_seed(std::uint64_t base_seed, std::size_t index) { return base_seed + index; }

/// Train/dev split used for member `index`.
inline std::pair<std::vector<EncodedExample>, std::vector<EncodedExample>>
member_split(std::span<const EncodedExample> corpus, std::uint64_t base_seed, std::size_t index) {
  return split_train_dev(corpus, ensemble_dev_fraction, member_seed(base_seed, index));
}

/// Trains one ensemble member: its own 90/10 split and init/shuffle seed,
/// both base_seed + index.
inline EnsembleMember train_member(std::span<const EncodedExample> corpus, const ModelConfig& cfg,
                                   TrainConfig tc, std::uint64_t base_seed, std::size_t index) {
  const auto seed = member_seed(base_seed, index);
  auto [train, dev] = member_split(corpus, base_seed, index);
  tc.seed = seed;
  tc.mode = StopMode::early_stop;
  auto result = train_model<float>(train, dev, cfg, tc);
  return {std::move(result.params), cfg, seed, std::move(result.history)};
}

/// Trains k independent members, `jobs` at a time. Members only depend on
/// their index, so the result does not depend on jobs or scheduling.
inline Ensemble train_ensemble(std::span<const EncodedExample> corpus, std::size_t k, const ModelConfig& cfg,
                               const TrainConfig& tc, std::uint64_t base_seed, const Alphabet& alphabet,
                               const LabelSet& labels, std::size_t jobs = 1) {
  if (k < 1) throw ConfigError("an ensemble needs k >= 1");
  cfg.validate();
  tc.validate();
  std::vector<EnsembleMember> members(k);
  std::vector<std::exception_ptr> errors(k);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < k; i = next++) {
      try {
        members[i] = train_member(corpus, cfg, tc, base_seed, i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, k);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw DataError("ensemble member " + std::to_string(i) + ": " + e.what());
    }
  }
  Ensemble ens{std::move(members), alphabet, labels};
  ens.validate();
  return ens;
}

} // namespace charcnn
