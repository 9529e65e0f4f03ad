// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sanst/autodiff.hpp"
#include "sanst/evaluation.hpp"
#include "sanst/ingest.hpp"
#include "sanst/model.hpp"

namespace sanst::train {

using data::PoiId;

struct TrainConfig {
  double lr = 0.005;
  double l2 = 0.001;
  std::size_t batch_size = 128;
  std::size_t epochs = 200;
  std::uint64_t seed = 42;
  std::size_t eval_every = 20;  // 0 evaluates only after the last epoch
  std::size_t eval_k = 10;
  model::CandidatePolicy policy = model::CandidatePolicy::kExcludeHistory;
  std::string checkpoint_path;  // empty disables periodic checkpoints

  void validate() const;
  KeyValues to_kv() const;
  static TrainConfig from_kv(const KeyValues& kv, TrainConfig base);
  static TrainConfig from_kv(const KeyValues& kv) { return from_kv(kv, TrainConfig{}); }
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Membership set of a user's training POIs.
class History {
 public:
  History(const data::UserSequence& seq, std::size_t num_pois);
  bool contains(PoiId id) const { return seen_[static_cast<std::size_t>(id)]; }
  std::size_t distinct() const { return distinct_; }

 private:
  std::vector<bool> seen_;
  std::size_t distinct_ = 0;
};

/// Uniform draw over POIs the user never visited in training.
PoiId sample_negative(const History& history, std::size_t num_pois, std::mt19937_64& rng);

/// -sum_valid [log s(pos) + log(1 - s(neg))] + l2 * sum ||table||^2.
ad::Tensor bce_loss(ad::Tape& tape, const ad::Tensor& pos_scores, const ad::Tensor& neg_scores,
                    std::span<const double> mask, const std::vector<ad::Tensor>& tables, double l2);

struct FitResult {
  model::Model best;
  std::vector<std::string> log;
  std::optional<eval::EvalReport> best_report;
  std::size_t best_epoch = 0;
};

class Trainer {
 public:
  Trainer(model::ModelConfig mcfg, TrainConfig tcfg, const data::Catalog& catalog, const data::SplitDataset& split);

  /// Shuffles users, runs one Adam step per batch and returns the mean loss
  /// per valid position.
  double train_epoch();

  /// Runs the remaining epochs up to config().epochs, evaluating every
  /// eval_every epochs and keeping the best model by nDCG@K.
  FitResult fit();

  eval::EvalReport evaluate() const;

  void save_checkpoint(const std::string& path) const;
  /// Restores model, optimizer, generator and progress from `path`, which
  /// also becomes the checkpoint path unless `override_cfg` names one.
  static Trainer resume(const std::string& path, const data::Catalog& catalog, const data::SplitDataset& split,
                        std::optional<TrainConfig> override_cfg = std::nullopt);

  model::Model& model() { return model_; }
  const model::Model& model() const { return model_; }
  const TrainConfig& config() const { return tcfg_; }
  std::size_t epoch() const { return epoch_; }
  const std::vector<std::string>& log() const { return log_; }
  const std::vector<double>& epoch_losses() const { return losses_; }

 private:
  double train_batch(std::span<const std::size_t> users);

  TrainConfig tcfg_;
  const data::Catalog& catalog_;
  const data::SplitDataset& split_;
  std::mt19937_64 rng_;
  model::Model model_;
  ad::Adam adam_;
  std::vector<History> histories_;
  std::size_t epoch_ = 0;
  std::vector<std::string> log_;
  std::vector<double> losses_;
  std::optional<model::ModelParams> best_params_;
  double best_ndcg_ = -1.0;
  std::size_t best_epoch_ = 0;
  std::optional<eval::EvalReport> best_report_;
};

}  // namespace sanst::train
