// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "sanst/config.hpp"
#include "sanst/model.hpp"
#include "sanst/trainer.hpp"

namespace sanst {

/// Everything a training run needs: model.*, train.*, data.bundle, output.model and output.log.
struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  std::string bundle;
  std::string model_path;  // best model checkpoint
  std::string log_path;    // empty: log to stdout only

  /// Defaults, then `file`, then `overrides`. Unknown keys are rejected.
  static RunConfig resolve(const KeyValues& file, const KeyValues& overrides);

  /// Throws ConfigError unless the bundle exists and output directories do.
  void validate_paths() const;

  KeyValues to_kv() const;
};

}  // namespace sanst
