// SPDX-License-Identifier: Apache-2.0
#include "sanst/run_config.hpp"

#include <filesystem>

namespace sanst {

namespace {

void require_parent(const std::string& path, const char* what) {
  if (path.empty()) return;
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    throw ConfigError(std::string(what) + " directory does not exist: " + parent.string());
  }
}

}  // namespace

RunConfig RunConfig::resolve(const KeyValues& file, const KeyValues& overrides) {
  KeyValues kv = file;
  kv.merge(overrides);
  RunConfig rc;
  rc.model = model::ModelConfig::from_kv(kv);
  rc.train = train::TrainConfig::from_kv(kv);
  rc.bundle = kv.get_string("data.bundle", "");
  rc.model_path = kv.get_string("output.model", "");
  rc.log_path = kv.get_string("output.log", "");
  kv.reject_unused();
  return rc;
}

void RunConfig::validate_paths() const {
  if (bundle.empty()) throw ConfigError("no dataset bundle given (data.bundle)");
  if (!std::filesystem::is_regular_file(bundle)) throw ConfigError("dataset bundle not found: " + bundle);
  require_parent(train.checkpoint_path, "checkpoint");
  require_parent(model_path, "model");
  require_parent(log_path, "log");
}

KeyValues RunConfig::to_kv() const {
  auto kv = model.to_kv();
  kv.merge(train.to_kv());
  if (!bundle.empty()) kv.set("data.bundle", bundle);
  if (!model_path.empty()) kv.set("output.model", model_path);
  if (!log_path.empty()) kv.set("output.log", log_path);
  return kv;
}

}  // namespace sanst
