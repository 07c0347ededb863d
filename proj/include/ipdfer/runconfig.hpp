#pragma once

#include <map>
#include <string>
#include <vector>

#include "ipdfer/factorgen.hpp"
#include "ipdfer/nets.hpp"
#include "ipdfer/trainer.hpp"

namespace ipdfer::config {

/// key = value pairs from a config file plus --set overrides. Keys are
/// validated against the documented registry when resolved.
class KeyValues {
 public:
  static KeyValues from_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  void set_line(const std::string& key_eq_value);  // "key=value" form of --set
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

struct KeySpec {
  const char* key;
  const char* default_value;
  const char* help;
};

/// Fully resolved run configuration. Every key has a documented default;
/// unknown keys are rejected before any side effect.
struct RunConfig {
  data::GeneratorConfig data;
  ArchConfig model;
  train::PretrainConfig pretrain;
  train::TrainConfig train;

  std::string dataset_path;
  std::string id_checkpoint;
  std::string checkpoint;
  std::vector<std::string> checkpoints;  // optional multi-checkpoint eval
  std::string eval_split = "test";       // train | test | all
  int synth_count = 8;

  /// Registry key list in echo order, with defaults and one-line help.
  static const std::vector<KeySpec>& registry();

  static RunConfig resolve(const KeyValues& kv);

  /// The defaults-merged key=value listing behind this config.
  std::string echo() const;

 private:
  std::vector<std::pair<std::string, std::string>> resolved_;
};

}  // namespace ipdfer::config
