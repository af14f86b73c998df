#pragma once

#include <string>
#include <vector>

#include "maedet/coco_eval.hpp"
#include "maedet/dataset.hpp"
#include "maedet/detector.hpp"
#include "maedet/mae.hpp"
#include "maedet/train.hpp"

namespace maedet {

/// Everything one run needs, as plain structs. The JSON form mirrors this
/// with sections model/pretrain/finetune/data/eval. The detector shares the
/// encoder, patch size, image size and channel count with the MAE config;
/// the JSON decoder enforces that.
struct RunConfig {
  MAEConfig mae;
  DetectorConfig detector;
  PretrainOptions pretrain;
  FinetuneOptions finetune;
  SceneSpec data;
  int64_t train_images = 50;
  int64_t val_images = 20;
  EvalConfig eval;
};

/// "paper-base" carries the reference hyperparameters; "desk" is the small
/// CPU-scale setup the tests run. Unknown names throw ConfigError.
RunConfig preset(const std::string& name);

/// Full JSON tree of the config (the resolved-config form).
std::string run_config_json(const RunConfig& cfg);

/// Builds a config from a preset, an optional JSON file layered on top, and
/// `path.to.field=value` override strings applied last. Unknown keys and
/// malformed values throw ConfigError naming the key.
RunConfig load_run_config(const std::string& preset_name, const std::string& config_file,
                          const std::vector<std::string>& overrides);

/// Model-config JSON snippets stored inside checkpoints, so a checkpoint
/// can be evaluated without the original config file.
std::string mae_config_json(const MAEConfig& cfg);
MAEConfig parse_mae_config(const std::string& text);
std::string detector_config_json(const DetectorConfig& cfg);
DetectorConfig parse_detector_config(const std::string& text);

}  // namespace maedet
