#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maedet/checkpoint.hpp"
#include "maedet/dataset.hpp"
#include "maedet/detector.hpp"
#include "maedet/mae.hpp"

namespace maedet {

struct PretrainOptions {
  int64_t epochs = 400;
  int64_t batch_size = 512;
  int64_t max_steps = 0;  // 0 = run every epoch to completion
  double base_lr = 3e-4;  // the already-scaled value; see auto_lr_scale
  bool auto_lr_scale = false;  // multiplies base_lr by batch_size/512
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  int64_t warmup_epochs = 40;
  double flip_prob = 0.5;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  int64_t checkpoint_every = 1;  // epochs between checkpoints
  uint64_t seed = 0;
  std::string out_dir;  // empty: no checkpoints or log file written
};

struct FinetuneOptions {
  int64_t epochs = 12;
  int64_t batch_size = 1;
  int64_t max_steps = 0;
  double base_lr = 1e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int64_t warmup_steps = 500;
  std::vector<int64_t> milestones = {8, 11};  // epochs; lr falls by 10x at each
  double flip_prob = 0.5;
  double grad_clip = 0.0;
  int64_t checkpoint_every = 1;
  uint64_t seed = 0;
  bool from_scratch = false;  // skip encoder loading (ablation baseline)
  std::string out_dir;
};

struct TrainResult {
  std::vector<std::string> log_lines;  // `step epoch lr loss[ name=value...]`
  double first_loss = 0.0;
  double final_loss = 0.0;
  int64_t steps = 0;
  std::string checkpoint_stem;    // final checkpoint, when out_dir is set
  LoadReport encoder_load;        // finetune only
};

/// Horizontal flip of a [C, H, W] image (pure data copy, no graph).
Tensor hflip_image(const Tensor& image);

/// Box flip matching hflip_image; applying it twice restores the input.
Box hflip_box(const Box& b, double width);

/// Shuffled epochs over the dataset with seeded per-image flips and mask
/// draws, AdamW under a warmup-cosine schedule, one log line per step, a
/// checkpoint per epoch (kind "mae") and at the end.
TrainResult pretrain(const MAEConfig& model_cfg, const PretrainOptions& opts,
                     const Dataset& data);

/// Loads the exported encoder into the detector backbone (unless
/// from_scratch), trains with detection losses under warmup + multistep.
/// An encoder/backbone name or shape mismatch throws before any step, with
/// the unmatched tensors listed. `encoder_stem` may name a full
/// autoencoder checkpoint; the encoder scope is extracted.
TrainResult finetune(const DetectorConfig& model_cfg, const FinetuneOptions& opts,
                     const std::string& encoder_stem, const Dataset& data);

}  // namespace maedet
