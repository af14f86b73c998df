#pragma once

#include <cstdint>
#include <vector>

#include "maedet/params.hpp"

namespace maedet {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled-weight-decay Adam. The learning rate is supplied per step so a
/// schedule can drive it; decay is applied before the moment update and only
/// to parameters whose `decay` flag is set. A parameter without an
/// accumulated gradient is treated as having gradient zero, so the
/// decay-only update `p <- p * (1 - lr * wd)` still fires.
class AdamW {
 public:
  AdamW(ParamList* params, AdamWConfig cfg);

  /// One update over all parameters using their current gradients.
  void step(double lr);

  /// Clears every parameter gradient (backward accumulates across calls).
  void zero_grad();

  int64_t step_count() const { return t_; }

 private:
  ParamList* params_;
  AdamWConfig cfg_;
  int64_t t_ = 0;
  // Moments are kept in double regardless of parameter dtype.
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

enum class ScheduleKind { WarmupCosine, WarmupMultistep };

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::WarmupCosine;
  int64_t warmup = 0;  // steps; lr ramps linearly from 0 to base
  int64_t total = 1;   // total steps (cosine horizon)
  std::vector<int64_t> milestones;  // epochs at which multistep decays
  double factor = 0.1;
  int64_t steps_per_epoch = 1;  // multistep: maps a step to its epoch
};

/// Throws ConfigError on inconsistent fields (warmup >= total for cosine,
/// non-increasing milestones, factor <= 0, steps_per_epoch < 1).
void validate_schedule(const ScheduleSpec& s);

/// Learning rate at `step` (0-based). Continuous at the warmup boundary:
/// both the warmup ramp and the cosine give base_lr at step == warmup.
double lr_at(const ScheduleSpec& s, int64_t step, double base_lr);

/// Linear scaling rule: lr = base * batch / ref_batch when enabled.
double scaled_base_lr(double base_lr, int64_t batch_size, bool auto_scale,
                      int64_t ref_batch = 512);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm. max_norm <= 0 is a no-op.
double clip_grad_norm(ParamList& params, double max_norm);

}  // namespace maedet
