#pragma once

#include <cstdint>

#include "maedet/patches.hpp"
#include "maedet/vit.hpp"

namespace maedet {

struct MAEConfig {
  ViTConfig encoder{12, 768, 12, 4.0, 16, 1};
  ViTConfig decoder{3, 512, 8, 4.0, 16, 1};
  int64_t image_size = 256;
  int patch = 16;
  int64_t in_channels = 1;
  double mask_ratio = 0.75;

  int64_t grid_side() const { return image_size / patch; }
  int64_t patch_count() const { return grid_side() * grid_side(); }
  int64_t patch_len() const { return static_cast<int64_t>(patch) * patch * in_channels; }
};

/// Full autoencoder. Position tables are fixed buffers, not parameters.
struct MAEModel {
  MAEConfig cfg;
  Tensor cls_token;  // [1, D_enc]
  Tensor embed_w;    // [patch_len, D_enc]
  ViTTrunk encoder;
  Linear enc_to_dec;  // D_enc -> D_dec
  Tensor mask_token;  // [1, D_dec]
  ViTTrunk decoder;
  Linear recon_head;  // D_dec -> patch_len
  Tensor enc_pos;     // [(N+1), D_enc]
  Tensor dec_pos;     // [(N+1), D_dec]

  static MAEModel init(const MAEConfig& cfg, uint64_t seed);

  /// Named trainable tensors in a fixed order (checkpoint/optimizer order).
  ParamList params() const;

  struct Forward {
    Tensor pred;     // [m, patch_len], masked rows in ascending patch order
    Tensor patches;  // [N, patch_len], the patchified input (loss targets)
    MaskPlan plan;
  };
  /// patchify -> sample_mask(seed) -> gather_visible -> encoder ->
  /// project -> scatter_full -> decoder -> head on masked rows.
  Forward forward(const Tensor& image, uint64_t mask_seed) const;

  /// Encoder pass with nothing masked; returns [(N+1), D_enc] tokens.
  /// This is the detection backbone's view of the encoder.
  Tensor encode_all(const Tensor& image) const;

  struct Reconstruction {
    Tensor masked;    // input with masked patches zeroed
    Tensor recon;     // prediction; visible patches pasted from the input unless paste_visible=false
    Tensor original;
  };
  Reconstruction reconstruct(const Tensor& image, uint64_t mask_seed,
                             bool paste_visible = true) const;
};

/// Mean over all m * patch_len elements of (pred - masked target patch)^2.
/// Throws when the plan has no masked patches.
Tensor mse_masked_loss(const Tensor& pred, const Tensor& target_patches, const MaskPlan& plan);

}  // namespace maedet
