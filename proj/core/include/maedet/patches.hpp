#pragma once

#include <cstdint>
#include <vector>

#include "maedet/tensor.hpp"

namespace maedet {

/// Non-overlapping patch decomposition of a [C,H,W] image.
struct PatchGrid {
  Tensor patches;  // [N, p*p*C], row-major patch order, channel-major flatten
  int64_t grid_h = 0;
  int64_t grid_w = 0;
  int p = 0;
  int64_t channels = 0;
  int64_t count() const { return grid_h * grid_w; }
};

/// Which patch indices are hidden from the encoder. Both lists are sorted.
struct MaskPlan {
  std::vector<int64_t> masked_idx;
  std::vector<int64_t> visible_idx;
  double ratio = 0.0;
  uint64_t seed = 0;
  int64_t total() const {
    return static_cast<int64_t>(masked_idx.size() + visible_idx.size());
  }
};

/// Splits an image into patches. Differentiable (pure index permutation).
PatchGrid patchify(const Tensor& image, int p);

/// Inverse of patchify; returns the [C,H,W] image. Differentiable.
Tensor unpatchify(const Tensor& patches, int64_t grid_h, int64_t grid_w, int p, int64_t channels);

/// Masked set = first round(N*ratio) entries of a seeded uniform permutation.
/// Pure function of (n, ratio, seed).
MaskPlan sample_mask(int64_t n, double ratio, uint64_t seed);

/// Fixed sinusoidal table, shape [(grid_h*grid_w + 1) x dim]. Row 0 (cls slot)
/// is zero. First dim/2 columns encode the patch row index, the rest the
/// column index, each half alternating sin/cos over geometric frequencies.
Tensor build_pos_table(int64_t grid_h, int64_t grid_w, int64_t dim);

/// Embeds the visible patches with embed_w [p*p*C x D], prepends the cls
/// token [1 x D] and adds the matching position rows (cls row included).
/// Output [(V+1) x D] with visible tokens in ascending patch order.
Tensor gather_visible(const PatchGrid& grid, const MaskPlan& plan, const Tensor& embed_w,
                      const Tensor& cls_token, const Tensor& pos_table);

/// Rebuilds the full-length sequence from encoded visible tokens
/// [(V+1) x D]: row 0 stays the cls slot, encoded row 1+j lands at row
/// 1+visible_idx[j], masked rows receive mask_token [1 x D], and pos_table
/// [(N+1) x D] is added to every row.
Tensor scatter_full(const Tensor& encoded, const Tensor& mask_token, const MaskPlan& plan,
                    const Tensor& pos_table);

/// Drops the cls row of a [(N+1) x D] token sequence and reshapes the rest
/// into a [D, grid_h, grid_w] feature map. Differentiable.
Tensor tokens_to_map(const Tensor& tokens, int64_t grid_h, int64_t grid_w);

}  // namespace maedet
