#include "maedet/patches.hpp"

#include <algorithm>
#include <cmath>

#include "maedet/errors.hpp"
#include "maedet/rng.hpp"

namespace maedet {

PatchGrid patchify(const Tensor& image, int p) {
  if (image.rank() != 3)
    throw ShapeError("patchify: expected [C,H,W] image, got " + shape_str(image.shape()));
  if (p <= 0) throw ConfigError("patchify: patch size must be positive");
  const int64_t C = image.size(0), H = image.size(1), W = image.size(2);
  if (H % p != 0 || W % p != 0)
    throw ShapeError("patchify: image " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by patch size " + std::to_string(p));
  const int64_t gh = H / p, gw = W / p, N = gh * gw;
  const int64_t plen = static_cast<int64_t>(p) * p * C;
  std::vector<int64_t> idx(static_cast<size_t>(N * plen));
  int64_t k = 0;
  for (int64_t py = 0; py < gh; ++py)
    for (int64_t px = 0; px < gw; ++px)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < p; ++y)
          for (int64_t x = 0; x < p; ++x)
            idx[static_cast<size_t>(k++)] = (c * H + py * p + y) * W + px * p + x;
  PatchGrid g;
  g.patches = gather_elems(image, idx, {N, plen});
  g.grid_h = gh;
  g.grid_w = gw;
  g.p = p;
  g.channels = C;
  return g;
}

Tensor unpatchify(const Tensor& patches, int64_t grid_h, int64_t grid_w, int p, int64_t channels) {
  const int64_t N = grid_h * grid_w;
  const int64_t plen = static_cast<int64_t>(p) * p * channels;
  if (patches.rank() != 2 || patches.size(0) != N || patches.size(1) != plen)
    throw ShapeError("unpatchify: expected [" + std::to_string(N) + "," + std::to_string(plen) +
                     "], got " + shape_str(patches.shape()));
  const int64_t H = grid_h * p, W = grid_w * p;
  std::vector<int64_t> idx(static_cast<size_t>(channels * H * W));
  for (int64_t py = 0; py < grid_h; ++py)
    for (int64_t px = 0; px < grid_w; ++px)
      for (int64_t c = 0; c < channels; ++c)
        for (int64_t y = 0; y < p; ++y)
          for (int64_t x = 0; x < p; ++x) {
            const int64_t img_i = (c * H + py * p + y) * W + px * p + x;
            const int64_t pat_i = (py * grid_w + px) * plen + (c * p + y) * p + x;
            idx[static_cast<size_t>(img_i)] = pat_i;
          }
  return gather_elems(patches, idx, {channels, H, W});
}

MaskPlan sample_mask(int64_t n, double ratio, uint64_t seed) {
  if (n < 1) throw ConfigError("sample_mask: need at least one patch");
  if (ratio < 0.0 || ratio > 1.0)
    throw ConfigError("sample_mask: ratio " + std::to_string(ratio) + " outside [0,1]");
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  const int64_t m = std::llround(static_cast<double>(n) * ratio);
  MaskPlan plan;
  plan.masked_idx.assign(perm.begin(), perm.begin() + m);
  plan.visible_idx.assign(perm.begin() + m, perm.end());
  std::sort(plan.masked_idx.begin(), plan.masked_idx.end());
  std::sort(plan.visible_idx.begin(), plan.visible_idx.end());
  plan.ratio = ratio;
  plan.seed = seed;
  return plan;
}

Tensor build_pos_table(int64_t grid_h, int64_t grid_w, int64_t dim) {
  if (grid_h < 1 || grid_w < 1) throw ConfigError("build_pos_table: empty grid");
  if (dim % 4 != 0)
    throw ConfigError("build_pos_table: dim " + std::to_string(dim) + " not divisible by 4");
  const int64_t N = grid_h * grid_w;
  const int64_t half = dim / 2;
  std::vector<double> table(static_cast<size_t>((N + 1) * dim), 0.0);
  auto fill_half = [&](double* dst, int64_t pos) {
    for (int64_t i = 0; i < half / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
      dst[2 * i] = std::sin(static_cast<double>(pos) * freq);
      dst[2 * i + 1] = std::cos(static_cast<double>(pos) * freq);
    }
  };
  for (int64_t py = 0; py < grid_h; ++py)
    for (int64_t px = 0; px < grid_w; ++px) {
      double* row = table.data() + (1 + py * grid_w + px) * dim;
      fill_half(row, py);
      fill_half(row + half, px);
    }
  return Tensor::from_vector({N + 1, dim}, table);
}

Tensor gather_visible(const PatchGrid& grid, const MaskPlan& plan, const Tensor& embed_w,
                      const Tensor& cls_token, const Tensor& pos_table) {
  if (plan.total() != grid.count())
    throw ShapeError("gather_visible: plan covers " + std::to_string(plan.total()) +
                     " patches, grid has " + std::to_string(grid.count()));
  const int64_t D = embed_w.size(1);
  if (embed_w.rank() != 2 || embed_w.size(0) != grid.patches.size(1))
    throw ShapeError("gather_visible: embed weights " + shape_str(embed_w.shape()) +
                     " vs patch length " + std::to_string(grid.patches.size(1)));
  if (cls_token.rank() != 2 || cls_token.size(0) != 1 || cls_token.size(1) != D)
    throw ShapeError("gather_visible: cls token must be [1," + std::to_string(D) + "]");
  if (pos_table.rank() != 2 || pos_table.size(0) != grid.count() + 1 || pos_table.size(1) != D)
    throw ShapeError("gather_visible: pos table " + shape_str(pos_table.shape()) +
                     " does not match grid");
  Tensor vis = gather_rows(grid.patches, plan.visible_idx);
  Tensor tokens = concat({cls_token, matmul(vis, embed_w)}, 0);
  std::vector<int64_t> pos_idx(plan.visible_idx.size() + 1, 0);
  for (size_t j = 0; j < plan.visible_idx.size(); ++j) pos_idx[j + 1] = 1 + plan.visible_idx[j];
  return add(tokens, gather_rows(pos_table, pos_idx));
}

Tensor scatter_full(const Tensor& encoded, const Tensor& mask_token, const MaskPlan& plan,
                    const Tensor& pos_table) {
  const int64_t V = static_cast<int64_t>(plan.visible_idx.size());
  const int64_t N = plan.total();
  if (encoded.rank() != 2 || encoded.size(0) != V + 1)
    throw ShapeError("scatter_full: encoded " + shape_str(encoded.shape()) + " vs " +
                     std::to_string(V) + " visible tokens + cls");
  const int64_t D = encoded.size(1);
  if (mask_token.rank() != 2 || mask_token.size(0) != 1 || mask_token.size(1) != D)
    throw ShapeError("scatter_full: mask token must be [1," + std::to_string(D) + "]");
  if (pos_table.rank() != 2 || pos_table.size(0) != N + 1 || pos_table.size(1) != D)
    throw ShapeError("scatter_full: pos table " + shape_str(pos_table.shape()) +
                     " does not match plan");
  std::vector<int64_t> dst(static_cast<size_t>(V) + 1, 0);
  for (int64_t j = 0; j < V; ++j) dst[static_cast<size_t>(j) + 1] = 1 + plan.visible_idx[static_cast<size_t>(j)];
  Tensor placed = scatter_rows(encoded, dst, N + 1, mask_token);
  return add(placed, pos_table);
}

Tensor tokens_to_map(const Tensor& tokens, int64_t grid_h, int64_t grid_w) {
  const int64_t N = grid_h * grid_w;
  if (tokens.rank() != 2 || tokens.size(0) != N + 1)
    throw ShapeError("tokens_to_map: expected " + std::to_string(N + 1) + " rows, got " +
                     shape_str(tokens.shape()));
  Tensor body = slice2d(tokens, 0, 1, N + 1);
  return reshape(transpose2d(body), {tokens.size(1), grid_h, grid_w});
}

}  // namespace maedet
