#include "maedet/mae.hpp"

#include "maedet/errors.hpp"
#include "maedet/rng.hpp"

namespace maedet {

MAEModel MAEModel::init(const MAEConfig& cfg, uint64_t seed) {
  if (cfg.patch <= 0 || cfg.image_size % cfg.patch != 0)
    throw ConfigError("mae: image size " + std::to_string(cfg.image_size) +
                      " not divisible by patch " + std::to_string(cfg.patch));
  if (cfg.mask_ratio < 0.0 || cfg.mask_ratio > 1.0)
    throw ConfigError("mae: mask ratio outside [0,1]");
  Rng rng(seed);
  MAEModel m;
  m.cfg = cfg;
  m.cls_token = Tensor::trunc_normal({1, cfg.encoder.dim}, rng, 0.02);
  m.embed_w = Tensor::trunc_normal({cfg.patch_len(), cfg.encoder.dim}, rng, 0.02);
  m.encoder = ViTTrunk::init(cfg.encoder, rng);
  m.enc_to_dec = Linear::init(cfg.encoder.dim, cfg.decoder.dim, rng);
  m.mask_token = Tensor::trunc_normal({1, cfg.decoder.dim}, rng, 0.02);
  m.decoder = ViTTrunk::init(cfg.decoder, rng);
  m.recon_head = Linear::init(cfg.decoder.dim, cfg.patch_len(), rng);
  m.enc_pos = build_pos_table(cfg.grid_side(), cfg.grid_side(), cfg.encoder.dim);
  m.dec_pos = build_pos_table(cfg.grid_side(), cfg.grid_side(), cfg.decoder.dim);
  return m;
}

ParamList MAEModel::params() const {
  ParamList out;
  out.push_back({"cls_token", cls_token, false});
  out.push_back({"embed.w", embed_w, true});
  encoder.collect("encoder", out);
  enc_to_dec.collect("enc_to_dec", out);
  out.push_back({"mask_token", mask_token, false});
  decoder.collect("decoder", out);
  recon_head.collect("recon_head", out);
  return out;
}

MAEModel::Forward MAEModel::forward(const Tensor& image, uint64_t mask_seed) const {
  PatchGrid grid = patchify(image, cfg.patch);
  MaskPlan plan = sample_mask(grid.count(), cfg.mask_ratio, mask_seed);
  Tensor tokens = gather_visible(grid, plan, embed_w, cls_token, enc_pos);
  Tensor encoded = encoder.forward(tokens);
  Tensor full = scatter_full(enc_to_dec(encoded), mask_token, plan, dec_pos);
  Tensor decoded = decoder.forward(full);
  std::vector<int64_t> rows(plan.masked_idx.size());
  for (size_t i = 0; i < plan.masked_idx.size(); ++i) rows[i] = 1 + plan.masked_idx[i];
  Forward f;
  f.pred = recon_head(gather_rows(decoded, rows));
  f.patches = grid.patches;
  f.plan = std::move(plan);
  return f;
}

Tensor MAEModel::encode_all(const Tensor& image) const {
  PatchGrid grid = patchify(image, cfg.patch);
  MaskPlan plan = sample_mask(grid.count(), 0.0, 0);
  Tensor tokens = gather_visible(grid, plan, embed_w, cls_token, enc_pos);
  return encoder.forward(tokens);
}

Tensor mse_masked_loss(const Tensor& pred, const Tensor& target_patches, const MaskPlan& plan) {
  if (plan.masked_idx.empty())
    throw ConfigError("masked loss undefined: plan has zero masked patches");
  if (target_patches.size(0) != plan.total())
    throw ShapeError("masked loss: target patches " + shape_str(target_patches.shape()) +
                     " vs plan over " + std::to_string(plan.total()) + " patches");
  Tensor target = gather_rows(target_patches, plan.masked_idx);
  if (pred.shape() != target.shape())
    throw ShapeError("masked loss: pred " + shape_str(pred.shape()) + " vs masked targets " +
                     shape_str(target.shape()));
  return mse_loss(pred, target);
}

MAEModel::Reconstruction MAEModel::reconstruct(const Tensor& image, uint64_t mask_seed,
                                               bool paste_visible) const {
  PatchGrid grid = patchify(image, cfg.patch);
  MaskPlan plan = sample_mask(grid.count(), cfg.mask_ratio, mask_seed);
  Tensor tokens = gather_visible(grid, plan, embed_w, cls_token, enc_pos);
  Tensor encoded = encoder.forward(tokens);
  Tensor full = scatter_full(enc_to_dec(encoded), mask_token, plan, dec_pos);
  Tensor decoded = decoder.forward(full);
  std::vector<int64_t> all_rows(static_cast<size_t>(grid.count()));
  for (int64_t i = 0; i < grid.count(); ++i) all_rows[static_cast<size_t>(i)] = 1 + i;
  Tensor pred_all = recon_head(gather_rows(decoded, all_rows));  // [N, patch_len]

  const int64_t N = grid.count(), L = grid.patches.size(1);
  const auto original = grid.patches.to_vector();
  const auto predicted = pred_all.to_vector();
  std::vector<double> masked_img(original), recon_img(predicted);
  std::vector<char> is_masked(static_cast<size_t>(N), 0);
  for (auto i : plan.masked_idx) is_masked[static_cast<size_t>(i)] = 1;
  for (int64_t i = 0; i < N; ++i) {
    double* mrow = masked_img.data() + i * L;
    double* rrow = recon_img.data() + i * L;
    const double* orow = original.data() + i * L;
    if (is_masked[static_cast<size_t>(i)]) {
      std::fill(mrow, mrow + L, 0.0);
    } else if (paste_visible) {
      std::copy(orow, orow + L, rrow);
    }
  }
  Reconstruction r;
  const Dtype dt = image.dtype();
  r.masked = unpatchify(Tensor::from_vector({N, L}, masked_img, dt), grid.grid_h, grid.grid_w,
                        grid.p, grid.channels);
  r.recon = unpatchify(Tensor::from_vector({N, L}, recon_img, dt), grid.grid_h, grid.grid_w,
                       grid.p, grid.channels);
  r.original = image.clone();
  return r;
}

}  // namespace maedet
