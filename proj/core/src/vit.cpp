#include "maedet/vit.hpp"

#include "maedet/errors.hpp"
#include "maedet/rng.hpp"

namespace maedet {

Param* find_param(ParamList& params, const std::string& name) {
  for (auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

int64_t total_numel(const ParamList& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void require_grads(ParamList& params) {
  for (auto& p : params) p.tensor.set_requires_grad(true);
}

Linear Linear::init(int64_t in, int64_t out, Rng& rng, double stddev) {
  Linear l;
  l.w = Tensor::trunc_normal({in, out}, rng, stddev);
  l.b = Tensor::zeros({out});
  return l;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w, true});
  out.push_back({prefix + ".b", b, false});
}

LayerNormParams LayerNormParams::init(int64_t dim) {
  LayerNormParams ln;
  ln.g = Tensor::full({dim}, 1.0);
  ln.b = Tensor::zeros({dim});
  return ln;
}

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".g", g, false});
  out.push_back({prefix + ".b", b, false});
}

Tensor TransformerBlock::forward(const Tensor& x, int heads) const {
  const int64_t D = x.size(1);
  Tensor h = ln1(x);
  Tensor fused = qkv(h);
  Tensor q = slice2d(fused, 1, 0, D);
  Tensor k = slice2d(fused, 1, D, 2 * D);
  Tensor v = slice2d(fused, 1, 2 * D, 3 * D);
  Tensor y = add(x, proj(scaled_dot_product_attention(q, k, v, heads)));
  return add(y, fc2(gelu(fc1(ln2(y)))));
}

TransformerBlock TransformerBlock::init(int64_t dim, int64_t hidden, Rng& rng) {
  TransformerBlock b;
  b.ln1 = LayerNormParams::init(dim);
  b.qkv = Linear::init(dim, 3 * dim, rng);
  b.proj = Linear::init(dim, dim, rng);
  b.ln2 = LayerNormParams::init(dim);
  b.fc1 = Linear::init(dim, hidden, rng);
  b.fc2 = Linear::init(hidden, dim, rng);
  return b;
}

void TransformerBlock::collect(const std::string& prefix, ParamList& out) const {
  ln1.collect(prefix + ".ln1", out);
  qkv.collect(prefix + ".qkv", out);
  proj.collect(prefix + ".proj", out);
  ln2.collect(prefix + ".ln2", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

Tensor ViTTrunk::forward(const Tensor& tokens) const {
  if (tokens.rank() != 2 || tokens.size(1) != cfg.dim)
    throw ShapeError("trunk: expected [L," + std::to_string(cfg.dim) + "] tokens, got " +
                     shape_str(tokens.shape()));
  Tensor x = tokens;
  for (const auto& b : blocks) x = b.forward(x, cfg.heads);
  return ln_f(x);
}

ViTTrunk ViTTrunk::init(const ViTConfig& cfg, Rng& rng) {
  if (cfg.dim % cfg.heads != 0)
    throw ConfigError("vit: dim " + std::to_string(cfg.dim) + " not divisible by " +
                      std::to_string(cfg.heads) + " heads");
  if (cfg.mlp_ratio <= 0.0) throw ConfigError("vit: mlp_ratio must be positive");
  ViTTrunk t;
  t.cfg = cfg;
  t.blocks.reserve(static_cast<size_t>(cfg.depth));
  for (int i = 0; i < cfg.depth; ++i)
    t.blocks.push_back(TransformerBlock::init(cfg.dim, cfg.mlp_hidden(), rng));
  t.ln_f = LayerNormParams::init(cfg.dim);
  return t;
}

void ViTTrunk::collect(const std::string& prefix, ParamList& out) const {
  for (size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  ln_f.collect(prefix + ".ln_f", out);
}

int64_t block_param_count(int64_t dim, double mlp_ratio) {
  const int64_t h = static_cast<int64_t>(std::llround(mlp_ratio * static_cast<double>(dim)));
  const int64_t weights = 3 * dim * dim + dim * dim + 2 * dim * h;
  const int64_t rest = 3 * dim + dim + h + dim + 4 * dim;
  return weights + rest;
}

}  // namespace maedet
