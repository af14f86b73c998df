#pragma once

#include <cmath>
#include <vector>

#include "maedet/params.hpp"
#include "maedet/tensor.hpp"

namespace maedet {

class Rng;

struct ViTConfig {
  int depth = 12;
  int64_t dim = 768;
  int heads = 12;
  double mlp_ratio = 4.0;
  int patch = 16;
  int64_t in_channels = 1;
  int64_t mlp_hidden() const { return static_cast<int64_t>(std::llround(mlp_ratio * static_cast<double>(dim))); }
};

/// y = x W + b with x [L,in], W [in,out], b [out].
struct Linear {
  Tensor w, b;
  Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }
  static Linear init(int64_t in, int64_t out, Rng& rng, double stddev = 0.02);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNormParams {
  Tensor g, b;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, g, b); }
  static LayerNormParams init(int64_t dim);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Pre-LN block: y = x + proj(MSA(LN1 x)); out = y + fc2(gelu(fc1(LN2 y))).
struct TransformerBlock {
  LayerNormParams ln1, ln2;
  Linear qkv;   // dim -> 3*dim, fused
  Linear proj;  // dim -> dim
  Linear fc1;   // dim -> hidden
  Linear fc2;   // hidden -> dim
  Tensor forward(const Tensor& x, int heads) const;
  static TransformerBlock init(int64_t dim, int64_t hidden, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Transformer stack with a trailing LayerNorm.
struct ViTTrunk {
  ViTConfig cfg;
  std::vector<TransformerBlock> blocks;
  LayerNormParams ln_f;
  Tensor forward(const Tensor& tokens) const;
  static ViTTrunk init(const ViTConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Trainable parameters of one block: (4 + 2*ratio) dim^2 weights plus
/// (9 + ratio) dim biases and LN terms. 12 dim^2 + 13 dim at ratio 4.
int64_t block_param_count(int64_t dim, double mlp_ratio);

}  // namespace maedet
