#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "maedet/boxes.hpp"
#include "maedet/vit.hpp"

namespace maedet {

class Rng;

struct DetectorConfig {
  ViTConfig encoder{12, 768, 12, 4.0, 16, 1};
  int patch = 16;
  int64_t in_channels = 1;
  int64_t image_size = 256;
  int num_classes = 6;
  int64_t fpn_channels = 256;
  int64_t roi_hidden = 1024;

  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  double anchor_scale = 8.0;
  double rpn_pos_iou = 0.7;
  double rpn_neg_iou = 0.3;
  int rpn_sample = 256;
  double rpn_pos_frac = 0.5;
  int pre_nms_topk = 1000;
  double rpn_nms = 0.7;
  int post_nms_train = 1000;
  int post_nms_test = 300;
  double rpn_beta = 1.0 / 9.0;

  double roi_fg_iou = 0.5;
  int roi_sample = 512;
  double roi_pos_frac = 0.25;
  double roi_beta = 1.0;
  int roi_size = 7;
  int roi_sampling = 2;

  double score_thresh = 0.05;
  double final_nms = 0.5;
  int max_dets = 100;

  int64_t grid_side() const { return image_size / patch; }
  int64_t patch_len() const { return static_cast<int64_t>(patch) * patch * in_channels; }
  int anchors_per_cell() const { return static_cast<int>(anchor_ratios.size()); }
  /// Pyramid strides: patch/4, patch/2, patch, 2*patch, 4*patch.
  std::array<int, 5> strides() const {
    return {patch / 4, patch / 2, patch, 2 * patch, 4 * patch};
  }
};

struct Conv {
  Tensor w, b;  // w [Cout,Cin,k,k]
  int stride = 1, pad = 0;
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
  static Conv init(int64_t cin, int64_t cout, int k, int stride, int pad, Rng& rng,
                   double stddev = 0.02);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Deconv {
  Tensor w, b;  // w [Cin,Cout,k,k]
  int stride = 2;
  Tensor operator()(const Tensor& x) const { return deconv2d(x, w, b, stride); }
  static Deconv init(int64_t cin, int64_t cout, int k, int stride, Rng& rng,
                     double stddev = 0.02);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Four parallel branches off the stride-p backbone map (2x deconv chains
/// up, identity, strided conv down), each finished by a 1x1 lateral conv to
/// `channels` and a 3x3 output conv; P6 is a stride-2 maxpool of P5.
struct SimpleFPN {
  int64_t dim = 0;       // backbone embedding width
  int64_t channels = 0;  // pyramid width
  Deconv up4_a, up4_b;   // dim -> dim/2 -> dim/4
  Deconv up8;            // dim -> dim/2
  Conv down32;           // 3x3 stride 2, dim -> dim
  Conv lat4, lat8, lat16, lat32;
  Conv out4, out8, out16, out32;

  std::array<Tensor, 5> forward(const Tensor& map) const;
  static SimpleFPN init(int64_t dim, int64_t channels, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Shared 3x3 conv + ReLU, then sibling 1x1 convs: A objectness logits and
/// 4A box deltas per cell. The same weights run on every level.
struct RPNHead {
  Conv shared, obj, reg;
  static RPNHead init(int64_t channels, int anchors, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct RPNOut {
  std::vector<Tensor> obj;  // per level [A,Hs,Ws]
  std::vector<Tensor> reg;  // per level [4A,Hs,Ws]
};

/// flatten -> FC -> ReLU -> FC -> ReLU -> sibling class/box layers.
/// Class logits have num_classes+1 entries, background at index 0; deltas
/// are class-specific (4*num_classes).
struct RoIHead {
  Linear fc1, fc2, cls, reg;
  std::pair<Tensor, Tensor> forward(const Tensor& flat_feats) const;
  static RoIHead init(int64_t in_dim, int64_t hidden, int num_classes, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Detector {
  DetectorConfig cfg;
  Tensor cls_token;  // [1, D]
  Tensor embed_w;    // [patch_len, D]
  ViTTrunk encoder;
  Tensor enc_pos;  // [(N+1), D], fixed
  SimpleFPN fpn;
  RPNHead rpn;
  RoIHead roi;

  static Detector init(const DetectorConfig& cfg, uint64_t seed);
  ParamList params() const;

  /// ViT tokens reshaped to the stride-p map [D, grid, grid].
  Tensor backbone_map(const Tensor& image) const;
  std::array<Tensor, 5> pyramid(const Tensor& image) const;
  RPNOut rpn_forward(const std::array<Tensor, 5>& pyr) const;
};

/// Anchors for every level of the configured pyramid, level-major then
/// ratio-major within a level.
std::vector<std::vector<Box>> pyramid_anchors(const DetectorConfig& cfg);

/// Per level: top pre_nms_topk by objectness, decode, clip to the image,
/// drop sides < 1px, merge levels, NMS at rpn_nms, keep post_nms_train or
/// post_nms_test boxes. Scores are objectness sigmoids.
std::vector<Box> select_proposals(const RPNOut& out, const std::vector<std::vector<Box>>& anchors,
                                  const DetectorConfig& cfg, bool train);

/// RoIAlign over one level map: out_size x out_size cells, sampling^2
/// bilinear taps per cell, averaged. Differentiable. Throws on degenerate
/// boxes.
Tensor roi_align(const Tensor& level_map, const Box& box, int stride, int out_size, int sampling);

/// FPN level index (0..4) for a box: k = floor(4 + log2(sqrt(area)/224))
/// clamped to [2,6], returned as k-2.
int fpn_level_for_box(const Box& box);

struct DetectionLosses {
  Tensor total;
  double rpn_obj = 0, rpn_reg = 0, roi_cls = 0, roi_reg = 0;
};

/// Full training loss for one image. gts carry class labels in [0,K).
/// The rng drives anchor/RoI subsampling; ground-truth boxes are appended
/// to the proposal set before RoI sampling.
DetectionLosses detection_losses(const Detector& det, const Tensor& image,
                                 const std::vector<Box>& gts, Rng& rng);

/// Inference: proposals (test budget) -> RoI head -> per-class decode +
/// NMS(final_nms) -> top max_dets above score_thresh. Labels are 0..K-1.
std::vector<Box> detect_image(const Detector& det, const Tensor& image);

}  // namespace maedet
