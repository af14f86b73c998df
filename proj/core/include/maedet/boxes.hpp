#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace maedet {

/// Axis-aligned box in image-plane pixels, corners (x1,y1)-(x2,y2), x2>x1.
/// Areas use the continuous convention (x2-x1)*(y2-y1), no +1.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double score = 0.0;
  int label = -1;

  double w() const { return x2 - x1; }
  double h() const { return y2 - y1; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  double area() const { return w() * h(); }
};

double iou(const Box& a, const Box& b);

/// Faster-R-CNN parameterization: tx=(cx_g-cx_a)/w_a, tw=log(w_g/w_a).
/// Throws on non-positive anchor or gt dims.
std::array<double, 4> encode_deltas(const Box& anchor, const Box& gt);

/// Exact inverse of encode_deltas; no clipping.
Box decode_deltas(const Box& anchor, double tx, double ty, double tw, double th);

Box clip_box(const Box& b, double img_w, double img_h);

/// Greedy NMS: walk boxes by descending score (ties by lower index) and drop
/// any box with IoU >= thresh against an already kept one. Returns kept
/// indices in visit order (score-descending).
std::vector<int> nms(const std::vector<Box>& boxes, double thresh);

/// Anchors for one pyramid level: base side = scale*stride, ratio rho gives
/// dims (base/sqrt(rho), base*sqrt(rho)), centers at ((i+0.5)*stride).
/// Order is ratio-major: index = r*Hs*Ws + y*Ws + x, matching a [A,Hs,Ws]
/// conv map flattened row-major.
std::vector<Box> make_level_anchors(int64_t hs, int64_t ws, int stride,
                                    const std::vector<double>& ratios, double scale);

/// Per-anchor assignment: +1 positive, 0 negative, -1 ignore.
/// Positive when max IoU >= pos_iou or the anchor is a ground-truth box's
/// best match; negative when max IoU <= neg_iou. Ties break to the lowest
/// index. matched_gt holds the paired gt index for positives, else -1.
struct AnchorAssignment {
  std::vector<int8_t> label;
  std::vector<int> matched_gt;
};
AnchorAssignment assign_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gts,
                                double pos_iou, double neg_iou);

}  // namespace maedet
