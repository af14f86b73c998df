#include "maedet/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maedet/errors.hpp"

namespace maedet {

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

std::array<double, 4> encode_deltas(const Box& anchor, const Box& gt) {
  if (anchor.w() <= 0.0 || anchor.h() <= 0.0)
    throw ShapeError("encode_deltas: non-positive anchor dims");
  if (gt.w() <= 0.0 || gt.h() <= 0.0) throw ShapeError("encode_deltas: non-positive gt dims");
  return {(gt.cx() - anchor.cx()) / anchor.w(), (gt.cy() - anchor.cy()) / anchor.h(),
          std::log(gt.w() / anchor.w()), std::log(gt.h() / anchor.h())};
}

Box decode_deltas(const Box& anchor, double tx, double ty, double tw, double th) {
  if (anchor.w() <= 0.0 || anchor.h() <= 0.0)
    throw ShapeError("decode_deltas: non-positive anchor dims");
  const double cx = anchor.cx() + tx * anchor.w();
  const double cy = anchor.cy() + ty * anchor.h();
  const double w = anchor.w() * std::exp(tw);
  const double h = anchor.h() * std::exp(th);
  Box b;
  b.x1 = cx - 0.5 * w;
  b.y1 = cy - 0.5 * h;
  b.x2 = cx + 0.5 * w;
  b.y2 = cy + 0.5 * h;
  return b;
}

Box clip_box(const Box& b, double img_w, double img_h) {
  Box c = b;
  c.x1 = std::clamp(c.x1, 0.0, img_w);
  c.y1 = std::clamp(c.y1, 0.0, img_h);
  c.x2 = std::clamp(c.x2, 0.0, img_w);
  c.y2 = std::clamp(c.y2, 0.0, img_h);
  return c;
}

std::vector<int> nms(const std::vector<Box>& boxes, double thresh) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return boxes[static_cast<size_t>(a)].score > boxes[static_cast<size_t>(b)].score;
  });
  std::vector<int> kept;
  for (int cand : order) {
    bool drop = false;
    for (int k : kept)
      if (iou(boxes[static_cast<size_t>(cand)], boxes[static_cast<size_t>(k)]) >= thresh) {
        drop = true;
        break;
      }
    if (!drop) kept.push_back(cand);
  }
  return kept;
}

std::vector<Box> make_level_anchors(int64_t hs, int64_t ws, int stride,
                                    const std::vector<double>& ratios, double scale) {
  std::vector<Box> anchors;
  anchors.reserve(static_cast<size_t>(hs * ws) * ratios.size());
  const double base = scale * stride;
  for (double rho : ratios) {
    const double w = base / std::sqrt(rho);
    const double h = base * std::sqrt(rho);
    for (int64_t y = 0; y < hs; ++y)
      for (int64_t x = 0; x < ws; ++x) {
        const double cx = (static_cast<double>(x) + 0.5) * stride;
        const double cy = (static_cast<double>(y) + 0.5) * stride;
        Box b;
        b.x1 = cx - 0.5 * w;
        b.y1 = cy - 0.5 * h;
        b.x2 = cx + 0.5 * w;
        b.y2 = cy + 0.5 * h;
        anchors.push_back(b);
      }
  }
  return anchors;
}

AnchorAssignment assign_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gts,
                                double pos_iou, double neg_iou) {
  const size_t n = anchors.size();
  AnchorAssignment out;
  out.label.assign(n, 0);
  out.matched_gt.assign(n, -1);
  if (gts.empty()) return out;

  std::vector<double> best_iou(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[i], gts[g]);
      if (v > best_iou[i]) {
        best_iou[i] = v;
        out.matched_gt[i] = static_cast<int>(g);
      }
    }
    if (best_iou[i] >= pos_iou) out.label[i] = 1;
    else if (best_iou[i] <= neg_iou) out.label[i] = 0;
    else out.label[i] = -1;
  }
  // every gt claims its best-overlapping anchor, ties to the lowest index
  for (size_t g = 0; g < gts.size(); ++g) {
    double best = 0.0;
    int best_anchor = -1;
    for (size_t i = 0; i < n; ++i) {
      const double v = iou(anchors[i], gts[g]);
      if (v > best) {
        best = v;
        best_anchor = static_cast<int>(i);
      }
    }
    if (best_anchor >= 0) {
      out.label[static_cast<size_t>(best_anchor)] = 1;
      out.matched_gt[static_cast<size_t>(best_anchor)] = static_cast<int>(g);
    }
  }
  for (size_t i = 0; i < n; ++i)
    if (out.label[i] != 1) out.matched_gt[i] = -1;
  return out;
}

}  // namespace maedet
