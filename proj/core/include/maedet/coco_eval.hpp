#pragma once

#include <vector>

#include "maedet/boxes.hpp"

namespace maedet {

/// Boxes of one image: detections carry score+label, ground truth carries
/// label only.
struct EvalBoxes {
  int image_id = 0;
  std::vector<Box> boxes;
};

struct EvalConfig {
  std::vector<double> iou_thresholds;  // defaults to 0.50,0.55,...,0.95
  int recall_samples = 101;
  double small_area = 32.0 * 32.0;   // small: area < small_area
  double large_area = 96.0 * 96.0;   // large: area > large_area
  int max_dets = 100;                // per image and class, score-descending

  EvalConfig();
};

struct Metrics {
  double map = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double map_small = 0.0;
  double map_medium = 0.0;
  double map_large = 0.0;
};

/// Greedy matcher for one image and class. `dets` must already be sorted by
/// descending score. Each detection takes the unmatched gt with the highest
/// IoU >= iou_thresh (ties to the lowest gt index). Returns one flag per
/// detection: 1 TP, 0 FP, -1 ignored. Matching a gt whose area lies outside
/// [area_lo, area_hi] ignores the detection, as does an unmatched detection
/// whose own area is outside the bin.
std::vector<int> match_detections(const std::vector<Box>& dets, const std::vector<Box>& gts,
                                  double iou_thresh, double area_lo, double area_hi);

/// Mean of max-interpolated precision at `samples` evenly spaced recall
/// points. flags are 1/0 TP/FP in score-descending rank order with ignored
/// detections removed; num_gt counts non-ignored ground truth.
double average_precision(const std::vector<int>& flags, int64_t num_gt, int samples = 101);

/// Full metric suite. AP is averaged over classes that have ground truth in
/// the bin, then over IoU thresholds. AP50/AP75 always use thresholds
/// 0.50/0.75 whatever cfg.iou_thresholds holds.
Metrics summarize(const std::vector<EvalBoxes>& dets, const std::vector<EvalBoxes>& gts,
                  const EvalConfig& cfg);

}  // namespace maedet
