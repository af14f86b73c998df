#pragma once

#include <vector>

#include "maedet/boxes.hpp"
#include "maedet/coco_eval.hpp"

namespace maedet::testing {

/// Straightforward O(n^2) greedy NMS, written without reference to the
/// library implementation. Returns kept indices in visit order.
std::vector<int> nms_ref(const std::vector<Box>& boxes, double thresh);

/// Brute-force COCO metric suite: one monolithic pass per (class,
/// threshold, bin) with nested loops and no shared matcher. Semantics:
///   - per image and class, keep the max_dets highest-scoring detections
///   - detections ranked by a global stable score-descending sort
///   - each detection takes the unmatched gt with the highest IoU >= t,
///     ties to the lowest gt index; gts ignored when their area falls
///     outside the bin; matching an ignored gt ignores the detection
///   - an unmatched detection whose own area is outside the bin is ignored
///   - 101-point max-interpolated AP; classes without gt in a bin are
///     skipped; AP of a class with gt but no detections is 0
Metrics summarize_ref(const std::vector<EvalBoxes>& dets, const std::vector<EvalBoxes>& gts,
                      const EvalConfig& cfg);

}  // namespace maedet::testing
