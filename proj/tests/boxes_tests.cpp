#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "maedet/boxes.hpp"
#include "maedet/errors.hpp"
#include "maedet/rng.hpp"
#include "oracles.hpp"

using namespace maedet;

namespace {

Box rand_box(Rng& rng, double extent = 100.0) {
  const double x1 = rng.uniform(0.0, extent);
  const double y1 = rng.uniform(0.0, extent);
  Box b{x1, y1, x1 + rng.uniform(1.0, extent / 2), y1 + rng.uniform(1.0, extent / 2),
        rng.uniform(), static_cast<int>(rng.uniform_int(4))};
  return b;
}

}  // namespace

TEST_SUITE_BEGIN("boxes");

TEST_CASE("iou hand values") {
  Box a{0, 0, 2, 2};
  Box b{1, 1, 3, 3};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));  // inter 1, union 7
  CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  Box c{5, 5, 6, 6};
  CHECK(iou(a, c) == 0.0);
  Box edge{2, 0, 4, 2};  // shares an edge, zero-area intersection
  CHECK(iou(a, edge) == 0.0);
  Box inside{0.5, 0.5, 1.5, 1.5};
  CHECK(iou(a, inside) == doctest::Approx(0.25 / 4.0).epsilon(1e-12));
}

TEST_CASE("delta codec round-trips to 1e-5 on 10k random pairs") {
  Rng rng(41);
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    Box anchor = rand_box(rng);
    Box gt = rand_box(rng);
    auto d = encode_deltas(anchor, gt);
    Box back = decode_deltas(anchor, d[0], d[1], d[2], d[3]);
    worst = std::max({worst, std::abs(back.x1 - gt.x1), std::abs(back.y1 - gt.y1),
                      std::abs(back.x2 - gt.x2), std::abs(back.y2 - gt.y2)});
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("delta codec hand values and guards") {
  Box anchor{0, 0, 10, 10};
  Box gt{5, 5, 15, 25};  // cx 10, cy 15, w 10, h 20
  auto d = encode_deltas(anchor, gt);
  CHECK(d[0] == doctest::Approx(0.5).epsilon(1e-12));       // (10-5)/10
  CHECK(d[1] == doctest::Approx(1.0).epsilon(1e-12));       // (15-5)/10
  CHECK(d[2] == doctest::Approx(0.0).epsilon(1e-12));       // log(10/10)
  CHECK(d[3] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  Box identity = decode_deltas(anchor, 0, 0, 0, 0);
  CHECK(identity.x1 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(identity.x2 == doctest::Approx(10.0).epsilon(1e-12));
  Box degenerate{3, 3, 3, 5};
  CHECK_THROWS(encode_deltas(degenerate, gt));
  CHECK_THROWS(encode_deltas(anchor, degenerate));
}

TEST_CASE("clip_box clamps into the image and keeps scores") {
  Box b{-5, 2, 120, 90, 0.7, 3};
  Box c = clip_box(b, 100, 80);
  CHECK(c.x1 == 0.0);
  CHECK(c.y1 == 2.0);
  CHECK(c.x2 == 100.0);
  CHECK(c.y2 == 80.0);
  CHECK(c.score == 0.7);
  CHECK(c.label == 3);
}

TEST_CASE("nms agrees with the quadratic reference on 10k cases") {
  Rng rng(42);
  for (int t = 0; t < 10000; ++t) {
    const int n = 1 + static_cast<int>(rng.uniform_int(12));
    std::vector<Box> boxes;
    for (int i = 0; i < n; ++i) {
      Box b = rand_box(rng, 30.0);
      // snapped coordinates and scores force frequent ties
      b.x1 = std::floor(b.x1);
      b.y1 = std::floor(b.y1);
      b.x2 = b.x1 + std::ceil(b.w() / 4);
      b.y2 = b.y1 + std::ceil(b.h() / 4);
      b.score = std::floor(b.score * 8) / 8.0;
      boxes.push_back(b);
    }
    const double thresh = rng.uniform(0.1, 0.9);
    CHECK(nms(boxes, thresh) == maedet::testing::nms_ref(boxes, thresh));
  }
}

TEST_CASE("nms hand case: duplicate scores keep the lower index") {
  std::vector<Box> boxes = {
      {0, 0, 10, 10, 0.9, 0},
      {1, 1, 11, 11, 0.9, 0},   // IoU with first > 0.5, same score, higher index
      {50, 50, 60, 60, 0.8, 0},
  };
  std::vector<int> kept = nms(boxes, 0.5);
  CHECK(kept == std::vector<int>{0, 2});
}

TEST_CASE("level anchors: ratio-major order, centered, area-preserving ratios") {
  const std::vector<double> ratios = {0.5, 1.0, 2.0};
  std::vector<Box> anchors = make_level_anchors(2, 3, 8, ratios, 4.0);
  REQUIRE(anchors.size() == 3 * 2 * 3);
  const double base = 4.0 * 8;
  for (size_t r = 0; r < 3; ++r)
    for (int64_t y = 0; y < 2; ++y)
      for (int64_t x = 0; x < 3; ++x) {
        const Box& a = anchors[r * 6 + static_cast<size_t>(y * 3 + x)];
        CHECK(a.cx() == doctest::Approx((static_cast<double>(x) + 0.5) * 8).epsilon(1e-12));
        CHECK(a.cy() == doctest::Approx((static_cast<double>(y) + 0.5) * 8).epsilon(1e-12));
        CHECK(a.w() == doctest::Approx(base / std::sqrt(ratios[r])).epsilon(1e-12));
        CHECK(a.h() == doctest::Approx(base * std::sqrt(ratios[r])).epsilon(1e-12));
        CHECK(a.area() == doctest::Approx(base * base).epsilon(1e-12));
      }
}

TEST_CASE("assignment: thresholds, low-quality promotion, ignore band") {
  // anchor 1 overlaps gt 0 strongly; anchor 2 is the best (only) match for gt 1
  std::vector<Box> anchors = {
      {0, 0, 10, 10},
      {1, 1, 11, 11},
      {100, 100, 108, 108},
      {40, 40, 50, 50},
      {0, 0, 14, 14},
  };
  std::vector<Box> gts = {
      {1, 1, 11, 11},      // anchor 1 exact, anchor 0 IoU ~0.68
      {101, 101, 112, 112},  // anchor 2 IoU ~0.3, below pos, still its best match
  };
  AnchorAssignment asg = assign_anchors(anchors, gts, 0.7, 0.3);
  REQUIRE(asg.label.size() == anchors.size());
  CHECK(asg.label[1] == 1);
  CHECK(asg.matched_gt[1] == 0);
  CHECK(asg.label[2] == 1);  // promoted as gt 1's best anchor
  CHECK(asg.matched_gt[2] == 1);
  CHECK(asg.label[3] == 0);  // no overlap at all
  CHECK(asg.matched_gt[3] == -1);
  // anchor 0: IoU 0.68 with gt0 -> between thresholds, not gt0's best -> ignore
  CHECK(asg.label[0] == -1);

  // no gts: everything negative
  AnchorAssignment none = assign_anchors(anchors, {}, 0.7, 0.3);
  for (auto v : none.label) CHECK(v == 0);
}

TEST_CASE("assignment ties break to the lowest gt index") {
  std::vector<Box> anchors = {{0, 0, 10, 10}};
  std::vector<Box> gts = {{0, 0, 10, 10}, {0, 0, 10, 10}};
  AnchorAssignment asg = assign_anchors(anchors, gts, 0.7, 0.3);
  CHECK(asg.label[0] == 1);
  CHECK(asg.matched_gt[0] == 0);
}

TEST_SUITE_END();
