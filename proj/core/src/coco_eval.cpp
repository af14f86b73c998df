#include "maedet/coco_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "maedet/errors.hpp"

namespace maedet {

EvalConfig::EvalConfig() {
  for (int i = 0; i < 10; ++i) iou_thresholds.push_back(0.5 + 0.05 * i);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool in_bin(double area, double lo, double hi) { return area >= lo && area <= hi; }

// Greedy matching over a precomputed IoU matrix [D x G]. Returns per-det
// flags 1/0/-1 given each gt's ignore status.
std::vector<int> greedy_match(const std::vector<double>& iou_mat, int64_t D, int64_t G,
                              const std::vector<char>& gt_ignore,
                              const std::vector<char>& det_in_bin, double thresh) {
  std::vector<int> flags(static_cast<size_t>(D), 0);
  std::vector<char> taken(static_cast<size_t>(G), 0);
  for (int64_t d = 0; d < D; ++d) {
    int64_t best = -1;
    double best_iou = 0.0;
    for (int64_t g = 0; g < G; ++g) {
      if (taken[static_cast<size_t>(g)]) continue;
      const double v = iou_mat[static_cast<size_t>(d * G + g)];
      if (v < thresh) continue;
      // ascending scan keeps the lowest gt index on IoU ties
      if (best < 0 || v > best_iou) {
        best = g;
        best_iou = v;
      }
    }
    if (best >= 0) {
      taken[static_cast<size_t>(best)] = 1;
      flags[static_cast<size_t>(d)] = gt_ignore[static_cast<size_t>(best)] ? -1 : 1;
    } else {
      flags[static_cast<size_t>(d)] = det_in_bin[static_cast<size_t>(d)] ? 0 : -1;
    }
  }
  return flags;
}

}  // namespace

std::vector<int> match_detections(const std::vector<Box>& dets, const std::vector<Box>& gts,
                                  double iou_thresh, double area_lo, double area_hi) {
  const int64_t D = static_cast<int64_t>(dets.size());
  const int64_t G = static_cast<int64_t>(gts.size());
  std::vector<double> mat(static_cast<size_t>(D * G));
  for (int64_t d = 0; d < D; ++d)
    for (int64_t g = 0; g < G; ++g)
      mat[static_cast<size_t>(d * G + g)] = iou(dets[static_cast<size_t>(d)], gts[static_cast<size_t>(g)]);
  std::vector<char> gt_ig(static_cast<size_t>(G));
  for (int64_t g = 0; g < G; ++g)
    gt_ig[static_cast<size_t>(g)] = !in_bin(gts[static_cast<size_t>(g)].area(), area_lo, area_hi);
  std::vector<char> det_in(static_cast<size_t>(D));
  for (int64_t d = 0; d < D; ++d)
    det_in[static_cast<size_t>(d)] = in_bin(dets[static_cast<size_t>(d)].area(), area_lo, area_hi);
  return greedy_match(mat, D, G, gt_ig, det_in, iou_thresh);
}

double average_precision(const std::vector<int>& flags, int64_t num_gt, int samples) {
  if (num_gt <= 0) return 0.0;
  std::vector<double> prec, rec;
  int64_t tp = 0, fp = 0;
  for (int f : flags) {
    if (f == 1) ++tp;
    else ++fp;
    prec.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
  }
  double acc = 0.0;
  for (int j = 0; j < samples; ++j) {
    const double r = static_cast<double>(j) / static_cast<double>(samples - 1);
    double best = 0.0;
    for (size_t i = 0; i < prec.size(); ++i)
      if (rec[i] >= r) best = std::max(best, prec[i]);
    acc += best;
  }
  return acc / static_cast<double>(samples);
}

namespace {

struct ClassImage {
  std::vector<double> det_scores;  // score-descending, truncated to max_dets
  std::vector<double> det_areas;
  std::vector<double> gt_areas;
  std::vector<double> iou_mat;  // [D x G]
};

struct Bin {
  double lo, hi;
};

double bin_mean_ap(const std::vector<std::vector<ClassImage>>& per_class, const Bin& bin,
                   double thresh, int samples) {
  // mean AP over classes with ground truth in the bin; -1 when none has any
  double total = 0.0;
  int counted = 0;
  for (const auto& images : per_class) {
    int64_t num_gt = 0;
    for (const auto& ci : images)
      for (double a : ci.gt_areas)
        if (in_bin(a, bin.lo, bin.hi)) ++num_gt;
    if (num_gt == 0) continue;

    std::vector<std::pair<double, int>> scored;  // (score, flag), flag 1/0
    for (const auto& ci : images) {
      const int64_t D = static_cast<int64_t>(ci.det_scores.size());
      const int64_t G = static_cast<int64_t>(ci.gt_areas.size());
      std::vector<char> gt_ig(static_cast<size_t>(G));
      for (int64_t g = 0; g < G; ++g)
        gt_ig[static_cast<size_t>(g)] = !in_bin(ci.gt_areas[static_cast<size_t>(g)], bin.lo, bin.hi);
      std::vector<char> det_in(static_cast<size_t>(D));
      for (int64_t d = 0; d < D; ++d)
        det_in[static_cast<size_t>(d)] = in_bin(ci.det_areas[static_cast<size_t>(d)], bin.lo, bin.hi);
      const auto flags = greedy_match(ci.iou_mat, D, G, gt_ig, det_in, thresh);
      for (int64_t d = 0; d < D; ++d)
        if (flags[static_cast<size_t>(d)] >= 0)
          scored.emplace_back(ci.det_scores[static_cast<size_t>(d)], flags[static_cast<size_t>(d)]);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<int> flags;
    flags.reserve(scored.size());
    for (const auto& [s, f] : scored) flags.push_back(f);
    total += average_precision(flags, num_gt, samples);
    ++counted;
  }
  return counted ? total / counted : -1.0;
}

}  // namespace

Metrics summarize(const std::vector<EvalBoxes>& dets, const std::vector<EvalBoxes>& gts,
                  const EvalConfig& cfg) {
  if (cfg.iou_thresholds.empty()) throw ConfigError("eval: no IoU thresholds");
  for (size_t i = 1; i < cfg.iou_thresholds.size(); ++i)
    if (cfg.iou_thresholds[i] <= cfg.iou_thresholds[i - 1])
      throw ConfigError("eval: IoU thresholds must be strictly increasing");
  if (cfg.recall_samples < 2) throw ConfigError("eval: need at least two recall samples");

  std::set<int> class_set;
  for (const auto& img : gts)
    for (const auto& b : img.boxes) class_set.insert(b.label);
  std::map<int, size_t> class_pos;
  for (int c : class_set) class_pos.emplace(c, class_pos.size());

  // align detection and gt image lists by id
  std::map<int, const EvalBoxes*> det_by_id;
  for (const auto& img : dets) {
    if (!det_by_id.emplace(img.image_id, &img).second)
      throw DataError("eval: duplicate detection set for image " + std::to_string(img.image_id));
  }
  std::set<int> gt_ids;
  for (const auto& img : gts)
    if (!gt_ids.insert(img.image_id).second)
      throw DataError("eval: duplicate ground-truth set for image " + std::to_string(img.image_id));

  // per class, per image: sorted detections, areas and the IoU matrix
  std::vector<std::vector<ClassImage>> per_class(class_pos.size());
  for (const auto& gt_img : gts) {
    const EvalBoxes* det_img = nullptr;
    auto it = det_by_id.find(gt_img.image_id);
    if (it != det_by_id.end()) det_img = it->second;
    for (const auto& [cls, ci_idx] : class_pos) {
      ClassImage ci;
      std::vector<const Box*> gt_boxes;
      for (const auto& b : gt_img.boxes)
        if (b.label == cls) {
          ci.gt_areas.push_back(b.area());
          gt_boxes.push_back(&b);
        }
      std::vector<const Box*> det_boxes;
      if (det_img) {
        std::vector<size_t> order;
        for (size_t i = 0; i < det_img->boxes.size(); ++i)
          if (det_img->boxes[i].label == cls) order.push_back(i);
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
          return det_img->boxes[a].score > det_img->boxes[b].score;
        });
        if (order.size() > static_cast<size_t>(cfg.max_dets))
          order.resize(static_cast<size_t>(cfg.max_dets));
        for (size_t i : order) {
          const Box& b = det_img->boxes[i];
          ci.det_scores.push_back(b.score);
          ci.det_areas.push_back(b.area());
          det_boxes.push_back(&b);
        }
      }
      ci.iou_mat.resize(det_boxes.size() * gt_boxes.size());
      for (size_t d = 0; d < det_boxes.size(); ++d)
        for (size_t g = 0; g < gt_boxes.size(); ++g)
          ci.iou_mat[d * gt_boxes.size() + g] = iou(*det_boxes[d], *gt_boxes[g]);
      per_class[ci_idx].push_back(std::move(ci));
    }
  }

  const Bin all{0.0, kInf};
  const Bin small{0.0, std::nextafter(cfg.small_area, 0.0)};  // area < small_area
  const Bin medium{cfg.small_area, cfg.large_area};           // closed interval
  const Bin large{std::nextafter(cfg.large_area, kInf), kInf};  // area > large_area

  auto averaged = [&](const Bin& bin) {
    double total = 0.0;
    int counted = 0;
    for (double t : cfg.iou_thresholds) {
      const double m = bin_mean_ap(per_class, bin, t, cfg.recall_samples);
      if (m >= 0.0) {
        total += m;
        ++counted;
      }
    }
    return counted ? total / counted : 0.0;
  };

  Metrics out;
  out.map = averaged(all);
  const double m50 = bin_mean_ap(per_class, all, 0.50, cfg.recall_samples);
  const double m75 = bin_mean_ap(per_class, all, 0.75, cfg.recall_samples);
  out.ap50 = m50 >= 0.0 ? m50 : 0.0;
  out.ap75 = m75 >= 0.0 ? m75 : 0.0;
  out.map_small = averaged(small);
  out.map_medium = averaged(medium);
  out.map_large = averaged(large);
  return out;
}

}  // namespace maedet
