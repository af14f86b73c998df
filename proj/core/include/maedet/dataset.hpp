#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "maedet/boxes.hpp"
#include "maedet/coco_eval.hpp"
#include "maedet/rng.hpp"
#include "maedet/tensor.hpp"

namespace maedet {

/// The six primitive families used as object classes 0..5.
extern const char* const kShapeClassNames[6];

struct SceneSpec {
  int64_t image_size = 256;
  int64_t min_objects = 2;
  int64_t max_objects = 6;
  int64_t num_classes = 6;  // uses the first n of the 6 shape families
  int64_t min_extent = 8;   // object side range, pixels
  int64_t max_extent = 0;   // 0 -> image_size / 4
  double background = 0.08;
  std::vector<double> reflectivity = {0.45, 0.65, 0.85};
  double looks = 1.0;  // speckle looks L; variance falls as 1/L
  uint64_t seed = 0;
};

struct SceneImage {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> pixels;  // row-major
};

struct Scene {
  SceneImage image;
  std::vector<Box> boxes;  // tight bounds, label = class id
};

/// One multiplicative-speckle draw: reflectivity * Gamma(L, 1/L).
/// The Gamma factor has mean 1 and std 1/sqrt(L).
double speckled(double reflectivity, double looks, Rng& rng);

/// Deterministic per (spec, index): bright primitives on a dark background,
/// speckled, quantized to 8 bits. Boxes are tight bounds of the painted
/// pixels and lie fully inside the image.
Scene generate_scene(const SceneSpec& spec, int64_t index);

struct DatasetItem {
  int64_t image_id = 0;
  std::string file_name;  // relative to the split directory
  int64_t width = 0;
  int64_t height = 0;
  std::vector<Box> boxes;  // label = contiguous class index
};

struct Dataset {
  std::string split_dir;
  std::vector<DatasetItem> items;
  std::vector<std::string> class_names;  // index = class label
};

struct SplitLedger {
  int64_t images = 0;
  int64_t instances = 0;
  std::map<std::string, int64_t> class_counts;
};

void save_pgm(const std::string& path, const SceneImage& img);
SceneImage load_pgm(const std::string& path);

/// P5 PGM decoded to [1, H, W] in [0, 1].
Tensor load_image(const std::string& path, Dtype dt = default_dtype());

/// Generates `count` scenes into root/split/{images,annotations.json} and
/// writes a ledger.json with per-class instance counts.
SplitLedger write_dataset(const std::string& root, const std::string& split,
                          const SceneSpec& spec, int64_t count);

/// Parses and validates root/split/annotations.json. Category ids may be
/// arbitrary; labels are their rank in sorted id order. Unknown JSON fields
/// are ignored.
Dataset read_dataset(const std::string& root, const std::string& split);

SplitLedger read_ledger(const std::string& root, const std::string& split);

/// Ground-truth boxes per image, for the evaluator.
std::vector<EvalBoxes> ground_truth_boxes(const Dataset& ds);

/// Gray level used when burning class `label` boxes into an overlay.
uint8_t class_gray(int label);

/// Draws 1px box outlines into the image, one gray level per class.
/// Corners land on the rounded box coordinates (clamped to the image).
void draw_boxes(SceneImage* img, const std::vector<Box>& boxes);

}  // namespace maedet
