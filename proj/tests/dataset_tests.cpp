#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "maedet/dataset.hpp"
#include "maedet/errors.hpp"

using namespace maedet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("maedet_data_" + std::to_string(std::random_device{}()) + "_" + std::to_string(++counter));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& name = "") const {
    return name.empty() ? path.string() : (path / name).string();
  }
};

}  // namespace

TEST_SUITE_BEGIN("dataset");

TEST_CASE("speckle factor has mean 1 and std 1/sqrt(looks)") {
  Rng rng(91);
  for (double looks : {1.0, 4.0, 16.0}) {
    const int n = 200000;
    const double r = 0.5;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double v = speckled(r, looks, rng);
      CHECK(v >= 0.0);
      sum += v;
      sumsq += v * v;
    }
    const double mean = sum / n;
    const double stddev = std::sqrt(sumsq / n - mean * mean);
    CHECK(std::abs(mean - r) < 0.01);
    CHECK(std::abs(stddev - r / std::sqrt(looks)) < 0.01);
  }
}

TEST_CASE("scene generation is deterministic in (spec, index)") {
  SceneSpec spec;
  spec.image_size = 48;
  spec.seed = 7;
  Scene a = generate_scene(spec, 3);
  Scene b = generate_scene(spec, 3);
  CHECK(a.image.pixels == b.image.pixels);
  REQUIRE(a.boxes.size() == b.boxes.size());
  for (size_t i = 0; i < a.boxes.size(); ++i) {
    CHECK(a.boxes[i].x1 == b.boxes[i].x1);
    CHECK(a.boxes[i].label == b.boxes[i].label);
  }
  Scene c = generate_scene(spec, 4);
  CHECK(a.image.pixels != c.image.pixels);
  spec.seed = 8;
  Scene d = generate_scene(spec, 3);
  CHECK(a.image.pixels != d.image.pixels);
}

TEST_CASE("boxes stay inside the image with in-range labels and counts") {
  SceneSpec spec;
  spec.image_size = 64;
  spec.min_objects = 2;
  spec.max_objects = 4;
  spec.min_extent = 8;
  spec.max_extent = 20;
  spec.seed = 11;
  for (int i = 0; i < 30; ++i) {
    Scene s = generate_scene(spec, i);
    CHECK(s.image.width == 64);
    CHECK(s.image.pixels.size() == 64 * 64);
    CHECK(s.boxes.size() <= 4);
    CHECK(!s.boxes.empty());
    for (const Box& b : s.boxes) {
      CHECK(b.x1 >= 0.0);
      CHECK(b.y1 >= 0.0);
      CHECK(b.x2 <= 64.0);
      CHECK(b.y2 <= 64.0);
      CHECK(b.x2 > b.x1);
      CHECK(b.y2 > b.y1);
      CHECK(b.label >= 0);
      CHECK(b.label < 6);
    }
  }
}

TEST_CASE("boxes are tight: every edge row and column holds bright pixels") {
  SceneSpec spec;
  spec.image_size = 64;
  spec.min_objects = 1;
  spec.max_objects = 1;
  spec.min_extent = 10;
  spec.max_extent = 24;
  spec.looks = 400.0;  // near-noiseless: object >= 0.45, background 0.08
  spec.seed = 13;
  int checked = 0;
  for (int i = 0; i < 20; ++i) {
    Scene s = generate_scene(spec, i);
    REQUIRE(s.boxes.size() == 1);
    const Box& b = s.boxes[0];
    auto bright = [&](int64_t y, int64_t x) {
      return s.image.pixels[static_cast<size_t>(y * 64 + x)] > 64;
    };
    auto row_has = [&](int64_t y) {
      for (int64_t x = static_cast<int64_t>(b.x1); x < static_cast<int64_t>(std::ceil(b.x2)); ++x)
        if (bright(y, x)) return true;
      return false;
    };
    auto col_has = [&](int64_t x) {
      for (int64_t y = static_cast<int64_t>(b.y1); y < static_cast<int64_t>(std::ceil(b.y2)); ++y)
        if (bright(y, x)) return true;
      return false;
    };
    CHECK(row_has(static_cast<int64_t>(b.y1)));
    CHECK(row_has(static_cast<int64_t>(std::ceil(b.y2)) - 1));
    CHECK(col_has(static_cast<int64_t>(b.x1)));
    CHECK(col_has(static_cast<int64_t>(std::ceil(b.x2)) - 1));
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("object classes are drawn uniformly") {
  SceneSpec spec;
  spec.image_size = 32;
  spec.min_objects = 1;
  spec.max_objects = 1;
  spec.min_extent = 6;
  spec.max_extent = 10;
  spec.seed = 17;
  std::vector<int> counts(6, 0);
  int total = 0;
  for (int i = 0; i < 3000; ++i) {
    Scene s = generate_scene(spec, i);
    for (const Box& b : s.boxes) {
      counts[static_cast<size_t>(b.label)]++;
      ++total;
    }
  }
  for (int c = 0; c < 6; ++c) {
    const double freq = static_cast<double>(counts[static_cast<size_t>(c)]) / total;
    CHECK(std::abs(freq - 1.0 / 6.0) < 0.04);
  }
}

TEST_CASE("pgm round-trip preserves bytes; load_image scales to [0,1]") {
  TempDir dir;
  SceneSpec spec;
  spec.image_size = 32;
  spec.seed = 19;
  Scene s = generate_scene(spec, 0);
  const std::string path = dir.str("img.pgm");
  save_pgm(path, s.image);
  SceneImage back = load_pgm(path);
  CHECK(back.width == 32);
  CHECK(back.height == 32);
  CHECK(back.pixels == s.image.pixels);

  Tensor t = load_image(path, Dtype::F64);
  REQUIRE(t.shape() == Shape{1, 32, 32});
  const double* d = t.data<double>();
  for (size_t i = 0; i < s.image.pixels.size(); ++i)
    CHECK(d[i] == doctest::Approx(s.image.pixels[i] / 255.0).epsilon(1e-12));

  CHECK_THROWS(load_pgm(dir.str("missing.pgm")));
  {
    std::ofstream f(dir.str("bad.pgm"), std::ios::binary);
    f << "P6\n2 2\n255\n....";
  }
  CHECK_THROWS(load_pgm(dir.str("bad.pgm")));
  {
    std::ofstream f(dir.str("short.pgm"), std::ios::binary);
    f << "P5\n4 4\n255\nab";
  }
  CHECK_THROWS(load_pgm(dir.str("short.pgm")));
}

TEST_CASE("write_dataset/read_dataset round-trip with a consistent ledger") {
  TempDir root;
  SceneSpec spec;
  spec.image_size = 32;
  spec.min_objects = 1;
  spec.max_objects = 3;
  spec.min_extent = 6;
  spec.max_extent = 12;
  spec.seed = 23;
  SplitLedger ledger = write_dataset(root.str(), "train", spec, 6);
  CHECK(ledger.images == 6);
  CHECK(ledger.instances >= 6);

  Dataset ds = read_dataset(root.str(), "train");
  REQUIRE(ds.items.size() == 6);
  CHECK(ds.class_names.size() == 6);
  int64_t instances = 0;
  for (const auto& item : ds.items) {
    CHECK(item.width == 32);
    CHECK(item.height == 32);
    CHECK(fs::exists(fs::path(ds.split_dir) / item.file_name));
    for (const Box& b : item.boxes) {
      CHECK(b.label >= 0);
      CHECK(b.label < 6);
      CHECK(b.x2 <= 32.0);
    }
    instances += static_cast<int64_t>(item.boxes.size());
  }
  CHECK(instances == ledger.instances);

  SplitLedger reread = read_ledger(root.str(), "train");
  CHECK(reread.images == ledger.images);
  CHECK(reread.instances == ledger.instances);
  CHECK(reread.class_counts == ledger.class_counts);
  int64_t from_counts = 0;
  for (const auto& [name, n] : ledger.class_counts) from_counts += n;
  CHECK(from_counts == ledger.instances);

  // identical spec, fresh root: byte-identical images
  TempDir root2;
  write_dataset(root2.str(), "train", spec, 6);
  Dataset ds2 = read_dataset(root2.str(), "train");
  for (size_t i = 0; i < ds.items.size(); ++i) {
    SceneImage a = load_pgm(ds.split_dir + "/" + ds.items[i].file_name);
    SceneImage b = load_pgm(ds2.split_dir + "/" + ds2.items[i].file_name);
    CHECK(a.pixels == b.pixels);
  }
}

TEST_CASE("ground_truth_boxes mirrors dataset items") {
  TempDir root;
  SceneSpec spec;
  spec.image_size = 32;
  spec.seed = 29;
  spec.min_extent = 6;
  spec.max_extent = 12;
  write_dataset(root.str(), "val", spec, 3);
  Dataset ds = read_dataset(root.str(), "val");
  std::vector<EvalBoxes> gts = ground_truth_boxes(ds);
  REQUIRE(gts.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(gts[i].image_id == static_cast<int>(ds.items[i].image_id));
    CHECK(gts[i].boxes.size() == ds.items[i].boxes.size());
  }
}

TEST_CASE("read_dataset rejects corrupt annotations") {
  TempDir root;
  CHECK_THROWS(read_dataset(root.str(), "train"));
  fs::create_directories(fs::path(root.str()) / "train");
  {
    std::ofstream f(fs::path(root.str()) / "train" / "annotations.json");
    f << "{broken";
  }
  CHECK_THROWS_AS(read_dataset(root.str(), "train"), DataError);
  {
    std::ofstream f(fs::path(root.str()) / "train" / "annotations.json");
    f << "{\"images\": [], \"annotations\": []}";  // missing categories
  }
  CHECK_THROWS_AS(read_dataset(root.str(), "train"), DataError);
}

TEST_CASE("draw_boxes burns one outline gray per class") {
  SceneImage img;
  img.width = 32;
  img.height = 32;
  img.pixels.assign(32 * 32, 0);
  std::vector<Box> boxes = {{4, 6, 12, 14, 0.0, 2}};
  draw_boxes(&img, boxes);
  const uint8_t gray = class_gray(2);
  CHECK(img.pixels[static_cast<size_t>(6 * 32 + 4)] == gray);   // top-left corner
  CHECK(img.pixels[static_cast<size_t>(6 * 32 + 12)] == gray);  // top-right
  CHECK(img.pixels[static_cast<size_t>(14 * 32 + 4)] == gray);  // bottom-left
  CHECK(img.pixels[static_cast<size_t>(10 * 32 + 8)] == 0);     // interior untouched
  // distinct classes, distinct grays
  CHECK(class_gray(0) != class_gray(1));
}

TEST_SUITE_END();
