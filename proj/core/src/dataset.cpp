#include "maedet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "maedet/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace maedet {

const char* const kShapeClassNames[6] = {"rectangle", "ellipse", "cross",
                                         "diamond",   "ring",    "triangle"};

double speckled(double reflectivity, double looks, Rng& rng) {
  return reflectivity * rng.gamma(looks, 1.0 / looks);
}

namespace {

void validate_spec(const SceneSpec& s) {
  if (s.image_size < 16) throw ConfigError("scene: image_size must be >= 16");
  if (s.min_objects < 0 || s.max_objects < s.min_objects)
    throw ConfigError("scene: object count range is empty");
  if (s.num_classes < 1 || s.num_classes > 6)
    throw ConfigError("scene: num_classes must lie in [1, 6]");
  if (s.reflectivity.empty()) throw ConfigError("scene: no reflectivity levels");
  if (s.looks < 1.0) throw ConfigError("scene: looks must be >= 1");
  if (s.background < 0.0 || s.background >= 1.0)
    throw ConfigError("scene: background must lie in [0, 1)");
  const int64_t max_extent = s.max_extent > 0 ? s.max_extent : s.image_size / 4;
  if (s.min_extent < 4 || max_extent < s.min_extent || max_extent > s.image_size - 4)
    throw ConfigError("scene: extent range invalid for this image size");
}

bool inside_shape(int cls, double dx, double dy, double a, double b) {
  switch (cls) {
    case 0:  // rectangle
      return std::abs(dx) <= a && std::abs(dy) <= b;
    case 1: {  // ellipse
      const double u = dx / a, v = dy / b;
      return u * u + v * v <= 1.0;
    }
    case 2:  // cross
      return (std::abs(dx) <= a / 3.0 && std::abs(dy) <= b) ||
             (std::abs(dx) <= a && std::abs(dy) <= b / 3.0);
    case 3:  // diamond
      return std::abs(dx) / a + std::abs(dy) / b <= 1.0;
    case 4: {  // ring
      const double u = dx / a, v = dy / b;
      const double r2 = u * u + v * v;
      return r2 >= 0.3 && r2 <= 1.0;
    }
    default:  // triangle, apex up
      return dy >= -b && dy <= b && std::abs(dx) <= a * (dy + b) / (2.0 * b);
  }
}

/// Paints one primitive and returns the tight bounds of its painted pixels.
bool paint_shape(std::vector<double>& map, int64_t size, int cls, double cx,
                 double cy, double a, double b, double level, Box* out) {
  const int64_t x_lo = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cx - a - 1)));
  const int64_t x_hi = std::min<int64_t>(size - 1, static_cast<int64_t>(std::ceil(cx + a + 1)));
  const int64_t y_lo = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cy - b - 1)));
  const int64_t y_hi = std::min<int64_t>(size - 1, static_cast<int64_t>(std::ceil(cy + b + 1)));
  int64_t min_x = size, max_x = -1, min_y = size, max_y = -1;
  for (int64_t py = y_lo; py <= y_hi; ++py)
    for (int64_t px = x_lo; px <= x_hi; ++px) {
      if (!inside_shape(cls, px + 0.5 - cx, py + 0.5 - cy, a, b)) continue;
      map[static_cast<size_t>(py * size + px)] = level;
      min_x = std::min(min_x, px);
      max_x = std::max(max_x, px);
      min_y = std::min(min_y, py);
      max_y = std::max(max_y, py);
    }
  if (max_x < 0) return false;
  out->x1 = static_cast<double>(min_x);
  out->y1 = static_cast<double>(min_y);
  out->x2 = static_cast<double>(max_x + 1);
  out->y2 = static_cast<double>(max_y + 1);
  return true;
}

}  // namespace

Scene generate_scene(const SceneSpec& spec, int64_t index) {
  validate_spec(spec);
  Rng rng(Rng::mix(spec.seed, static_cast<uint64_t>(index)));
  const int64_t size = spec.image_size;
  const double max_extent =
      static_cast<double>(spec.max_extent > 0 ? spec.max_extent : size / 4);
  const double min_extent = static_cast<double>(spec.min_extent);

  std::vector<double> map(static_cast<size_t>(size * size), spec.background);
  Scene scene;
  const int64_t count =
      spec.min_objects +
      static_cast<int64_t>(rng.uniform_int(
          static_cast<uint64_t>(spec.max_objects - spec.min_objects + 1)));
  for (int64_t obj = 0; obj < count; ++obj) {
    const int cls = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(spec.num_classes)));
    const double level =
        spec.reflectivity[rng.uniform_int(spec.reflectivity.size())];
    const double a = rng.uniform(min_extent, max_extent) / 2.0;
    const double b = rng.uniform(min_extent, max_extent) / 2.0;
    // Keep heavy overlap out of the data: retry placement a few times and
    // take the last attempt regardless so generation stays total.
    double cx = 0, cy = 0;
    for (int attempt = 0; attempt < 40; ++attempt) {
      cx = rng.uniform(a + 1.0, static_cast<double>(size) - a - 1.0);
      cy = rng.uniform(b + 1.0, static_cast<double>(size) - b - 1.0);
      const Box cand{cx - a, cy - b, cx + a, cy + b, 0.0, cls};
      bool clear = true;
      for (const Box& prev : scene.boxes)
        if (iou(cand, prev) >= 0.3) {
          clear = false;
          break;
        }
      if (clear) break;
    }
    Box tight;
    if (!paint_shape(map, size, cls, cx, cy, a, b, level, &tight)) continue;
    tight.label = cls;
    scene.boxes.push_back(tight);
  }

  scene.image.width = size;
  scene.image.height = size;
  scene.image.pixels.resize(map.size());
  for (size_t i = 0; i < map.size(); ++i) {
    const double v = std::clamp(speckled(map[i], spec.looks, rng), 0.0, 1.0);
    scene.image.pixels[i] = static_cast<uint8_t>(std::llround(v * 255.0));
  }
  return scene;
}

void save_pgm(const std::string& path, const SceneImage& img) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<size_t>(img.width * img.height))
    throw DataError("save_pgm: inconsistent image dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_pgm: cannot open " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DataError("save_pgm: write failed for " + path);
}

namespace {

int64_t pgm_int(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#')
      while (c != EOF && c != '\n') c = in.get();
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c))
    throw DataError(path + ": malformed PGM header");
  int64_t value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  if (c != EOF) in.unget();
  return value;
}

}  // namespace

SceneImage load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_pgm: cannot open " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5')
    throw DataError(path + ": not a P5 PGM");
  SceneImage img;
  img.width = pgm_int(in, path);
  img.height = pgm_int(in, path);
  const int64_t maxval = pgm_int(in, path);
  if (img.width < 1 || img.height < 1)
    throw DataError(path + ": non-positive PGM dimensions");
  if (maxval != 255)
    throw DataError(path + ": unsupported PGM maxval " + std::to_string(maxval));
  in.get();  // the single whitespace byte before the payload
  img.pixels.resize(static_cast<size_t>(img.width * img.height));
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw DataError(path + ": truncated PGM payload");
  return img;
}

Tensor load_image(const std::string& path, Dtype dt) {
  const SceneImage img = load_pgm(path);
  std::vector<double> values(img.pixels.size());
  for (size_t i = 0; i < values.size(); ++i)
    values[i] = static_cast<double>(img.pixels[i]) / 255.0;
  return Tensor::from_vector({1, img.height, img.width}, values, dt);
}

SplitLedger write_dataset(const std::string& root, const std::string& split,
                          const SceneSpec& spec, int64_t count) {
  if (count < 1) throw ConfigError("write_dataset: count must be >= 1");
  const fs::path split_dir = fs::path(root) / split;
  fs::create_directories(split_dir / "images");

  SplitLedger ledger;
  json images = json::array();
  json annotations = json::array();
  int64_t next_ann_id = 1;
  for (int64_t i = 0; i < count; ++i) {
    const Scene scene = generate_scene(spec, i);
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05lld.pgm", static_cast<long long>(i));
    const std::string file_name = std::string("images/") + name;
    save_pgm((split_dir / file_name).string(), scene.image);
    images.push_back({{"id", i + 1},
                      {"file_name", file_name},
                      {"width", scene.image.width},
                      {"height", scene.image.height}});
    for (const Box& box : scene.boxes) {
      annotations.push_back({{"id", next_ann_id++},
                             {"image_id", i + 1},
                             {"category_id", box.label},
                             {"bbox", {box.x1, box.y1, box.w(), box.h()}}});
      ledger.class_counts[kShapeClassNames[box.label]] += 1;
      ledger.instances += 1;
    }
    ledger.images += 1;
  }

  json categories = json::array();
  for (int64_t c = 0; c < spec.num_classes; ++c)
    categories.push_back({{"id", c}, {"name", kShapeClassNames[c]}});

  json ann_file = {{"images", images},
                   {"annotations", annotations},
                   {"categories", categories}};
  std::ofstream out(split_dir / "annotations.json");
  if (!out) throw DataError("write_dataset: cannot write annotations.json");
  out << ann_file.dump(2) << "\n";

  json led = {{"images", ledger.images},
              {"instances", ledger.instances},
              {"class_counts", ledger.class_counts}};
  std::ofstream lout(split_dir / "ledger.json");
  if (!lout) throw DataError("write_dataset: cannot write ledger.json");
  lout << led.dump(2) << "\n";
  return ledger;
}

Dataset read_dataset(const std::string& root, const std::string& split) {
  const fs::path split_dir = fs::path(root) / split;
  const std::string ann_path = (split_dir / "annotations.json").string();
  std::ifstream in(ann_path);
  if (!in) throw DataError("read_dataset: cannot open " + ann_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(ann_path + ": parse error: " + e.what());
  }

  Dataset ds;
  ds.split_dir = split_dir.string();

  std::map<int64_t, int> label_of;  // category id -> contiguous label
  try {
    std::set<int64_t> cat_ids;
    for (const json& c : j.at("categories")) {
      const int64_t id = c.at("id").get<int64_t>();
      if (!cat_ids.insert(id).second)
        throw DataError(ann_path + ": duplicate category id " + std::to_string(id));
      (void)c.at("name").get<std::string>();
    }
    for (int64_t id : cat_ids) {
      label_of[id] = static_cast<int>(ds.class_names.size());
      for (const json& c : j.at("categories"))
        if (c.at("id").get<int64_t>() == id)
          ds.class_names.push_back(c.at("name").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw DataError(ann_path + ": categories: " + e.what());
  }

  std::map<int64_t, size_t> item_of;  // image id -> index in items
  {
    const json& images = j.contains("images") ? j.at("images") : json::array();
    size_t rec = 0;
    for (const json& im : images) {
      try {
        DatasetItem item;
        item.image_id = im.at("id").get<int64_t>();
        item.file_name = im.at("file_name").get<std::string>();
        item.width = im.at("width").get<int64_t>();
        item.height = im.at("height").get<int64_t>();
        if (item.width < 1 || item.height < 1)
          throw DataError(ann_path + ": images[" + std::to_string(rec) +
                          "]: non-positive dimensions");
        if (!item_of.emplace(item.image_id, ds.items.size()).second)
          throw DataError(ann_path + ": duplicate image id " +
                          std::to_string(item.image_id));
        ds.items.push_back(std::move(item));
      } catch (const json::exception& e) {
        throw DataError(ann_path + ": images[" + std::to_string(rec) +
                        "]: " + e.what());
      }
      ++rec;
    }
  }

  {
    const json& anns = j.contains("annotations") ? j.at("annotations") : json::array();
    std::set<int64_t> ann_ids;
    size_t rec = 0;
    for (const json& an : anns) {
      try {
        const int64_t id = an.at("id").get<int64_t>();
        if (!ann_ids.insert(id).second)
          throw DataError(ann_path + ": duplicate annotation id " + std::to_string(id));
        const int64_t image_id = an.at("image_id").get<int64_t>();
        const auto item_it = item_of.find(image_id);
        if (item_it == item_of.end())
          throw DataError(ann_path + ": annotation " + std::to_string(id) +
                          " references missing image id " + std::to_string(image_id));
        const int64_t cat = an.at("category_id").get<int64_t>();
        const auto label_it = label_of.find(cat);
        if (label_it == label_of.end())
          throw DataError(ann_path + ": annotation " + std::to_string(id) +
                          " references missing category id " + std::to_string(cat));
        const json& bbox = an.at("bbox");
        if (!bbox.is_array() || bbox.size() != 4)
          throw DataError(ann_path + ": annotations[" + std::to_string(rec) +
                          "]: bbox must be [x, y, w, h]");
        DatasetItem& item = ds.items[item_it->second];
        Box box;
        box.x1 = bbox[0].get<double>();
        box.y1 = bbox[1].get<double>();
        box.x2 = box.x1 + bbox[2].get<double>();
        box.y2 = box.y1 + bbox[3].get<double>();
        box.label = label_it->second;
        if (bbox[2].get<double>() <= 0.0 || bbox[3].get<double>() <= 0.0 ||
            box.x1 < 0.0 || box.y1 < 0.0 ||
            box.x2 > static_cast<double>(item.width) ||
            box.y2 > static_cast<double>(item.height))
          throw DataError(ann_path + ": annotation " + std::to_string(id) +
                          " box out of image bounds");
        item.boxes.push_back(box);
      } catch (const json::exception& e) {
        throw DataError(ann_path + ": annotations[" + std::to_string(rec) +
                        "]: " + e.what());
      }
      ++rec;
    }
  }
  return ds;
}

SplitLedger read_ledger(const std::string& root, const std::string& split) {
  const std::string path = (fs::path(root) / split / "ledger.json").string();
  std::ifstream in(path);
  if (!in) throw DataError("read_ledger: cannot open " + path);
  try {
    json j;
    in >> j;
    SplitLedger ledger;
    ledger.images = j.at("images").get<int64_t>();
    ledger.instances = j.at("instances").get<int64_t>();
    for (const auto& [name, n] : j.at("class_counts").items())
      ledger.class_counts[name] = n.get<int64_t>();
    return ledger;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::vector<EvalBoxes> ground_truth_boxes(const Dataset& ds) {
  std::vector<EvalBoxes> out;
  out.reserve(ds.items.size());
  for (const DatasetItem& item : ds.items)
    out.push_back({static_cast<int>(item.image_id), item.boxes});
  return out;
}

uint8_t class_gray(int label) {
  const int k = label < 0 ? 0 : label % 8;
  return static_cast<uint8_t>(255 - 24 * k);
}

void draw_boxes(SceneImage* img, const std::vector<Box>& boxes) {
  const int64_t w = img->width, h = img->height;
  const auto clamp_x = [&](double v) {
    return std::clamp<int64_t>(std::llround(v), 0, w - 1);
  };
  const auto clamp_y = [&](double v) {
    return std::clamp<int64_t>(std::llround(v), 0, h - 1);
  };
  for (const Box& b : boxes) {
    const int64_t x1 = clamp_x(b.x1), x2 = clamp_x(b.x2);
    const int64_t y1 = clamp_y(b.y1), y2 = clamp_y(b.y2);
    const uint8_t g = class_gray(b.label);
    for (int64_t x = x1; x <= x2; ++x) {
      img->pixels[static_cast<size_t>(y1 * w + x)] = g;
      img->pixels[static_cast<size_t>(y2 * w + x)] = g;
    }
    for (int64_t y = y1; y <= y2; ++y) {
      img->pixels[static_cast<size_t>(y * w + x1)] = g;
      img->pixels[static_cast<size_t>(y * w + x2)] = g;
    }
  }
}

}  // namespace maedet
