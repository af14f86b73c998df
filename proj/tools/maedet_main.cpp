#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "maedet/checkpoint.hpp"
#include "maedet/coco_eval.hpp"
#include "maedet/config.hpp"
#include "maedet/dataset.hpp"
#include "maedet/detector.hpp"
#include "maedet/errors.hpp"
#include "maedet/mae.hpp"
#include "maedet/rng.hpp"
#include "maedet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace maedet;

namespace {

SceneImage tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || t.shape()[0] != 1)
    throw ShapeError("expected a [1, H, W] tensor");
  SceneImage img;
  img.height = t.shape()[1];
  img.width = t.shape()[2];
  const std::vector<double> v = t.to_vector();
  img.pixels.resize(v.size());
  for (size_t i = 0; i < v.size(); ++i)
    img.pixels[i] = static_cast<uint8_t>(std::llround(std::clamp(v[i], 0.0, 1.0) * 255.0));
  return img;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

MAEModel load_mae(const std::string& stem) {
  const Checkpoint c = load_checkpoint(stem);
  if (c.kind != "mae")
    throw CheckpointError(stem + ": expected an autoencoder checkpoint, got kind '" +
                          c.kind + "'");
  MAEModel model = MAEModel::init(parse_mae_config(c.config_json), 0);
  ParamList params = model.params();
  load_into(c, params);
  return model;
}

Detector load_detector(const std::string& stem) {
  const Checkpoint c = load_checkpoint(stem);
  if (c.kind != "detector")
    throw CheckpointError(stem + ": expected a detector checkpoint, got kind '" +
                          c.kind + "'");
  Detector det = Detector::init(parse_detector_config(c.config_json), 0);
  ParamList params = det.params();
  load_into(c, params);
  return det;
}

void print_ledger(const std::string& split, const SplitLedger& ledger) {
  std::printf("%s: images=%lld instances=%lld", split.c_str(),
              static_cast<long long>(ledger.images),
              static_cast<long long>(ledger.instances));
  for (const auto& [name, count] : ledger.class_counts)
    std::printf(" %s=%lld", name.c_str(), static_cast<long long>(count));
  std::printf("\n");
}

void cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  print_ledger("train", write_dataset(out_dir, "train", cfg.data, cfg.train_images));
  SceneSpec val_spec = cfg.data;
  val_spec.seed = Rng::mix(cfg.data.seed, 1);
  print_ledger("val", write_dataset(out_dir, "val", val_spec, cfg.val_images));
}

void cmd_pretrain(const RunConfig& cfg, const std::string& data_root,
                  const std::string& out_dir) {
  const Dataset data = read_dataset(data_root, "train");
  PretrainOptions opts = cfg.pretrain;
  opts.out_dir = out_dir;
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "resolved_config.json").string(), run_config_json(cfg));
  const TrainResult r = pretrain(cfg.mae, opts, data);
  std::printf("pretrain: %lld steps, loss %.6f -> %.6f, checkpoint %s\n",
              static_cast<long long>(r.steps), r.first_loss, r.final_loss,
              r.checkpoint_stem.c_str());
}

void cmd_export(const std::string& in_stem, const std::string& out_stem) {
  const Checkpoint full = load_checkpoint(in_stem);
  const Checkpoint enc = export_encoder(full);
  save_checkpoint(enc, out_stem);
  std::printf("export: kept %zu tensors (kind %s) -> %s\n", enc.tensors.size(),
              enc.kind.c_str(), out_stem.c_str());
}

void cmd_finetune(const RunConfig& cfg, const std::string& data_root,
                  const std::string& encoder_stem, bool from_scratch,
                  const std::string& out_dir) {
  const Dataset data = read_dataset(data_root, "train");
  FinetuneOptions opts = cfg.finetune;
  opts.out_dir = out_dir;
  opts.from_scratch = opts.from_scratch || from_scratch;
  if (!opts.from_scratch && encoder_stem.empty())
    throw ConfigError("finetune: --encoder is required unless --from-scratch is set");
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "resolved_config.json").string(), run_config_json(cfg));
  const TrainResult r = finetune(cfg.detector, opts, encoder_stem, data);
  std::printf("finetune: %lld steps, loss %.6f -> %.6f, checkpoint %s\n",
              static_cast<long long>(r.steps), r.first_loss, r.final_loss,
              r.checkpoint_stem.c_str());
}

void cmd_eval(const RunConfig& cfg, const std::string& ckpt,
              const std::string& data_root, const std::string& split,
              const std::string& out_dir) {
  const Detector det = load_detector(ckpt);
  const Dataset data = read_dataset(data_root, split);
  fs::create_directories(out_dir);

  std::vector<EvalBoxes> dets;
  json det_records = json::array();
  for (const DatasetItem& item : data.items) {
    const Tensor img = load_image(data.split_dir + "/" + item.file_name);
    EvalBoxes e;
    e.image_id = static_cast<int>(item.image_id);
    e.boxes = detect_image(det, img);
    for (const Box& b : e.boxes)
      det_records.push_back({{"image_id", item.image_id},
                             {"category_id", b.label},
                             {"bbox", {b.x1, b.y1, b.w(), b.h()}},
                             {"score", b.score}});
    dets.push_back(std::move(e));
  }
  write_text((fs::path(out_dir) / "detections.json").string(),
             det_records.dump(2) + "\n");

  const Metrics m = summarize(dets, ground_truth_boxes(data), cfg.eval);
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "mAP %.6f\nAP50 %.6f\nAP75 %.6f\nmAP_small %.6f\nmAP_medium %.6f\n"
                "mAP_large %.6f\n",
                m.map, m.ap50, m.ap75, m.map_small, m.map_medium, m.map_large);
  write_text((fs::path(out_dir) / "metrics.txt").string(), buf);
  const json mj = {{"map", m.map},           {"ap50", m.ap50},
                   {"ap75", m.ap75},         {"map_small", m.map_small},
                   {"map_medium", m.map_medium}, {"map_large", m.map_large}};
  write_text((fs::path(out_dir) / "metrics.json").string(), mj.dump(2) + "\n");
  std::fputs(buf, stdout);
}

void cmd_reconstruct(const std::string& ckpt, const std::vector<std::string>& inputs,
                     uint64_t seed, const std::string& out_dir) {
  const MAEModel model = load_mae(ckpt);
  fs::create_directories(out_dir);
  NoGradGuard inference;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor img = load_image(inputs[i]);
    const MAEModel::Reconstruction rec =
        model.reconstruct(img, Rng::mix(seed, static_cast<uint64_t>(i)));
    const std::string stem = (fs::path(out_dir) / fs::path(inputs[i]).stem()).string();
    save_pgm(stem + "_masked.pgm", tensor_to_image(rec.masked));
    save_pgm(stem + "_recon.pgm", tensor_to_image(rec.recon));
    save_pgm(stem + "_original.pgm", tensor_to_image(rec.original));
  }
  std::printf("reconstruct: wrote %zu files to %s\n", 3 * inputs.size(), out_dir.c_str());
}

void cmd_detect(const std::string& ckpt, const std::vector<std::string>& inputs,
                const std::string& out_dir) {
  const Detector det = load_detector(ckpt);
  fs::create_directories(out_dir);
  json records = json::array();
  for (const std::string& input : inputs) {
    const std::vector<Box> boxes = detect_image(det, load_image(input));
    SceneImage overlay = load_pgm(input);
    draw_boxes(&overlay, boxes);
    const std::string stem = (fs::path(out_dir) / fs::path(input).stem()).string();
    save_pgm(stem + "_det.pgm", overlay);
    for (const Box& b : boxes)
      records.push_back({{"file", fs::path(input).filename().string()},
                         {"category_id", b.label},
                         {"bbox", {b.x1, b.y1, b.w(), b.h()}},
                         {"score", b.score}});
  }
  write_text((fs::path(out_dir) / "detections.json").string(), records.dump(2) + "\n");
  std::printf("detect: processed %zu images into %s\n", inputs.size(), out_dir.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked-autoencoder pretraining and two-stage detection pipeline"};
  app.require_subcommand(0, 1);

  std::string preset_name = "paper-base";
  std::string config_file;
  std::vector<std::string> sets;
  bool print_config = false;
  app.add_option("--preset", preset_name, "Config preset: paper-base or desk");
  app.add_option("--config", config_file, "JSON config file layered over the preset");
  app.add_option("--set", sets, "Override one field, e.g. --set pretrain.epochs=3");
  app.add_flag("--print-config", print_config, "Print the fully resolved config");

  std::string out_dir = "out";
  std::string data_root, ckpt, encoder_stem, split = "val";
  std::vector<std::string> inputs;
  uint64_t mask_seed = 0;
  bool from_scratch = false;
  int64_t images_flag = -1, val_images_flag = -1;
  int64_t seed_flag = -1;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("--out", out_dir, "Dataset root directory")->required();
  gen->add_option("--images", images_flag, "Train split size");
  gen->add_option("--val-images", val_images_flag, "Val split size");
  gen->add_option("--seed", seed_flag, "Generation seed");

  CLI::App* pre = app.add_subcommand("pretrain", "Self-supervised pretraining");
  pre->add_option("--data", data_root, "Dataset root")->required();
  pre->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* exp = app.add_subcommand("export-encoder", "Strip a checkpoint to its encoder");
  exp->add_option("--ckpt", ckpt, "Input checkpoint stem")->required();
  exp->add_option("--out", out_dir, "Output checkpoint stem")->required();

  CLI::App* fin = app.add_subcommand("finetune", "Supervised detection fine-tuning");
  fin->add_option("--data", data_root, "Dataset root")->required();
  fin->add_option("--encoder", encoder_stem, "Exported encoder checkpoint stem");
  fin->add_flag("--from-scratch", from_scratch, "Skip encoder loading");
  fin->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "Detection metrics over a split");
  ev->add_option("--ckpt", ckpt, "Detector checkpoint stem")->required();
  ev->add_option("--data", data_root, "Dataset root")->required();
  ev->add_option("--split", split, "Split name (default val)");
  ev->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* rec = app.add_subcommand("reconstruct", "Masked/reconstructed/original triples");
  rec->add_option("--ckpt", ckpt, "Autoencoder checkpoint stem")->required();
  rec->add_option("--images", inputs, "Input PGM files")->required();
  rec->add_option("--seed", mask_seed, "Mask seed");
  rec->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* dt = app.add_subcommand("detect", "Detection overlays for images");
  dt->add_option("--ckpt", ckpt, "Detector checkpoint stem")->required();
  dt->add_option("--images", inputs, "Input PGM files")->required();
  dt->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      if (images_flag >= 0) sets.push_back("data.train_images=" + std::to_string(images_flag));
      if (val_images_flag >= 0)
        sets.push_back("data.val_images=" + std::to_string(val_images_flag));
      if (seed_flag >= 0) sets.push_back("data.seed=" + std::to_string(seed_flag));
    }
    const RunConfig cfg = load_run_config(preset_name, config_file, sets);
    if (print_config) std::fputs(run_config_json(cfg).c_str(), stdout);

    if (gen->parsed())
      cmd_gen_data(cfg, out_dir);
    else if (pre->parsed())
      cmd_pretrain(cfg, data_root, out_dir);
    else if (exp->parsed())
      cmd_export(ckpt, out_dir);
    else if (fin->parsed())
      cmd_finetune(cfg, data_root, encoder_stem, from_scratch, out_dir);
    else if (ev->parsed())
      cmd_eval(cfg, ckpt, data_root, split, out_dir);
    else if (rec->parsed())
      cmd_reconstruct(ckpt, inputs, mask_seed, out_dir);
    else if (dt->parsed())
      cmd_detect(ckpt, inputs, out_dir);
    else if (!print_config)
      std::fputs(app.help().c_str(), stdout);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
