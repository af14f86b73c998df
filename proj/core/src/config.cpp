#include "maedet/config.hpp"

#include <fstream>

#include "json.hpp"

#include "maedet/errors.hpp"

using nlohmann::json;

namespace maedet {

namespace {

json vit_to_json(const ViTConfig& v) {
  return {{"depth", v.depth}, {"dim", v.dim}, {"heads", v.heads}, {"mlp_ratio", v.mlp_ratio}};
}

void vit_from_json(const json& j, ViTConfig* v) {
  j.at("depth").get_to(v->depth);
  j.at("dim").get_to(v->dim);
  j.at("heads").get_to(v->heads);
  j.at("mlp_ratio").get_to(v->mlp_ratio);
}

json detector_fields_to_json(const DetectorConfig& d) {
  return {{"num_classes", d.num_classes},
          {"fpn_channels", d.fpn_channels},
          {"roi_hidden", d.roi_hidden},
          {"anchor_ratios", d.anchor_ratios},
          {"anchor_scale", d.anchor_scale},
          {"rpn_pos_iou", d.rpn_pos_iou},
          {"rpn_neg_iou", d.rpn_neg_iou},
          {"rpn_sample", d.rpn_sample},
          {"rpn_pos_frac", d.rpn_pos_frac},
          {"pre_nms_topk", d.pre_nms_topk},
          {"rpn_nms", d.rpn_nms},
          {"post_nms_train", d.post_nms_train},
          {"post_nms_test", d.post_nms_test},
          {"rpn_beta", d.rpn_beta},
          {"roi_fg_iou", d.roi_fg_iou},
          {"roi_sample", d.roi_sample},
          {"roi_pos_frac", d.roi_pos_frac},
          {"roi_beta", d.roi_beta},
          {"roi_size", d.roi_size},
          {"roi_sampling", d.roi_sampling},
          {"score_thresh", d.score_thresh},
          {"final_nms", d.final_nms},
          {"max_dets", d.max_dets}};
}

void detector_fields_from_json(const json& j, DetectorConfig* d) {
  j.at("num_classes").get_to(d->num_classes);
  j.at("fpn_channels").get_to(d->fpn_channels);
  j.at("roi_hidden").get_to(d->roi_hidden);
  j.at("anchor_ratios").get_to(d->anchor_ratios);
  j.at("anchor_scale").get_to(d->anchor_scale);
  j.at("rpn_pos_iou").get_to(d->rpn_pos_iou);
  j.at("rpn_neg_iou").get_to(d->rpn_neg_iou);
  j.at("rpn_sample").get_to(d->rpn_sample);
  j.at("rpn_pos_frac").get_to(d->rpn_pos_frac);
  j.at("pre_nms_topk").get_to(d->pre_nms_topk);
  j.at("rpn_nms").get_to(d->rpn_nms);
  j.at("post_nms_train").get_to(d->post_nms_train);
  j.at("post_nms_test").get_to(d->post_nms_test);
  j.at("rpn_beta").get_to(d->rpn_beta);
  j.at("roi_fg_iou").get_to(d->roi_fg_iou);
  j.at("roi_sample").get_to(d->roi_sample);
  j.at("roi_pos_frac").get_to(d->roi_pos_frac);
  j.at("roi_beta").get_to(d->roi_beta);
  j.at("roi_size").get_to(d->roi_size);
  j.at("roi_sampling").get_to(d->roi_sampling);
  j.at("score_thresh").get_to(d->score_thresh);
  j.at("final_nms").get_to(d->final_nms);
  j.at("max_dets").get_to(d->max_dets);
}

json run_config_to_json(const RunConfig& c) {
  json model = {{"image_size", c.mae.image_size},
                {"patch", c.mae.patch},
                {"in_channels", c.mae.in_channels},
                {"mask_ratio", c.mae.mask_ratio},
                {"encoder", vit_to_json(c.mae.encoder)},
                {"decoder", vit_to_json(c.mae.decoder)},
                {"detector", detector_fields_to_json(c.detector)}};
  json pretrain = {{"epochs", c.pretrain.epochs},
                   {"batch_size", c.pretrain.batch_size},
                   {"max_steps", c.pretrain.max_steps},
                   {"base_lr", c.pretrain.base_lr},
                   {"auto_lr_scale", c.pretrain.auto_lr_scale},
                   {"weight_decay", c.pretrain.weight_decay},
                   {"beta1", c.pretrain.beta1},
                   {"beta2", c.pretrain.beta2},
                   {"warmup_epochs", c.pretrain.warmup_epochs},
                   {"flip_prob", c.pretrain.flip_prob},
                   {"grad_clip", c.pretrain.grad_clip},
                   {"checkpoint_every", c.pretrain.checkpoint_every},
                   {"seed", c.pretrain.seed}};
  json finetune = {{"epochs", c.finetune.epochs},
                   {"batch_size", c.finetune.batch_size},
                   {"max_steps", c.finetune.max_steps},
                   {"base_lr", c.finetune.base_lr},
                   {"weight_decay", c.finetune.weight_decay},
                   {"beta1", c.finetune.beta1},
                   {"beta2", c.finetune.beta2},
                   {"warmup_steps", c.finetune.warmup_steps},
                   {"milestones", c.finetune.milestones},
                   {"flip_prob", c.finetune.flip_prob},
                   {"grad_clip", c.finetune.grad_clip},
                   {"checkpoint_every", c.finetune.checkpoint_every},
                   {"seed", c.finetune.seed},
                   {"from_scratch", c.finetune.from_scratch}};
  json data = {{"image_size", c.data.image_size},
               {"min_objects", c.data.min_objects},
               {"max_objects", c.data.max_objects},
               {"num_classes", c.data.num_classes},
               {"min_extent", c.data.min_extent},
               {"max_extent", c.data.max_extent},
               {"background", c.data.background},
               {"reflectivity", c.data.reflectivity},
               {"looks", c.data.looks},
               {"seed", c.data.seed},
               {"train_images", c.train_images},
               {"val_images", c.val_images}};
  json eval = {{"iou_thresholds", c.eval.iou_thresholds},
               {"recall_samples", c.eval.recall_samples},
               {"small_area", c.eval.small_area},
               {"large_area", c.eval.large_area},
               {"max_dets", c.eval.max_dets}};
  return {{"model", model},
          {"pretrain", pretrain},
          {"finetune", finetune},
          {"data", data},
          {"eval", eval}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    const json& model = j.at("model");
    model.at("image_size").get_to(c.mae.image_size);
    model.at("patch").get_to(c.mae.patch);
    model.at("in_channels").get_to(c.mae.in_channels);
    model.at("mask_ratio").get_to(c.mae.mask_ratio);
    vit_from_json(model.at("encoder"), &c.mae.encoder);
    vit_from_json(model.at("decoder"), &c.mae.decoder);
    c.mae.encoder.patch = c.mae.decoder.patch = c.mae.patch;
    c.mae.encoder.in_channels = c.mae.decoder.in_channels = c.mae.in_channels;
    detector_fields_from_json(model.at("detector"), &c.detector);
    c.detector.encoder = c.mae.encoder;
    c.detector.patch = c.mae.patch;
    c.detector.in_channels = c.mae.in_channels;
    c.detector.image_size = c.mae.image_size;

    const json& pt = j.at("pretrain");
    pt.at("epochs").get_to(c.pretrain.epochs);
    pt.at("batch_size").get_to(c.pretrain.batch_size);
    pt.at("max_steps").get_to(c.pretrain.max_steps);
    pt.at("base_lr").get_to(c.pretrain.base_lr);
    pt.at("auto_lr_scale").get_to(c.pretrain.auto_lr_scale);
    pt.at("weight_decay").get_to(c.pretrain.weight_decay);
    pt.at("beta1").get_to(c.pretrain.beta1);
    pt.at("beta2").get_to(c.pretrain.beta2);
    pt.at("warmup_epochs").get_to(c.pretrain.warmup_epochs);
    pt.at("flip_prob").get_to(c.pretrain.flip_prob);
    pt.at("grad_clip").get_to(c.pretrain.grad_clip);
    pt.at("checkpoint_every").get_to(c.pretrain.checkpoint_every);
    pt.at("seed").get_to(c.pretrain.seed);

    const json& ft = j.at("finetune");
    ft.at("epochs").get_to(c.finetune.epochs);
    ft.at("batch_size").get_to(c.finetune.batch_size);
    ft.at("max_steps").get_to(c.finetune.max_steps);
    ft.at("base_lr").get_to(c.finetune.base_lr);
    ft.at("weight_decay").get_to(c.finetune.weight_decay);
    ft.at("beta1").get_to(c.finetune.beta1);
    ft.at("beta2").get_to(c.finetune.beta2);
    ft.at("warmup_steps").get_to(c.finetune.warmup_steps);
    ft.at("milestones").get_to(c.finetune.milestones);
    ft.at("flip_prob").get_to(c.finetune.flip_prob);
    ft.at("grad_clip").get_to(c.finetune.grad_clip);
    ft.at("checkpoint_every").get_to(c.finetune.checkpoint_every);
    ft.at("seed").get_to(c.finetune.seed);
    ft.at("from_scratch").get_to(c.finetune.from_scratch);

    const json& data = j.at("data");
    data.at("image_size").get_to(c.data.image_size);
    data.at("min_objects").get_to(c.data.min_objects);
    data.at("max_objects").get_to(c.data.max_objects);
    data.at("num_classes").get_to(c.data.num_classes);
    data.at("min_extent").get_to(c.data.min_extent);
    data.at("max_extent").get_to(c.data.max_extent);
    data.at("background").get_to(c.data.background);
    data.at("reflectivity").get_to(c.data.reflectivity);
    data.at("looks").get_to(c.data.looks);
    data.at("seed").get_to(c.data.seed);
    data.at("train_images").get_to(c.train_images);
    data.at("val_images").get_to(c.val_images);

    const json& eval = j.at("eval");
    eval.at("iou_thresholds").get_to(c.eval.iou_thresholds);
    eval.at("recall_samples").get_to(c.eval.recall_samples);
    eval.at("small_area").get_to(c.eval.small_area);
    eval.at("large_area").get_to(c.eval.large_area);
    eval.at("max_dets").get_to(c.eval.max_dets);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

// The template value (from the preset) defines the expected JSON category.
void check_value_kind(const json& tmpl, const json& value, const std::string& key) {
  const char* want = nullptr;
  if (tmpl.is_number() && !value.is_number()) want = "a number";
  else if (tmpl.is_boolean() && !value.is_boolean()) want = "a boolean";
  else if (tmpl.is_string() && !value.is_string()) want = "a string";
  else if (tmpl.is_array() && !value.is_array()) want = "an array";
  if (want)
    throw ConfigError("config key " + key + " expects " + want + ", got " + value.dump());
}

void reject_unknown(const json& input, const json& tmpl, const std::string& prefix) {
  if (!input.is_object()) throw ConfigError("config: expected an object at " +
                                            (prefix.empty() ? "top level" : prefix));
  for (const auto& [key, value] : input.items()) {
    if (!tmpl.contains(key)) throw ConfigError("unknown config key: " + prefix + key);
    if (tmpl.at(key).is_object()) reject_unknown(value, tmpl.at(key), prefix + key + ".");
    else check_value_kind(tmpl.at(key), value, prefix + key);
  }
}

void deep_merge(json& base, const json& overlay) {
  for (const auto& [key, value] : overlay.items()) {
    if (value.is_object() && base.contains(key) && base.at(key).is_object())
      deep_merge(base[key], value);
    else
      base[key] = value;
  }
}

void apply_override(json& root, const std::string& ov) {
  const size_t eq = ov.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like path.to.key=value: " + ov);
  const std::string path = ov.substr(0, eq);
  json value = json::parse(ov.substr(eq + 1), nullptr, false);
  if (value.is_discarded()) value = ov.substr(eq + 1);  // bare strings

  json* node = &root;
  size_t start = 0;
  std::string walked;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    walked += (walked.empty() ? "" : ".") + key;
    if (!node->is_object() || !node->contains(key))
      throw ConfigError("unknown config key: " + walked);
    if (dot == std::string::npos) {
      if (node->at(key).is_object())
        throw ConfigError("cannot override config section " + walked +
                          " with a single value");
      check_value_kind(node->at(key), value, walked);
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace

RunConfig preset(const std::string& name) {
  if (name == "paper-base") return RunConfig{};
  if (name != "desk")
    throw ConfigError("unknown preset '" + name + "' (expected paper-base or desk)");

  RunConfig c;
  c.mae.image_size = 64;
  c.mae.patch = 8;
  c.mae.encoder = ViTConfig{2, 64, 4, 4.0, 8, 1};
  c.mae.decoder = ViTConfig{1, 32, 4, 4.0, 8, 1};
  c.detector.encoder = c.mae.encoder;
  c.detector.patch = 8;
  c.detector.image_size = 64;
  c.detector.fpn_channels = 64;
  c.detector.roi_hidden = 256;
  c.detector.anchor_scale = 4.0;
  c.detector.rpn_sample = 64;
  c.detector.pre_nms_topk = 500;
  c.detector.post_nms_train = 200;
  c.detector.post_nms_test = 100;
  c.detector.roi_sample = 128;

  c.pretrain.epochs = 150;
  c.pretrain.batch_size = 4;
  c.pretrain.base_lr = 2e-3;
  c.pretrain.warmup_epochs = 5;
  c.pretrain.checkpoint_every = 50;

  c.finetune.epochs = 12;
  c.finetune.batch_size = 2;
  c.finetune.base_lr = 1e-3;
  c.finetune.warmup_steps = 50;
  c.finetune.checkpoint_every = 4;

  c.data.image_size = 64;
  c.data.min_objects = 2;
  c.data.max_objects = 4;
  c.data.min_extent = 8;
  c.data.max_extent = 16;
  c.data.seed = 7;
  c.train_images = 50;
  c.val_images = 20;
  return c;
}

std::string run_config_json(const RunConfig& cfg) {
  return run_config_to_json(cfg).dump(2) + "\n";
}

RunConfig load_run_config(const std::string& preset_name, const std::string& config_file,
                          const std::vector<std::string>& overrides) {
  const RunConfig base = preset(preset_name.empty() ? "paper-base" : preset_name);
  json tree = run_config_to_json(base);
  if (!config_file.empty()) {
    std::ifstream in(config_file);
    if (!in) throw ConfigError("cannot open config file " + config_file);
    json file_tree;
    try {
      in >> file_tree;
    } catch (const json::exception& e) {
      throw ConfigError(config_file + ": " + e.what());
    }
    reject_unknown(file_tree, tree, "");
    deep_merge(tree, file_tree);
  }
  for (const std::string& ov : overrides) apply_override(tree, ov);
  return run_config_from_json(tree);
}

std::string mae_config_json(const MAEConfig& cfg) {
  json j = {{"image_size", cfg.image_size},
            {"patch", cfg.patch},
            {"in_channels", cfg.in_channels},
            {"mask_ratio", cfg.mask_ratio},
            {"encoder", vit_to_json(cfg.encoder)},
            {"decoder", vit_to_json(cfg.decoder)}};
  return j.dump();
}

MAEConfig parse_mae_config(const std::string& text) {
  MAEConfig cfg;
  try {
    const json j = json::parse(text);
    j.at("image_size").get_to(cfg.image_size);
    j.at("patch").get_to(cfg.patch);
    j.at("in_channels").get_to(cfg.in_channels);
    j.at("mask_ratio").get_to(cfg.mask_ratio);
    vit_from_json(j.at("encoder"), &cfg.encoder);
    vit_from_json(j.at("decoder"), &cfg.decoder);
    cfg.encoder.patch = cfg.decoder.patch = cfg.patch;
    cfg.encoder.in_channels = cfg.decoder.in_channels = cfg.in_channels;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("autoencoder config: ") + e.what());
  }
  return cfg;
}

std::string detector_config_json(const DetectorConfig& cfg) {
  json j = detector_fields_to_json(cfg);
  j["image_size"] = cfg.image_size;
  j["patch"] = cfg.patch;
  j["in_channels"] = cfg.in_channels;
  j["encoder"] = vit_to_json(cfg.encoder);
  return j.dump();
}

DetectorConfig parse_detector_config(const std::string& text) {
  DetectorConfig cfg;
  try {
    const json j = json::parse(text);
    detector_fields_from_json(j, &cfg);
    j.at("image_size").get_to(cfg.image_size);
    j.at("patch").get_to(cfg.patch);
    j.at("in_channels").get_to(cfg.in_channels);
    vit_from_json(j.at("encoder"), &cfg.encoder);
    cfg.encoder.patch = cfg.patch;
    cfg.encoder.in_channels = cfg.in_channels;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("detector config: ") + e.what());
  }
  return cfg;
}

}  // namespace maedet
