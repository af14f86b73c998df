#include "maedet/train.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <utility>

#include "maedet/config.hpp"
#include "maedet/errors.hpp"
#include "maedet/optim.hpp"

namespace fs = std::filesystem;

namespace maedet {

Tensor hflip_image(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("hflip_image: expected [C, H, W]");
  const Shape& s = image.shape();
  const int64_t C = s[0], H = s[1], W = s[2];
  const std::vector<double> src = image.to_vector();
  std::vector<double> dst(src.size());
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        dst[static_cast<size_t>((c * H + y) * W + x)] =
            src[static_cast<size_t>((c * H + y) * W + (W - 1 - x))];
  return Tensor::from_vector(s, dst, image.dtype());
}

Box hflip_box(const Box& b, double width) {
  Box out = b;
  out.x1 = width - b.x2;
  out.x2 = width - b.x1;
  return out;
}

namespace {

std::vector<Tensor> load_split_images(const Dataset& data) {
  std::vector<Tensor> images;
  images.reserve(data.items.size());
  for (const DatasetItem& item : data.items)
    images.push_back(load_image(data.split_dir + "/" + item.file_name));
  return images;
}

std::string format_line(int64_t step, int64_t epoch, double lr, double loss,
                        const std::vector<std::pair<const char*, double>>& parts) {
  char buf[192];
  int n = std::snprintf(buf, sizeof(buf), "%lld %lld %.8e %.8e",
                        static_cast<long long>(step), static_cast<long long>(epoch), lr, loss);
  std::string line(buf, static_cast<size_t>(n));
  for (const auto& [name, value] : parts) {
    n = std::snprintf(buf, sizeof(buf), " %s=%.8e", name, value);
    line.append(buf, static_cast<size_t>(n));
  }
  return line;
}

struct RunFiles {
  std::ofstream log;
  std::string dir;

  RunFiles(const std::string& out_dir, const char* log_name) : dir(out_dir) {
    if (dir.empty()) return;
    fs::create_directories(dir);
    log.open(fs::path(dir) / log_name);
    if (!log) throw DataError("cannot open log file in " + dir);
  }

  std::string epoch_stem(const char* prefix, int64_t epoch) const {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%s_epoch_%04lld", prefix,
                  static_cast<long long>(epoch));
    return (fs::path(dir) / buf).string();
  }
};

}  // namespace

TrainResult pretrain(const MAEConfig& model_cfg, const PretrainOptions& opts,
                     const Dataset& data) {
  if (data.items.empty()) throw ConfigError("pretrain: dataset is empty");
  if (opts.epochs < 1 || opts.batch_size < 1 || opts.checkpoint_every < 1)
    throw ConfigError("pretrain: epochs, batch_size and checkpoint_every must be >= 1");

  MAEModel model = MAEModel::init(model_cfg, opts.seed);
  ParamList params = model.params();
  require_grads(params);
  AdamW opt(&params, {opts.beta1, opts.beta2, 1e-8, opts.weight_decay});

  const int64_t n = static_cast<int64_t>(data.items.size());
  const int64_t spe = (n + opts.batch_size - 1) / opts.batch_size;
  int64_t total = opts.epochs * spe;
  if (opts.max_steps > 0) total = std::min(total, opts.max_steps);
  ScheduleSpec sched{ScheduleKind::WarmupCosine, opts.warmup_epochs * spe, total, {}, 0.1, spe};
  validate_schedule(sched);
  const double base = scaled_base_lr(opts.base_lr, opts.batch_size, opts.auto_lr_scale);

  const std::vector<Tensor> images = load_split_images(data);
  Rng rng(Rng::mix(opts.seed, 0x70726574ull));
  RunFiles files(opts.out_dir, "pretrain_log.txt");

  TrainResult res;
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < opts.epochs && step < total; ++epoch) {
    const std::vector<int64_t> order = rng.permutation(n);
    for (int64_t b0 = 0; b0 < n && step < total; b0 += opts.batch_size) {
      const int64_t bsz = std::min(opts.batch_size, n - b0);
      opt.zero_grad();
      Tensor loss;
      for (int64_t i = 0; i < bsz; ++i) {
        Tensor img = images[static_cast<size_t>(order[b0 + i])];
        if (rng.uniform() < opts.flip_prob) img = hflip_image(img);
        const uint64_t mask_seed = rng.next_u64();
        const MAEModel::Forward fwd = model.forward(img, mask_seed);
        const Tensor l = mse_masked_loss(fwd.pred, fwd.patches, fwd.plan);
        loss = loss.defined() ? add(loss, l) : l;
      }
      loss = mul_scalar(loss, 1.0 / static_cast<double>(bsz));
      const double lr = lr_at(sched, step, base);
      const double value = loss.item();
      loss.backward();
      if (opts.grad_clip > 0.0) clip_grad_norm(params, opts.grad_clip);
      opt.step(lr);

      const std::string line = format_line(step, epoch, lr, value, {});
      res.log_lines.push_back(line);
      if (files.log.is_open()) files.log << line << "\n";
      if (step == 0) res.first_loss = value;
      res.final_loss = value;
      ++step;
    }
    const bool last = epoch + 1 == opts.epochs || step >= total;
    if (!opts.out_dir.empty() && ((epoch + 1) % opts.checkpoint_every == 0 || last)) {
      const Checkpoint c = make_checkpoint("mae", mae_config_json(model_cfg), step,
                                           rng.state(), params);
      save_checkpoint(c, files.epoch_stem("mae", epoch + 1));
    }
  }
  if (!opts.out_dir.empty()) {
    const Checkpoint c = make_checkpoint("mae", mae_config_json(model_cfg), step,
                                         rng.state(), params);
    res.checkpoint_stem = (fs::path(opts.out_dir) / "mae_final").string();
    save_checkpoint(c, res.checkpoint_stem);
  }
  res.steps = step;
  return res;
}

TrainResult finetune(const DetectorConfig& model_cfg, const FinetuneOptions& opts,
                     const std::string& encoder_stem, const Dataset& data) {
  if (data.items.empty()) throw ConfigError("finetune: dataset is empty");
  if (opts.epochs < 1 || opts.batch_size < 1 || opts.checkpoint_every < 1)
    throw ConfigError("finetune: epochs, batch_size and checkpoint_every must be >= 1");

  Detector det = Detector::init(model_cfg, opts.seed);
  ParamList params = det.params();

  TrainResult res;
  if (!opts.from_scratch) {
    Checkpoint enc = load_checkpoint(encoder_stem);
    if (enc.kind == "mae")
      enc = export_encoder(enc);
    else if (enc.kind != "mae_encoder")
      throw CheckpointError("finetune: checkpoint kind '" + enc.kind +
                            "' is not an autoencoder or encoder export");
    const LoadReport rep = load_into(enc, params, /*allow_partial=*/true);
    std::vector<std::string> unmatched = rep.unused_tensors;
    for (const std::string& name : rep.missing_params)
      if (encoder_scoped(name)) unmatched.push_back(name);
    if (!unmatched.empty()) {
      std::string msg = "finetune: encoder does not match the backbone; unmatched tensors:";
      for (const std::string& u : unmatched) msg += " " + u;
      throw CheckpointError(msg);
    }
    res.encoder_load = rep;
  }
  require_grads(params);
  AdamW opt(&params, {opts.beta1, opts.beta2, 1e-8, opts.weight_decay});

  const int64_t n = static_cast<int64_t>(data.items.size());
  const int64_t spe = (n + opts.batch_size - 1) / opts.batch_size;
  int64_t total = opts.epochs * spe;
  if (opts.max_steps > 0) total = std::min(total, opts.max_steps);
  ScheduleSpec sched{ScheduleKind::WarmupMultistep, opts.warmup_steps, total,
                     opts.milestones, 0.1, spe};
  validate_schedule(sched);

  const std::vector<Tensor> images = load_split_images(data);
  Rng rng(Rng::mix(opts.seed, 0x66696e65ull));
  RunFiles files(opts.out_dir, "finetune_log.txt");

  int64_t step = 0;
  for (int64_t epoch = 0; epoch < opts.epochs && step < total; ++epoch) {
    const std::vector<int64_t> order = rng.permutation(n);
    for (int64_t b0 = 0; b0 < n && step < total; b0 += opts.batch_size) {
      const int64_t bsz = std::min(opts.batch_size, n - b0);
      opt.zero_grad();
      Tensor loss;
      double rpn_obj = 0, rpn_reg = 0, roi_cls = 0, roi_reg = 0;
      for (int64_t i = 0; i < bsz; ++i) {
        const DatasetItem& item = data.items[static_cast<size_t>(order[b0 + i])];
        Tensor img = images[static_cast<size_t>(order[b0 + i])];
        std::vector<Box> gts = item.boxes;
        if (rng.uniform() < opts.flip_prob) {
          img = hflip_image(img);
          for (Box& b : gts) b = hflip_box(b, static_cast<double>(item.width));
        }
        const DetectionLosses dl = detection_losses(det, img, gts, rng);
        loss = loss.defined() ? add(loss, dl.total) : dl.total;
        rpn_obj += dl.rpn_obj;
        rpn_reg += dl.rpn_reg;
        roi_cls += dl.roi_cls;
        roi_reg += dl.roi_reg;
      }
      loss = mul_scalar(loss, 1.0 / static_cast<double>(bsz));
      const double inv = 1.0 / static_cast<double>(bsz);
      const double lr = lr_at(sched, step, opts.base_lr);
      const double value = loss.item();
      loss.backward();
      if (opts.grad_clip > 0.0) clip_grad_norm(params, opts.grad_clip);
      opt.step(lr);

      const std::string line =
          format_line(step, epoch, lr, value,
                      {{"rpn_obj", rpn_obj * inv},
                       {"rpn_reg", rpn_reg * inv},
                       {"roi_cls", roi_cls * inv},
                       {"roi_reg", roi_reg * inv}});
      res.log_lines.push_back(line);
      if (files.log.is_open()) files.log << line << "\n";
      if (step == 0) res.first_loss = value;
      res.final_loss = value;
      ++step;
    }
    const bool last = epoch + 1 == opts.epochs || step >= total;
    if (!opts.out_dir.empty() && ((epoch + 1) % opts.checkpoint_every == 0 || last)) {
      const Checkpoint c = make_checkpoint("detector", detector_config_json(model_cfg),
                                           step, rng.state(), params);
      save_checkpoint(c, files.epoch_stem("detector", epoch + 1));
    }
  }
  if (!opts.out_dir.empty()) {
    const Checkpoint c = make_checkpoint("detector", detector_config_json(model_cfg),
                                         step, rng.state(), params);
    res.checkpoint_stem = (fs::path(opts.out_dir) / "detector_final").string();
    save_checkpoint(c, res.checkpoint_stem);
  }
  res.steps = step;
  return res;
}

}  // namespace maedet
