#include "maedet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maedet/errors.hpp"
#include "maedet/patches.hpp"
#include "maedet/rng.hpp"
#include "tensor_impl.hpp"

namespace maedet {

Conv Conv::init(int64_t cin, int64_t cout, int k, int stride, int pad, Rng& rng, double stddev) {
  Conv c;
  c.w = Tensor::trunc_normal({cout, cin, k, k}, rng, stddev);
  c.b = Tensor::zeros({cout});
  c.stride = stride;
  c.pad = pad;
  return c;
}

void Conv::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w, true});
  out.push_back({prefix + ".b", b, false});
}

Deconv Deconv::init(int64_t cin, int64_t cout, int k, int stride, Rng& rng, double stddev) {
  Deconv d;
  d.w = Tensor::trunc_normal({cin, cout, k, k}, rng, stddev);
  d.b = Tensor::zeros({cout});
  d.stride = stride;
  return d;
}

void Deconv::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".w", w, true});
  out.push_back({prefix + ".b", b, false});
}

// ------------------------------------------------------------------- FPN

SimpleFPN SimpleFPN::init(int64_t dim, int64_t channels, Rng& rng) {
  if (dim % 4 != 0) throw ConfigError("fpn: backbone dim must be divisible by 4");
  SimpleFPN f;
  f.dim = dim;
  f.channels = channels;
  f.up4_a = Deconv::init(dim, dim / 2, 2, 2, rng);
  f.up4_b = Deconv::init(dim / 2, dim / 4, 2, 2, rng);
  f.up8 = Deconv::init(dim, dim / 2, 2, 2, rng);
  f.down32 = Conv::init(dim, dim, 3, 2, 1, rng);
  f.lat4 = Conv::init(dim / 4, channels, 1, 1, 0, rng);
  f.lat8 = Conv::init(dim / 2, channels, 1, 1, 0, rng);
  f.lat16 = Conv::init(dim, channels, 1, 1, 0, rng);
  f.lat32 = Conv::init(dim, channels, 1, 1, 0, rng);
  f.out4 = Conv::init(channels, channels, 3, 1, 1, rng);
  f.out8 = Conv::init(channels, channels, 3, 1, 1, rng);
  f.out16 = Conv::init(channels, channels, 3, 1, 1, rng);
  f.out32 = Conv::init(channels, channels, 3, 1, 1, rng);
  return f;
}

std::array<Tensor, 5> SimpleFPN::forward(const Tensor& map) const {
  if (map.rank() != 3 || map.size(0) != dim)
    throw ShapeError("fpn: expected [" + std::to_string(dim) + ",H,W] map, got " +
                     shape_str(map.shape()));
  Tensor b4 = up4_b(up4_a(map));
  Tensor b8 = up8(map);
  Tensor b32 = down32(map);
  Tensor p2 = out4(lat4(b4));
  Tensor p3 = out8(lat8(b8));
  Tensor p4 = out16(lat16(map));
  Tensor p5 = out32(lat32(b32));
  Tensor p6 = maxpool2d(p5, 1, 2);
  return {p2, p3, p4, p5, p6};
}

void SimpleFPN::collect(const std::string& prefix, ParamList& out) const {
  up4_a.collect(prefix + ".up4_a", out);
  up4_b.collect(prefix + ".up4_b", out);
  up8.collect(prefix + ".up8", out);
  down32.collect(prefix + ".down32", out);
  lat4.collect(prefix + ".lat4", out);
  lat8.collect(prefix + ".lat8", out);
  lat16.collect(prefix + ".lat16", out);
  lat32.collect(prefix + ".lat32", out);
  out4.collect(prefix + ".out4", out);
  out8.collect(prefix + ".out8", out);
  out16.collect(prefix + ".out16", out);
  out32.collect(prefix + ".out32", out);
}

// ------------------------------------------------------------------- RPN

RPNHead RPNHead::init(int64_t channels, int anchors, Rng& rng) {
  RPNHead h;
  h.shared = Conv::init(channels, channels, 3, 1, 1, rng);
  h.obj = Conv::init(channels, anchors, 1, 1, 0, rng);
  h.reg = Conv::init(channels, 4 * anchors, 1, 1, 0, rng);
  return h;
}

void RPNHead::collect(const std::string& prefix, ParamList& out) const {
  shared.collect(prefix + ".shared", out);
  obj.collect(prefix + ".obj", out);
  reg.collect(prefix + ".reg", out);
}

// --------------------------------------------------------------- RoI head

std::pair<Tensor, Tensor> RoIHead::forward(const Tensor& flat_feats) const {
  Tensor h = relu(fc2(relu(fc1(flat_feats))));
  return {cls(h), reg(h)};
}

RoIHead RoIHead::init(int64_t in_dim, int64_t hidden, int num_classes, Rng& rng) {
  RoIHead h;
  h.fc1 = Linear::init(in_dim, hidden, rng);
  h.fc2 = Linear::init(hidden, hidden, rng);
  h.cls = Linear::init(hidden, num_classes + 1, rng);
  h.reg = Linear::init(hidden, 4 * num_classes, rng);
  return h;
}

void RoIHead::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
  cls.collect(prefix + ".cls", out);
  reg.collect(prefix + ".reg", out);
}

// -------------------------------------------------------------- detector

Detector Detector::init(const DetectorConfig& cfg, uint64_t seed) {
  if (cfg.patch % 4 != 0)
    throw ConfigError("detector: patch size must be divisible by 4 for the pyramid strides");
  if (cfg.image_size % cfg.patch != 0)
    throw ConfigError("detector: image size " + std::to_string(cfg.image_size) +
                      " not divisible by patch " + std::to_string(cfg.patch));
  if (cfg.num_classes < 1) throw ConfigError("detector: need at least one class");
  Rng rng(seed);
  Detector d;
  d.cfg = cfg;
  d.cls_token = Tensor::trunc_normal({1, cfg.encoder.dim}, rng, 0.02);
  d.embed_w = Tensor::trunc_normal({cfg.patch_len(), cfg.encoder.dim}, rng, 0.02);
  d.encoder = ViTTrunk::init(cfg.encoder, rng);
  d.enc_pos = build_pos_table(cfg.grid_side(), cfg.grid_side(), cfg.encoder.dim);
  d.fpn = SimpleFPN::init(cfg.encoder.dim, cfg.fpn_channels, rng);
  d.rpn = RPNHead::init(cfg.fpn_channels, cfg.anchors_per_cell(), rng);
  d.roi = RoIHead::init(cfg.fpn_channels * cfg.roi_size * cfg.roi_size, cfg.roi_hidden,
                        cfg.num_classes, rng);
  return d;
}

ParamList Detector::params() const {
  ParamList out;
  out.push_back({"cls_token", cls_token, false});
  out.push_back({"embed.w", embed_w, true});
  encoder.collect("encoder", out);
  fpn.collect("fpn", out);
  rpn.collect("rpn", out);
  roi.collect("roi", out);
  return out;
}

Tensor Detector::backbone_map(const Tensor& image) const {
  PatchGrid grid = patchify(image, cfg.patch);
  MaskPlan plan = sample_mask(grid.count(), 0.0, 0);
  Tensor tokens = gather_visible(grid, plan, embed_w, cls_token, enc_pos);
  return tokens_to_map(encoder.forward(tokens), grid.grid_h, grid.grid_w);
}

std::array<Tensor, 5> Detector::pyramid(const Tensor& image) const {
  return fpn.forward(backbone_map(image));
}

RPNOut Detector::rpn_forward(const std::array<Tensor, 5>& pyr) const {
  RPNOut out;
  for (const auto& level : pyr) {
    Tensor h = relu(rpn.shared(level));
    out.obj.push_back(rpn.obj(h));
    out.reg.push_back(rpn.reg(h));
  }
  return out;
}

std::vector<std::vector<Box>> pyramid_anchors(const DetectorConfig& cfg) {
  const int64_t g = cfg.grid_side();
  const auto strides = cfg.strides();
  const int64_t p5 = (g - 1) / 2 + 1;  // stride-2 conv, pad 1, kernel 3
  const int64_t p6 = (p5 - 1) / 2 + 1;
  const std::array<int64_t, 5> sides = {g * 4, g * 2, g, p5, p6};
  std::vector<std::vector<Box>> out;
  for (int l = 0; l < 5; ++l)
    out.push_back(make_level_anchors(sides[static_cast<size_t>(l)], sides[static_cast<size_t>(l)],
                                     strides[static_cast<size_t>(l)], cfg.anchor_ratios,
                                     cfg.anchor_scale));
  return out;
}

static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<Box> select_proposals(const RPNOut& out, const std::vector<std::vector<Box>>& anchors,
                                  const DetectorConfig& cfg, bool train) {
  const double img = static_cast<double>(cfg.image_size);
  std::vector<Box> merged;
  for (size_t l = 0; l < anchors.size(); ++l) {
    const auto logits = out.obj[l].to_vector();
    const auto deltas = out.reg[l].to_vector();
    const auto& levanch = anchors[l];
    const int64_t hw = out.obj[l].size(1) * out.obj[l].size(2);
    if (logits.size() != levanch.size())
      throw ShapeError("proposals: level " + std::to_string(l) + " has " +
                       std::to_string(logits.size()) + " logits for " +
                       std::to_string(levanch.size()) + " anchors");
    std::vector<int64_t> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    const size_t topk = std::min<size_t>(static_cast<size_t>(cfg.pre_nms_topk), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<int64_t>(topk), order.end(),
                      [&](int64_t a, int64_t b) {
                        if (logits[static_cast<size_t>(a)] != logits[static_cast<size_t>(b)])
                          return logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)];
                        return a < b;
                      });
    for (size_t t = 0; t < topk; ++t) {
      const int64_t a = order[t];
      const int64_t r = a / hw, cell = a % hw;
      const double tx = deltas[static_cast<size_t>((r * 4 + 0) * hw + cell)];
      const double ty = deltas[static_cast<size_t>((r * 4 + 1) * hw + cell)];
      const double tw = deltas[static_cast<size_t>((r * 4 + 2) * hw + cell)];
      const double th = deltas[static_cast<size_t>((r * 4 + 3) * hw + cell)];
      Box b = clip_box(decode_deltas(levanch[static_cast<size_t>(a)], tx, ty, tw, th), img, img);
      if (b.w() < 1.0 || b.h() < 1.0) continue;
      b.score = sigmoid(logits[static_cast<size_t>(a)]);
      merged.push_back(b);
    }
  }
  const auto kept = nms(merged, cfg.rpn_nms);
  const size_t budget = static_cast<size_t>(train ? cfg.post_nms_train : cfg.post_nms_test);
  std::vector<Box> props;
  for (size_t i = 0; i < kept.size() && i < budget; ++i)
    props.push_back(merged[static_cast<size_t>(kept[i])]);
  return props;
}

// ------------------------------------------------------------- RoIAlign

Tensor roi_align(const Tensor& level_map, const Box& box, int stride, int out_size, int sampling) {
  if (level_map.rank() != 3) throw ShapeError("roi_align: expected [C,H,W] map");
  if (box.w() <= 0.0 || box.h() <= 0.0)
    throw ShapeError("roi_align: degenerate box");
  if (out_size <= 0 || sampling <= 0 || stride <= 0)
    throw ConfigError("roi_align: bad out_size/sampling/stride");
  const int64_t C = level_map.size(0), H = level_map.size(1), W = level_map.size(2);

  const double rx1 = box.x1 / stride, ry1 = box.y1 / stride;
  const double rw = std::max(box.w() / stride, 1.0);
  const double rh = std::max(box.h() / stride, 1.0);
  const double bin_w = rw / out_size, bin_h = rh / out_size;

  struct Tap {
    int64_t p00 = -1, p01 = -1, p10 = -1, p11 = -1;
    double w00 = 0, w01 = 0, w10 = 0, w11 = 0;
  };
  const int taps_per_cell = sampling * sampling;
  auto taps = std::make_shared<std::vector<Tap>>(
      static_cast<size_t>(out_size) * out_size * taps_per_cell);
  for (int cy = 0; cy < out_size; ++cy)
    for (int cx = 0; cx < out_size; ++cx)
      for (int sy = 0; sy < sampling; ++sy)
        for (int sx = 0; sx < sampling; ++sx) {
          double y = ry1 + cy * bin_h + (sy + 0.5) * bin_h / sampling;
          double x = rx1 + cx * bin_w + (sx + 0.5) * bin_w / sampling;
          Tap tap;
          if (!(y < -1.0 || y > static_cast<double>(H) || x < -1.0 ||
                x > static_cast<double>(W))) {
            y = std::max(y, 0.0);
            x = std::max(x, 0.0);
            int64_t y0 = static_cast<int64_t>(y), x0 = static_cast<int64_t>(x);
            int64_t y1, x1;
            if (y0 >= H - 1) { y0 = y1 = H - 1; y = static_cast<double>(y0); } else y1 = y0 + 1;
            if (x0 >= W - 1) { x0 = x1 = W - 1; x = static_cast<double>(x0); } else x1 = x0 + 1;
            const double ly = y - static_cast<double>(y0), lx = x - static_cast<double>(x0);
            const double hy = 1.0 - ly, hx = 1.0 - lx;
            tap.p00 = y0 * W + x0;
            tap.p01 = y0 * W + x1;
            tap.p10 = y1 * W + x0;
            tap.p11 = y1 * W + x1;
            tap.w00 = hy * hx;
            tap.w01 = hy * lx;
            tap.w10 = ly * hx;
            tap.w11 = ly * lx;
          }
          (*taps)[static_cast<size_t>(((cy * out_size) + cx) * taps_per_cell + sy * sampling + sx)] = tap;
        }

  auto node = make_node({C, out_size, out_size}, level_map.dtype(), {level_map}, "roi_align");
  const int64_t cells = static_cast<int64_t>(out_size) * out_size;
  for_dtype(node->dtype, [&]<class T>() {
    const T* src = level_map.impl()->data<T>();
    T* dst = node->data<T>();
    for (int64_t c = 0; c < C; ++c) {
      const T* plane = src + c * H * W;
      for (int64_t cell = 0; cell < cells; ++cell) {
        double acc = 0.0;
        for (int t = 0; t < taps_per_cell; ++t) {
          const Tap& tap = (*taps)[static_cast<size_t>(cell * taps_per_cell + t)];
          if (tap.p00 < 0) continue;
          acc += tap.w00 * static_cast<double>(plane[tap.p00]) +
                 tap.w01 * static_cast<double>(plane[tap.p01]) +
                 tap.w10 * static_cast<double>(plane[tap.p10]) +
                 tap.w11 * static_cast<double>(plane[tap.p11]);
        }
        dst[c * cells + cell] = static_cast<T>(acc / taps_per_cell);
      }
    }
  });
  if (node->requires_grad) {
    auto psrc = owned_impl(level_map);
    const int tpc = taps_per_cell;
    node->backward_fn = [psrc, taps, C, H, W, cells, tpc](TensorImpl& self) {
      if (!psrc->requires_grad) return;
      psrc->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        T* gx = psrc->grad<T>();
        for (int64_t c = 0; c < C; ++c) {
          T* gplane = gx + c * H * W;
          for (int64_t cell = 0; cell < cells; ++cell) {
            const T go = g[c * cells + cell] / static_cast<T>(tpc);
            if (go == T(0)) continue;
            for (int t = 0; t < tpc; ++t) {
              const Tap& tap = (*taps)[static_cast<size_t>(cell * tpc + t)];
              if (tap.p00 < 0) continue;
              gplane[tap.p00] += go * static_cast<T>(tap.w00);
              gplane[tap.p01] += go * static_cast<T>(tap.w01);
              gplane[tap.p10] += go * static_cast<T>(tap.w10);
              gplane[tap.p11] += go * static_cast<T>(tap.w11);
            }
          }
        }
      });
    };
  }
  return wrap(node);
}

int fpn_level_for_box(const Box& box) {
  const double a = box.area();
  if (a <= 0.0) return 0;
  const int k = static_cast<int>(std::floor(4.0 + std::log2(std::sqrt(a) / 224.0)));
  return std::clamp(k, 2, 6) - 2;
}

// ---------------------------------------------------------------- losses

namespace {

// Flattens per-level conv maps to single-column tensors and concatenates,
// so global anchor indices address rows directly.
Tensor concat_levels_flat(const std::vector<Tensor>& levels) {
  std::vector<Tensor> flat;
  flat.reserve(levels.size());
  for (const auto& t : levels) flat.push_back(reshape(t, {t.numel(), 1}));
  return concat(flat, 0);
}

// Global flat positions of the 4 delta channels for anchor `a` (local
// ratio-major index) on a level whose reg map is [4A, Hs, Ws].
std::array<int64_t, 4> delta_positions(int64_t a, int64_t hw, int64_t level_offset4) {
  const int64_t r = a / hw, cell = a % hw;
  std::array<int64_t, 4> out{};
  for (int64_t d = 0; d < 4; ++d) out[static_cast<size_t>(d)] = level_offset4 + (r * 4 + d) * hw + cell;
  return out;
}

}  // namespace

DetectionLosses detection_losses(const Detector& det, const Tensor& image,
                                 const std::vector<Box>& gts, Rng& rng) {
  const auto& cfg = det.cfg;
  for (const auto& g : gts)
    if (g.label < 0 || g.label >= cfg.num_classes)
      throw DataError("detection_losses: gt label " + std::to_string(g.label) + " out of range");

  const auto pyr = det.pyramid(image);
  const auto rpn_out = det.rpn_forward(pyr);
  const auto anchors = pyramid_anchors(cfg);

  std::vector<Box> all_anchors;
  std::vector<int64_t> level_of, local_of, obj_offset, reg_offset4;
  std::vector<int64_t> level_hw;
  {
    int64_t obj_off = 0, reg_off = 0;
    for (size_t l = 0; l < anchors.size(); ++l) {
      obj_offset.push_back(obj_off);
      reg_offset4.push_back(reg_off);
      level_hw.push_back(rpn_out.obj[l].size(1) * rpn_out.obj[l].size(2));
      for (size_t a = 0; a < anchors[l].size(); ++a) {
        all_anchors.push_back(anchors[l][a]);
        level_of.push_back(static_cast<int64_t>(l));
        local_of.push_back(static_cast<int64_t>(a));
      }
      obj_off += rpn_out.obj[l].numel();
      reg_off += rpn_out.reg[l].numel();
    }
  }

  const auto assign = assign_anchors(all_anchors, gts, cfg.rpn_pos_iou, cfg.rpn_neg_iou);
  std::vector<int64_t> pos, neg;
  for (size_t i = 0; i < assign.label.size(); ++i) {
    if (assign.label[i] == 1) pos.push_back(static_cast<int64_t>(i));
    else if (assign.label[i] == 0) neg.push_back(static_cast<int64_t>(i));
  }
  const int64_t want_pos = static_cast<int64_t>(std::llround(cfg.rpn_sample * cfg.rpn_pos_frac));
  const int64_t n_pos = std::min<int64_t>(static_cast<int64_t>(pos.size()), want_pos);
  const int64_t n_neg = std::min<int64_t>(static_cast<int64_t>(neg.size()), cfg.rpn_sample - n_pos);
  std::vector<int64_t> sampled_pos, sampled_neg;
  for (auto k : rng.sample_without_replacement(static_cast<int64_t>(pos.size()), n_pos))
    sampled_pos.push_back(pos[static_cast<size_t>(k)]);
  for (auto k : rng.sample_without_replacement(static_cast<int64_t>(neg.size()), n_neg))
    sampled_neg.push_back(neg[static_cast<size_t>(k)]);
  std::sort(sampled_pos.begin(), sampled_pos.end());
  std::sort(sampled_neg.begin(), sampled_neg.end());

  DetectionLosses out;
  const int64_t n_sampled = n_pos + n_neg;
  if (n_sampled == 0) throw DataError("detection_losses: no anchors available to sample");

  Tensor obj_flat = concat_levels_flat(rpn_out.obj);
  std::vector<int64_t> obj_rows;
  std::vector<double> obj_targets;
  for (auto i : sampled_pos) {
    obj_rows.push_back(obj_offset[static_cast<size_t>(level_of[static_cast<size_t>(i)])] +
                       local_of[static_cast<size_t>(i)]);
    obj_targets.push_back(1.0);
  }
  for (auto i : sampled_neg) {
    obj_rows.push_back(obj_offset[static_cast<size_t>(level_of[static_cast<size_t>(i)])] +
                       local_of[static_cast<size_t>(i)]);
    obj_targets.push_back(0.0);
  }
  Tensor obj_logits = gather_rows(obj_flat, obj_rows);
  Tensor obj_target =
      Tensor::from_vector({n_sampled, 1}, obj_targets, obj_logits.dtype());
  Tensor rpn_obj = bce_with_logits(obj_logits, obj_target);
  out.rpn_obj = rpn_obj.item();
  Tensor total = rpn_obj;

  if (n_pos > 0) {
    Tensor reg_flat = concat_levels_flat(rpn_out.reg);
    std::vector<int64_t> reg_idx;
    std::vector<double> reg_targets;
    for (auto i : sampled_pos) {
      const auto l = static_cast<size_t>(level_of[static_cast<size_t>(i)]);
      const auto posns = delta_positions(local_of[static_cast<size_t>(i)], level_hw[l], reg_offset4[l]);
      for (auto pidx : posns) reg_idx.push_back(pidx);
      const auto t = encode_deltas(all_anchors[static_cast<size_t>(i)],
                                   gts[static_cast<size_t>(assign.matched_gt[static_cast<size_t>(i)])]);
      for (double v : t) reg_targets.push_back(v);
    }
    Tensor pred = gather_elems(reg_flat, reg_idx, {n_pos, 4});
    Tensor tgt = Tensor::from_vector({n_pos, 4}, reg_targets, pred.dtype());
    Tensor rpn_reg = smooth_l1(pred, tgt, cfg.rpn_beta, static_cast<double>(n_sampled));
    out.rpn_reg = rpn_reg.item();
    total = add(total, rpn_reg);
  }

  // -------- RoI stage: proposals + appended gt boxes, assigned and sampled
  std::vector<Box> props = select_proposals(rpn_out, anchors, cfg, true);
  props.insert(props.end(), gts.begin(), gts.end());

  std::vector<int> prop_gt(props.size(), -1);
  std::vector<int64_t> fg, bg;
  for (size_t i = 0; i < props.size(); ++i) {
    double best = 0.0;
    for (size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(props[i], gts[g]);
      if (v > best) {
        best = v;
        prop_gt[i] = static_cast<int>(g);
      }
    }
    if (!gts.empty() && best >= cfg.roi_fg_iou) fg.push_back(static_cast<int64_t>(i));
    else bg.push_back(static_cast<int64_t>(i));
  }
  const int64_t want_fg = static_cast<int64_t>(std::llround(cfg.roi_sample * cfg.roi_pos_frac));
  const int64_t n_fg = std::min<int64_t>(static_cast<int64_t>(fg.size()), want_fg);
  const int64_t n_bg = std::min<int64_t>(static_cast<int64_t>(bg.size()), cfg.roi_sample - n_fg);
  std::vector<int64_t> rois;
  for (auto k : rng.sample_without_replacement(static_cast<int64_t>(fg.size()), n_fg))
    rois.push_back(fg[static_cast<size_t>(k)]);
  for (auto k : rng.sample_without_replacement(static_cast<int64_t>(bg.size()), n_bg))
    rois.push_back(bg[static_cast<size_t>(k)]);
  const int64_t n_rois = static_cast<int64_t>(rois.size());
  if (n_rois == 0) {
    out.total = total;
    return out;
  }

  const auto strides = cfg.strides();
  std::vector<Tensor> rows;
  std::vector<int64_t> labels;
  rows.reserve(static_cast<size_t>(n_rois));
  for (auto pi : rois) {
    const Box& b = props[static_cast<size_t>(pi)];
    const int lvl = fpn_level_for_box(b);
    Tensor feats = roi_align(pyr[static_cast<size_t>(lvl)], b, strides[static_cast<size_t>(lvl)],
                             cfg.roi_size, cfg.roi_sampling);
    rows.push_back(reshape(feats, {1, feats.numel()}));
    const int g = prop_gt[static_cast<size_t>(pi)];
    const bool is_fg = g >= 0 && iou(b, gts[static_cast<size_t>(g)]) >= cfg.roi_fg_iou;
    labels.push_back(is_fg ? 1 + gts[static_cast<size_t>(g)].label : 0);
  }
  auto [cls_logits, deltas] = det.roi.forward(concat(rows, 0));
  Tensor roi_cls = softmax_cross_entropy(cls_logits, labels);
  out.roi_cls = roi_cls.item();
  total = add(total, roi_cls);

  std::vector<int64_t> fg_idx;
  std::vector<double> fg_targets;
  for (int64_t r = 0; r < n_rois; ++r) {
    if (labels[static_cast<size_t>(r)] == 0) continue;
    const Box& b = props[static_cast<size_t>(rois[static_cast<size_t>(r)])];
    const int g = prop_gt[static_cast<size_t>(rois[static_cast<size_t>(r)])];
    const int64_t cls_i = labels[static_cast<size_t>(r)] - 1;
    for (int64_t d = 0; d < 4; ++d)
      fg_idx.push_back(r * 4 * cfg.num_classes + cls_i * 4 + d);
    const auto t = encode_deltas(b, gts[static_cast<size_t>(g)]);
    for (double v : t) fg_targets.push_back(v);
  }
  if (!fg_idx.empty()) {
    const int64_t F = static_cast<int64_t>(fg_idx.size()) / 4;
    Tensor pred = gather_elems(deltas, fg_idx, {F, 4});
    Tensor tgt = Tensor::from_vector({F, 4}, fg_targets, pred.dtype());
    Tensor roi_reg = smooth_l1(pred, tgt, cfg.roi_beta, static_cast<double>(n_rois));
    out.roi_reg = roi_reg.item();
    total = add(total, roi_reg);
  }
  out.total = total;
  return out;
}

// -------------------------------------------------------------- inference

std::vector<Box> detect_image(const Detector& det, const Tensor& image) {
  NoGradGuard ng;
  const auto& cfg = det.cfg;
  const auto pyr = det.pyramid(image);
  const auto rpn_out = det.rpn_forward(pyr);
  const auto anchors = pyramid_anchors(cfg);
  const auto props = select_proposals(rpn_out, anchors, cfg, false);
  if (props.empty()) return {};

  const auto strides = cfg.strides();
  std::vector<Tensor> rows;
  rows.reserve(props.size());
  for (const auto& b : props) {
    const int lvl = fpn_level_for_box(b);
    Tensor feats = roi_align(pyr[static_cast<size_t>(lvl)], b, strides[static_cast<size_t>(lvl)],
                             cfg.roi_size, cfg.roi_sampling);
    rows.push_back(reshape(feats, {1, feats.numel()}));
  }
  auto [cls_logits, deltas] = det.roi.forward(concat(rows, 0));
  const auto probs = softmax(cls_logits, 1).to_vector();
  const auto dvals = deltas.to_vector();
  const int64_t K = cfg.num_classes;
  const double img = static_cast<double>(cfg.image_size);

  std::vector<Box> results;
  for (int64_t k = 1; k <= K; ++k) {
    std::vector<Box> cand;
    for (size_t i = 0; i < props.size(); ++i) {
      const double score = probs[i * static_cast<size_t>(K + 1) + static_cast<size_t>(k)];
      if (score < cfg.score_thresh) continue;
      const size_t base = i * static_cast<size_t>(4 * K) + static_cast<size_t>((k - 1) * 4);
      Box b = clip_box(decode_deltas(props[i], dvals[base], dvals[base + 1], dvals[base + 2],
                                     dvals[base + 3]),
                       img, img);
      if (b.w() <= 0.0 || b.h() <= 0.0) continue;
      b.score = score;
      b.label = static_cast<int>(k - 1);
      cand.push_back(b);
    }
    for (int idx : nms(cand, cfg.final_nms)) results.push_back(cand[static_cast<size_t>(idx)]);
  }
  std::stable_sort(results.begin(), results.end(),
                   [](const Box& a, const Box& b) { return a.score > b.score; });
  if (static_cast<int>(results.size()) > cfg.max_dets) results.resize(static_cast<size_t>(cfg.max_dets));
  return results;
}

}  // namespace maedet
