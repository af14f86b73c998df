#include <benchmark/benchmark.h>

#include <algorithm>
#include <vector>

#include "maedet/boxes.hpp"
#include "maedet/detector.hpp"
#include "maedet/mae.hpp"
#include "maedet/optim.hpp"
#include "maedet/rng.hpp"
#include "maedet/tensor.hpp"

using namespace maedet;

namespace {

Tensor rand_tensor(const Shape& s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return Tensor::uniform(s, rng, lo, hi);
}

void BM_matmul(benchmark::State& state) {
  NoGradGuard inference;
  const int64_t n = state.range(0);
  const Tensor a = rand_tensor({n, n}, 1);
  const Tensor b = rand_tensor({n, n}, 2);
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c);
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_conv2d_3x3(benchmark::State& state) {
  NoGradGuard inference;
  const int64_t c = state.range(0);
  const Tensor x = rand_tensor({c, 32, 32}, 3);
  const Tensor w = rand_tensor({c, c, 3, 3}, 4, -0.1, 0.1);
  const Tensor b = Tensor::zeros({c});
  for (auto _ : state) {
    Tensor y = conv2d(x, w, b, 1, 1);
    benchmark::DoNotOptimize(y);
  }
}
BENCHMARK(BM_conv2d_3x3)->Arg(16)->Arg(64);

void BM_softmax_rows(benchmark::State& state) {
  NoGradGuard inference;
  const Tensor x = rand_tensor({state.range(0), state.range(0)}, 5, -4.0, 4.0);
  for (auto _ : state) {
    Tensor y = softmax(x, 1);
    benchmark::DoNotOptimize(y);
  }
}
BENCHMARK(BM_softmax_rows)->Arg(65)->Arg(257);

void BM_layer_norm(benchmark::State& state) {
  NoGradGuard inference;
  const int64_t d = state.range(0);
  const Tensor x = rand_tensor({257, d}, 6);
  const Tensor g = Tensor::full({d}, 1.0);
  const Tensor b = Tensor::zeros({d});
  for (auto _ : state) {
    Tensor y = layer_norm(x, g, b);
    benchmark::DoNotOptimize(y);
  }
}
BENCHMARK(BM_layer_norm)->Arg(64)->Arg(512);

void BM_roi_align(benchmark::State& state) {
  NoGradGuard inference;
  const Tensor map = rand_tensor({64, 32, 32}, 7);
  Rng rng(8);
  std::vector<Box> boxes;
  for (int i = 0; i < 50; ++i) {
    Box b;
    b.x1 = rng.uniform() * 200.0;
    b.y1 = rng.uniform() * 200.0;
    b.x2 = b.x1 + 8.0 + rng.uniform() * 40.0;
    b.y2 = b.y1 + 8.0 + rng.uniform() * 40.0;
    boxes.push_back(b);
  }
  for (auto _ : state) {
    for (const Box& b : boxes) {
      Tensor y = roi_align(map, b, 8, 7, 2);
      benchmark::DoNotOptimize(y);
    }
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(boxes.size()));
}
BENCHMARK(BM_roi_align);

void BM_nms(benchmark::State& state) {
  Rng rng(9);
  std::vector<Box> boxes;
  for (int64_t i = 0; i < state.range(0); ++i) {
    Box b;
    b.x1 = rng.uniform() * 220.0;
    b.y1 = rng.uniform() * 220.0;
    b.x2 = b.x1 + 4.0 + rng.uniform() * 30.0;
    b.y2 = b.y1 + 4.0 + rng.uniform() * 30.0;
    b.score = rng.uniform();
    boxes.push_back(b);
  }
  std::sort(boxes.begin(), boxes.end(),
            [](const Box& a, const Box& b) { return a.score > b.score; });
  for (auto _ : state) {
    std::vector<int> kept = nms(boxes, 0.5);
    benchmark::DoNotOptimize(kept);
  }
}
BENCHMARK(BM_nms)->Arg(200)->Arg(1000);

// Full autograd round trip: forward, masked loss, backward, AdamW update.
void BM_mae_train_step(benchmark::State& state) {
  MAEConfig cfg;
  cfg.image_size = 32;
  cfg.patch = 8;
  cfg.encoder = {2, 64, 4, 4.0, 8, 1};
  cfg.decoder = {1, 32, 4, 4.0, 8, 1};
  MAEModel model = MAEModel::init(cfg, 1);
  ParamList params = model.params();
  require_grads(params);
  AdamW opt(&params, {0.9, 0.95, 1e-8, 0.05});
  const Tensor img = rand_tensor({1, 32, 32}, 10, 0.0, 1.0);
  uint64_t seed = 0;
  for (auto _ : state) {
    opt.zero_grad();
    MAEModel::Forward f = model.forward(img, seed++);
    Tensor loss = mse_masked_loss(f.pred, f.patches, f.plan);
    loss.backward();
    opt.step(1e-4);
  }
}
BENCHMARK(BM_mae_train_step);

}  // namespace

BENCHMARK_MAIN();
