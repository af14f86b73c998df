#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "maedet/detector.hpp"
#include "maedet/errors.hpp"
#include "maedet/mae.hpp"
#include "maedet/patches.hpp"
#include "maedet/rng.hpp"
#include "maedet/tensor.hpp"

using namespace maedet;
using maedet::testing::gradcheck;

namespace {

constexpr double kTol = 1e-4;
constexpr int kTrials = 20;

Tensor leaf(Rng& rng, const Shape& s, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::uniform(s, rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

// values bounded away from zero, for kinked ops like relu
Tensor leaf_off_zero(Rng& rng, const Shape& s, double margin = 0.2) {
  Tensor t = Tensor::uniform(s, rng, margin, 1.0);
  double* d = t.data<double>();
  for (int64_t i = 0; i < t.numel(); ++i)
    if (rng.uniform() < 0.5) d[i] = -d[i];
  t.set_requires_grad(true);
  return t;
}

// random fixed weights turn a tensor-valued op into a scalar loss
Tensor weigh(const Tensor& out, Rng& rng) {
  Tensor w = Tensor::uniform(out.shape(), rng, -1.0, 1.0);
  return sum(mul(out, w));
}

}  // namespace

TEST_SUITE_BEGIN("autograd");

TEST_CASE("elementwise and broadcast ops") {
  DtypeGuard g(Dtype::F64);
  Rng rng(101);
  for (int t = 0; t < kTrials; ++t) {
    const int64_t m = 2 + static_cast<int64_t>(rng.uniform_int(3));
    const int64_t n = 2 + static_cast<int64_t>(rng.uniform_int(3));
    Tensor a = leaf(rng, {m, n});
    Tensor b = leaf(rng, {m, n});
    Tensor row = leaf(rng, {n});
    Tensor sc = leaf(rng, {1});
    Rng wr(rng.next_u64());

    auto r = gradcheck([&] { return weigh(add(a, b), wr); }, {{"a", a}, {"b", b}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "add ", r.worst);
    r = gradcheck([&] { return weigh(sub(a, b), wr); }, {{"a", a}, {"b", b}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "sub ", r.worst);
    r = gradcheck([&] { return weigh(mul(a, b), wr); }, {{"a", a}, {"b", b}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "mul ", r.worst);
    r = gradcheck([&] { return weigh(add(a, row), wr); }, {{"a", a}, {"row", row}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "add bcast ", r.worst);
    r = gradcheck([&] { return weigh(mul(a, sc), wr); }, {{"a", a}, {"sc", sc}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "mul scalar-bcast ", r.worst);
    r = gradcheck([&] { return weigh(mul_scalar(add_scalar(a, 0.7), -1.3), wr); }, {{"a", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "scalar ops ", r.worst);
    r = gradcheck([&] { return weigh(neg(a), wr); }, {{"a", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "neg ", r.worst);
  }
}

TEST_CASE("activations") {
  DtypeGuard g(Dtype::F64);
  Rng rng(102);
  for (int t = 0; t < kTrials; ++t) {
    Tensor x = leaf_off_zero(rng, {3, 4});
    Rng wr(rng.next_u64());
    auto r = gradcheck([&] { return weigh(relu(x), wr); }, {{"x", x}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "relu ", r.worst);
    r = gradcheck([&] { return weigh(gelu(x), wr); }, {{"x", x}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "gelu ", r.worst);
  }
}

TEST_CASE("shape ops are exact permutations") {
  DtypeGuard g(Dtype::F64);
  Rng rng(103);
  for (int t = 0; t < kTrials; ++t) {
    Tensor a = leaf(rng, {3, 4});
    Tensor b = leaf(rng, {2, 4});
    Rng wr(rng.next_u64());

    auto r = gradcheck([&] { return weigh(reshape(a, {4, 3}), wr); }, {{"a", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "reshape ", r.worst);
    r = gradcheck([&] { return weigh(transpose2d(a), wr); }, {{"a", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "transpose ", r.worst);
    r = gradcheck([&] { return weigh(concat({a, b}, 0), wr); }, {{"a", a}, {"b", b}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "concat ", r.worst);
    r = gradcheck([&] { return weigh(slice2d(a, 1, 1, 3), wr); }, {{"a", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "slice ", r.worst);
    r = gradcheck([&] { return weigh(gather_rows(a, {2, 0, 2}), wr); }, {{"a", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "gather_rows ", r.worst);
    r = gradcheck([&] { return weigh(gather_elems(a, {0, 5, 11, 5}, {2, 2}), wr); }, {{"a", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "gather_elems ", r.worst);

    Tensor filler = leaf(rng, {1, 4});
    r = gradcheck([&] { return weigh(scatter_rows(b, {3, 1}, 5, filler), wr); },
                  {{"b", b}, {"filler", filler}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "scatter_rows ", r.worst);
  }
}

TEST_CASE("reductions, matmul, softmax, layer_norm") {
  DtypeGuard g(Dtype::F64);
  Rng rng(104);
  for (int t = 0; t < kTrials; ++t) {
    const int64_t m = 2 + static_cast<int64_t>(rng.uniform_int(3));
    const int64_t k = 2 + static_cast<int64_t>(rng.uniform_int(3));
    const int64_t n = 2 + static_cast<int64_t>(rng.uniform_int(3));
    Tensor a = leaf(rng, {m, k});
    Tensor b = leaf(rng, {k, n});
    Rng wr(rng.next_u64());

    auto r = gradcheck([&] { return sum(a); }, {{"a", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "sum ", r.worst);
    r = gradcheck([&] { return mean(a); }, {{"a", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "mean ", r.worst);
    r = gradcheck([&] { return weigh(matmul(a, b), wr); }, {{"a", a}, {"b", b}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "matmul ", r.worst);
    r = gradcheck([&] { return weigh(softmax(a, 1), wr); }, {{"a", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "softmax rows ", r.worst);
    r = gradcheck([&] { return weigh(softmax(a, 0), wr); }, {{"a", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "softmax cols ", r.worst);

    Tensor gam = leaf(rng, {k}, 0.5, 1.5);
    Tensor bet = leaf(rng, {k});
    r = gradcheck([&] { return weigh(layer_norm(a, gam, bet), wr); },
                  {{"x", a}, {"gamma", gam}, {"beta", bet}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "layer_norm ", r.worst);
  }
}

TEST_CASE("attention block") {
  DtypeGuard g(Dtype::F64);
  Rng rng(105);
  for (int t = 0; t < kTrials; ++t) {
    const int heads = (t % 2) ? 2 : 1;
    const int64_t L = 2 + static_cast<int64_t>(rng.uniform_int(4));
    const int64_t D = 2 * heads * (1 + static_cast<int64_t>(rng.uniform_int(2)));
    Tensor q = leaf(rng, {L, D});
    Tensor k = leaf(rng, {L, D});
    Tensor v = leaf(rng, {L, D});
    Rng wr(rng.next_u64());
    auto r = gradcheck(
        [&] { return weigh(scaled_dot_product_attention(q, k, v, heads), wr); },
        {{"q", q}, {"k", k}, {"v", v}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "attention ", r.worst);
  }
}

TEST_CASE("conv family") {
  DtypeGuard g(Dtype::F64);
  Rng rng(106);
  for (int t = 0; t < kTrials; ++t) {
    const int stride = 1 + (t % 2);
    const int pad = t % 2;
    Tensor x = leaf(rng, {2, 5, 5});
    Tensor w = leaf(rng, {3, 2, 2, 2});
    Tensor b = leaf(rng, {3});
    Rng wr(rng.next_u64());

    auto r = gradcheck([&] { return weigh(conv2d(x, w, b, stride, pad), wr); },
                       {{"x", x}, {"w", w}, {"b", b}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "conv2d ", r.worst);

    Tensor dw = leaf(rng, {2, 3, 2, 2});
    r = gradcheck([&] { return weigh(deconv2d(x, dw, b, stride), wr); },
                  {{"x", x}, {"w", dw}, {"b", b}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "deconv2d ", r.worst);

    // continuous random values keep pool argmaxes unique
    Tensor mx = leaf(rng, {2, 4, 4});
    r = gradcheck([&] { return weigh(maxpool2d(mx, 2, 2), wr); }, {{"x", mx}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "maxpool2d ", r.worst);
  }
}

TEST_CASE("roi_align") {
  DtypeGuard g(Dtype::F64);
  Rng rng(107);
  for (int t = 0; t < kTrials; ++t) {
    Tensor map = leaf(rng, {2, 6, 6});
    const double x1 = rng.uniform(0.0, 10.0), y1 = rng.uniform(0.0, 10.0);
    Box box{x1, y1, x1 + rng.uniform(4.0, 12.0), y1 + rng.uniform(4.0, 12.0), 0.0, 0};
    Rng wr(rng.next_u64());
    auto r = gradcheck([&] { return weigh(roi_align(map, box, 4, 3, 2), wr); }, {{"map", map}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "roi_align ", r.worst);
  }
}

TEST_CASE("losses") {
  DtypeGuard g(Dtype::F64);
  Rng rng(108);
  for (int t = 0; t < kTrials; ++t) {
    Tensor a = leaf(rng, {3, 4});
    Tensor b = leaf(rng, {3, 4});

    auto r = gradcheck([&] { return mse_loss(a, b); }, {{"a", a}, {"b", b}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "mse ", r.worst);

    r = gradcheck([&] { return softmax_cross_entropy(a, {1, 3, 0}); }, {{"logits", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "cross_entropy ", r.worst);

    Tensor targets = Tensor::uniform({3, 4}, rng);  // gradient flows into logits only
    r = gradcheck([&] { return bce_with_logits(a, targets); }, {{"logits", a}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "bce ", r.worst);

    // pred fixed margin from target keeps |d| off the huber kink at beta
    Tensor pred = add_scalar(b.detach(), 2.0);
    pred.set_requires_grad(true);
    Tensor tgt = b.detach();
    r = gradcheck([&] { return smooth_l1(pred, tgt, 1.0, 3.0); }, {{"pred", pred}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "smooth_l1 linear ", r.worst);
    Tensor near = add_scalar(b.detach(), 0.3);
    near.set_requires_grad(true);
    r = gradcheck([&] { return smooth_l1(near, tgt, 1.0, 3.0); }, {{"pred", near}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "smooth_l1 quadratic ", r.worst);
  }
}

TEST_CASE("masked reconstruction loss") {
  DtypeGuard g(Dtype::F64);
  Rng rng(109);
  for (int t = 0; t < kTrials; ++t) {
    const int64_t n = 4 + static_cast<int64_t>(rng.uniform_int(5));
    MaskPlan plan = sample_mask(n, 0.5, rng.next_u64());
    Tensor patches = leaf(rng, {n, 6});
    Tensor pred = leaf(rng, {static_cast<int64_t>(plan.masked_idx.size()), 6});
    auto r = gradcheck([&] { return mse_masked_loss(pred, patches, plan); },
                       {{"pred", pred}, {"patches", patches}});
    CHECK_MESSAGE(r.max_rel_err < kTol, "mse_masked ", r.worst);
  }
}

TEST_CASE("gradient accumulation over reuse") {
  DtypeGuard g(Dtype::F64);
  Tensor x = Tensor::from_vector({2}, {3, -2});
  x.set_requires_grad(true);
  Tensor y = sum(add(mul(x, x), x));  // d/dx = 2x + 1
  y.backward();
  const double* gx = x.grad_data<double>();
  CHECK(gx[0] == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(gx[1] == doctest::Approx(-3.0).epsilon(1e-12));
}

TEST_CASE("backward frees the graph") {
  DtypeGuard g(Dtype::F64);
  Tensor x = Tensor::from_vector({2}, {1, 2});
  x.set_requires_grad(true);
  Tensor y = sum(mul(x, x));
  y.backward();
  CHECK_THROWS(y.backward());
}

TEST_CASE("NoGradGuard suppresses graph building") {
  DtypeGuard g(Dtype::F64);
  Tensor x = Tensor::from_vector({2}, {1, 2});
  x.set_requires_grad(true);
  {
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  Tensor z = mul(x, x);
  CHECK(z.requires_grad());
}

TEST_SUITE_END();
