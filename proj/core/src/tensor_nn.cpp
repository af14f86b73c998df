#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "maedet/tensor.hpp"
#include "tensor_impl.hpp"

namespace maedet {

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  if (a.size(1) != b.size(0))
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  check_same_dtype(a, b, "matmul");
  const int64_t M = a.size(0), K = a.size(1), N = b.size(1);
  auto out = make_node({M, N}, a.dtype(), {a, b}, "matmul");
  for_dtype(out->dtype, [&]<class T>() {
    const T* pa = a.impl()->data<T>();
    const T* pb = b.impl()->data<T>();
    T* po = out->data<T>();
    for (int64_t i = 0; i < M; ++i)
      for (int64_t k = 0; k < K; ++k) {
        const T aik = pa[i * K + k];
        const T* brow = pb + k * N;
        T* orow = po + i * N;
        for (int64_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
      }
  });
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    auto pb = owned_impl(b);
    out->backward_fn = [pa, pb, M, K, N](TensorImpl& self) {
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        if (pa->requires_grad) {
          pa->ensure_grad_alloc();
          T* ga = pa->grad<T>();
          const T* vb = pb->data<T>();
          for (int64_t i = 0; i < M; ++i)
            for (int64_t k = 0; k < K; ++k) {
              T acc = 0;
              const T* grow = g + i * N;
              const T* brow = vb + k * N;
              for (int64_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
              ga[i * K + k] += acc;
            }
        }
        if (pb->requires_grad) {
          pb->ensure_grad_alloc();
          T* gb = pb->grad<T>();
          const T* va = pa->data<T>();
          for (int64_t i = 0; i < M; ++i)
            for (int64_t k = 0; k < K; ++k) {
              const T aik = va[i * K + k];
              const T* grow = g + i * N;
              T* gbrow = gb + k * N;
              for (int64_t j = 0; j < N; ++j) gbrow[j] += aik * grow[j];
            }
        }
      });
    };
  }
  return wrap(out);
}

// ---------------------------------------------------------------- softmax

Tensor softmax(const Tensor& a, int axis) {
  if (a.rank() != 2) throw ShapeError("softmax: expected rank 2, got " + shape_str(a.shape()));
  if (axis != 0 && axis != 1) throw ShapeError("softmax: axis must be 0 or 1");
  const int64_t R = a.size(0), C = a.size(1);
  const int64_t slices = (axis == 1) ? R : C;
  const int64_t len = (axis == 1) ? C : R;
  auto at_rc = [&](int64_t s, int64_t t) { return (axis == 1) ? s * C + t : t * C + s; };
  auto out = make_node(a.shape(), a.dtype(), {a}, "softmax");
  for_dtype(out->dtype, [&]<class T>() {
    const T* pa = a.impl()->data<T>();
    T* po = out->data<T>();
    for (int64_t s = 0; s < slices; ++s) {
      T mx = pa[at_rc(s, 0)];
      for (int64_t t = 1; t < len; ++t) mx = std::max(mx, pa[at_rc(s, t)]);
      T denom = 0;
      for (int64_t t = 0; t < len; ++t) {
        const T e = std::exp(pa[at_rc(s, t)] - mx);
        po[at_rc(s, t)] = e;
        denom += e;
      }
      for (int64_t t = 0; t < len; ++t) po[at_rc(s, t)] /= denom;
    }
  });
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    out->backward_fn = [pa, slices, len, at_rc](TensorImpl& self) {
      if (!pa->requires_grad) return;
      pa->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        const T* sft = self.data<T>();
        T* gx = pa->grad<T>();
        for (int64_t s = 0; s < slices; ++s) {
          T dot = 0;
          for (int64_t t = 0; t < len; ++t) dot += g[at_rc(s, t)] * sft[at_rc(s, t)];
          for (int64_t t = 0; t < len; ++t)
            gx[at_rc(s, t)] += sft[at_rc(s, t)] * (g[at_rc(s, t)] - dot);
        }
      });
    };
  }
  return wrap(out);
}

// -------------------------------------------------------------- layer_norm

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 2) throw ShapeError("layer_norm: expected rank-2 x, got " + shape_str(x.shape()));
  const int64_t N = x.size(0), D = x.size(1);
  if (gamma.numel() != D || beta.numel() != D)
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(D) + " elements");
  check_same_dtype(x, gamma, "layer_norm");
  check_same_dtype(x, beta, "layer_norm");
  auto out = make_node(x.shape(), x.dtype(), {x, gamma, beta}, "layer_norm");
  for_dtype(out->dtype, [&]<class T>() {
    const T* px = x.impl()->data<T>();
    const T* pg = gamma.impl()->data<T>();
    const T* pb = beta.impl()->data<T>();
    T* po = out->data<T>();
    for (int64_t i = 0; i < N; ++i) {
      const T* row = px + i * D;
      T mu = 0;
      for (int64_t d = 0; d < D; ++d) mu += row[d];
      mu /= static_cast<T>(D);
      T var = 0;
      for (int64_t d = 0; d < D; ++d) var += (row[d] - mu) * (row[d] - mu);
      var /= static_cast<T>(D);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
      for (int64_t d = 0; d < D; ++d) po[i * D + d] = pg[d] * (row[d] - mu) * inv + pb[d];
    }
  });
  if (out->requires_grad) {
    auto px = owned_impl(x);
    auto pg = owned_impl(gamma);
    auto pb = owned_impl(beta);
    out->backward_fn = [px, pg, pb, N, D, eps](TensorImpl& self) {
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        const T* vx = px->data<T>();
        const T* vg = pg->data<T>();
        std::vector<T> xhat(static_cast<size_t>(D));
        if (px->requires_grad) px->ensure_grad_alloc();
        if (pg->requires_grad) pg->ensure_grad_alloc();
        if (pb->requires_grad) pb->ensure_grad_alloc();
        for (int64_t i = 0; i < N; ++i) {
          const T* row = vx + i * D;
          T mu = 0;
          for (int64_t d = 0; d < D; ++d) mu += row[d];
          mu /= static_cast<T>(D);
          T var = 0;
          for (int64_t d = 0; d < D; ++d) var += (row[d] - mu) * (row[d] - mu);
          var /= static_cast<T>(D);
          const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
          for (int64_t d = 0; d < D; ++d) xhat[static_cast<size_t>(d)] = (row[d] - mu) * inv;
          if (pg->requires_grad || pb->requires_grad) {
            T* gg = pg->requires_grad ? pg->grad<T>() : nullptr;
            T* gb = pb->requires_grad ? pb->grad<T>() : nullptr;
            for (int64_t d = 0; d < D; ++d) {
              if (gg) gg[d] += g[i * D + d] * xhat[static_cast<size_t>(d)];
              if (gb) gb[d] += g[i * D + d];
            }
          }
          if (px->requires_grad) {
            T m1 = 0, m2 = 0;
            for (int64_t d = 0; d < D; ++d) {
              const T dxh = g[i * D + d] * vg[d];
              m1 += dxh;
              m2 += dxh * xhat[static_cast<size_t>(d)];
            }
            m1 /= static_cast<T>(D);
            m2 /= static_cast<T>(D);
            T* gx = px->grad<T>();
            for (int64_t d = 0; d < D; ++d) {
              const T dxh = g[i * D + d] * vg[d];
              gx[i * D + d] += inv * (dxh - m1 - xhat[static_cast<size_t>(d)] * m2);
            }
          }
        }
      });
    };
  }
  return wrap(out);
}

// ------------------------------------------------------------------- gelu

Tensor gelu(const Tensor& a) {
  auto out = make_node(a.shape(), a.dtype(), {a}, "gelu");
  const int64_t n = out->n;
  for_dtype(out->dtype, [&]<class T>() {
    const T* px = a.impl()->data<T>();
    T* po = out->data<T>();
    for (int64_t i = 0; i < n; ++i) {
      const T x = px[i];
      po[i] = x * T(0.5) * (T(1) + std::erf(x * T(0.7071067811865476)));
    }
  });
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    out->backward_fn = [pa, n](TensorImpl& self) {
      if (!pa->requires_grad) return;
      pa->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        const T* px = pa->data<T>();
        T* gx = pa->grad<T>();
        for (int64_t i = 0; i < n; ++i) {
          const T x = px[i];
          const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865476)));
          const T pdf = T(0.3989422804014327) * std::exp(T(-0.5) * x * x);
          gx[i] += g[i] * (cdf + x * pdf);
        }
      });
    };
  }
  return wrap(out);
}

// ---------------------------------------------------------------- attention

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw ShapeError("attention: expected rank-2 q/k/v");
  if (q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeError("attention: q/k/v shapes differ");
  check_same_dtype(q, k, "attention");
  check_same_dtype(q, v, "attention");
  const int64_t L = q.size(0), D = q.size(1);
  if (heads <= 0 || D % heads != 0)
    throw ShapeError("attention: dim " + std::to_string(D) + " not divisible by " +
                     std::to_string(heads) + " heads");
  const int64_t Dh = D / heads;
  const double alpha = 1.0 / std::sqrt(static_cast<double>(Dh));
  auto out = make_node({L, D}, q.dtype(), {q, k, v}, "attention");
  // per-head attention matrices, kept for the backward pass
  auto attn = std::make_shared<std::vector<double>>(static_cast<size_t>(heads) * L * L);
  for_dtype(out->dtype, [&]<class T>() {
    const T* pq = q.impl()->data<T>();
    const T* pk = k.impl()->data<T>();
    const T* pv = v.impl()->data<T>();
    T* po = out->data<T>();
    std::vector<T> srow(static_cast<size_t>(L));
    for (int h = 0; h < heads; ++h) {
      const int64_t c0 = h * Dh;
      double* A = attn->data() + static_cast<size_t>(h) * L * L;
      for (int64_t i = 0; i < L; ++i) {
        T mx = std::numeric_limits<T>::lowest();
        for (int64_t j = 0; j < L; ++j) {
          T s = 0;
          for (int64_t d = 0; d < Dh; ++d) s += pq[i * D + c0 + d] * pk[j * D + c0 + d];
          s *= static_cast<T>(alpha);
          srow[static_cast<size_t>(j)] = s;
          mx = std::max(mx, s);
        }
        T denom = 0;
        for (int64_t j = 0; j < L; ++j) {
          const T e = std::exp(srow[static_cast<size_t>(j)] - mx);
          srow[static_cast<size_t>(j)] = e;
          denom += e;
        }
        for (int64_t j = 0; j < L; ++j) {
          const T a = srow[static_cast<size_t>(j)] / denom;
          A[i * L + j] = static_cast<double>(a);
          for (int64_t d = 0; d < Dh; ++d) po[i * D + c0 + d] += a * pv[j * D + c0 + d];
        }
      }
    }
  });
  if (out->requires_grad) {
    auto pq = owned_impl(q);
    auto pk = owned_impl(k);
    auto pv = owned_impl(v);
    out->backward_fn = [pq, pk, pv, attn, heads, L, D, Dh, alpha](TensorImpl& self) {
      if (pq->requires_grad) pq->ensure_grad_alloc();
      if (pk->requires_grad) pk->ensure_grad_alloc();
      if (pv->requires_grad) pv->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        const T* vq = pq->data<T>();
        const T* vk = pk->data<T>();
        const T* vv = pv->data<T>();
        std::vector<T> dA(static_cast<size_t>(L) * L);
        for (int h = 0; h < heads; ++h) {
          const int64_t c0 = h * Dh;
          const double* A = attn->data() + static_cast<size_t>(h) * L * L;
          // dV and dA = g V^T
          for (int64_t i = 0; i < L; ++i)
            for (int64_t j = 0; j < L; ++j) {
              T acc = 0;
              for (int64_t d = 0; d < Dh; ++d) acc += g[i * D + c0 + d] * vv[j * D + c0 + d];
              dA[static_cast<size_t>(i * L + j)] = acc;
            }
          if (pv->requires_grad) {
            T* gv = pv->grad<T>();
            for (int64_t j = 0; j < L; ++j)
              for (int64_t i = 0; i < L; ++i) {
                const T a = static_cast<T>(A[i * L + j]);
                for (int64_t d = 0; d < Dh; ++d) gv[j * D + c0 + d] += a * g[i * D + c0 + d];
              }
          }
          // dS = A o (dA - rowsum(dA o A)), then dQ = dS K a, dK = dS^T Q a
          for (int64_t i = 0; i < L; ++i) {
            T dot = 0;
            for (int64_t j = 0; j < L; ++j)
              dot += dA[static_cast<size_t>(i * L + j)] * static_cast<T>(A[i * L + j]);
            for (int64_t j = 0; j < L; ++j) {
              const T a = static_cast<T>(A[i * L + j]);
              const T ds = a * (dA[static_cast<size_t>(i * L + j)] - dot) * static_cast<T>(alpha);
              if (pq->requires_grad) {
                T* gq = pq->grad<T>();
                for (int64_t d = 0; d < Dh; ++d) gq[i * D + c0 + d] += ds * vk[j * D + c0 + d];
              }
              if (pk->requires_grad) {
                T* gk = pk->grad<T>();
                for (int64_t d = 0; d < Dh; ++d) gk[j * D + c0 + d] += ds * vq[i * D + c0 + d];
              }
            }
          }
        }
      });
    };
  }
  return wrap(out);
}

// ------------------------------------------------------------- conv family

static void conv_check_input(const Tensor& x, const Tensor& w, const Tensor& b, const char* op,
                             bool transposed) {
  if (x.rank() != 3) throw ShapeError(std::string(op) + ": expected [C,H,W] input");
  if (w.rank() != 4) throw ShapeError(std::string(op) + ": expected rank-4 weight");
  const int64_t cin = transposed ? w.size(0) : w.size(1);
  const int64_t cout = transposed ? w.size(1) : w.size(0);
  if (x.size(0) != cin)
    throw ShapeError(std::string(op) + ": input channels " + std::to_string(x.size(0)) +
                     " vs weight " + std::to_string(cin));
  check_same_dtype(x, w, op);
  if (b.defined()) {
    if (b.numel() != cout)
      throw ShapeError(std::string(op) + ": bias size " + std::to_string(b.numel()) +
                       " vs out channels " + std::to_string(cout));
    check_same_dtype(x, b, op);
  }
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  conv_check_input(x, w, b, "conv2d", false);
  if (stride <= 0 || pad < 0) throw ShapeError("conv2d: bad stride/pad");
  const int64_t Cin = x.size(0), H = x.size(1), W = x.size(2);
  const int64_t Cout = w.size(0), kh = w.size(2), kw = w.size(3);
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  if (H + 2 * pad < kh || W + 2 * pad < kw || Ho <= 0 || Wo <= 0)
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " does not fit input " + shape_str(x.shape()));
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  auto out = make_node({Cout, Ho, Wo}, x.dtype(), inputs, "conv2d");
  for_dtype(out->dtype, [&]<class T>() {
    const T* px = x.impl()->data<T>();
    const T* pw = w.impl()->data<T>();
    T* po = out->data<T>();
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          T acc = b.defined() ? b.impl()->data<T>()[co] : T(0);
          for (int64_t ci = 0; ci < Cin; ++ci)
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                acc += px[(ci * H + iy) * W + ix] * pw[((co * Cin + ci) * kh + ky) * kw + kx];
              }
            }
          po[(co * Ho + oy) * Wo + ox] = acc;
        }
  });
  if (out->requires_grad) {
    auto px = owned_impl(x);
    auto pw = owned_impl(w);
    auto pb = b.defined() ? owned_impl(b) : ImplPtr();
    const int s = stride, p = pad;
    out->backward_fn = [px, pw, pb, Cin, H, W, Cout, kh, kw, Ho, Wo, s, p](TensorImpl& self) {
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        const T* vx = px->data<T>();
        const T* vw = pw->data<T>();
        T* gx = nullptr;
        T* gw = nullptr;
        if (px->requires_grad) { px->ensure_grad_alloc(); gx = px->grad<T>(); }
        if (pw->requires_grad) { pw->ensure_grad_alloc(); gw = pw->grad<T>(); }
        if (pb && pb->requires_grad) {
          pb->ensure_grad_alloc();
          T* gb = pb->grad<T>();
          for (int64_t co = 0; co < Cout; ++co) {
            T acc = 0;
            for (int64_t i = 0; i < Ho * Wo; ++i) acc += g[co * Ho * Wo + i];
            gb[co] += acc;
          }
        }
        if (!gx && !gw) return;
        for (int64_t co = 0; co < Cout; ++co)
          for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
              const T go = g[(co * Ho + oy) * Wo + ox];
              if (go == T(0)) continue;
              for (int64_t ci = 0; ci < Cin; ++ci)
                for (int64_t ky = 0; ky < kh; ++ky) {
                  const int64_t iy = oy * s - p + ky;
                  if (iy < 0 || iy >= H) continue;
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    const int64_t ix = ox * s - p + kx;
                    if (ix < 0 || ix >= W) continue;
                    const int64_t xi = (ci * H + iy) * W + ix;
                    const int64_t wi = ((co * Cin + ci) * kh + ky) * kw + kx;
                    if (gx) gx[xi] += go * vw[wi];
                    if (gw) gw[wi] += go * vx[xi];
                  }
                }
            }
      });
    };
  }
  return wrap(out);
}

Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  conv_check_input(x, w, b, "deconv2d", true);
  if (stride <= 0) throw ShapeError("deconv2d: bad stride");
  const int64_t Cin = x.size(0), H = x.size(1), W = x.size(2);
  const int64_t Cout = w.size(1), kh = w.size(2), kw = w.size(3);
  const int64_t Ho = (H - 1) * stride + kh;
  const int64_t Wo = (W - 1) * stride + kw;
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  auto out = make_node({Cout, Ho, Wo}, x.dtype(), inputs, "deconv2d");
  for_dtype(out->dtype, [&]<class T>() {
    const T* px = x.impl()->data<T>();
    const T* pw = w.impl()->data<T>();
    T* po = out->data<T>();
    if (b.defined()) {
      const T* pbv = b.impl()->data<T>();
      for (int64_t co = 0; co < Cout; ++co)
        std::fill(po + co * Ho * Wo, po + (co + 1) * Ho * Wo, pbv[co]);
    }
    for (int64_t ci = 0; ci < Cin; ++ci)
      for (int64_t iy = 0; iy < H; ++iy)
        for (int64_t ix = 0; ix < W; ++ix) {
          const T xv = px[(ci * H + iy) * W + ix];
          if (xv == T(0)) continue;
          for (int64_t co = 0; co < Cout; ++co)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx)
                po[(co * Ho + iy * stride + ky) * Wo + ix * stride + kx] +=
                    xv * pw[((ci * Cout + co) * kh + ky) * kw + kx];
        }
  });
  if (out->requires_grad) {
    auto px = owned_impl(x);
    auto pw = owned_impl(w);
    auto pb = b.defined() ? owned_impl(b) : ImplPtr();
    const int s = stride;
    out->backward_fn = [px, pw, pb, Cin, H, W, Cout, kh, kw, Ho, Wo, s](TensorImpl& self) {
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        const T* vx = px->data<T>();
        const T* vw = pw->data<T>();
        T* gx = nullptr;
        T* gw = nullptr;
        if (px->requires_grad) { px->ensure_grad_alloc(); gx = px->grad<T>(); }
        if (pw->requires_grad) { pw->ensure_grad_alloc(); gw = pw->grad<T>(); }
        if (pb && pb->requires_grad) {
          pb->ensure_grad_alloc();
          T* gb = pb->grad<T>();
          for (int64_t co = 0; co < Cout; ++co) {
            T acc = 0;
            for (int64_t i = 0; i < Ho * Wo; ++i) acc += g[co * Ho * Wo + i];
            gb[co] += acc;
          }
        }
        if (!gx && !gw) return;
        for (int64_t ci = 0; ci < Cin; ++ci)
          for (int64_t iy = 0; iy < H; ++iy)
            for (int64_t ix = 0; ix < W; ++ix) {
              const int64_t xi = (ci * H + iy) * W + ix;
              for (int64_t co = 0; co < Cout; ++co)
                for (int64_t ky = 0; ky < kh; ++ky)
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    const T go = g[(co * Ho + iy * s + ky) * Wo + ix * s + kx];
                    const int64_t wi = ((ci * Cout + co) * kh + ky) * kw + kx;
                    if (gx) gx[xi] += go * vw[wi];
                    if (gw) gw[wi] += go * vx[xi];
                  }
            }
      });
    };
  }
  return wrap(out);
}

Tensor maxpool2d(const Tensor& x, int kernel, int stride) {
  if (x.rank() != 3) throw ShapeError("maxpool2d: expected [C,H,W] input");
  if (kernel <= 0 || stride <= 0) throw ShapeError("maxpool2d: bad kernel/stride");
  const int64_t C = x.size(0), H = x.size(1), W = x.size(2);
  if (H < kernel || W < kernel)
    throw ShapeError("maxpool2d: kernel does not fit input " + shape_str(x.shape()));
  const int64_t Ho = (H - kernel) / stride + 1;
  const int64_t Wo = (W - kernel) / stride + 1;
  auto out = make_node({C, Ho, Wo}, x.dtype(), {x}, "maxpool2d");
  auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(C * Ho * Wo));
  for_dtype(out->dtype, [&]<class T>() {
    const T* px = x.impl()->data<T>();
    T* po = out->data<T>();
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          int64_t best = (c * H + oy * stride) * W + ox * stride;
          T bv = px[best];
          for (int64_t ky = 0; ky < kernel; ++ky)
            for (int64_t kx = 0; kx < kernel; ++kx) {
              const int64_t xi = (c * H + oy * stride + ky) * W + ox * stride + kx;
              if (px[xi] > bv) { bv = px[xi]; best = xi; }
            }
          po[(c * Ho + oy) * Wo + ox] = bv;
          (*arg)[static_cast<size_t>((c * Ho + oy) * Wo + ox)] = best;
        }
  });
  if (out->requires_grad) {
    auto px = owned_impl(x);
    out->backward_fn = [px, arg](TensorImpl& self) {
      if (!px->requires_grad) return;
      px->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        T* gx = px->grad<T>();
        for (int64_t i = 0; i < self.n; ++i) gx[(*arg)[static_cast<size_t>(i)]] += g[i];
      });
    };
  }
  return wrap(out);
}

// ------------------------------------------------------------------ losses

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mse_loss: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  check_same_dtype(a, b, "mse_loss");
  auto out = make_node({1}, a.dtype(), {a, b}, "mse_loss");
  const int64_t n = a.numel();
  for_dtype(out->dtype, [&]<class T>() {
    const T* pa = a.impl()->data<T>();
    const T* pb = b.impl()->data<T>();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
      acc += d * d;
    }
    out->data<T>()[0] = static_cast<T>(acc / static_cast<double>(n));
  });
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    auto pb = owned_impl(b);
    out->backward_fn = [pa, pb, n](TensorImpl& self) {
      for_dtype(self.dtype, [&]<class T>() {
        const T g = self.grad<T>()[0];
        const T* va = pa->data<T>();
        const T* vb = pb->data<T>();
        const T scale = T(2) / static_cast<T>(n);
        if (pa->requires_grad) {
          pa->ensure_grad_alloc();
          T* ga = pa->grad<T>();
          for (int64_t i = 0; i < n; ++i) ga[i] += g * scale * (va[i] - vb[i]);
        }
        if (pb->requires_grad) {
          pb->ensure_grad_alloc();
          T* gb = pb->grad<T>();
          for (int64_t i = 0; i < n; ++i) gb[i] -= g * scale * (va[i] - vb[i]);
        }
      });
    };
  }
  return wrap(out);
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
  if (logits.rank() != 2)
    throw ShapeError("softmax_cross_entropy: expected [N,K] logits, got " +
                     shape_str(logits.shape()));
  const int64_t N = logits.size(0), K = logits.size(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(N) + " rows");
  for (auto l : labels)
    if (l < 0 || l >= K)
      throw ShapeError("softmax_cross_entropy: label " + std::to_string(l) + " out of range");
  auto out = make_node({1}, logits.dtype(), {logits}, "softmax_cross_entropy");
  for_dtype(out->dtype, [&]<class T>() {
    const T* pl = logits.impl()->data<T>();
    double acc = 0.0;
    for (int64_t i = 0; i < N; ++i) {
      const T* row = pl + i * K;
      T mx = row[0];
      for (int64_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
      double lse = 0.0;
      for (int64_t j = 0; j < K; ++j) lse += std::exp(static_cast<double>(row[j] - mx));
      acc += std::log(lse) + static_cast<double>(mx) -
             static_cast<double>(row[labels[static_cast<size_t>(i)]]);
    }
    out->data<T>()[0] = static_cast<T>(acc / static_cast<double>(N));
  });
  if (out->requires_grad) {
    auto pl = owned_impl(logits);
    auto lab = labels;
    out->backward_fn = [pl, lab, N, K](TensorImpl& self) {
      if (!pl->requires_grad) return;
      pl->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T g = self.grad<T>()[0];
        const T* vl = pl->data<T>();
        T* gl = pl->grad<T>();
        for (int64_t i = 0; i < N; ++i) {
          const T* row = vl + i * K;
          T mx = row[0];
          for (int64_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
          T denom = 0;
          for (int64_t j = 0; j < K; ++j) denom += std::exp(row[j] - mx);
          for (int64_t j = 0; j < K; ++j) {
            T p = std::exp(row[j] - mx) / denom;
            if (j == lab[static_cast<size_t>(i)]) p -= T(1);
            gl[i * K + j] += g * p / static_cast<T>(N);
          }
        }
      });
    };
  }
  return wrap(out);
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape())
    throw ShapeError("bce_with_logits: shapes " + shape_str(logits.shape()) + " vs " +
                     shape_str(targets.shape()));
  check_same_dtype(logits, targets, "bce_with_logits");
  auto out = make_node({1}, logits.dtype(), {logits, targets}, "bce_with_logits");
  const int64_t n = logits.numel();
  for_dtype(out->dtype, [&]<class T>() {
    const T* px = logits.impl()->data<T>();
    const T* pt = targets.impl()->data<T>();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(px[i]);
      const double t = static_cast<double>(pt[i]);
      acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    }
    out->data<T>()[0] = static_cast<T>(acc / static_cast<double>(n));
  });
  if (out->requires_grad) {
    auto px = owned_impl(logits);
    auto pt = owned_impl(targets);
    out->backward_fn = [px, pt, n](TensorImpl& self) {
      if (!px->requires_grad) return;
      px->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T g = self.grad<T>()[0];
        const T* vx = px->data<T>();
        const T* vt = pt->data<T>();
        T* gx = px->grad<T>();
        for (int64_t i = 0; i < n; ++i) {
          const T sig = T(1) / (T(1) + std::exp(-vx[i]));
          gx[i] += g * (sig - vt[i]) / static_cast<T>(n);
        }
      });
    };
  }
  return wrap(out);
}

Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta, double normalizer) {
  if (pred.shape() != target.shape())
    throw ShapeError("smooth_l1: shapes " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  check_same_dtype(pred, target, "smooth_l1");
  if (normalizer <= 0.0) throw ShapeError("smooth_l1: normalizer must be positive");
  auto out = make_node({1}, pred.dtype(), {pred, target}, "smooth_l1");
  const int64_t n = pred.numel();
  for_dtype(out->dtype, [&]<class T>() {
    const T* pp = pred.impl()->data<T>();
    const T* pt = target.impl()->data<T>();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(pp[i]) - static_cast<double>(pt[i]);
      const double ad = std::abs(d);
      acc += (beta > 0.0 && ad < beta) ? 0.5 * d * d / beta : ad - 0.5 * beta;
    }
    out->data<T>()[0] = static_cast<T>(acc / normalizer);
  });
  if (out->requires_grad) {
    auto pp = owned_impl(pred);
    auto pt = owned_impl(target);
    out->backward_fn = [pp, pt, beta, normalizer, n](TensorImpl& self) {
      if (!pp->requires_grad) return;
      pp->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T g = self.grad<T>()[0];
        const T* vp = pp->data<T>();
        const T* vt = pt->data<T>();
        T* gp = pp->grad<T>();
        for (int64_t i = 0; i < n; ++i) {
          const T d = vp[i] - vt[i];
          T slope;
          if (beta > 0.0 && std::abs(d) < static_cast<T>(beta)) slope = d / static_cast<T>(beta);
          else slope = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
          gp[i] += g * slope / static_cast<T>(normalizer);
        }
      });
    };
  }
  return wrap(out);
}

}  // namespace maedet
