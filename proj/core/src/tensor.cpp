#include "maedet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "maedet/rng.hpp"
#include "tensor_impl.hpp"

namespace maedet {

namespace {
Dtype g_default_dtype = Dtype::F32;
int g_no_grad_depth = 0;
}

Dtype default_dtype() { return g_default_dtype; }
void set_default_dtype(Dtype d) { g_default_dtype = d; }

bool grad_enabled() { return g_no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

ImplPtr make_node(Shape shape, Dtype dt, const std::vector<Tensor>& inputs, const char* op) {
  for (auto d : shape)
    if (d < 0) throw ShapeError(std::string(op) + ": negative dimension in " + shape_str(shape));
  auto node = std::make_shared<TensorImpl>();
  node->shape = std::move(shape);
  node->dtype = dt;
  node->n = shape_numel(node->shape);
  node->op = op;
  if (node->dtype == Dtype::F32) node->f32.assign(static_cast<size_t>(node->n), 0.0f);
  else node->f64.assign(static_cast<size_t>(node->n), 0.0);
  bool rg = false;
  for (const auto& in : inputs) {
    if (!in.defined()) throw ShapeError(std::string(op) + ": undefined input tensor");
    if (in.impl()->graph_freed)
      throw Error(std::string(op) + ": input belongs to a freed graph");
    rg = rg || in.requires_grad();
  }
  rg = rg && grad_enabled();
  node->requires_grad = rg;
  if (rg)
    for (const auto& in : inputs) node->parents.push_back(owned_impl(in));
  return node;
}

// ---------------------------------------------------------------- Tensor

static ImplPtr new_leaf(const Shape& s, Dtype dt, bool rg) {
  auto node = std::make_shared<TensorImpl>();
  node->shape = s;
  node->dtype = dt;
  node->n = shape_numel(s);
  node->requires_grad = rg;
  if (dt == Dtype::F32) node->f32.assign(static_cast<size_t>(node->n), 0.0f);
  else node->f64.assign(static_cast<size_t>(node->n), 0.0);
  return node;
}

Tensor Tensor::zeros(const Shape& s, Dtype dt, bool rg) { return wrap(new_leaf(s, dt, rg)); }

Tensor Tensor::full(const Shape& s, double value, Dtype dt, bool rg) {
  auto node = new_leaf(s, dt, rg);
  for (int64_t i = 0; i < node->n; ++i) node->write(i, value);
  return wrap(node);
}

Tensor Tensor::from_vector(const Shape& s, const std::vector<double>& values, Dtype dt, bool rg) {
  auto node = new_leaf(s, dt, rg);
  if (static_cast<int64_t>(values.size()) != node->n)
    throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(s));
  for (int64_t i = 0; i < node->n; ++i) node->write(i, values[static_cast<size_t>(i)]);
  return wrap(node);
}

Tensor Tensor::uniform(const Shape& s, Rng& rng, double lo, double hi, Dtype dt, bool rg) {
  auto node = new_leaf(s, dt, rg);
  for (int64_t i = 0; i < node->n; ++i) node->write(i, rng.uniform(lo, hi));
  return wrap(node);
}

Tensor Tensor::trunc_normal(const Shape& s, Rng& rng, double stddev, Dtype dt, bool rg) {
  auto node = new_leaf(s, dt, rg);
  for (int64_t i = 0; i < node->n; ++i) node->write(i, rng.truncated_normal(stddev));
  return wrap(node);
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
int64_t Tensor::size(int axis) const { return impl_->shape.at(static_cast<size_t>(axis)); }
int64_t Tensor::numel() const { return impl_->n; }
Dtype Tensor::dtype() const { return impl_->dtype; }
bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  if (v && !is_leaf()) throw Error("set_requires_grad: only valid on leaf tensors");
  impl_->requires_grad = v;
  return *this;
}

bool Tensor::is_leaf() const { return !impl_->backward_fn && !impl_->graph_freed; }

Tensor Tensor::clone() const {
  auto node = new_leaf(impl_->shape, impl_->dtype, false);
  node->f32 = impl_->f32;
  node->f64 = impl_->f64;
  return wrap(node);
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<TensorImpl>();
  node->shape = impl_->shape;
  node->dtype = impl_->dtype;
  node->n = impl_->n;
  node->f32 = impl_->f32;  // cheap at desk scale; keeps buffers independent
  node->f64 = impl_->f64;
  node->requires_grad = false;
  return wrap(node);
}

Tensor Tensor::to(Dtype dt) const {
  if (dt == impl_->dtype) return clone();
  auto node = new_leaf(impl_->shape, dt, false);
  for (int64_t i = 0; i < impl_->n; ++i) node->write(i, impl_->read(i));
  return wrap(node);
}

double Tensor::item() const {
  if (impl_->n != 1) throw ShapeError("item: tensor has shape " + shape_str(impl_->shape));
  return impl_->read(0);
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  if (idx.size() != impl_->shape.size())
    throw ShapeError("at: index rank mismatch for shape " + shape_str(impl_->shape));
  int64_t flat = 0;
  size_t k = 0;
  for (auto i : idx) {
    if (i < 0 || i >= impl_->shape[k]) throw ShapeError("at: index out of range");
    flat = flat * impl_->shape[k] + i;
    ++k;
  }
  return impl_->read(flat);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<size_t>(impl_->n));
  for (int64_t i = 0; i < impl_->n; ++i) out[static_cast<size_t>(i)] = impl_->read(i);
  return out;
}

template <class T> T* Tensor::data() {
  if ((std::is_same_v<T, float>) != (impl_->dtype == Dtype::F32))
    throw ShapeError("data<T>: dtype mismatch");
  return impl_->data<T>();
}
template <class T> const T* Tensor::data() const {
  if ((std::is_same_v<T, float>) != (impl_->dtype == Dtype::F32))
    throw ShapeError("data<T>: dtype mismatch");
  return impl_->data<T>();
}
template <class T> T* Tensor::grad_data() {
  if (!impl_->grad_alloc) return nullptr;
  return impl_->grad<T>();
}
template <class T> const T* Tensor::grad_data() const {
  if (!impl_->grad_alloc) return nullptr;
  return const_cast<TensorImpl*>(impl_.get())->grad<T>();
}

template float* Tensor::data<float>();
template double* Tensor::data<double>();
template const float* Tensor::data<float>() const;
template const double* Tensor::data<double>() const;
template float* Tensor::grad_data<float>();
template double* Tensor::grad_data<double>();
template const float* Tensor::grad_data<float>() const;
template const double* Tensor::grad_data<double>() const;

bool Tensor::has_grad() const { return impl_->grad_alloc; }

Tensor Tensor::grad() const {
  if (!impl_->grad_alloc) throw Error("grad: no gradient present");
  auto node = new_leaf(impl_->shape, impl_->dtype, false);
  node->f32 = impl_->gf32;
  node->f64 = impl_->gf64;
  return wrap(node);
}

void Tensor::zero_grad() {
  if (!impl_->grad_alloc) return;
  std::fill(impl_->gf32.begin(), impl_->gf32.end(), 0.0f);
  std::fill(impl_->gf64.begin(), impl_->gf64.end(), 0.0);
}

void Tensor::backward() {
  TensorImpl* root = impl_.get();
  if (!root) throw Error("backward: undefined tensor");
  if (root->n != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root->shape));
  if (root->graph_freed) throw Error("backward: graph already freed; re-run forward first");

  // reverse topological order via iterative post-order DFS
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next].get();
      ++next;
      if (p->backward_fn && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad_alloc();
  if (root->dtype == Dtype::F32) root->gf32[0] += 1.0f;
  else root->gf64[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn && node->grad_alloc) node->backward_fn(*node);
  }

  // free the graph; leaf grads survive and keep accumulating across passes
  for (TensorImpl* node : order) {
    node->backward_fn = nullptr;
    node->parents.clear();
    node->graph_freed = true;
  }
}

// ------------------------------------------------------- elementwise ops

// Trailing-suffix broadcast: returns numel of b if legal, throws otherwise.
static int64_t broadcast_check(const Shape& a, const Shape& b, const char* op) {
  const int64_t nb = shape_numel(b);
  if (nb == 1) return 1;
  if (b.size() > a.size())
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " against " +
                     shape_str(a));
  const size_t off = a.size() - b.size();
  for (size_t i = 0; i < b.size(); ++i)
    if (a[off + i] != b[i])
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " do not broadcast");
  return nb;
}

enum class BinKind { Add, Sub, Mul };

static Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
  check_same_dtype(a, b, name);
  const int64_t nb = broadcast_check(a.shape(), b.shape(), name);
  auto out = make_node(a.shape(), a.dtype(), {a, b}, name);
  const int64_t n = out->n;
  for_dtype(out->dtype, [&]<class T>() {
    const T* pa = a.impl()->data<T>();
    const T* pb = b.impl()->data<T>();
    T* po = out->data<T>();
    switch (kind) {
      case BinKind::Add: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % nb]; break;
      case BinKind::Sub: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i % nb]; break;
      case BinKind::Mul: for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i % nb]; break;
    }
  });
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    auto pb = owned_impl(b);
    out->backward_fn = [pa, pb, nb, kind, n](TensorImpl& self) {
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        if (pa->requires_grad) {
          pa->ensure_grad_alloc();
          T* ga = pa->grad<T>();
          if (kind == BinKind::Mul) {
            const T* vb = pb->data<T>();
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * vb[i % nb];
          } else {
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
          }
        }
        if (pb->requires_grad) {
          pb->ensure_grad_alloc();
          T* gb = pb->grad<T>();
          switch (kind) {
            case BinKind::Add: for (int64_t i = 0; i < n; ++i) gb[i % nb] += g[i]; break;
            case BinKind::Sub: for (int64_t i = 0; i < n; ++i) gb[i % nb] -= g[i]; break;
            case BinKind::Mul: {
              const T* va = pa->data<T>();
              for (int64_t i = 0; i < n; ++i) gb[i % nb] += g[i] * va[i];
              break;
            }
          }
        }
      });
    };
  }
  return wrap(out);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Mul, "mul"); }

static Tensor unary_op(const Tensor& a, const char* name,
                       const std::function<double(double)>& f,
                       const std::function<double(double)>& dfdx) {
  auto out = make_node(a.shape(), a.dtype(), {a}, name);
  const int64_t n = out->n;
  for (int64_t i = 0; i < n; ++i) out->write(i, f(a.impl()->read(i)));
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    out->backward_fn = [pa, dfdx, n](TensorImpl& self) {
      if (!pa->requires_grad) return;
      pa->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        const T* x = pa->data<T>();
        T* gx = pa->grad<T>();
        for (int64_t i = 0; i < n; ++i)
          gx[i] += g[i] * static_cast<T>(dfdx(static_cast<double>(x[i])));
      });
    };
  }
  return wrap(out);
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(a, "add_scalar", [s](double x) { return x + s; }, [](double) { return 1.0; });
}
Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(a, "mul_scalar", [s](double x) { return x * s; }, [s](double) { return s; });
}
Tensor neg(const Tensor& a) {
  return unary_op(a, "neg", [](double x) { return -x; }, [](double) { return -1.0; });
}
Tensor relu(const Tensor& a) {
  return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

// ------------------------------------------------------------ shape ops

Tensor reshape(const Tensor& a, const Shape& s) {
  if (shape_numel(s) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
  auto out = make_node(s, a.dtype(), {a}, "reshape");
  out->f32 = a.impl()->f32;
  out->f64 = a.impl()->f64;
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    out->backward_fn = [pa](TensorImpl& self) {
      if (!pa->requires_grad) return;
      pa->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        T* gx = pa->grad<T>();
        for (int64_t i = 0; i < self.n; ++i) gx[i] += g[i];
      });
    };
  }
  return wrap(out);
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose2d: expected rank 2, got " + shape_str(a.shape()));
  const int64_t r = a.size(0), c = a.size(1);
  auto out = make_node({c, r}, a.dtype(), {a}, "transpose2d");
  for_dtype(out->dtype, [&]<class T>() {
    const T* pa = a.impl()->data<T>();
    T* po = out->data<T>();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) po[j * r + i] = pa[i * c + j];
  });
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    out->backward_fn = [pa, r, c](TensorImpl& self) {
      if (!pa->requires_grad) return;
      pa->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        T* gx = pa->grad<T>();
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
      });
    };
  }
  return wrap(out);
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  const Dtype dt = xs[0].dtype();
  int64_t rows = 0, cols = 0;
  for (const auto& x : xs) {
    if (x.rank() != 2) throw ShapeError("concat: expected rank-2 inputs");
    if (x.dtype() != dt) throw ShapeError("concat: mixed dtypes");
  }
  if (axis == 0) {
    cols = xs[0].size(1);
    for (const auto& x : xs) {
      if (x.size(1) != cols)
        throw ShapeError("concat axis 0: column mismatch " + shape_str(x.shape()));
      rows += x.size(0);
    }
  } else {
    rows = xs[0].size(0);
    for (const auto& x : xs) {
      if (x.size(0) != rows)
        throw ShapeError("concat axis 1: row mismatch " + shape_str(x.shape()));
      cols += x.size(1);
    }
  }
  auto out = make_node({rows, cols}, dt, xs, "concat");
  for_dtype(dt, [&]<class T>() {
    T* po = out->data<T>();
    if (axis == 0) {
      int64_t row0 = 0;
      for (const auto& x : xs) {
        const T* px = x.impl()->data<T>();
        std::copy(px, px + x.numel(), po + row0 * cols);
        row0 += x.size(0);
      }
    } else {
      int64_t col0 = 0;
      for (const auto& x : xs) {
        const T* px = x.impl()->data<T>();
        const int64_t xc = x.size(1);
        for (int64_t i = 0; i < rows; ++i)
          std::copy(px + i * xc, px + (i + 1) * xc, po + i * cols + col0);
        col0 += xc;
      }
    }
  });
  if (out->requires_grad) {
    std::vector<ImplPtr> ps;
    ps.reserve(xs.size());
    for (const auto& x : xs) ps.push_back(owned_impl(x));
    out->backward_fn = [ps, axis, cols](TensorImpl& self) {
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        int64_t off = 0;
        for (const auto& p : ps) {
          const int64_t xr = p->shape[0], xc = p->shape[1];
          if (p->requires_grad) {
            p->ensure_grad_alloc();
            T* gx = p->grad<T>();
            if (axis == 0) {
              for (int64_t i = 0; i < xr * xc; ++i) gx[i] += g[off * xc + i];
            } else {
              for (int64_t i = 0; i < xr; ++i)
                for (int64_t j = 0; j < xc; ++j) gx[i * xc + j] += g[i * cols + off + j];
            }
          }
          off += (axis == 0) ? xr : xc;
        }
      });
    };
  }
  return wrap(out);
}

Tensor slice2d(const Tensor& a, int axis, int64_t begin, int64_t end) {
  if (a.rank() != 2) throw ShapeError("slice2d: expected rank 2, got " + shape_str(a.shape()));
  if (axis != 0 && axis != 1) throw ShapeError("slice2d: axis must be 0 or 1");
  const int64_t lim = a.size(axis);
  if (begin < 0 || end > lim || begin >= end)
    throw ShapeError("slice2d: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(a.shape()));
  const int64_t r = a.size(0), c = a.size(1);
  const Shape os = (axis == 0) ? Shape{end - begin, c} : Shape{r, end - begin};
  auto out = make_node(os, a.dtype(), {a}, "slice2d");
  for_dtype(out->dtype, [&]<class T>() {
    const T* pa = a.impl()->data<T>();
    T* po = out->data<T>();
    if (axis == 0) {
      std::copy(pa + begin * c, pa + end * c, po);
    } else {
      for (int64_t i = 0; i < r; ++i)
        std::copy(pa + i * c + begin, pa + i * c + end, po + i * (end - begin));
    }
  });
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    out->backward_fn = [pa, axis, begin, c](TensorImpl& self) {
      if (!pa->requires_grad) return;
      pa->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        T* gx = pa->grad<T>();
        const int64_t sr = self.shape[0], sc = self.shape[1];
        if (axis == 0) {
          for (int64_t i = 0; i < sr * sc; ++i) gx[begin * c + i] += g[i];
        } else {
          for (int64_t i = 0; i < sr; ++i)
            for (int64_t j = 0; j < sc; ++j) gx[i * c + begin + j] += g[i * sc + j];
        }
      });
    };
  }
  return wrap(out);
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx) {
  if (a.rank() != 2) throw ShapeError("gather_rows: expected rank 2, got " + shape_str(a.shape()));
  const int64_t r = a.size(0), c = a.size(1);
  for (auto i : idx)
    if (i < 0 || i >= r)
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       shape_str(a.shape()));
  auto out = make_node({static_cast<int64_t>(idx.size()), c}, a.dtype(), {a}, "gather_rows");
  for_dtype(out->dtype, [&]<class T>() {
    const T* pa = a.impl()->data<T>();
    T* po = out->data<T>();
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy(pa + idx[i] * c, pa + (idx[i] + 1) * c, po + static_cast<int64_t>(i) * c);
  });
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    auto ids = idx;
    out->backward_fn = [pa, ids, c](TensorImpl& self) {
      if (!pa->requires_grad) return;
      pa->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        T* gx = pa->grad<T>();
        for (size_t i = 0; i < ids.size(); ++i)
          for (int64_t j = 0; j < c; ++j) gx[ids[i] * c + j] += g[static_cast<int64_t>(i) * c + j];
      });
    };
  }
  return wrap(out);
}

Tensor gather_elems(const Tensor& a, const std::vector<int64_t>& idx, const Shape& out_shape) {
  if (shape_numel(out_shape) != static_cast<int64_t>(idx.size()))
    throw ShapeError("gather_elems: out shape " + shape_str(out_shape) + " vs " +
                     std::to_string(idx.size()) + " indices");
  const int64_t n = a.numel();
  for (auto i : idx)
    if (i < 0 || i >= n)
      throw ShapeError("gather_elems: flat index " + std::to_string(i) + " out of range");
  auto out = make_node(out_shape, a.dtype(), {a}, "gather_elems");
  for (size_t i = 0; i < idx.size(); ++i) out->write(static_cast<int64_t>(i), a.impl()->read(idx[i]));
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    auto ids = idx;
    out->backward_fn = [pa, ids](TensorImpl& self) {
      if (!pa->requires_grad) return;
      pa->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        T* gx = pa->grad<T>();
        for (size_t i = 0; i < ids.size(); ++i) gx[ids[i]] += g[static_cast<int64_t>(i)];
      });
    };
  }
  return wrap(out);
}

Tensor scatter_rows(const Tensor& src, const std::vector<int64_t>& idx, int64_t out_rows,
                    const Tensor& filler) {
  if (src.rank() != 2) throw ShapeError("scatter_rows: expected rank-2 src");
  const int64_t c = src.size(1);
  if (static_cast<int64_t>(idx.size()) != src.size(0))
    throw ShapeError("scatter_rows: " + std::to_string(idx.size()) + " indices for " +
                     shape_str(src.shape()));
  if (filler.rank() != 2 || filler.size(0) != 1 || filler.size(1) != c)
    throw ShapeError("scatter_rows: filler must be [1," + std::to_string(c) + "], got " +
                     shape_str(filler.shape()));
  check_same_dtype(src, filler, "scatter_rows");
  std::vector<char> covered(static_cast<size_t>(out_rows), 0);
  for (auto i : idx) {
    if (i < 0 || i >= out_rows)
      throw ShapeError("scatter_rows: index " + std::to_string(i) + " out of range");
    if (covered[static_cast<size_t>(i)]) throw ShapeError("scatter_rows: duplicate index");
    covered[static_cast<size_t>(i)] = 1;
  }
  auto out = make_node({out_rows, c}, src.dtype(), {src, filler}, "scatter_rows");
  for_dtype(out->dtype, [&]<class T>() {
    const T* ps = src.impl()->data<T>();
    const T* pf = filler.impl()->data<T>();
    T* po = out->data<T>();
    for (int64_t r = 0; r < out_rows; ++r) std::copy(pf, pf + c, po + r * c);
    for (size_t i = 0; i < idx.size(); ++i)
      std::copy(ps + static_cast<int64_t>(i) * c, ps + static_cast<int64_t>(i + 1) * c,
                po + idx[i] * c);
  });
  if (out->requires_grad) {
    auto psrc = owned_impl(src);
    auto pfill = owned_impl(filler);
    auto ids = idx;
    auto cov = covered;
    out->backward_fn = [psrc, pfill, ids, cov, c, out_rows](TensorImpl& self) {
      for_dtype(self.dtype, [&]<class T>() {
        const T* g = self.grad<T>();
        if (psrc->requires_grad) {
          psrc->ensure_grad_alloc();
          T* gs = psrc->grad<T>();
          for (size_t i = 0; i < ids.size(); ++i)
            for (int64_t j = 0; j < c; ++j)
              gs[static_cast<int64_t>(i) * c + j] += g[ids[i] * c + j];
        }
        if (pfill->requires_grad) {
          pfill->ensure_grad_alloc();
          T* gf = pfill->grad<T>();
          for (int64_t r = 0; r < out_rows; ++r) {
            if (cov[static_cast<size_t>(r)]) continue;
            for (int64_t j = 0; j < c; ++j) gf[j] += g[r * c + j];
          }
        }
      });
    };
  }
  return wrap(out);
}

// ------------------------------------------------------------ reductions

static Tensor reduce_op(const Tensor& a, bool take_mean) {
  auto out = make_node({1}, a.dtype(), {a}, take_mean ? "mean" : "sum");
  const int64_t n = a.numel();
  for_dtype(out->dtype, [&]<class T>() {
    const T* pa = a.impl()->data<T>();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(pa[i]);
    if (take_mean) acc /= static_cast<double>(n);
    out->data<T>()[0] = static_cast<T>(acc);
  });
  if (out->requires_grad) {
    auto pa = owned_impl(a);
    const double scale = take_mean ? 1.0 / static_cast<double>(n) : 1.0;
    out->backward_fn = [pa, scale, n](TensorImpl& self) {
      if (!pa->requires_grad) return;
      pa->ensure_grad_alloc();
      for_dtype(self.dtype, [&]<class T>() {
        const T g = self.grad<T>()[0] * static_cast<T>(scale);
        T* gx = pa->grad<T>();
        for (int64_t i = 0; i < n; ++i) gx[i] += g;
      });
    };
  }
  return wrap(out);
}

Tensor sum(const Tensor& a) { return reduce_op(a, false); }
Tensor mean(const Tensor& a) { return reduce_op(a, true); }

}  // namespace maedet
