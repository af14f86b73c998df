#pragma once

// Private autograd internals shared by tensor.cpp and tensor_nn.cpp.

#include <functional>
#include <memory>
#include <type_traits>

#include "maedet/tensor.hpp"

namespace maedet {

struct TensorImpl {
  Shape shape;
  Dtype dtype = Dtype::F32;
  int64_t n = 0;
  bool requires_grad = false;

  std::vector<float> f32;
  std::vector<double> f64;
  std::vector<float> gf32;
  std::vector<double> gf64;
  bool grad_alloc = false;

  // graph edges; cleared when the graph is freed after backward
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;
  bool graph_freed = false;
  const char* op = "";

  template <class T> T* data() {
    if constexpr (std::is_same_v<T, float>) return f32.data();
    else return f64.data();
  }
  template <class T> const T* data() const {
    if constexpr (std::is_same_v<T, float>) return f32.data();
    else return f64.data();
  }
  template <class T> T* grad() {
    if constexpr (std::is_same_v<T, float>) return gf32.data();
    else return gf64.data();
  }

  void ensure_grad_alloc() {
    if (grad_alloc) return;
    if (dtype == Dtype::F32) gf32.assign(static_cast<size_t>(n), 0.0f);
    else gf64.assign(static_cast<size_t>(n), 0.0);
    grad_alloc = true;
  }

  double read(int64_t i) const {
    return dtype == Dtype::F32 ? static_cast<double>(f32[static_cast<size_t>(i)])
                               : f64[static_cast<size_t>(i)];
  }
  void write(int64_t i, double v) {
    if (dtype == Dtype::F32) f32[static_cast<size_t>(i)] = static_cast<float>(v);
    else f64[static_cast<size_t>(i)] = v;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;

inline const ImplPtr& owned_impl(const Tensor& t) { return t.impl_sp(); }

/// Allocates an op-result node. Parents are recorded only when gradients
/// will flow, so inference paths build no graph.
ImplPtr make_node(Shape shape, Dtype dt, const std::vector<Tensor>& inputs, const char* op);

inline Tensor wrap(ImplPtr p) { return Tensor(std::move(p)); }

template <class F>
inline void for_dtype(Dtype dt, F&& f) {
  if (dt == Dtype::F32) f.template operator()<float>();
  else f.template operator()<double>();
}

inline void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string(op) + ": mixed dtypes");
}

}  // namespace maedet
