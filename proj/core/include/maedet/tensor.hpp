#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "maedet/errors.hpp"

namespace maedet {

/// Scalar precision of a tensor. F32 is the training precision, F64 the
/// oracle precision used by finite-difference checks.
enum class Dtype { F32, F64 };

/// The global default used by factory functions when no dtype is passed.
Dtype default_dtype();
void set_default_dtype(Dtype d);

/// RAII switch of the default dtype, mainly for tests.
struct DtypeGuard {
  Dtype saved;
  explicit DtypeGuard(Dtype d) : saved(default_dtype()) { set_default_dtype(d); }
  ~DtypeGuard() { set_default_dtype(saved); }
};

/// While any NoGradGuard is alive, new ops record no graph regardless of
/// input requires_grad flags (inference mode).
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl;

/// Dense n-dimensional tensor participating in a reverse-mode autodiff graph.
/// A Tensor is a cheap shared handle; op results are immutable once created
/// (only grad buffers mutate). Graphs are confined to one thread.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(const Shape& s, Dtype dt = default_dtype(), bool requires_grad = false);
  static Tensor full(const Shape& s, double value, Dtype dt = default_dtype(),
                     bool requires_grad = false);
  static Tensor from_vector(const Shape& s, const std::vector<double>& values,
                            Dtype dt = default_dtype(), bool requires_grad = false);
  /// Uniform in [lo, hi), drawn from the given rng stream.
  static Tensor uniform(const Shape& s, class Rng& rng, double lo = 0.0, double hi = 1.0,
                        Dtype dt = default_dtype(), bool requires_grad = false);
  /// Truncated normal (±2σ) with the given stddev.
  static Tensor trunc_normal(const Shape& s, class Rng& rng, double stddev,
                             Dtype dt = default_dtype(), bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int64_t size(int axis) const;
  int64_t numel() const;
  Dtype dtype() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);
  bool is_leaf() const;

  /// Deep copy with no graph attached.
  Tensor clone() const;
  /// Shares the data buffer but drops the graph edge.
  Tensor detach() const;
  /// Cast copy (leaf, no grad flow).
  Tensor to(Dtype dt) const;

  /// Scalar read; requires numel() == 1.
  double item() const;
  /// Element read by multi-index (debug/test convenience).
  double at(std::initializer_list<int64_t> idx) const;
  /// Copy of the whole buffer widened to double.
  std::vector<double> to_vector() const;

  /// Raw typed access. T must match dtype().
  template <class T> T* data();
  template <class T> const T* data() const;
  /// Grad buffer access; nullptr until a backward pass has touched it.
  template <class T> T* grad_data();
  template <class T> const T* grad_data() const;

  bool has_grad() const;
  /// Deep copy of the grad buffer as a leaf tensor.
  Tensor grad() const;
  void zero_grad();

  /// Reverse-mode pass from a scalar. Visits each node once in reverse
  /// topological order, accumulates into .grad of every requires_grad node,
  /// then frees the graph; a second call on the same graph throws.
  void backward();

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_sp() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
  std::shared_ptr<TensorImpl> impl_;
};

// ---- elementwise / arithmetic -------------------------------------------
// Broadcasting: b may be scalar (numel 1) or match a trailing suffix of
// a's shape. Nothing else.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // exact Gaussian-CDF form x * Phi(x)

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- shape ops -----------------------------------------------------------
Tensor reshape(const Tensor& a, const Shape& s);
Tensor transpose2d(const Tensor& a);
/// Concatenate rank-2 tensors along axis 0 or 1.
Tensor concat(const std::vector<Tensor>& xs, int axis);
/// Slice of a rank-2 tensor along axis 0 or 1, [begin, end).
Tensor slice2d(const Tensor& a, int axis, int64_t begin, int64_t end);
/// out[i, :] = a[idx[i], :] for rank-2 a.
Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& idx);
/// Flat 1-D gather: out[i] = a_flat[idx[i]]; result shape given explicitly.
Tensor gather_elems(const Tensor& a, const std::vector<int64_t>& idx, const Shape& out_shape);
/// Builds an [out_rows x D] tensor: row idx[i] <- src[i, :]; every row not
/// covered by idx gets filler (a [1 x D] tensor, typically a learned token).
Tensor scatter_rows(const Tensor& src, const std::vector<int64_t>& idx, int64_t out_rows,
                    const Tensor& filler);

// ---- reductions ----------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---- linear algebra / nn -------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n] -> [m,n]
Tensor softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
/// Fused multi-head scaled-dot-product attention over row-major [L, D]
/// q/k/v with D split into `heads` equal slices.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// ---- conv family (rank-3 [C,H,W] maps) ------------------------------------
/// Cross-correlation, weight [Cout, Cin, kh, kw], output size floors:
/// Hout = (H + 2*pad - kh) / stride + 1. Throws if the output would be empty.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
/// Transposed convolution, weight [Cin, Cout, kh, kw],
/// Hout = (H - 1) * stride + kh.
Tensor deconv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride);
Tensor maxpool2d(const Tensor& x, int kernel, int stride);

// ---- losses ---------------------------------------------------------------
/// Mean of (a - b)^2 over all elements.
Tensor mse_loss(const Tensor& a, const Tensor& b);
/// Mean over rows of -log softmax(logits)[row, label]; logits [N, K].
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);
/// Mean over elements of the stable binary cross entropy with logits.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);
/// Smooth L1 (Huber): 0.5 d^2 / beta for |d| < beta else |d| - 0.5 beta,
/// summed over elements and divided by `normalizer`.
Tensor smooth_l1(const Tensor& pred, const Tensor& target, double beta, double normalizer);

}  // namespace maedet
