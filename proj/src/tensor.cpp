#include "vitcap/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

namespace vitcap {
namespace detail {

std::string shape_str(std::span<const size_t> shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

size_t shape_product(std::span<const size_t> shape) {
  size_t p = 1;
  for (size_t e : shape) p *= e;
  return p;
}

template <typename T>
void ensure_finite(std::span<const T> data, const char* op) {
  // v * 0 == 0 is false exactly for NaN and +/-Inf and vectorizes cleanly.
  int bad = 0;
  for (const T v : data) bad |= !(v * T(0) == T(0));
  if (bad) throw NonFiniteError(std::string(op) + " produced a non-finite value");
}

template void ensure_finite<float>(std::span<const float>, const char*);
template void ensure_finite<double>(std::span<const double>, const char*);

// ---------------------------------------------------------------------
// GEMM microkernels. C[m x n] += A[m x k] * B[k x n], all row-major.
// Vector lanes cover distinct output columns; the k loop is strictly
// ascending, so each C element is a fixed-order sequential sum.
// ---------------------------------------------------------------------

#if defined(__GNUC__) || defined(__clang__)
#define VITCAP_VEXT 1
#endif

#if VITCAP_VEXT

typedef float f32x8 __attribute__((vector_size(32)));
typedef double f64x4 __attribute__((vector_size(32)));

template <typename T>
struct VecOf;
template <>
struct VecOf<float> {
  using V = f32x8;
  static constexpr size_t width = 8;
};
template <>
struct VecOf<double> {
  using V = f64x4;
  static constexpr size_t width = 4;
};

static inline f32x8 vsplat(float x) { return f32x8{x, x, x, x, x, x, x, x}; }
static inline f64x4 vsplat(double x) { return f64x4{x, x, x, x}; }

template <typename V, typename T>
static inline V vload(const T* p) {
  V v;
  std::memcpy(&v, p, sizeof(V));
  return v;
}
template <typename V, typename T>
static inline void vstore(T* p, V v) {
  std::memcpy(p, &v, sizeof(V));
}

// 4 rows x 2 vectors of C kept in registers across the whole k loop.
template <typename T>
static void kern_4x2v(const T* a, const T* b, T* c, size_t k, size_t lda, size_t ldb,
                      size_t ldc) {
  using V = typename VecOf<T>::V;
  constexpr size_t W = VecOf<T>::width;
  V c00 = {}, c01 = {}, c10 = {}, c11 = {}, c20 = {}, c21 = {}, c30 = {}, c31 = {};
  for (size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    const V b0 = vload<V>(brow);
    const V b1 = vload<V>(brow + W);
    V av;
    av = vsplat(a[0 * lda + p]), c00 += av * b0, c01 += av * b1;
    av = vsplat(a[1 * lda + p]), c10 += av * b0, c11 += av * b1;
    av = vsplat(a[2 * lda + p]), c20 += av * b0, c21 += av * b1;
    av = vsplat(a[3 * lda + p]), c30 += av * b0, c31 += av * b1;
  }
  vstore(c + 0 * ldc, vload<V>(c + 0 * ldc) + c00);
  vstore(c + 0 * ldc + W, vload<V>(c + 0 * ldc + W) + c01);
  vstore(c + 1 * ldc, vload<V>(c + 1 * ldc) + c10);
  vstore(c + 1 * ldc + W, vload<V>(c + 1 * ldc + W) + c11);
  vstore(c + 2 * ldc, vload<V>(c + 2 * ldc) + c20);
  vstore(c + 2 * ldc + W, vload<V>(c + 2 * ldc + W) + c21);
  vstore(c + 3 * ldc, vload<V>(c + 3 * ldc) + c30);
  vstore(c + 3 * ldc + W, vload<V>(c + 3 * ldc + W) + c31);
}

template <typename T>
static void kern_1x2v(const T* a, const T* b, T* c, size_t k, size_t ldb) {
  using V = typename VecOf<T>::V;
  constexpr size_t W = VecOf<T>::width;
  V c0 = {}, c1 = {};
  for (size_t p = 0; p < k; ++p) {
    const T* brow = b + p * ldb;
    const V av = vsplat(a[p]);
    c0 += av * vload<V>(brow);
    c1 += av * vload<V>(brow + W);
  }
  vstore(c, vload<V>(c) + c0);
  vstore(c + W, vload<V>(c + W) + c1);
}

template <typename T>
static void kern_4x1v(const T* a, const T* b, T* c, size_t k, size_t lda, size_t ldb,
                      size_t ldc) {
  using V = typename VecOf<T>::V;
  V c0 = {}, c1 = {}, c2 = {}, c3 = {};
  for (size_t p = 0; p < k; ++p) {
    const V b0 = vload<V>(b + p * ldb);
    c0 += vsplat(a[0 * lda + p]) * b0;
    c1 += vsplat(a[1 * lda + p]) * b0;
    c2 += vsplat(a[2 * lda + p]) * b0;
    c3 += vsplat(a[3 * lda + p]) * b0;
  }
  vstore(c + 0 * ldc, vload<V>(c + 0 * ldc) + c0);
  vstore(c + 1 * ldc, vload<V>(c + 1 * ldc) + c1);
  vstore(c + 2 * ldc, vload<V>(c + 2 * ldc) + c2);
  vstore(c + 3 * ldc, vload<V>(c + 3 * ldc) + c3);
}

template <typename T>
static void kern_1x1v(const T* a, const T* b, T* c, size_t k, size_t ldb) {
  using V = typename VecOf<T>::V;
  V c0 = {};
  for (size_t p = 0; p < k; ++p) c0 += vsplat(a[p]) * vload<V>(b + p * ldb);
  vstore(c, vload<V>(c) + c0);
}

template <typename T>
static void gemm_nn_impl(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  constexpr size_t W = VecOf<T>::width;
  size_t j0 = 0;
  for (; j0 + 2 * W <= n; j0 += 2 * W) {
    size_t i = 0;
    for (; i + 4 <= m; i += 4) kern_4x2v(a + i * k, b + j0, c + i * n + j0, k, k, n, n);
    for (; i < m; ++i) kern_1x2v(a + i * k, b + j0, c + i * n + j0, k, n);
  }
  if (j0 + W <= n) {
    size_t i = 0;
    for (; i + 4 <= m; i += 4) kern_4x1v(a + i * k, b + j0, c + i * n + j0, k, k, n, n);
    for (; i < m; ++i) kern_1x1v(a + i * k, b + j0, c + i * n + j0, k, n);
    j0 += W;
  }
  if (j0 < n) {
    for (size_t i = 0; i < m; ++i) {
      for (size_t p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        const T* brow = b + p * n;
        T* crow = c + i * n;
        for (size_t j = j0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

#else  // portable fallback, same fixed accumulation order

template <typename T>
static void gemm_nn_impl(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    for (size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      T* crow = c + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

#endif

void gemm_nn(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
  gemm_nn_impl(a, b, c, m, k, n);
}
void gemm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  gemm_nn_impl(a, b, c, m, k, n);
}

template <typename T>
void transpose_into(const T* src, T* dst, size_t rows, size_t cols) {
  for (size_t i = 0; i < rows; ++i)
    for (size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

template void transpose_into<float>(const float*, float*, size_t, size_t);
template void transpose_into<double>(const double*, double*, size_t, size_t);

float fast_exp(float x) {
  x = x < 88.0f ? x : 88.0f;
  x = x > -87.0f ? x : -87.0f;
  const float kf = std::floor(x * 1.44269504088896341f + 0.5f);
  float r = x - kf * 0.693359375f;
  r = r - kf * (-2.12194440e-4f);
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  return p * std::bit_cast<float>((int32_t(kf) + 127) << 23);
}

double fast_exp(double x) { return std::exp(x); }

}  // namespace detail

// -----------------------------------------------------------------------
// Tensor
// -----------------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(std::vector<size_t> shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(std::vector<size_t> shape, T v) {
  for (size_t e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + detail::shape_str(shape));
  auto node = std::make_shared<detail::TensorNode<T>>();
  node->value.assign(detail::shape_product(shape), v);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from_data(std::vector<size_t> shape, std::vector<T> data) {
  for (size_t e : shape)
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + detail::shape_str(shape));
  if (detail::shape_product(shape) != data.size())
    throw ShapeError("data length " + std::to_string(data.size()) + " does not fill shape " +
                     detail::shape_str(shape));
  auto node = std::make_shared<detail::TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  return Tensor(std::move(node));
}

template <typename T>
size_t Tensor<T>::rows() const {
  if (ndim() != 2) throw ShapeError("rows(): tensor is not rank-2: " + detail::shape_str(shape()));
  return node_->shape[0];
}

template <typename T>
size_t Tensor<T>::cols() const {
  if (ndim() != 2) throw ShapeError("cols(): tensor is not rank-2: " + detail::shape_str(shape()));
  return node_->shape[1];
}

template <typename T>
T Tensor<T>::item() const {
  if (!node_ || node_->value.size() != 1)
    throw ShapeError("item(): tensor is not a scalar");
  return node_->value[0];
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!node_ || !node_->requires_grad)
    throw Error("grad(): tensor does not track gradients");
  return {node_->grad.data(), node_->grad.size()};
}

// -----------------------------------------------------------------------
// Parameter
// -----------------------------------------------------------------------

template <typename T>
Parameter<T>::Parameter(std::string name, Tensor<T> init) : name_(std::move(name)) {
  if (!init.defined()) throw Error("Parameter '" + name_ + "' needs an initial value");
  auto node = std::make_shared<detail::TensorNode<T>>();
  node->shape = init.shape();
  node->value = std::vector<T>(init.data().begin(), init.data().end());
  node->requires_grad = true;
  node->grad.assign(node->value.size(), T(0));
  value_ = Tensor<T>(std::move(node));
}

template <typename T>
void Parameter<T>::zero_grad() {
  std::fill(value_.node_->grad.begin(), value_.node_->grad.end(), T(0));
}

template <typename T>
Parameter<T> Parameter<T>::clone() const {
  Tensor<T> copy = Tensor<T>::from_data(value_.shape(),
                                        std::vector<T>(value_.data().begin(), value_.data().end()));
  return Parameter<T>(name_, std::move(copy));
}

// -----------------------------------------------------------------------
// Tape
// -----------------------------------------------------------------------

template <typename T>
void Tape<T>::reset() {
  ops_.clear();
  replayed_ = false;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ShapeError("backward(): loss must be a scalar tensor");
  if (replayed_)
    throw Error("backward(): tape already replayed; reset() and re-record first");
  if (loss.node_->producer != this)
    throw Error("backward(): loss was not produced by operations recorded on this tape");
  loss.node_->grad[0] = T(1);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  replayed_ = true;
}

template <typename T>
Tensor<T> Tape<T>::make_result(std::vector<size_t> shape, std::vector<T> value, bool needs_grad,
                               const char* op) {
  detail::ensure_finite<T>(value, op);
  auto node = std::make_shared<detail::TensorNode<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (needs_grad) {
    node->requires_grad = true;
    node->grad.assign(node->value.size(), T(0));
    node->producer = this;
  }
  return Tensor<T>(std::move(node));
}

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes differ: " + detail::shape_str(a.shape()) +
                     " vs " + detail::shape_str(b.shape()));
}

template <typename T>
void require_rank2(const Tensor<T>& a, const char* op) {
  if (a.ndim() != 2)
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " +
                     detail::shape_str(a.shape()));
}

}  // namespace

template <typename T>
Tensor<T> Tape<T>::add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const bool ng = track(a) || track(b);
  Tensor<T> res = make_result(a.shape(), std::move(out), ng, "add");
  if (ng) {
    record([an = a.node_, bn = b.node_, on = res.node_]() {
      const auto& g = on->grad;
      if (an->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
      if (bn->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i];
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::add_rowwise(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank2(x, "add_rowwise");
  if (bias.ndim() != 1 || bias.size() != x.cols())
    throw ShapeError("add_rowwise: bias " + detail::shape_str(bias.shape()) +
                     " does not match row width of " + detail::shape_str(x.shape()));
  const size_t m = x.rows(), n = x.cols();
  const auto xv = x.data();
  const auto bv = bias.data();
  std::vector<T> out(xv.size());
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  const bool ng = track(x) || track(bias);
  Tensor<T> res = make_result(x.shape(), std::move(out), ng, "add_rowwise");
  if (ng) {
    record([xn = x.node_, bn = bias.node_, on = res.node_, m, n]() {
      const auto& g = on->grad;
      if (xn->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
      if (bn->requires_grad)
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) bn->grad[j] += g[i * n + j];
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const bool ng = track(a) || track(b);
  Tensor<T> res = make_result(a.shape(), std::move(out), ng, "mul");
  if (ng) {
    record([an = a.node_, bn = b.node_, on = res.node_]() {
      const auto& g = on->grad;
      if (an->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * bn->value[i];
      if (bn->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) bn->grad[i] += g[i] * an->value[i];
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::scale(const Tensor<T>& a, T s) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  const bool ng = track(a);
  Tensor<T> res = make_result(a.shape(), std::move(out), ng, "scale");
  if (ng) {
    record([an = a.node_, on = res.node_, s]() {
      const auto& g = on->grad;
      for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i] * s;
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::sum_all(const Tensor<T>& a) {
  const auto av = a.data();
  T s = 0;
  for (const T v : av) s += v;
  const bool ng = track(a);
  Tensor<T> res = make_result({}, {s}, ng, "sum_all");
  if (ng) {
    record([an = a.node_, on = res.node_]() {
      const T g = on->grad[0];
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::mean_all(const Tensor<T>& a) {
  const auto av = a.data();
  T s = 0;
  for (const T v : av) s += v;
  const T inv = T(1) / T(av.size());
  const bool ng = track(a);
  Tensor<T> res = make_result({}, {s * inv}, ng, "mean_all");
  if (ng) {
    record([an = a.node_, on = res.node_, inv]() {
      const T g = on->grad[0] * inv;
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::mean_rows(const Tensor<T>& x) {
  require_rank2(x, "mean_rows");
  const size_t m = x.rows(), n = x.cols();
  const auto xv = x.data();
  std::vector<T> out(n, T(0));
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
  const T inv = T(1) / T(m);
  for (size_t j = 0; j < n; ++j) out[j] *= inv;
  const bool ng = track(x);
  Tensor<T> res = make_result({n}, std::move(out), ng, "mean_rows");
  if (ng) {
    record([xn = x.node_, on = res.node_, m, n, inv]() {
      const auto& g = on->grad;
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) xn->grad[i * n + j] += g[j] * inv;
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner extents differ: " + detail::shape_str(a.shape()) + " vs " +
                     detail::shape_str(b.shape()));
  const size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  const bool ng = track(a) || track(b);
  Tensor<T> res = make_result({m, n}, std::move(out), ng, "matmul");
  if (ng) {
    record([an = a.node_, bn = b.node_, on = res.node_, m, k, n]() {
      const T* g = on->grad.data();
      if (an->requires_grad) {
        // dA += G * B^T
        std::vector<T> bt(k * n);
        detail::transpose_into(bn->value.data(), bt.data(), k, n);
        detail::gemm_nn(g, bt.data(), an->grad.data(), m, n, k);
      }
      if (bn->requires_grad) {
        // dB += A^T * G
        std::vector<T> at(m * k);
        detail::transpose_into(an->value.data(), at.data(), m, k);
        detail::gemm_nn(at.data(), g, bn->grad.data(), k, m, n);
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::transpose(const Tensor<T>& a) {
  require_rank2(a, "transpose");
  const size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * n);
  detail::transpose_into(a.data().data(), out.data(), m, n);
  const bool ng = track(a);
  Tensor<T> res = make_result({n, m}, std::move(out), ng, "transpose");
  if (ng) {
    record([an = a.node_, on = res.node_, m, n]() {
      const T* g = on->grad.data();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) an->grad[i * n + j] += g[j * m + i];
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::reshape(const Tensor<T>& a, std::vector<size_t> shape) {
  if (detail::shape_product(shape) != a.size())
    throw ShapeError("reshape: cannot view " + detail::shape_str(a.shape()) + " as " +
                     detail::shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  const bool ng = track(a);
  Tensor<T> res = make_result(std::move(shape), std::move(out), ng, "reshape");
  if (ng) {
    record([an = a.node_, on = res.node_]() {
      const auto& g = on->grad;
      for (size_t i = 0; i < g.size(); ++i) an->grad[i] += g[i];
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::concat(std::span<const Tensor<T>> xs, size_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  if (axis > 1) throw IndexError("concat: axis must be 0 or 1");
  for (const auto& x : xs) require_rank2(x, "concat");
  const size_t fixed = axis == 0 ? xs[0].cols() : xs[0].rows();
  size_t total = 0;
  for (const auto& x : xs) {
    const size_t f = axis == 0 ? x.cols() : x.rows();
    if (f != fixed)
      throw ShapeError("concat: mismatched shapes " + detail::shape_str(xs[0].shape()) + " vs " +
                       detail::shape_str(x.shape()));
    total += axis == 0 ? x.rows() : x.cols();
  }
  const size_t m = axis == 0 ? total : fixed;
  const size_t n = axis == 0 ? fixed : total;
  std::vector<T> out(m * n);
  bool ng = false;
  std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
  nodes.reserve(xs.size());
  size_t off = 0;
  for (const auto& x : xs) {
    const auto xv = x.data();
    if (axis == 0) {
      std::copy(xv.begin(), xv.end(), out.begin() + off * n);
      off += x.rows();
    } else {
      const size_t w = x.cols();
      for (size_t i = 0; i < m; ++i)
        std::copy(xv.begin() + i * w, xv.begin() + (i + 1) * w, out.begin() + i * n + off);
      off += w;
    }
    ng = ng || track(x);
    nodes.push_back(x.node_);
  }
  Tensor<T> res = make_result({m, n}, std::move(out), ng, "concat");
  if (ng) {
    record([nodes = std::move(nodes), on = res.node_, axis, m, n]() {
      const T* g = on->grad.data();
      size_t off = 0;
      for (const auto& xn : nodes) {
        const size_t xr = xn->shape[0], xc = xn->shape[1];
        if (xn->requires_grad) {
          if (axis == 0) {
            for (size_t i = 0; i < xr * xc; ++i) xn->grad[i] += g[off * n + i];
          } else {
            for (size_t i = 0; i < m; ++i)
              for (size_t j = 0; j < xc; ++j) xn->grad[i * xc + j] += g[i * n + off + j];
          }
        }
        off += axis == 0 ? xr : xc;
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::stack_rows(std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw ShapeError("stack_rows: no inputs");
  const size_t n = xs[0].size();
  for (const auto& x : xs)
    if (x.ndim() != 1 || x.size() != n)
      throw ShapeError("stack_rows: expected rank-1 tensors of equal length, got " +
                       detail::shape_str(x.shape()));
  const size_t m = xs.size();
  std::vector<T> out(m * n);
  bool ng = false;
  std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
  nodes.reserve(m);
  for (size_t i = 0; i < m; ++i) {
    const auto xv = xs[i].data();
    std::copy(xv.begin(), xv.end(), out.begin() + i * n);
    ng = ng || track(xs[i]);
    nodes.push_back(xs[i].node_);
  }
  Tensor<T> res = make_result({m, n}, std::move(out), ng, "stack_rows");
  if (ng) {
    record([nodes = std::move(nodes), on = res.node_, n]() {
      const T* g = on->grad.data();
      for (size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i]->requires_grad) continue;
        for (size_t j = 0; j < n; ++j) nodes[i]->grad[j] += g[i * n + j];
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::softmax_rows(const Tensor<T>& x) {
  require_rank2(x, "softmax_rows");
  const size_t m = x.rows(), n = x.cols();
  const auto xv = x.data();
  std::vector<T> out(m * n);
  for (size_t i = 0; i < m; ++i) {
    const T* row = xv.data() + i * n;
    T* orow = out.data() + i * n;
    T mx = row[0];
    for (size_t j = 1; j < n; ++j) mx = row[j] > mx ? row[j] : mx;
    for (size_t j = 0; j < n; ++j) orow[j] = detail::fast_exp(row[j] - mx);
    T sum = 0;
    for (size_t j = 0; j < n; ++j) sum += orow[j];
    const T inv = T(1) / sum;
    for (size_t j = 0; j < n; ++j) orow[j] *= inv;
  }
  const bool ng = track(x);
  Tensor<T> res = make_result({m, n}, std::move(out), ng, "softmax_rows");
  if (ng) {
    record([xn = x.node_, on = res.node_, m, n]() {
      const T* y = on->value.data();
      const T* g = on->grad.data();
      for (size_t i = 0; i < m; ++i) {
        const T* yr = y + i * n;
        const T* gr = g + i * n;
        T dot = 0;
        for (size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
        T* xr = xn->grad.data() + i * n;
        for (size_t j = 0; j < n; ++j) xr[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift,
                              T eps) {
  require_rank2(x, "layer_norm");
  const size_t m = x.rows(), n = x.cols();
  if (n < 2) throw ShapeError("layer_norm: needs at least 2 columns");
  if (gain.ndim() != 1 || gain.size() != n || shift.ndim() != 1 || shift.size() != n)
    throw ShapeError("layer_norm: gain/shift must be rank-1 of length " + std::to_string(n));
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto sv = shift.data();
  std::vector<T> out(m * n);
  std::vector<T> xhat(m * n);
  std::vector<T> inv_std(m);
  for (size_t i = 0; i < m; ++i) {
    const T* row = xv.data() + i * n;
    T mean = 0;
    for (size_t j = 0; j < n; ++j) mean += row[j];
    mean /= T(n);
    T var = 0;
    for (size_t j = 0; j < n; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= T(n);  // population variance
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (size_t j = 0; j < n; ++j) {
      const T h = (row[j] - mean) * inv;
      xhat[i * n + j] = h;
      out[i * n + j] = h * gv[j] + sv[j];
    }
  }
  const bool ng = track(x) || track(gain) || track(shift);
  Tensor<T> res = make_result({m, n}, std::move(out), ng, "layer_norm");
  if (ng) {
    record([xn = x.node_, gn = gain.node_, sn = shift.node_, on = res.node_,
            xhat = std::move(xhat), inv_std = std::move(inv_std), m, n]() {
      const T* g = on->grad.data();
      if (gn->requires_grad)
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) gn->grad[j] += g[i * n + j] * xhat[i * n + j];
      if (sn->requires_grad)
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < n; ++j) sn->grad[j] += g[i * n + j];
      if (xn->requires_grad) {
        for (size_t i = 0; i < m; ++i) {
          const T* gr = g + i * n;
          const T* hr = xhat.data() + i * n;
          T s1 = 0, s2 = 0;
          for (size_t j = 0; j < n; ++j) {
            const T dh = gr[j] * gn->value[j];
            s1 += dh;
            s2 += dh * hr[j];
          }
          const T invn = T(1) / T(n);
          T* xr = xn->grad.data() + i * n;
          for (size_t j = 0; j < n; ++j) {
            const T dh = gr[j] * gn->value[j];
            xr[j] += inv_std[i] * (dh - s1 * invn - hr[j] * s2 * invn);
          }
        }
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::gelu(const Tensor<T>& x) {
  // exact form x * Phi(x) with the normal CDF via erf (not the tanh fit)
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  for (size_t i = 0; i < out.size(); ++i) {
    const T v = xv[i];
    out[i] = v * T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
  }
  const bool ng = track(x);
  Tensor<T> res = make_result(x.shape(), std::move(out), ng, "gelu");
  if (ng) {
    record([xn = x.node_, on = res.node_]() {
      constexpr T inv_sqrt2 = T(0.70710678118654752440);
      constexpr T inv_sqrt2pi = T(0.39894228040143267794);
      const auto& g = on->grad;
      for (size_t i = 0; i < g.size(); ++i) {
        const T v = xn->value[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        xn->grad[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> Tape<T>::cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank2(logits, "cross_entropy");
  const size_t b = logits.rows(), mclasses = logits.cols();
  if (labels.size() != b)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(b) + " rows");
  for (const int y : labels)
    if (y < 0 || size_t(y) >= mclasses)
      throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                       std::to_string(mclasses) + ")");
  const auto lv = logits.data();
  std::vector<T> probs(b * mclasses);
  T total = 0;
  for (size_t i = 0; i < b; ++i) {
    const T* row = lv.data() + i * mclasses;
    T mx = row[0];
    for (size_t j = 1; j < mclasses; ++j) mx = row[j] > mx ? row[j] : mx;
    T sum = 0;
    for (size_t j = 0; j < mclasses; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    const T inv = T(1) / sum;
    for (size_t j = 0; j < mclasses; ++j) probs[i * mclasses + j] = std::exp(row[j] - mx) * inv;
    total += lse - row[labels[i]];
  }
  const T loss = total / T(b);
  const bool ng = track(logits);
  Tensor<T> res = make_result({}, {loss}, ng, "cross_entropy");
  if (ng) {
    record([ln = logits.node_, on = res.node_, probs = std::move(probs),
            labels = std::vector<int>(labels.begin(), labels.end()), b, mclasses]() {
      const T g = on->grad[0] / T(b);
      for (size_t i = 0; i < b; ++i) {
        T* lr = ln->grad.data() + i * mclasses;
        const T* pr = probs.data() + i * mclasses;
        for (size_t j = 0; j < mclasses; ++j) lr[j] += g * pr[j];
        lr[labels[i]] -= g;
      }
    });
  }
  return res;
}

template class Tensor<float>;
template class Tensor<double>;
template class Parameter<float>;
template class Parameter<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace vitcap
