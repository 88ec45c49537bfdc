#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vitcap/errors.hpp"

// Dense row-major tensors with reverse-mode differentiation on a Wengert
// tape. Precision is picked at construction by instantiating Tensor<float>
// or Tensor<double>; training runs in 32-bit, verification suites in 64-bit.
//
// Threading contract: a Tape and the tensors recorded on it belong to one
// logical thread between reset() and backward(). Tensors are immutable once
// produced; parameter values are only mutated through Parameter accessors
// (optimizer steps happen between tapes). Distinct tapes/models may run on
// distinct threads concurrently, and trained parameters are safe to share
// read-only.

namespace vitcap {

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorNode {
  std::vector<size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated only when requires_grad
  bool requires_grad = false;
  const void* producer = nullptr;  // tape that recorded the producing op
};

std::string shape_str(std::span<const size_t> shape);
size_t shape_product(std::span<const size_t> shape);

// Throws NonFiniteError naming `op` if any element is NaN/Inf.
template <typename T>
void ensure_finite(std::span<const T> data, const char* op);

}  // namespace detail

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor is float or double");

 public:
  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape);
  static Tensor full(std::vector<size_t> shape, T v);
  static Tensor from_data(std::vector<size_t> shape, std::vector<T> data);
  static Tensor scalar(T v) { return from_data({}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<size_t>& shape() const { return node_->shape; }
  size_t ndim() const { return node_->shape.size(); }
  size_t size() const { return node_->value.size(); }

  // rank-2 helpers
  size_t rows() const;
  size_t cols() const;
  T at(size_t r, size_t c) const { return node_->value[r * cols() + c]; }

  std::span<const T> data() const { return {node_->value.data(), node_->value.size()}; }

  // value of a size-1 tensor
  T item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }

  // adjoint accumulated by the last backward(); only on grad-tracked tensors
  std::span<const T> grad() const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode<T>> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::TensorNode<T>> node_;

  friend class Tape<T>;
  template <typename U>
  friend class Parameter;
};

// A named leaf: value plus a persistent gradient accumulator of equal shape.
// Gradients accumulate across backward() calls until zero_grad().
template <typename T>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor<T> init);

  const std::string& name() const { return name_; }
  const Tensor<T>& tensor() const { return value_; }
  const std::vector<size_t>& shape() const { return value_.shape(); }
  size_t size() const { return value_.size(); }

  std::span<const T> value() const { return value_.data(); }
  std::span<T> value_mut() { return {value_.node_->value.data(), value_.node_->value.size()}; }
  std::span<const T> grad() const { return value_.grad(); }
  std::span<T> grad_mut() { return {value_.node_->grad.data(), value_.node_->grad.size()}; }

  void zero_grad();

  // deep copy with fresh storage (same name)
  Parameter clone() const;

 private:
  Tensor<T> value_;
  std::string name_;
};

// Ordered record of executed operations. Forward execution order is a
// topological order, so replaying the record backwards visits nodes in
// exact reverse topological order. backward() may run once per recording;
// reset() clears the record and re-arms it.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }
  size_t op_count() const { return ops_.size(); }

  void reset();

  // Seeds d(loss)/d(loss) = 1 and accumulates adjoints into every reachable
  // grad-tracked tensor, parameters included. Errors: non-scalar loss, loss
  // not produced by this tape's recording, or a second backward without
  // re-recording.
  void backward(const Tensor<T>& loss);

  // ---- differentiable operations ------------------------------------
  // Each returns a fresh tensor, validates shapes, checks the result is
  // finite, and (while recording) registers the adjoint closure.

  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
  // x[m x n] + bias[n] broadcast over rows
  Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& bias);
  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> scale(const Tensor<T>& a, T s);
  Tensor<T> sum_all(const Tensor<T>& a);
  Tensor<T> mean_all(const Tensor<T>& a);
  // [m x n] -> [n], mean over rows
  Tensor<T> mean_rows(const Tensor<T>& x);
  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
  Tensor<T> transpose(const Tensor<T>& a);
  Tensor<T> reshape(const Tensor<T>& a, std::vector<size_t> shape);
  Tensor<T> flatten(const Tensor<T>& a) { return reshape(a, {a.size()}); }
  // rank-2 inputs, axis 0 (stack rows) or 1 (widen columns)
  Tensor<T> concat(std::span<const Tensor<T>> xs, size_t axis);
  // rank-1 inputs of equal length n -> [m x n]
  Tensor<T> stack_rows(std::span<const Tensor<T>> xs);
  Tensor<T> softmax_rows(const Tensor<T>& x);
  Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift, T eps);
  Tensor<T> gelu(const Tensor<T>& x);
  // mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized
  Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

 private:
  Tensor<T> make_result(std::vector<size_t> shape, std::vector<T> value, bool needs_grad,
                        const char* op);
  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }
  bool track(const Tensor<T>& t) const { return recording_ && t.requires_grad(); }
  static std::span<T> grad_of(const Tensor<T>& t) {
    return {t.node_->grad.data(), t.node_->grad.size()};
  }

  std::vector<std::function<void()>> ops_;
  bool recording_ = true;
  bool replayed_ = false;
};

// Convenience free functions mirroring the member ops (single-op call sites).
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return tape.matmul(a, b);
}
template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x) {
  return tape.softmax_rows(x);
}

namespace detail {
// Raw kernels shared by forward and adjoint paths. Every per-element
// reduction runs in fixed ascending order (sequential row-major), so results
// are bit-identical across runs; no opportunistic reordering.
void gemm_nn(const float* a, const float* b, float* c, size_t m, size_t k, size_t n);
void gemm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
template <typename T>
void transpose_into(const T* src, T* dst, size_t rows, size_t cols);
// exp with a vectorizable polynomial for float (max rel. err ~1e-7, plenty
// under the 1e-6 softmax contract); exact libm for double so the 64-bit
// verification path stays smooth for finite differences.
float fast_exp(float x);
double fast_exp(double x);
}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Parameter<float>;
extern template class Parameter<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace vitcap
