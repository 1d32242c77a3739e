/* Copyright 2026 The romtrack Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef ROMTRACK_TENSOR_H_
#define ROMTRACK_TENSOR_H_

// Dense double-precision tensors with a reverse-mode gradient tape.
//
// A Tensor is a handle onto shared storage, the way framework tensors are:
// copying the handle does not copy the values. Use clone() or detach() for
// an independent copy. Every op below records a tape node when gradient
// recording is enabled and at least one input requires a gradient; the
// tape is the graph reachable from the tensor passed to backward().

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace romtrack {

using Shape = std::vector<std::size_t>;

// Cache-line aligned allocation for value buffers. The vector kernels pick
// their peeling and reduction order from pointer alignment, so fixing the
// base alignment makes results a function of shapes alone.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct TensorImpl;
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Storage values);
  Tensor(Shape shape, const std::vector<double>& values);
  Tensor(Shape shape, std::initializer_list<double> values);

  static Tensor scalar(double value);
  // Row-major 2-D literal.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  // Leading extent and the product of the remaining extents.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> values();
  std::span<const double> values() const;
  double at(std::size_t i) const { return values()[i]; }
  double& at(std::size_t i) { return values()[i]; }
  double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) { return values()[r * cols() + c]; }
  double item() const;

  bool requires_grad() const;
  // Marks a leaf as a gradient target. Fails on non-leaf tensors.
  Tensor& set_requires_grad(bool flag = true);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  Tensor grad_tensor() const;

  // Fresh storage, no history, no gradient flag.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  // Same storage (handle identity).
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_node(Shape shape, Storage values, std::vector<Tensor> inputs,
                          std::function<void(std::span<const double>, std::span<const double>,
                                             std::span<double* const>)>
                              backward);
  friend void backward(const Tensor& loss);
};

// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Forward multiply-accumulates performed by matmul and attention on this
// thread since start-up. Backward sweeps are not counted.
std::uint64_t& thread_mac_count();

// Running hash of the branches taken by non-smooth ops (relu, clamps, the
// min/max of the box losses) on this thread. A finite-difference stencil
// whose points disagree on it straddles a kink.
std::uint64_t& thread_branch_signature();
inline void note_branch(std::uint64_t branch) {
  std::uint64_t& s = thread_branch_signature();
  s = (s ^ branch) * 1099511628211ull;
}

// Signature of a node's backward function: (output values, output gradient,
// one accumulation buffer per input; null when that input needs no grad).
using BackwardFn = std::function<void(std::span<const double>, std::span<const double>,
                                      std::span<double* const>)>;

// Creates the result of an op. Records a tape node when recording is enabled
// and any input requires a gradient.
Tensor make_node(Shape shape, Storage values, std::vector<Tensor> inputs, BackwardFn backward);

// Reverse sweep from a scalar. Leaf gradients accumulate across calls until
// zero_grad().
void backward(const Tensor& loss);

// ---- Ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x[..., n] + bias[n]; the only broadcast the library supports.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x · w + b for x[m×k], w[k×n], b[n].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Row blocks of 2-D tensors.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
// Each part holds `batch` equal row groups; the result concatenates them per
// sample: [p0_b0; p1_b0; ...; p0_b1; p1_b1; ...].
Tensor interleave_rows(std::span<const Tensor> parts, std::size_t batch);
// [x; x; ...] repeated `times` times.
Tensor tile_rows(const Tensor& x, std::size_t times);
// Inverse slice of interleave_rows: rows [offset, offset+count) of each of the
// `batch` samples.
Tensor sample_rows(const Tensor& x, std::size_t batch, std::size_t offset, std::size_t count);

// Scaled dot-product attention over `heads` contiguous column groups, applied
// independently to each of `batch` samples. q[batch·nq × D], k/v[batch·nk × D].
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            std::size_t batch);

// 3×3 zero-padded neighbourhoods of a row-major feature grid:
// x[batch·h·w × c] -> [batch·h·w × 9c], column (ky·3 + kx)·c + channel.
Tensor im2col3x3(const Tensor& x, std::size_t batch, std::size_t height, std::size_t width);

// Per-column normalisation of x[m × c]. In training mode batch statistics
// are used and the running estimates are updated in place.
struct BatchNormStats {
  std::span<double> running_mean;
  std::span<double> running_var;
};
Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, BatchNormStats stats,
                  bool training, double momentum = 0.1, double eps = 1e-5);

}  // namespace romtrack

#endif  // ROMTRACK_TENSOR_H_
