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

#include "romtrack/tensor.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "romtrack/errors.h"

namespace romtrack {

namespace detail {

struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  Storage data;
  Storage grad;
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

}  // namespace detail

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_mac_count = 0;

void require_2d(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_finite(std::span<const double> v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

Storage copy_values(const Tensor& t) {
  auto v = t.values();
  return {v.begin(), v.end()};
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) : Tensor(shape, Storage(shape_numel(shape), fill)) {}

Tensor::Tensor(Shape shape, const std::vector<double>& values)
    : Tensor(std::move(shape), Storage(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, std::initializer_list<double> values) : Tensor(std::move(shape), Storage(values)) {}

Tensor::Tensor(Shape shape, Storage values) {
  if (shape.empty()) shape = {1};
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_string(shape));
  }
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_string(shape));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, Storage{value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  Storage v;
  std::size_t ncols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != ncols) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), ncols}, std::move(v));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis out of range");
  return shape()[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }
std::size_t Tensor::rows() const { return shape()[0]; }
std::size_t Tensor::cols() const { return numel() / rows(); }

std::span<double> Tensor::values() { return impl_->data; }
std::span<const double> Tensor::values() const { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on a tensor with " + std::to_string(numel()) + " values");
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (impl_->node) throw ContractError("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return !impl_->node; }
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor(shape(), 0.0);
  return Tensor(shape(), impl_->grad);
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->data); }

// ---- Tape ------------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }
std::uint64_t& thread_mac_count() { return g_mac_count; }
std::uint64_t& thread_branch_signature() {
  thread_local std::uint64_t signature = 0;
  return signature;
}

Tensor make_node(Shape shape, Storage values, std::vector<Tensor> inputs,
                 BackwardFn backward_fn) {
  Tensor out(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<detail::Node>();
  node->inputs.reserve(inputs.size());
  for (auto& t : inputs) node->inputs.push_back(t.impl_);
  node->backward = std::move(backward_fn);
  out.impl_->node = std::move(node);
  out.impl_->requires_grad = true;
  return out;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  auto* root = loss.impl_.get();
  if (!root->requires_grad) throw ContractError("backward() on a tensor outside the tape");
  if (!root->node) {
    if (root->grad.empty()) root->grad.assign(1, 0.0);
    root->grad[0] += 1.0;
    return;
  }

  // Post-order DFS gives a topological order with inputs before outputs.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      auto* child = impl->node->inputs[next++].get();
      if (child->requires_grad && child->node && seen.insert(child).second) {
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(impl);
      stack.pop_back();
    }
  }

  std::unordered_map<detail::TensorImpl*, Storage> pending;
  pending[root].assign(1, 1.0);
  std::vector<double*> grad_in;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* impl = *it;
    auto found = pending.find(impl);
    if (found == pending.end()) continue;
    Storage grad_out = std::move(found->second);
    pending.erase(found);
    grad_in.assign(impl->node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < impl->node->inputs.size(); ++i) {
      auto* in = impl->node->inputs[i].get();
      if (!in->requires_grad) continue;
      Storage& buf = in->node ? pending[in] : in->grad;
      if (buf.empty()) buf.assign(in->data.size(), 0.0);
      grad_in[i] = buf.data();
    }
    impl->node->backward(impl->data, grad_out, grad_in);
  }
}

// ---- Linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Storage out(m * n);
  g_mac_count += m * k * n;
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.values().data(), m, k) * ConstMatMap(b.values().data(), k, n);
  return make_node({m, n}, std::move(out), {a, b},
                   [a, b, m, k, n](std::span<const double>, std::span<const double> g,
                                   std::span<double* const> gi) {
                     ConstMatMap G(g.data(), m, n);
                     if (gi[0]) {
                       MatMap(gi[0], m, k).noalias() +=
                           G * ConstMatMap(b.values().data(), k, n).transpose();
                     }
                     if (gi[1]) {
                       MatMap(gi[1], k, n).noalias() +=
                           ConstMatMap(a.values().data(), m, k).transpose() * G;
                     }
                   });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Storage out(m * n);
  MatMap(out.data(), n, m) = ConstMatMap(a.values().data(), m, n).transpose();
  return make_node({n, m}, std::move(out), {a},
                   [m, n](std::span<const double>, std::span<const double> g,
                          std::span<double* const> gi) {
                     MatMap(gi[0], m, n) += ConstMatMap(g.data(), n, m).transpose();
                   });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  return make_node(std::move(shape), copy_values(a), {a},
                   [](std::span<const double>, std::span<const double> g,
                      std::span<double* const> gi) {
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                   });
}

// ---- Elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Storage out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [](std::span<const double>, std::span<const double> g,
                      std::span<double* const> gi) {
                     for (int s = 0; s < 2; ++s) {
                       if (!gi[s]) continue;
                       for (std::size_t i = 0; i < g.size(); ++i) gi[s][i] += g[i];
                     }
                   });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Storage out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [](std::span<const double>, std::span<const double> g,
                      std::span<double* const> gi) {
                     if (gi[0])
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                     if (gi[1])
                       for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] -= g[i];
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Storage out = copy_values(a);
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_node(a.shape(), std::move(out), {a, b},
                   [a, b](std::span<const double>, std::span<const double> g,
                          std::span<double* const> gi) {
                     auto av = a.values();
                     auto bv = b.values();
                     if (gi[0])
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * bv[i];
                     if (gi[1])
                       for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] += g[i] * av[i];
                   });
}

Tensor scale(const Tensor& a, double factor) {
  Storage out = copy_values(a);
  for (double& x : out) x *= factor;
  return make_node(a.shape(), std::move(out), {a},
                   [factor](std::span<const double>, std::span<const double> g,
                            std::span<double* const> gi) {
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += factor * g[i];
                   });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t n = bias.numel();
  if (x.shape().back() != n) {
    throw DimensionError("add_bias: trailing extent " + std::to_string(x.shape().back()) +
                         " vs bias " + std::to_string(n));
  }
  Storage out = copy_values(x);
  auto bv = bias.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return make_node(x.shape(), std::move(out), {x, bias},
                   [n](std::span<const double>, std::span<const double> g,
                       std::span<double* const> gi) {
                     if (gi[0])
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                     if (gi[1])
                       for (std::size_t i = 0; i < g.size(); ++i) gi[1][i % n] += g[i];
                   });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(matmul(x, weight), bias);
}

Tensor relu(const Tensor& x) {
  Storage out = copy_values(x);
  for (double& v : out) {
    note_branch(v > 0.0);
    v = v > 0.0 ? v : 0.0;
  }
  return make_node(x.shape(), std::move(out), {x},
                   [](std::span<const double> y, std::span<const double> g,
                      std::span<double* const> gi) {
                     for (std::size_t i = 0; i < g.size(); ++i)
                       if (y[i] > 0.0) gi[0][i] += g[i];
                   });
}

Tensor gelu(const Tensor& x) {
  Storage out = copy_values(x);
  for (double& v : out) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  return make_node(x.shape(), std::move(out), {x},
                   [x](std::span<const double>, std::span<const double> g,
                       std::span<double* const> gi) {
                     auto xv = x.values();
                     constexpr double kInvSqrt2Pi = 0.3989422804014327;
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       double v = xv[i];
                       double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                       double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                       gi[0][i] += g[i] * (cdf + v * pdf);
                     }
                   });
}

Tensor sigmoid(const Tensor& x) {
  Storage out = copy_values(x);
  for (double& v : out) v = 1.0 / (1.0 + std::exp(-v));
  return make_node(x.shape(), std::move(out), {x},
                   [](std::span<const double> y, std::span<const double> g,
                      std::span<double* const> gi) {
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * y[i] * (1.0 - y[i]);
                   });
}

// ---- Normalisation -----------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
  require_2d(x, "softmax_rows");
  require_finite(x.values(), "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Storage out = copy_values(x);
  for (std::size_t r = 0; r < m; ++r) {
    double* row = out.data() + r * n;
    double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += (row[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < n; ++c) row[c] /= s;
  }
  return make_node({m, n}, std::move(out), {x},
                   [m, n](std::span<const double> y, std::span<const double> g,
                          std::span<double* const> gi) {
                     for (std::size_t r = 0; r < m; ++r) {
                       const double* yr = y.data() + r * n;
                       const double* gr = g.data() + r * n;
                       double dot = 0.0;
                       for (std::size_t c = 0; c < n; ++c) dot += yr[c] * gr[c];
                       for (std::size_t c = 0; c < n; ++c) gi[0][r * n + c] += yr[c] * (gr[c] - dot);
                     }
                   });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: feature extent " + std::to_string(d) + " vs affine " +
                         std::to_string(gain.numel()) + "/" + std::to_string(bias.numel()));
  }
  const std::size_t m = x.numel() / d;
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  Storage xhat(x.numel()), inv_std(m), out(x.numel());
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mu) * inv_std[r];
      out[r * d + c] = gv[c] * xhat[r * d + c] + bv[c];
    }
  }
  return make_node(
      x.shape(), std::move(out), {x, gain, bias},
      [gain, m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const double>, std::span<const double> g, std::span<double* const> gi) {
        auto gv = gain.values();
        Storage dxhat(d);
        for (std::size_t r = 0; r < m; ++r) {
          const double* gr = g.data() + r * d;
          const double* xr = xhat.data() + r * d;
          if (gi[1])
            for (std::size_t c = 0; c < d; ++c) gi[1][c] += gr[c] * xr[c];
          if (gi[2])
            for (std::size_t c = 0; c < d; ++c) gi[2][c] += gr[c];
          if (!gi[0]) continue;
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            dxhat[c] = gr[c] * gv[c];
            s1 += dxhat[c];
            s2 += dxhat[c] * xr[c];
          }
          const double k = inv_std[r] / static_cast<double>(d);
          for (std::size_t c = 0; c < d; ++c) {
            gi[0][r * d + c] += k * (static_cast<double>(d) * dxhat[c] - s1 - xr[c] * s2);
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, BatchNormStats stats,
                  bool training, double momentum, double eps) {
  require_2d(x, "batch_norm");
  const std::size_t m = x.dim(0), c = x.dim(1);
  if (gain.numel() != c || bias.numel() != c || stats.running_mean.size() != c ||
      stats.running_var.size() != c) {
    throw DimensionError("batch_norm: channel count mismatch");
  }
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  Storage mu(c, 0.0), inv_std(c), xhat(m * c), out(m * c);
  if (training) {
    if (m < 2) throw ContractError("batch_norm: training needs at least two rows");
    Storage var(c, 0.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < c; ++j) mu[j] += xv[r * c + j];
    for (auto& v : mu) v /= static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        double dlt = xv[r * c + j] - mu[j];
        var[j] += dlt * dlt;
      }
    for (std::size_t j = 0; j < c; ++j) {
      double biased = var[j] / static_cast<double>(m);
      inv_std[j] = 1.0 / std::sqrt(biased + eps);
      double unbiased = var[j] / static_cast<double>(m - 1);
      stats.running_mean[j] = (1.0 - momentum) * stats.running_mean[j] + momentum * mu[j];
      stats.running_var[j] = (1.0 - momentum) * stats.running_var[j] + momentum * unbiased;
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mu[j] = stats.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(stats.running_var[j] + eps);
    }
  }
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < c; ++j) {
      double h = (xv[r * c + j] - mu[j]) * inv_std[j];
      xhat[r * c + j] = h;
      out[r * c + j] = gv[j] * h + bv[j];
    }
  return make_node(
      x.shape(), std::move(out), {x, gain, bias},
      [gain, m, c, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          std::span<const double>, std::span<const double> g, std::span<double* const> gi) {
        auto gv = gain.values();
        Storage s1(c, 0.0), s2(c, 0.0);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            s1[j] += g[r * c + j];
            s2[j] += g[r * c + j] * xhat[r * c + j];
          }
        if (gi[1])
          for (std::size_t j = 0; j < c; ++j) gi[1][j] += s2[j];
        if (gi[2])
          for (std::size_t j = 0; j < c; ++j) gi[2][j] += s1[j];
        if (!gi[0]) return;
        const double mm = static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t i = r * c + j;
            if (training) {
              // Batch statistics depend on every row of the column.
              gi[0][i] += gv[j] * inv_std[j] / mm * (mm * g[i] - s1[j] - xhat[i] * s2[j]);
            } else {
              gi[0][i] += gv[j] * inv_std[j] * g[i];
            }
          }
      });
}

// ---- Reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
  auto v = x.values();
  double s = std::accumulate(v.begin(), v.end(), 0.0);
  const std::size_t n = x.numel();
  return make_node({1}, {s}, {x},
                   [n](std::span<const double>, std::span<const double> g,
                       std::span<double* const> gi) {
                     for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[0];
                   });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

// ---- Row blocks --------------------------------------------------------------

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != n) throw DimensionError("concat_rows: column extents differ");
    m += p.rows();
  }
  Storage out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) sizes.push_back(p.numel());
  return make_node({m, n}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                   [sizes](std::span<const double>, std::span<const double> g,
                           std::span<double* const> gi) {
                     std::size_t off = 0;
                     for (std::size_t p = 0; p < sizes.size(); ++p) {
                       if (gi[p])
                         for (std::size_t i = 0; i < sizes[p]; ++i) gi[p][i] += g[off + i];
                       off += sizes[p];
                     }
                   });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_2d(x, "slice_rows");
  if (count == 0 || begin + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") outside " + std::to_string(x.rows()) + " rows");
  }
  const std::size_t n = x.cols();
  auto v = x.values();
  Storage out(v.begin() + begin * n, v.begin() + (begin + count) * n);
  return make_node({count, n}, std::move(out), {x},
                   [begin, n](std::span<const double>, std::span<const double> g,
                              std::span<double* const> gi) {
                     for (std::size_t i = 0; i < g.size(); ++i) gi[0][begin * n + i] += g[i];
                   });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require_2d(x, "gather_rows");
  if (indices.empty()) throw ContractError("gather_rows: no indices");
  const std::size_t n = x.cols();
  auto v = x.values();
  Storage out;
  out.reserve(indices.size() * n);
  for (std::size_t r : indices) {
    if (r >= x.rows()) throw DimensionError("gather_rows: index out of range");
    out.insert(out.end(), v.begin() + r * n, v.begin() + (r + 1) * n);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_node({idx.size(), n}, std::move(out), {x},
                   [idx, n](std::span<const double>, std::span<const double> g,
                            std::span<double* const> gi) {
                     for (std::size_t k = 0; k < idx.size(); ++k)
                       for (std::size_t c = 0; c < n; ++c) gi[0][idx[k] * n + c] += g[k * n + c];
                   });
}

Tensor interleave_rows(std::span<const Tensor> parts, std::size_t batch) {
  if (parts.empty()) throw ContractError("interleave_rows: no parts");
  if (batch == 0) throw ContractError("interleave_rows: zero batch");
  const std::size_t n = parts[0].cols();
  std::vector<std::size_t> per;  // rows per sample of each part
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "interleave_rows");
    if (p.cols() != n) throw DimensionError("interleave_rows: column extents differ");
    if (p.rows() % batch != 0) throw DimensionError("interleave_rows: rows not divisible by batch");
    per.push_back(p.rows() / batch);
    total += p.rows() / batch;
  }
  Storage out;
  out.reserve(batch * total * n);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < parts.size(); ++p) {
      auto v = parts[p].values();
      auto first = v.begin() + b * per[p] * n;
      out.insert(out.end(), first, first + per[p] * n);
    }
  return make_node({batch * total, n}, std::move(out),
                   std::vector<Tensor>(parts.begin(), parts.end()),
                   [per, total, batch, n](std::span<const double>, std::span<const double> g,
                                          std::span<double* const> gi) {
                     std::size_t off = 0;
                     for (std::size_t b = 0; b < batch; ++b)
                       for (std::size_t p = 0; p < per.size(); ++p) {
                         const std::size_t len = per[p] * n;
                         if (gi[p])
                           for (std::size_t i = 0; i < len; ++i) gi[p][b * len + i] += g[off + i];
                         off += len;
                       }
                     (void)total;
                   });
}

Tensor sample_rows(const Tensor& x, std::size_t batch, std::size_t offset, std::size_t count) {
  require_2d(x, "sample_rows");
  if (batch == 0 || x.rows() % batch != 0) throw DimensionError("sample_rows: rows not divisible by batch");
  const std::size_t per = x.rows() / batch, n = x.cols();
  if (count == 0 || offset + count > per) throw DimensionError("sample_rows: range outside sample");
  auto v = x.values();
  Storage out;
  out.reserve(batch * count * n);
  for (std::size_t b = 0; b < batch; ++b) {
    auto first = v.begin() + (b * per + offset) * n;
    out.insert(out.end(), first, first + count * n);
  }
  return make_node({batch * count, n}, std::move(out), {x},
                   [batch, per, offset, count, n](std::span<const double>,
                                                  std::span<const double> g,
                                                  std::span<double* const> gi) {
                     for (std::size_t b = 0; b < batch; ++b)
                       for (std::size_t i = 0; i < count * n; ++i)
                         gi[0][(b * per + offset) * n + i] += g[b * count * n + i];
                   });
}

Tensor tile_rows(const Tensor& x, std::size_t times) {
  require_2d(x, "tile_rows");
  if (times == 0) throw ContractError("tile_rows: zero repetitions");
  const std::size_t n = x.numel();
  Storage out;
  out.reserve(n * times);
  for (std::size_t t = 0; t < times; ++t) out.insert(out.end(), x.values().begin(), x.values().end());
  return make_node({x.rows() * times, x.cols()}, std::move(out), {x},
                   [n, times](std::span<const double>, std::span<const double> g,
                              std::span<double* const> gi) {
                     for (std::size_t t = 0; t < times; ++t)
                       for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[t * n + i];
                   });
}

// ---- Attention ---------------------------------------------------------------

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            std::size_t batch) {
  require_2d(q, "attention");
  require_2d(k, "attention");
  require_2d(v, "attention");
  const std::size_t dm = q.dim(1);
  if (k.dim(1) != dm || v.dim(1) != dm || k.rows() != v.rows()) {
    throw DimensionError("attention: q/k/v extents disagree");
  }
  if (heads == 0 || dm % heads != 0) throw DimensionError("attention: heads must divide width");
  if (batch == 0 || q.rows() % batch != 0 || k.rows() % batch != 0) {
    throw DimensionError("attention: rows not divisible by batch");
  }
  const std::size_t nq = q.rows() / batch, nk = k.rows() / batch, d = dm / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  require_finite(q.values(), "attention");
  require_finite(k.values(), "attention");

  g_mac_count += 2 * batch * nq * nk * dm;
  Storage probs(batch * heads * nq * nk);
  Storage out(q.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t col = h * d;
      ConstStridedMap Q(q.values().data() + b * nq * dm + col, nq, d, Eigen::OuterStride<>(dm));
      ConstStridedMap K(k.values().data() + b * nk * dm + col, nk, d, Eigen::OuterStride<>(dm));
      ConstStridedMap V(v.values().data() + b * nk * dm + col, nk, d, Eigen::OuterStride<>(dm));
      MatMap P(probs.data() + (b * heads + h) * nq * nk, nq, nk);
      P.noalias() = (Q * K.transpose()) * inv_sqrt_d;
      for (std::size_t r = 0; r < nq; ++r) {
        auto row = P.row(r);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      StridedMap O(out.data() + b * nq * dm + col, nq, d, Eigen::OuterStride<>(dm));
      O.noalias() = P * V;
    }
  return make_node(
      q.shape(), std::move(out), {q, k, v},
      [q, k, v, heads, batch, nq, nk, d, dm, inv_sqrt_d, probs = std::move(probs)](
          std::span<const double>, std::span<const double> g, std::span<double* const> gi) {
        RowMat dP(nq, nk), dS(nq, nk);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t col = h * d;
            const Eigen::OuterStride<> stride(dm);
            ConstStridedMap Q(q.values().data() + b * nq * dm + col, nq, d, stride);
            ConstStridedMap K(k.values().data() + b * nk * dm + col, nk, d, stride);
            ConstStridedMap V(v.values().data() + b * nk * dm + col, nk, d, stride);
            ConstStridedMap G(g.data() + b * nq * dm + col, nq, d, stride);
            ConstMatMap P(probs.data() + (b * heads + h) * nq * nk, nq, nk);
            if (gi[2]) {
              StridedMap dV(gi[2] + b * nk * dm + col, nk, d, stride);
              dV.noalias() += P.transpose() * G;
            }
            if (!gi[0] && !gi[1]) continue;
            dP.noalias() = G * V.transpose();
            for (std::size_t r = 0; r < nq; ++r) {
              double dot = P.row(r).dot(dP.row(r));
              dS.row(r) = P.row(r).array() * (dP.row(r).array() - dot);
            }
            dS *= inv_sqrt_d;
            if (gi[0]) {
              StridedMap dQ(gi[0] + b * nq * dm + col, nq, d, stride);
              dQ.noalias() += dS * K;
            }
            if (gi[1]) {
              StridedMap dK(gi[1] + b * nk * dm + col, nk, d, stride);
              dK.noalias() += dS.transpose() * Q;
            }
          }
      });
}

// ---- Convolution support -------------------------------------------------------

Tensor im2col3x3(const Tensor& x, std::size_t batch, std::size_t height, std::size_t width) {
  require_2d(x, "im2col3x3");
  if (x.rows() != batch * height * width) {
    throw DimensionError("im2col3x3: " + std::to_string(x.rows()) + " rows for a " +
                         std::to_string(batch) + "x" + std::to_string(height) + "x" +
                         std::to_string(width) + " grid");
  }
  const std::size_t c = x.cols();
  auto xv = x.values();
  Storage out(x.rows() * 9 * c, 0.0);
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t xx = 0; xx < width; ++xx) {
          const std::size_t dst = (b * height + y) * width + xx;
          for (int ky = 0; ky < 3; ++ky) {
            const long sy = static_cast<long>(y) + ky - 1;
            if (sy < 0 || sy >= static_cast<long>(height)) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const long sx = static_cast<long>(xx) + kx - 1;
              if (sx < 0 || sx >= static_cast<long>(width)) continue;
              const std::size_t src = (b * height + sy) * width + sx;
              fn(src * c, dst * 9 * c + (ky * 3 + kx) * c);
            }
          }
        }
  };
  for_each_tap([&](std::size_t s, std::size_t d) {
    std::copy_n(xv.begin() + s, c, out.begin() + d);
  });
  return make_node({x.rows(), 9 * c}, std::move(out), {x},
                   [for_each_tap, c](std::span<const double>, std::span<const double> g,
                                     std::span<double* const> gi) {
                     for_each_tap([&](std::size_t s, std::size_t d) {
                       for (std::size_t j = 0; j < c; ++j) gi[0][s + j] += g[d + j];
                     });
                   });
}

}  // namespace romtrack
