// Copyright 2026 The cmdl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense row-major tensors with reverse-mode automatic differentiation.
// Every op builds a graph node holding the output values plus a backward
// closure; backward() walks the graph in reverse topological order and
// accumulates gradients into grad-enabled leaves. All ops are pure and
// deterministic: fixed summation order, no hidden state.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "cmdl/errors.hpp"
#include "cmdl/rng.hpp"

namespace cmdl {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backward;  // empty for leaves

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
};

// Value-semantics handle over a shared graph node. Copies alias the node,
// which is what parameter registries and optimizers rely on.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() : node_(std::make_shared<TensorNode<T>>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->values.assign(shape_numel(t.node_->shape), value);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->values = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  static Tensor randn(Shape shape, Rng& rng, T sigma = T(1), bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    rng.fill_normal(std::span<T>(t.node_->values), T(0), sigma);
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  size_t numel() const { return node_->values.size(); }
  size_t rank() const { return node_->shape.size(); }

  size_t rows() const {
    require_rank_(2, "rows()");
    return node_->shape[0];
  }
  size_t cols() const {
    require_rank_(2, "cols()");
    return node_->shape[1];
  }

  std::span<T> data() { return std::span<T>(node_->values); }
  std::span<const T> data() const { return std::span<const T>(node_->values); }

  // Gradient buffer; materializes zeros on demand so untouched leaves read
  // as all-zero gradients.
  std::span<const T> grad() const {
    node_->ensure_grad();
    return std::span<const T>(node_->grad);
  }

  void zero_grad() { node_->grad.assign(node_->values.size(), T(0)); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool enabled) { node_->requires_grad = enabled; }

  T at(size_t i) const { return node_->values[i]; }
  T at(size_t i, size_t j) const {
    require_rank_(2, "at(i,j)");
    return node_->values[i * node_->shape[1] + j];
  }
  T& mut(size_t i) { return node_->values[i]; }
  T& mut(size_t i, size_t j) {
    require_rank_(2, "mut(i,j)");
    return node_->values[i * node_->shape[1] + j];
  }

  T item() const {
    if (numel() != 1) throw UsageError("item() requires a scalar tensor, got " + shape_str(shape()));
    return node_->values[0];
  }

  // Deep copy of values into an unconnected leaf.
  Tensor clone() const {
    Tensor t;
    t.node_->shape = node_->shape;
    t.node_->values = node_->values;
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  void copy_values_from(const Tensor& other) {
    if (other.shape() != shape()) {
      throw ShapeError("copy_values_from shape mismatch: " + shape_str(shape()) + " vs " +
                       shape_str(other.shape()));
    }
    node_->values = other.node_->values;
  }

  std::shared_ptr<TensorNode<T>> node() const { return node_; }

 private:
  void require_rank_(size_t r, const char* what) const {
    if (node_->shape.size() != r) {
      throw UsageError(std::string(what) + " requires rank-" + std::to_string(r) + " tensor, got " +
                       shape_str(node_->shape));
    }
  }

  std::shared_ptr<TensorNode<T>> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> values, std::vector<Tensor<T>> parents,
                  std::function<void(TensorNode<T>&)> backward) {
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(values));
  bool needs_grad = false;
  for (const auto& p : parents) needs_grad = needs_grad || p.requires_grad();
  if (needs_grad) {
    out.node()->requires_grad = true;
    auto& np = out.node()->parents;
    np.reserve(parents.size());
    for (const auto& p : parents) np.push_back(p.node());
    out.node()->backward = std::move(backward);
  }
  return out;
}

template <typename T>
void check_finite(std::span<const T> xs, const char* op) {
  for (T x : xs) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NumericError(std::string(op) + ": non-finite input value");
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape from " + shape_str(x.shape()) + " to " + shape_str(shape) +
                     " changes element count");
  }
  std::vector<T> vals(x.data().begin(), x.data().end());
  return detail::make_op<T>(std::move(shape), std::move(vals), {x}, [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  const size_t m = x.rows(), n = x.cols();
  std::vector<T> vals(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) vals[j * m + i] = x.at(i, j);
  return detail::make_op<T>({n, m}, std::move(vals), {x}, [m, n](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[j * m + i];
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, size_t row0, size_t nrows) {
  const size_t m = x.rows(), n = x.cols();
  if (row0 + nrows > m) {
    throw ShapeError("slice_rows [" + std::to_string(row0) + "," + std::to_string(row0 + nrows) +
                     ") out of range for " + shape_str(x.shape()));
  }
  std::vector<T> vals(x.data().begin() + static_cast<ptrdiff_t>(row0 * n),
                      x.data().begin() + static_cast<ptrdiff_t>((row0 + nrows) * n));
  return detail::make_op<T>({nrows, n}, std::move(vals), {x}, [row0, n](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[row0 * n + i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, size_t col0, size_t ncols) {
  const size_t m = x.rows(), n = x.cols();
  if (col0 + ncols > n) {
    throw ShapeError("slice_cols [" + std::to_string(col0) + "," + std::to_string(col0 + ncols) +
                     ") out of range for " + shape_str(x.shape()));
  }
  std::vector<T> vals(m * ncols);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < ncols; ++j) vals[i * ncols + j] = x.at(i, col0 + j);
  return detail::make_op<T>({m, ncols}, std::move(vals), {x}, [m, n, col0, ncols](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < ncols; ++j) p.grad[i * n + col0 + j] += self.grad[i * ncols + j];
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw UsageError("concat_rows: no inputs");
  const size_t n = parts[0].cols();
  size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw ShapeError("concat_rows width mismatch: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    m += p.rows();
  }
  std::vector<T> vals;
  vals.reserve(m * n);
  for (const auto& p : parts) vals.insert(vals.end(), p.data().begin(), p.data().end());
  std::vector<size_t> row_counts;
  row_counts.reserve(parts.size());
  for (const auto& p : parts) row_counts.push_back(p.rows());
  return detail::make_op<T>({m, n}, std::move(vals), parts, [row_counts, n](TensorNode<T>& self) {
    size_t offset = 0;
    for (size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      const size_t count = row_counts[k] * n;
      if (p.requires_grad) {
        p.ensure_grad();
        for (size_t i = 0; i < count; ++i) p.grad[i] += self.grad[offset + i];
      }
      offset += count;
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const size_t m = parts[0].rows();
  size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw ShapeError("concat_cols height mismatch: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    n += p.cols();
  }
  std::vector<T> vals(m * n);
  size_t col0 = 0;
  for (const auto& p : parts) {
    const size_t pc = p.cols();
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j < pc; ++j) vals[i * n + col0 + j] = p.at(i, j);
    col0 += pc;
  }
  std::vector<size_t> col_counts;
  col_counts.reserve(parts.size());
  for (const auto& p : parts) col_counts.push_back(p.cols());
  return detail::make_op<T>({m, n}, std::move(vals), parts, [m, n, col_counts](TensorNode<T>& self) {
    size_t col0 = 0;
    for (size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      const size_t pc = col_counts[k];
      if (p.requires_grad) {
        p.ensure_grad();
        for (size_t i = 0; i < m; ++i)
          for (size_t j = 0; j < pc; ++j) p.grad[i * pc + j] += self.grad[i * n + col0 + j];
      }
      col0 += pc;
    }
  });
}

// Row gather from an embedding table; duplicate ids accumulate in backward.
template <typename T>
Tensor<T> embedding_rows(const Tensor<T>& table, std::span<const int> ids) {
  const size_t v = table.rows(), h = table.cols();
  std::vector<T> vals(ids.size() * h);
  for (size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<size_t>(id) >= v) {
      throw DataError("embedding_rows: token id " + std::to_string(id) + " outside table of " +
                      std::to_string(v) + " rows");
    }
    std::copy_n(table.data().begin() + static_cast<ptrdiff_t>(static_cast<size_t>(id) * h), h,
                vals.begin() + static_cast<ptrdiff_t>(i * h));
  }
  std::vector<int> id_copy(ids.begin(), ids.end());
  return detail::make_op<T>({ids.size(), h}, std::move(vals), {table},
                            [id_copy, h](TensorNode<T>& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              for (size_t i = 0; i < id_copy.size(); ++i) {
                                const size_t r = static_cast<size_t>(id_copy[i]) * h;
                                for (size_t j = 0; j < h; ++j) p.grad[r + j] += self.grad[i * h + j];
                              }
                            });
}

// ---------------------------------------------------------------------------
// Elementwise / arithmetic ops
// ---------------------------------------------------------------------------

namespace detail {
template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}
}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> vals(a.numel());
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = a.at(i) + b.at(i);
  return detail::make_op<T>(a.shape(), std::move(vals), {a, b}, [](TensorNode<T>& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[static_cast<size_t>(k)];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> vals(a.numel());
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = a.at(i) - b.at(i);
  return detail::make_op<T>(a.shape(), std::move(vals), {a, b}, [](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> vals(a.numel());
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = a.at(i) * b.at(i);
  return detail::make_op<T>(a.shape(), std::move(vals), {a, b}, [](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.values[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.values[i];
    }
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
  std::vector<T> vals(a.numel());
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = a.at(i) + c;
  return detail::make_op<T>(a.shape(), std::move(vals), {a}, [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> vals(a.numel());
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = a.at(i) * c;
  return detail::make_op<T>(a.shape(), std::move(vals), {a}, [c](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * c;
  });
}

// y[i,j] = x[i,j] + row[j]
template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& row) {
  const size_t m = x.rows(), n = x.cols();
  if (row.numel() != n) {
    throw ShapeError("add_row: bias " + shape_str(row.shape()) + " does not match width of " +
                     shape_str(x.shape()));
  }
  std::vector<T> vals(m * n);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) vals[i * n + j] = x.at(i, j) + row.at(j);
  return detail::make_op<T>({m, n}, std::move(vals), {x, row}, [m, n](TensorNode<T>& self) {
    auto& px = *self.parents[0];
    auto& pr = *self.parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
    }
    if (pr.requires_grad) {
      pr.ensure_grad();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) pr.grad[j] += self.grad[i * n + j];
    }
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  // tanh approximation: 0.5 x (1 + tanh(c (x + 0.044715 x^3)))
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<T> vals(x.numel());
  for (size_t i = 0; i < vals.size(); ++i) {
    const double v = static_cast<double>(x.at(i));
    vals[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))));
  }
  return detail::make_op<T>(x.shape(), std::move(vals), {x}, [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double v = static_cast<double>(p.values[i]);
      const double u = kC * (v + kA * v * v * v);
      const double th = std::tanh(u);
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kC * (1.0 + 3.0 * kA * v * v);
      p.grad[i] += self.grad[i] * static_cast<T>(d);
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const size_t m = a.rows(), k = a.cols();
  const size_t k2 = b.rows(), n = b.cols();
  if (k != k2) {
    throw ShapeError("matmul inner extent mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  std::vector<T> vals(m * n, T(0));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (size_t i = 0; i < m; ++i) {
    for (size_t p = 0; p < k; ++p) {
      const T aip = pa[i * k + p];
      const T* brow = pb + p * n;
      T* crow = vals.data() + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return detail::make_op<T>({m, n}, std::move(vals), {a, b}, [m, k, n](TensorNode<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    // dA += dC B^T ; dB += A^T dC
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) {
          const T g = self.grad[i * n + j];
          if (g == T(0)) continue;
          const T* brow = pb.values.data() + 0;
          for (size_t p = 0; p < k; ++p) pa.grad[i * k + p] += g * brow[p * n + j];
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < m; ++i)
        for (size_t p = 0; p < k; ++p) {
          const T aip = pa.values[i * k + p];
          if (aip == T(0)) continue;
          const T* grow = self.grad.data() + i * n;
          T* brow = pb.grad.data() + p * n;
          for (size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
        }
    }
  });
}

// x: [T x Cin], kernel: [K x Cin x Cout] (cross-correlation), zero padding.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& kernel, size_t stride, size_t padding) {
  if (x.rank() != 2 || kernel.rank() != 3) {
    throw ShapeError("conv1d expects x [T x Cin] and kernel [K x Cin x Cout], got " +
                     shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  const size_t t_in = x.shape()[0], c_in = x.shape()[1];
  const size_t k = kernel.shape()[0], kc_in = kernel.shape()[1], c_out = kernel.shape()[2];
  if (k % 2 == 0) throw ConfigError("conv1d kernel width must be odd, got " + std::to_string(k));
  if (stride != 1 && stride != 2) {
    throw ConfigError("conv1d stride must be 1 or 2, got " + std::to_string(stride));
  }
  if (c_in != kc_in) {
    throw ShapeError("conv1d channel mismatch: input " + shape_str(x.shape()) + " vs kernel " +
                     shape_str(kernel.shape()));
  }
  const ptrdiff_t t_out_signed =
      (static_cast<ptrdiff_t>(t_in) + 2 * static_cast<ptrdiff_t>(padding) -
       static_cast<ptrdiff_t>(k)) /
          static_cast<ptrdiff_t>(stride) +
      1;
  if (t_out_signed < 1) {
    throw ShapeError("conv1d output length " + std::to_string(t_out_signed) + " < 1 for input " +
                     shape_str(x.shape()));
  }
  const size_t t_out = static_cast<size_t>(t_out_signed);

  std::vector<T> vals(t_out * c_out, T(0));
  const T* px = x.data().data();
  const T* pw = kernel.data().data();
  for (size_t to = 0; to < t_out; ++to) {
    for (size_t kk = 0; kk < k; ++kk) {
      const ptrdiff_t ti = static_cast<ptrdiff_t>(to * stride + kk) - static_cast<ptrdiff_t>(padding);
      if (ti < 0 || ti >= static_cast<ptrdiff_t>(t_in)) continue;
      const T* xrow = px + static_cast<size_t>(ti) * c_in;
      const T* wrow = pw + kk * c_in * c_out;
      T* orow = vals.data() + to * c_out;
      for (size_t ci = 0; ci < c_in; ++ci) {
        const T xv = xrow[ci];
        if (xv == T(0)) continue;
        const T* wc = wrow + ci * c_out;
        for (size_t co = 0; co < c_out; ++co) orow[co] += xv * wc[co];
      }
    }
  }
  return detail::make_op<T>(
      {t_out, c_out}, std::move(vals), {x, kernel},
      [t_in, c_in, k, c_out, stride, padding, t_out](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        if (px.requires_grad) px.ensure_grad();
        if (pw.requires_grad) pw.ensure_grad();
        for (size_t to = 0; to < t_out; ++to) {
          const T* grow = self.grad.data() + to * c_out;
          for (size_t kk = 0; kk < k; ++kk) {
            const ptrdiff_t ti =
                static_cast<ptrdiff_t>(to * stride + kk) - static_cast<ptrdiff_t>(padding);
            if (ti < 0 || ti >= static_cast<ptrdiff_t>(t_in)) continue;
            const size_t xoff = static_cast<size_t>(ti) * c_in;
            const size_t woff = kk * c_in * c_out;
            for (size_t ci = 0; ci < c_in; ++ci) {
              if (px.requires_grad) {
                T acc = T(0);
                const T* wc = pw.values.data() + woff + ci * c_out;
                for (size_t co = 0; co < c_out; ++co) acc += grow[co] * wc[co];
                px.grad[xoff + ci] += acc;
              }
              if (pw.requires_grad) {
                const T xv = px.values[xoff + ci];
                if (xv == T(0)) continue;
                T* wc = pw.grad.data() + woff + ci * c_out;
                for (size_t co = 0; co < c_out; ++co) wc[co] += xv * grow[co];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalization / probability ops
// ---------------------------------------------------------------------------

// Max-subtracted softmax along `axis` (1D: axis 0; 2D: axis 0 or 1).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, size_t axis) {
  detail::check_finite(x.data(), "softmax");
  const size_t r = x.rank();
  if (!((r == 1 && axis == 0) || (r == 2 && axis <= 1))) {
    throw UsageError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  const size_t groups = (r == 1) ? 1 : (axis == 1 ? x.shape()[0] : x.shape()[1]);
  const size_t len = (r == 1) ? x.shape()[0] : (axis == 1 ? x.shape()[1] : x.shape()[0]);
  const size_t gstride = (r == 1) ? 1 : (axis == 1 ? x.shape()[1] : 1);
  const size_t estride = (r == 1) ? 1 : (axis == 1 ? 1 : x.shape()[1]);

  std::vector<T> vals(x.numel());
  for (size_t g = 0; g < groups; ++g) {
    const size_t base = g * gstride;
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < len; ++i) mx = std::max(mx, static_cast<double>(x.at(base + i * estride)));
    double denom = 0;
    for (size_t i = 0; i < len; ++i) {
      const double e = std::exp(static_cast<double>(x.at(base + i * estride)) - mx);
      vals[base + i * estride] = static_cast<T>(e);
      denom += e;
    }
    for (size_t i = 0; i < len; ++i) {
      vals[base + i * estride] = static_cast<T>(static_cast<double>(vals[base + i * estride]) / denom);
    }
  }
  return detail::make_op<T>(x.shape(), std::move(vals), {x},
                            [groups, len, gstride, estride](TensorNode<T>& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              // dx = (dy - <dy,y>) * y per group
                              for (size_t g = 0; g < groups; ++g) {
                                const size_t base = g * gstride;
                                T dot = T(0);
                                for (size_t i = 0; i < len; ++i) {
                                  const size_t ix = base + i * estride;
                                  dot += self.grad[ix] * self.values[ix];
                                }
                                for (size_t i = 0; i < len; ++i) {
                                  const size_t ix = base + i * estride;
                                  p.grad[ix] += (self.grad[ix] - dot) * self.values[ix];
                                }
                              }
                            });
}

// Stable log softmax along the last axis (1D or 2D rows).
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  detail::check_finite(x.data(), "log_softmax");
  const size_t groups = (x.rank() == 1) ? 1 : x.shape()[0];
  const size_t len = (x.rank() == 1) ? x.shape()[0] : x.shape()[1];
  std::vector<T> vals(x.numel());
  for (size_t g = 0; g < groups; ++g) {
    const size_t base = g * len;
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < len; ++i) mx = std::max(mx, static_cast<double>(x.at(base + i)));
    double sum = 0;
    for (size_t i = 0; i < len; ++i) sum += std::exp(static_cast<double>(x.at(base + i)) - mx);
    const double lse = mx + std::log(sum);
    for (size_t i = 0; i < len; ++i) {
      vals[base + i] = static_cast<T>(static_cast<double>(x.at(base + i)) - lse);
    }
  }
  return detail::make_op<T>(x.shape(), std::move(vals), {x}, [groups, len](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t g = 0; g < groups; ++g) {
      const size_t base = g * len;
      T gsum = T(0);
      for (size_t i = 0; i < len; ++i) gsum += self.grad[base + i];
      for (size_t i = 0; i < len; ++i) {
        const T soft = static_cast<T>(std::exp(static_cast<double>(self.values[base + i])));
        p.grad[base + i] += self.grad[base + i] - soft * gsum;
      }
    }
  });
}

// Per-position normalization over the last axis, then affine.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (!(eps > T(0))) throw ConfigError("layer_norm eps must be > 0");
  const size_t w = (x.rank() == 1) ? x.shape()[0] : x.shape()[x.rank() - 1];
  const size_t rows = x.numel() / w;
  if (gain.numel() != w || bias.numel() != w) {
    throw ShapeError("layer_norm gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                     " do not match last axis of " + shape_str(x.shape()));
  }
  std::vector<T> vals(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_sd(rows);
  for (size_t r = 0; r < rows; ++r) {
    const size_t base = r * w;
    double mean = 0;
    for (size_t j = 0; j < w; ++j) mean += static_cast<double>(x.at(base + j));
    mean /= static_cast<double>(w);
    double var = 0;
    for (size_t j = 0; j < w; ++j) {
      const double d = static_cast<double>(x.at(base + j)) - mean;
      var += d * d;
    }
    var /= static_cast<double>(w);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    inv_sd[r] = static_cast<T>(inv);
    for (size_t j = 0; j < w; ++j) {
      const double xh = (static_cast<double>(x.at(base + j)) - mean) * inv;
      xhat[base + j] = static_cast<T>(xh);
      vals[base + j] = static_cast<T>(xh * static_cast<double>(gain.at(j)) + static_cast<double>(bias.at(j)));
    }
  }
  auto xhat_sh = std::make_shared<std::vector<T>>(std::move(xhat));
  auto inv_sh = std::make_shared<std::vector<T>>(std::move(inv_sd));
  return detail::make_op<T>(
      x.shape(), std::move(vals), {x, gain, bias}, [rows, w, xhat_sh, inv_sh](TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& xh = *xhat_sh;
        const auto& inv = *inv_sh;
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        for (size_t r = 0; r < rows; ++r) {
          const size_t base = r * w;
          if (pg.requires_grad || pb.requires_grad) {
            for (size_t j = 0; j < w; ++j) {
              if (pg.requires_grad) pg.grad[j] += self.grad[base + j] * xh[base + j];
              if (pb.requires_grad) pb.grad[j] += self.grad[base + j];
            }
          }
          if (px.requires_grad) {
            // dxh = dy * gain; dx = inv*(dxh - mean(dxh) - xh*mean(dxh*xh))
            T s1 = T(0), s2 = T(0);
            for (size_t j = 0; j < w; ++j) {
              const T dxh = self.grad[base + j] * pg.values[j];
              s1 += dxh;
              s2 += dxh * xh[base + j];
            }
            const T m1 = s1 / static_cast<T>(w);
            const T m2 = s2 / static_cast<T>(w);
            for (size_t j = 0; j < w; ++j) {
              const T dxh = self.grad[base + j] * pg.values[j];
              px.grad[base + j] += inv[r] * (dxh - m1 - xh[base + j] * m2);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (size_t i = 0; i < x.numel(); ++i) acc += x.at(i);
  return detail::make_op<T>({1}, {acc}, {x}, [](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw UsageError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// Unsquared Euclidean norm; subgradient 0 at the origin.
template <typename T>
Tensor<T> norm2(const Tensor<T>& x) {
  double acc = 0;
  for (size_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(x.at(i));
    acc += v * v;
  }
  const T n = static_cast<T>(std::sqrt(acc));
  return detail::make_op<T>({1}, {n}, {x}, [n](TensorNode<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const T denom = std::max(n, static_cast<T>(1e-12));
    for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[0] * p.values[i] / denom;
  });
}

// KL(p || q) = sum p (log p - log q), log arguments clamped at 1e-12 and
// 0 log 0 := 0. Inputs are probability vectors of equal length.
template <typename T>
Tensor<T> kl_divergence(const Tensor<T>& p, const Tensor<T>& q) {
  if (p.numel() != q.numel()) {
    throw ShapeError("kl_divergence length mismatch: " + shape_str(p.shape()) + " vs " +
                     shape_str(q.shape()));
  }
  double acc = 0;
  for (size_t i = 0; i < p.numel(); ++i) {
    const double pi = static_cast<double>(p.at(i));
    if (pi <= 0) continue;
    const double lp = std::log(std::max(pi, 1e-12));
    const double lq = std::log(std::max(static_cast<double>(q.at(i)), 1e-12));
    acc += pi * (lp - lq);
  }
  return detail::make_op<T>({1}, {static_cast<T>(acc)}, {p, q}, [](TensorNode<T>& self) {
    auto& pp = *self.parents[0];
    auto& pq = *self.parents[1];
    const T g = self.grad[0];
    if (pp.requires_grad) {
      pp.ensure_grad();
      for (size_t i = 0; i < pp.grad.size(); ++i) {
        const double pi = static_cast<double>(pp.values[i]);
        if (pi <= 0) continue;
        const double lp = std::log(std::max(pi, 1e-12));
        const double lq = std::log(std::max(static_cast<double>(pq.values[i]), 1e-12));
        pp.grad[i] += g * static_cast<T>(lp - lq + 1.0);
      }
    }
    if (pq.requires_grad) {
      pq.ensure_grad();
      for (size_t i = 0; i < pq.grad.size(); ++i) {
        const double pi = static_cast<double>(pp.values[i]);
        if (pi <= 0) continue;
        pq.grad[i] -= g * static_cast<T>(pi / std::max(static_cast<double>(pq.values[i]), 1e-12));
      }
    }
  });
}

// Mean next-token cross entropy over rows of logits [L x V].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  const size_t l = logits.rows(), v = logits.cols();
  if (targets.size() != l) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(l) + " rows");
  }
  std::vector<T> soft(l * v);
  double loss = 0;
  for (size_t i = 0; i < l; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<size_t>(t) >= v) {
      throw DataError("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " +
                      std::to_string(v));
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(logits.at(i, j)));
    double denom = 0;
    for (size_t j = 0; j < v; ++j) {
      const double e = std::exp(static_cast<double>(logits.at(i, j)) - mx);
      soft[i * v + j] = static_cast<T>(e);
      denom += e;
    }
    for (size_t j = 0; j < v; ++j) {
      soft[i * v + j] = static_cast<T>(static_cast<double>(soft[i * v + j]) / denom);
    }
    loss -= static_cast<double>(logits.at(i, static_cast<size_t>(t))) - mx - std::log(denom);
  }
  loss /= static_cast<double>(l);
  auto soft_sh = std::make_shared<std::vector<T>>(std::move(soft));
  std::vector<int> tgt(targets.begin(), targets.end());
  return detail::make_op<T>({1}, {static_cast<T>(loss)}, {logits},
                            [l, v, soft_sh, tgt](TensorNode<T>& self) {
                              auto& p = *self.parents[0];
                              if (!p.requires_grad) return;
                              p.ensure_grad();
                              const T g = self.grad[0] / static_cast<T>(l);
                              const auto& soft = *soft_sh;
                              for (size_t i = 0; i < l; ++i) {
                                for (size_t j = 0; j < v; ++j) {
                                  T d = soft[i * v + j];
                                  if (j == static_cast<size_t>(tgt[i])) d -= T(1);
                                  p.grad[i * v + j] += g * d;
                                }
                              }
                            });
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

// Reverse-mode accumulation from a scalar loss. Intermediate gradients are
// reset each call; leaf gradients accumulate across calls until zeroed.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw UsageError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;  // constant: nothing reachable

  // Iterative post-order DFS for reverse topological order. All reachable
  // nodes are owned via parent chains from the loss, so raw pointers are safe.
  std::vector<TensorNode<T>*> topo;
  std::unordered_set<TensorNode<T>*> visited;
  std::vector<std::pair<TensorNode<T>*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child == 0 && visited.count(node)) {
      stack.pop_back();
      continue;
    }
    if (next_child < node->parents.size()) {
      TensorNode<T>* child = node->parents[next_child].get();
      ++next_child;
      if (!visited.count(child)) stack.emplace_back(child, 0);
    } else {
      visited.insert(node);
      topo.push_back(node);
      stack.pop_back();
    }
  }

  // Fresh gradients for interior nodes; leaves keep accumulating.
  for (auto* node : topo) {
    if (node->backward) node->grad.assign(node->values.size(), T(0));
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] = T(1);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode<T>* node = *it;
    if (node->backward && node->requires_grad) node->backward(*node);
  }
}

// Lowest-index argmax.
template <typename T>
size_t argmax(std::span<const T> xs) {
  if (xs.empty()) throw UsageError("argmax of empty span");
  size_t best = 0;
  for (size_t i = 1; i < xs.size(); ++i) {
    if (xs[i] > xs[best]) best = i;
  }
  return best;
}

template <typename T>
size_t argmax(std::span<T> xs) {
  return argmax(std::span<const T>(xs));
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

// Compares reverse-mode gradients of f at x against central differences,
// coordinate by coordinate. Returns the worst relative error, using
// max(|analytic|, |numeric|, 1e-8) as the denominator.
template <typename T>
T grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, T eps) {
  Tensor<T> probe = x.clone();
  probe.set_requires_grad(true);
  Tensor<T> y = f(probe);
  if (y.numel() != 1) throw UsageError("grad_check requires f to return a scalar");
  backward(y);
  std::vector<T> analytic(probe.grad().begin(), probe.grad().end());

  Tensor<T> work = x.clone();
  work.set_requires_grad(false);
  T worst = T(0);
  for (size_t i = 0; i < work.numel(); ++i) {
    const T orig = work.at(i);
    work.mut(i) = orig + eps;
    const T fp = f(work).item();
    work.mut(i) = orig - eps;
    const T fm = f(work).item();
    work.mut(i) = orig;
    const T numeric = (fp - fm) / (T(2) * eps);
    const T denom = std::max({std::abs(analytic[i]), std::abs(numeric), static_cast<T>(1e-8)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

// Same check for a parameter embedded in a model: loss_fn must rebuild the
// forward pass on every call so value edits to `param` are observed.
template <typename T>
T grad_check_param(const std::function<Tensor<T>()>& loss_fn, Tensor<T>& param, T eps) {
  const bool had_grad = param.requires_grad();
  param.set_requires_grad(true);
  param.zero_grad();
  backward(loss_fn());
  std::vector<T> analytic(param.grad().begin(), param.grad().end());

  T worst = T(0);
  for (size_t i = 0; i < param.numel(); ++i) {
    const T orig = param.at(i);
    param.mut(i) = orig + eps;
    const T fp = loss_fn().item();
    param.mut(i) = orig - eps;
    const T fm = loss_fn().item();
    param.mut(i) = orig;
    const T numeric = (fp - fm) / (T(2) * eps);
    const T denom = std::max({std::abs(analytic[i]), std::abs(numeric), static_cast<T>(1e-8)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  param.set_requires_grad(had_grad);
  return worst;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace cmdl
