#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "capkit/errors.hpp"
#include "capkit/rng.hpp"

namespace capkit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Grad recording is on by default. Decoding and evaluation wrap themselves in
// a NoGradGuard so forward passes build no graph and touch no grad buffers.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool v) { flag() = v; }

 private:
  static bool& flag() {
    thread_local bool f = true;
    return f;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense row-major tensor with reverse-mode autodiff. A Tensor is a cheap
// shared handle to a graph node; ops record a backward closure on their
// output node. backward() walks the graph in reverse topological order and
// then severs it (closures and parent links are dropped), so leaf values and
// accumulated grads survive but the tape is gone.
//
// The graph is confined to one thread. Parameters may be shared read-only
// across threads as long as nobody runs backward concurrently.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from(std::move(shape), {}, requires_grad);
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    const std::size_t count = shape_numel(n->shape);
    if (values.empty()) values.assign(count, T(0));
    if (values.size() != count) {
      throw ValidationError("tensor data length " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(n->shape));
    }
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from(Shape{}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::size_t rank() const { return n_->shape.size(); }
  std::size_t size() const { return n_->value.size(); }

  // Rank-1 tensors are treated as a single row by the row-wise ops.
  std::size_t rows() const { return rank() == 2 ? n_->shape[0] : 1; }
  std::size_t cols() const {
    return rank() == 2 ? n_->shape[1] : (rank() == 1 ? n_->shape[0] : 1);
  }

  // A Tensor is a shared handle; like a smart pointer, const methods hand out
  // mutable references to the shared buffers.
  std::vector<T>& values() const { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool v) const { n_->requires_grad = v; }

  bool has_grad() const { return !n_->grad.empty(); }
  std::vector<T>& grad() const {
    if (n_->grad.empty()) n_->grad.assign(n_->value.size(), T(0));
    return n_->grad;
  }
  void zero_grad() const { std::fill(n_->grad.begin(), n_->grad.end(), T(0)); }

  T item() const {
    if (size() != 1) {
      throw ValidationError("item() requires a single-element tensor, got " +
                            shape_str(shape()));
    }
    return n_->value[0];
  }

  // Value copy outside any graph.
  Tensor detached() const { return from(shape(), values(), false); }

  bool same_node(const Tensor& other) const { return n_ == other.n_; }

  // --- graph construction (used by the op implementations below) ---

  using BackwardFn = std::function<void(const std::vector<T>& out_grad,
                                        const std::vector<T>& out_value)>;

  static Tensor make_op(Shape shape, std::vector<T> values,
                        std::vector<Tensor> parents, BackwardFn backward) {
    Tensor out = from(std::move(shape), std::move(values), false);
    if (GradMode::enabled()) {
      bool needs = false;
      for (const auto& p : parents) needs = needs || p.requires_grad();
      if (needs) {
        out.n_->requires_grad = true;
        out.n_->parents = std::move(parents);
        out.n_->backward = std::move(backward);
      }
    }
    return out;
  }

  // Reverse-mode sweep from a scalar root. Seeds d(root)/d(root) = 1,
  // accumulates into every reachable grad buffer, then clears the tape.
  void backward() {
    if (size() != 1) {
      throw ValidationError("backward() requires a scalar root, got " +
                            shape_str(shape()));
    }
    // Topological order via iterative post-order DFS.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node* p = node->parents[idx].n_.get();
        ++idx;
        if (seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    n_->grad.assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->backward && !node->grad.empty()) {
        node->backward(node->grad, node->value);
      }
    }
    for (Node* node : order) {
      node->backward = nullptr;
      node->parents.clear();
    }
  }

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<Tensor> parents;
    BackwardFn backward;
  };

  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  std::shared_ptr<Node> n_;
};

template <typename T>
void backward(Tensor<T> root) {
  root.backward();
}

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
  }
}

// C += A(m x k) . B(k x n)
template <typename T>
void gemm_nn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A(m x k) . B(n x k)^T
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C(k x n) += A(m x k)^T . B(m x n)
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// --- elementwise and linear-algebra ops -----------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ValidationError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
  return Tensor<T>::make_op(
      {m, n}, std::move(out), {a, b},
      [a, b, m, k, n](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (a.requires_grad()) {
          detail::gemm_nt_acc(g.data(), b.values().data(), a.grad().data(), m, n, k);
        }
        if (b.requires_grad()) {
          detail::gemm_tn_acc(a.values().data(), g.data(), b.grad().data(), m, k, n);
        }
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) {
    throw ValidationError("transpose: rank-2 tensor required, got " + shape_str(x.shape()));
  }
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  std::vector<T> out(r * c);
  const auto& v = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  return Tensor<T>::make_op(
      {c, r}, std::move(out), {x},
      [x, r, c](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return Tensor<T>::make_op(
      a.shape(), std::move(out), {a, b},
      [a, b](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (a.requires_grad()) {
          auto& ga = a.grad();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
          auto& gb = b.grad();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return Tensor<T>::make_op(
      a.shape(), std::move(out), {a, b},
      [a, b](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (a.requires_grad()) {
          auto& ga = a.grad();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
          auto& gb = b.grad();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      });
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "hadamard");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return Tensor<T>::make_op(
      a.shape(), std::move(out), {a, b},
      [a, b](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (a.requires_grad()) {
          auto& ga = a.grad();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.values()[i];
        }
        if (b.requires_grad()) {
          auto& gb = b.grad();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.values()[i];
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * c;
  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x},
      [x, c](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
      });
}

// Broadcast a rank-1 bias across the rows of a rank-2 tensor. The only
// broadcasting this library does.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& m, const Tensor<T>& bias) {
  if (m.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != m.shape()[1]) {
    throw ValidationError("add_bias: need [r x c] plus [c], got " + shape_str(m.shape()) +
                          " and " + shape_str(bias.shape()));
  }
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.values()[i * c + j] + bias.values()[j];
  return Tensor<T>::make_op(
      {r, c}, std::move(out), {m, bias},
      [m, bias, r, c](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (m.requires_grad()) {
          auto& gm = m.grad();
          for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
        }
        if (bias.requires_grad()) {
          auto& gb = bias.grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
        }
      });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x},
      [x](const std::vector<T>& g, const std::vector<T>& y) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.values()[i];
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                       : std::exp(v) / (T(1) + std::exp(v));
  }
  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x},
      [x](const std::vector<T>& g, const std::vector<T>& y) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] > T(0) ? x.values()[i] : T(0);
  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x},
      [x](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x.values()[i] > T(0)) gx[i] += g[i];
      });
}

namespace detail {

template <typename T>
void check_axis(const Tensor<T>& x, int axis, const char* op) {
  const int r = static_cast<int>(x.rank());
  if (r < 1 || r > 2 || axis < -1 || axis >= r) {
    throw ValidationError(std::string(op) + ": axis " + std::to_string(axis) +
                          " invalid for shape " + shape_str(x.shape()));
  }
}

}  // namespace detail

// Numerically stable softmax over the given axis (-1 = last). Rank-1 tensors
// are one row; axis 0 on a rank-2 tensor runs over columns.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1) {
  detail::check_axis(x, axis, "softmax");
  if (x.rank() == 2 && axis == 0) return transpose(softmax(transpose(x), -1));
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.values().data() + i * c;
    T* orow = out.data() + i * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= sum;
  }
  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x},
      [x, r, c](const std::vector<T>& g, const std::vector<T>& y) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (std::size_t i = 0; i < r; ++i) {
          const T* grow = g.data() + i * c;
          const T* yrow = y.data() + i * c;
          T dot = 0;
          for (std::size_t j = 0; j < c; ++j) dot += grow[j] * yrow[j];
          for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += yrow[j] * (grow[j] - dot);
        }
      });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis = -1) {
  detail::check_axis(x, axis, "log_softmax");
  if (x.rank() == 2 && axis == 0) return transpose(log_softmax(transpose(x), -1));
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.values().data() + i * c;
    T* orow = out.data() + i * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) orow[j] = row[j] - lse;
  }
  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x},
      [x, r, c](const std::vector<T>& g, const std::vector<T>& y) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (std::size_t i = 0; i < r; ++i) {
          const T* grow = g.data() + i * c;
          const T* yrow = y.data() + i * c;
          T gsum = 0;
          for (std::size_t j = 0; j < c; ++j) gsum += grow[j];
          for (std::size_t j = 0; j < c; ++j)
            gx[i * c + j] += grow[j] - std::exp(yrow[j]) * gsum;
        }
      });
}

// Per-row normalization over the last axis with population variance, then an
// elementwise affine (gain, bias).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.rank() != 1 || bias.rank() != 1 || gain.shape()[0] != c || bias.shape()[0] != c) {
    throw ValidationError("layer_norm: gain/bias must be [" + std::to_string(c) + "]");
  }
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.values().data() + i * c;
    T* orow = out.data() + i * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j)
      orow[j] = (row[j] - mean) * inv * gain.values()[j] + bias.values()[j];
  }
  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, r, c, eps](const std::vector<T>& g, const std::vector<T>&) mutable {
        const T n = static_cast<T>(c);
        for (std::size_t i = 0; i < r; ++i) {
          const T* row = x.values().data() + i * c;
          const T* grow = g.data() + i * c;
          T mean = 0;
          for (std::size_t j = 0; j < c; ++j) mean += row[j];
          mean /= n;
          T var = 0;
          for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
          var /= n;
          const T inv = T(1) / std::sqrt(var + eps);
          if (gain.requires_grad() || bias.requires_grad()) {
            auto& gg = gain.grad();
            auto& gb = bias.grad();
            for (std::size_t j = 0; j < c; ++j) {
              const T xhat = (row[j] - mean) * inv;
              if (gain.requires_grad()) gg[j] += grow[j] * xhat;
              if (bias.requires_grad()) gb[j] += grow[j];
            }
          }
          if (x.requires_grad()) {
            // dxhat = g * gain; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            T sum_dxhat = 0, sum_dxhat_xhat = 0;
            for (std::size_t j = 0; j < c; ++j) {
              const T xhat = (row[j] - mean) * inv;
              const T dxhat = grow[j] * gain.values()[j];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
            }
            auto& gx = x.grad();
            for (std::size_t j = 0; j < c; ++j) {
              const T xhat = (row[j] - mean) * inv;
              const T dxhat = grow[j] * gain.values()[j];
              gx[i * c + j] += inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
            }
          }
        }
      });
}

// Rows of `table` gathered by id; backward scatter-adds into the table.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
  if (table.rank() != 2) {
    throw ValidationError("embedding_lookup: table must be rank-2");
  }
  const std::size_t v = table.shape()[0], e = table.shape()[1];
  std::vector<T> out(ids.size() * e);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= v) {
      throw ValidationError("embedding_lookup: id " + std::to_string(ids[t]) +
                            " out of range for vocab " + std::to_string(v));
    }
    std::copy_n(table.values().data() + static_cast<std::size_t>(ids[t]) * e, e,
                out.data() + t * e);
  }
  return Tensor<T>::make_op(
      {ids.size(), e}, std::move(out), {table},
      [table, ids, e](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (!table.requires_grad()) return;
        auto& gt = table.grad();
        for (std::size_t t = 0; t < ids.size(); ++t) {
          const std::size_t row = static_cast<std::size_t>(ids[t]) * e;
          for (std::size_t j = 0; j < e; ++j) gt[row + j] += g[t * e + j];
        }
      });
}

// Mean over non-pad positions of -log_softmax(logits)[t, target_t].
template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, const std::vector<int>& targets,
                             int pad_id) {
  if (logits.rank() != 2 || logits.shape()[0] != targets.size()) {
    throw ValidationError("cross_entropy_loss: logits must be [T x V] with T = targets");
  }
  const std::size_t t_len = logits.shape()[0], v = logits.shape()[1];
  std::size_t active = 0;
  T loss = 0;
  for (std::size_t t = 0; t < t_len; ++t) {
    if (targets[t] == pad_id) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= v) {
      throw ValidationError("cross_entropy_loss: target " + std::to_string(targets[t]) +
                            " out of range for vocab " + std::to_string(v));
    }
    const T* row = logits.values().data() + t * v;
    T mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T sum = 0;
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    loss += mx + std::log(sum) - row[static_cast<std::size_t>(targets[t])];
    ++active;
  }
  if (active == 0) {
    throw ValidationError("cross_entropy_loss: every position is pad");
  }
  loss /= static_cast<T>(active);
  return Tensor<T>::make_op(
      Shape{}, {loss}, {logits},
      [logits, targets, pad_id, t_len, v, active](const std::vector<T>& g,
                                                  const std::vector<T>&) mutable {
        if (!logits.requires_grad()) return;
        const T go = g[0] / static_cast<T>(active);
        auto& gl = logits.grad();
        for (std::size_t t = 0; t < t_len; ++t) {
          if (targets[t] == pad_id) continue;
          const T* row = logits.values().data() + t * v;
          T mx = row[0];
          for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
          T sum = 0;
          for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
          for (std::size_t j = 0; j < v; ++j) {
            T p = std::exp(row[j] - mx) / sum;
            if (j == static_cast<std::size_t>(targets[t])) p -= T(1);
            gl[t * v + j] += go * p;
          }
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (const T v : x.values()) s += v;
  return Tensor<T>::make_op(
      Shape{}, {s}, {x},
      [x](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
      });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != c) {
      throw ValidationError("concat_rows: all parts must be rank-2 with equal cols");
    }
    total += p.rows();
  }
  std::vector<T> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return Tensor<T>::make_op(
      {total, c}, std::move(out), parts,
      [parts](const std::vector<T>& g, const std::vector<T>&) mutable {
        std::size_t off = 0;
        for (auto& p : parts) {
          const std::size_t len = p.size();
          if (p.requires_grad()) {
            auto& gp = p.grad();
            for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
          }
          off += len;
        }
      });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total_c = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != r) {
      throw ValidationError("concat_cols: all parts must be rank-2 with equal rows");
    }
    total_c += p.cols();
  }
  std::vector<T> out(r * total_c);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.values().data() + i * pc, pc, out.data() + i * total_c + off);
    off += pc;
  }
  return Tensor<T>::make_op(
      {r, total_c}, std::move(out), parts,
      [parts, r, total_c](const std::vector<T>& g, const std::vector<T>&) mutable {
        std::size_t off = 0;
        for (auto& p : parts) {
          const std::size_t pc = p.cols();
          if (p.requires_grad()) {
            auto& gp = p.grad();
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * total_c + off + j];
          }
          off += pc;
        }
      });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t r0, std::size_t r1) {
  if (x.rank() != 2 || r0 >= r1 || r1 > x.shape()[0]) {
    throw ValidationError("slice_rows: bad range");
  }
  const std::size_t c = x.shape()[1];
  std::vector<T> out(x.values().begin() + r0 * c, x.values().begin() + r1 * c);
  return Tensor<T>::make_op(
      {r1 - r0, c}, std::move(out), {x},
      [x, r0, c](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[r0 * c + i] += g[i];
      });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t c0, std::size_t c1) {
  if (x.rank() != 2 || c0 >= c1 || c1 > x.shape()[1]) {
    throw ValidationError("slice_cols: bad range");
  }
  const std::size_t r = x.shape()[0], c = x.shape()[1], w = c1 - c0;
  std::vector<T> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(x.values().data() + i * c + c0, w, out.data() + i * w);
  return Tensor<T>::make_op(
      {r, w}, std::move(out), {x},
      [x, c0, r, c, w](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) gx[i * c + c0 + j] += g[i * w + j];
      });
}

// Inverted dropout; the mask is drawn from `rng` in element order. Callers
// skip the op entirely outside training.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ValidationError("dropout: rate must be in [0, 1)");
  }
  if (rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform_real() < rate ? T(0) : keep_scale;
    out[i] = x.values()[i] * (*mask)[i];
  }
  return Tensor<T>::make_op(
      x.shape(), std::move(out), {x},
      [x, mask](const std::vector<T>& g, const std::vector<T>&) mutable {
        if (!x.requires_grad()) return;
        auto& gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
      });
}

// Additive attention mask: 0 on allowed positions, -1e9 on forbidden ones.
// -1e9 rather than -inf keeps softmax rows NaN-free.
template <typename T>
Tensor<T> causal_mask(std::size_t t_q, std::size_t t_k) {
  std::vector<T> m(t_q * t_k, T(0));
  for (std::size_t i = 0; i < t_q; ++i)
    for (std::size_t j = i + 1; j < t_k; ++j) m[i * t_k + j] = T(-1e9);
  return Tensor<T>::from({t_q, t_k}, std::move(m));
}

}  // namespace capkit
