#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bret/rng.hpp"

namespace bret {

using Shape = std::vector<int>;

inline long long numel(const Shape& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] inline void op_error(const char* op, const std::string& what) {
  throw std::invalid_argument(std::string(op) + ": " + what);
}

/// Named trainable tensor that persists across training steps. Graphs bind to
/// it per step; gradients accumulate here after backward().
template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)) {
    value.assign(static_cast<size_t>(numel(shape)), T(0));
    grad.assign(value.size(), T(0));
  }

  long long size() const { return numel(shape); }

  void init_normal(Rng& rng, double stddev) {
    for (auto& v : value) v = static_cast<T>(rng.normal(0.0, stddev));
  }
  void fill(T x) { std::fill(value.begin(), value.end(), x); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
class Graph;

/// Handle to a node in a Graph. Cheap to copy; the graph owns all storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<T>* g, int id) : g_(g), id_(id) {}

  bool valid() const { return g_ != nullptr; }
  Graph<T>* graph() const { return g_; }
  int id() const { return id_; }

  const Shape& shape() const { return g_->node(id_).shape; }
  int rows() const { return shape()[0]; }
  int cols() const { return shape().size() > 1 ? shape()[1] : 1; }
  long long size() const { return numel(shape()); }
  const std::vector<T>& value() const { return g_->node(id_).value; }
  const std::vector<T>& grad() const { return g_->node(id_).grad; }

  /// Value of a single-element tensor.
  T item() const {
    if (size() != 1) op_error("item", "tensor is not scalar, shape " + shape_str(shape()));
    return value()[0];
  }

 private:
  Graph<T>* g_ = nullptr;
  int id_ = -1;
};

/// Define-by-run reverse-mode differentiation graph. Rebuilt every step.
/// Nodes are appended in topological order, so backward() is a reverse sweep.
/// A graph is confined to one thread; parameters bound via param() receive
/// accumulated gradients when backward() finishes.
template <typename T>
class Graph {
 public:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily during backward
    bool needs_grad = false;
    std::function<void()> backprop;
    const char* op = "leaf";
  };

  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }

  /// Enables a finiteness check after every operation (used by tests and for
  /// loss values in training loops). NaN/Inf raises std::runtime_error.
  void set_finite_checks(bool on) { finite_checks_ = on; }

  Tensor<T> constant(Shape shape, std::vector<T> value) {
    return make(std::move(shape), std::move(value), false, "constant");
  }

  Tensor<T> scalar(T v) { return constant({1}, {v}); }

  /// Differentiable leaf with an initial value (owned by the graph).
  Tensor<T> variable(Shape shape, std::vector<T> value) {
    return make(std::move(shape), std::move(value), recording_, "variable");
  }

  /// Differentiable leaf bound to a persistent parameter. The same parameter
  /// binds to a single node per graph; grads flow back on backward(). Only
  /// the parameter's grad buffer is ever written, so a const ref suffices.
  Tensor<T> param(const Parameter<T>& cp) {
    auto* p = const_cast<Parameter<T>*>(&cp);
    auto it = bound_.find(p);
    if (it != bound_.end()) return Tensor<T>(this, it->second);
    Tensor<T> t = make(p->shape, p->value, recording_, "param");
    bound_.emplace(p, t.id());
    if (recording_) bound_order_.push_back({p, t.id()});
    return t;
  }

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  Tensor<T> make(Shape shape, std::vector<T> value, bool needs_grad, const char* op) {
    if (shape.empty()) op_error(op, "empty shape");
    for (int d : shape)
      if (d <= 0) op_error(op, "non-positive extent in " + shape_str(shape));
    if (static_cast<long long>(value.size()) != numel(shape))
      op_error(op, "data length " + std::to_string(value.size()) +
                       " does not match shape " + shape_str(shape));
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.needs_grad = needs_grad && recording_;
    n.op = op;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    if (finite_checks_) check_finite(id);
    return Tensor<T>(this, id);
  }

  void set_backprop(int id, std::function<void()> fn) {
    nodes_[static_cast<size_t>(id)].backprop = std::move(fn);
  }

  std::vector<T>& ensure_grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }

  bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }

  /// Reverse sweep from a scalar loss. Accumulates into every bound
  /// Parameter's grad buffer.
  void backward(const Tensor<T>& loss) {
    if (loss.graph() != this) op_error("backward", "loss belongs to another graph");
    if (loss.size() != 1)
      op_error("backward", "loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!recording_) op_error("backward", "graph is not recording");
    ensure_grad(loss.id())[0] = T(1);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (n.backprop && !n.grad.empty()) n.backprop();
    }
    for (const auto& [p, id] : bound_order_) {
      const Node& n = nodes_[static_cast<size_t>(id)];
      if (n.grad.empty()) continue;
      for (size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
    }
  }

  void check_finite(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    for (T v : n.value)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error(std::string("non-finite value produced by op '") + n.op + "'");
  }

 private:
  std::vector<Node> nodes_;
  std::unordered_map<Parameter<T>*, int> bound_;
  std::vector<std::pair<Parameter<T>*, int>> bound_order_;
  bool recording_ = true;
  bool finite_checks_ = false;
};

namespace detail {

template <typename T>
Graph<T>* same_graph(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.valid() || !b.valid()) op_error(op, "invalid tensor handle");
  if (a.graph() != b.graph()) op_error(op, "tensors belong to different graphs");
  return a.graph();
}

template <typename T>
void require_2d(const char* op, const Tensor<T>& t) {
  if (t.shape().size() != 2)
    op_error(op, "expected 2-d tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra operations. Every op records its backward
// closure when any input needs a gradient.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  Graph<T>* g = detail::same_graph("add", a, b);
  if (a.shape() != b.shape())
    op_error("add", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const bool ng = g->node(a.id()).needs_grad || g->node(b.id()).needs_grad;
  Tensor<T> c = g->make(a.shape(), std::move(out), ng, "add");
  if (ng) {
    const int ia = a.id(), ib = b.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ib, ic] {
      const auto& gc = g->node(ic).grad;
      if (g->node(ia).needs_grad) {
        auto& ga = g->ensure_grad(ia);
        for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
      }
      if (g->node(ib).needs_grad) {
        auto& gb = g->ensure_grad(ib);
        for (size_t i = 0; i < gc.size(); ++i) gb[i] += gc[i];
      }
    });
  }
  return c;
}

template <typename T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  Graph<T>* g = detail::same_graph("sub", a, b);
  if (a.shape() != b.shape())
    op_error("sub", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const bool ng = g->node(a.id()).needs_grad || g->node(b.id()).needs_grad;
  Tensor<T> c = g->make(a.shape(), std::move(out), ng, "sub");
  if (ng) {
    const int ia = a.id(), ib = b.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ib, ic] {
      const auto& gc = g->node(ic).grad;
      if (g->node(ia).needs_grad) {
        auto& ga = g->ensure_grad(ia);
        for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
      }
      if (g->node(ib).needs_grad) {
        auto& gb = g->ensure_grad(ib);
        for (size_t i = 0; i < gc.size(); ++i) gb[i] -= gc[i];
      }
    });
  }
  return c;
}

/// Hadamard product.
template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  Graph<T>* g = detail::same_graph("mul", a, b);
  if (a.shape() != b.shape())
    op_error("mul", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const bool ng = g->node(a.id()).needs_grad || g->node(b.id()).needs_grad;
  Tensor<T> c = g->make(a.shape(), std::move(out), ng, "mul");
  if (ng) {
    const int ia = a.id(), ib = b.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ib, ic] {
      const auto& gc = g->node(ic).grad;
      const auto& va = g->node(ia).value;
      const auto& vb = g->node(ib).value;
      if (g->node(ia).needs_grad) {
        auto& ga = g->ensure_grad(ia);
        for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] * vb[i];
      }
      if (g->node(ib).needs_grad) {
        auto& gb = g->ensure_grad(ib);
        for (size_t i = 0; i < gc.size(); ++i) gb[i] += gc[i] * va[i];
      }
    });
  }
  return c;
}

template <typename T>
Tensor<T> scale(Tensor<T> a, T s) {
  Graph<T>* g = a.graph();
  std::vector<T> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  const bool ng = g->node(a.id()).needs_grad;
  Tensor<T> c = g->make(a.shape(), std::move(out), ng, "scale");
  if (ng) {
    const int ia = a.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ic, s] {
      const auto& gc = g->node(ic).grad;
      auto& ga = g->ensure_grad(ia);
      for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] * s;
    });
  }
  return c;
}

/// C = A * B for 2-d operands [m,k] x [k,n].
template <typename T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
  Graph<T>* g = detail::same_graph("matmul", a, b);
  detail::require_2d("matmul", a);
  detail::require_2d("matmul", b);
  const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    op_error("matmul", "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::vector<T> out(static_cast<size_t>(m) * n, T(0));
  {
    const T* pa = a.value().data();
    const T* pb = b.value().data();
    T* pc = out.data();
    for (int i = 0; i < m; ++i) {
      for (int l = 0; l < k; ++l) {
        const T av = pa[i * k + l];
        if (av == T(0)) continue;
        const T* brow = pb + static_cast<size_t>(l) * n;
        T* crow = pc + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  const bool ng = g->node(a.id()).needs_grad || g->node(b.id()).needs_grad;
  Tensor<T> c = g->make({m, n}, std::move(out), ng, "matmul");
  if (ng) {
    const int ia = a.id(), ib = b.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ib, ic, m, k, n] {
      const auto& gc = g->node(ic).grad;
      const auto& va = g->node(ia).value;
      const auto& vb = g->node(ib).value;
      if (g->node(ia).needs_grad) {
        // dA += dC * B^T ; dA[i,l] = sum_j dC[i,j] B[l,j]
        auto& ga = g->ensure_grad(ia);
        for (int i = 0; i < m; ++i) {
          const T* gcrow = gc.data() + static_cast<size_t>(i) * n;
          for (int l = 0; l < k; ++l) {
            const T* brow = vb.data() + static_cast<size_t>(l) * n;
            T acc = T(0);
            for (int j = 0; j < n; ++j) acc += gcrow[j] * brow[j];
            ga[static_cast<size_t>(i) * k + l] += acc;
          }
        }
      }
      if (g->node(ib).needs_grad) {
        // dB += A^T * dC ; dB[l,j] += A[i,l] dC[i,j]
        auto& gb = g->ensure_grad(ib);
        for (int i = 0; i < m; ++i) {
          const T* arow = va.data() + static_cast<size_t>(i) * k;
          const T* gcrow = gc.data() + static_cast<size_t>(i) * n;
          for (int l = 0; l < k; ++l) {
            const T av = arow[l];
            if (av == T(0)) continue;
            T* gbrow = gb.data() + static_cast<size_t>(l) * n;
            for (int j = 0; j < n; ++j) gbrow[j] += av * gcrow[j];
          }
        }
      }
    });
  }
  return c;
}

/// C = A * B^T for 2-d operands [m,k] x [n,k].
template <typename T>
Tensor<T> matmul_nt(Tensor<T> a, Tensor<T> b) {
  Graph<T>* g = detail::same_graph("matmul_nt", a, b);
  detail::require_2d("matmul_nt", a);
  detail::require_2d("matmul_nt", b);
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (k != b.shape()[1])
    op_error("matmul_nt", "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::vector<T> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const T* arow = a.value().data() + static_cast<size_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const T* brow = b.value().data() + static_cast<size_t>(j) * k;
      T acc = T(0);
      for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
      out[static_cast<size_t>(i) * n + j] = acc;
    }
  }
  const bool ng = g->node(a.id()).needs_grad || g->node(b.id()).needs_grad;
  Tensor<T> c = g->make({m, n}, std::move(out), ng, "matmul_nt");
  if (ng) {
    const int ia = a.id(), ib = b.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ib, ic, m, k, n] {
      const auto& gc = g->node(ic).grad;
      const auto& va = g->node(ia).value;
      const auto& vb = g->node(ib).value;
      if (g->node(ia).needs_grad) {
        // dA += dC * B
        auto& ga = g->ensure_grad(ia);
        for (int i = 0; i < m; ++i) {
          const T* gcrow = gc.data() + static_cast<size_t>(i) * n;
          T* garow = ga.data() + static_cast<size_t>(i) * k;
          for (int j = 0; j < n; ++j) {
            const T gv = gcrow[j];
            if (gv == T(0)) continue;
            const T* brow = vb.data() + static_cast<size_t>(j) * k;
            for (int l = 0; l < k; ++l) garow[l] += gv * brow[l];
          }
        }
      }
      if (g->node(ib).needs_grad) {
        // dB += dC^T * A
        auto& gb = g->ensure_grad(ib);
        for (int i = 0; i < m; ++i) {
          const T* gcrow = gc.data() + static_cast<size_t>(i) * n;
          const T* arow = va.data() + static_cast<size_t>(i) * k;
          for (int j = 0; j < n; ++j) {
            const T gv = gcrow[j];
            if (gv == T(0)) continue;
            T* gbrow = gb.data() + static_cast<size_t>(j) * k;
            for (int l = 0; l < k; ++l) gbrow[l] += gv * arow[l];
          }
        }
      }
    });
  }
  return c;
}

template <typename T>
Tensor<T> transpose(Tensor<T> a) {
  Graph<T>* g = a.graph();
  detail::require_2d("transpose", a);
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(j) * m + i] = a.value()[static_cast<size_t>(i) * n + j];
  const bool ng = g->node(a.id()).needs_grad;
  Tensor<T> c = g->make({n, m}, std::move(out), ng, "transpose");
  if (ng) {
    const int ia = a.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ic, m, n] {
      const auto& gc = g->node(ic).grad;
      auto& ga = g->ensure_grad(ia);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          ga[static_cast<size_t>(i) * n + j] += gc[static_cast<size_t>(j) * m + i];
    });
  }
  return c;
}

/// [m,n] plus a length-n bias vector added to every row.
template <typename T>
Tensor<T> add_bias(Tensor<T> a, Tensor<T> bias) {
  Graph<T>* g = detail::same_graph("add_bias", a, bias);
  detail::require_2d("add_bias", a);
  const int m = a.shape()[0], n = a.shape()[1];
  if (bias.shape() != Shape{n})
    op_error("add_bias", "bias shape " + shape_str(bias.shape()) + " does not match columns of " +
                             shape_str(a.shape()));
  std::vector<T> out(a.value().size());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] = a.value()[static_cast<size_t>(i) * n + j] + bias.value()[j];
  const bool ng = g->node(a.id()).needs_grad || g->node(bias.id()).needs_grad;
  Tensor<T> c = g->make({m, n}, std::move(out), ng, "add_bias");
  if (ng) {
    const int ia = a.id(), ib = bias.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ib, ic, m, n] {
      const auto& gc = g->node(ic).grad;
      if (g->node(ia).needs_grad) {
        auto& ga = g->ensure_grad(ia);
        for (size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
      }
      if (g->node(ib).needs_grad) {
        auto& gb = g->ensure_grad(ib);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += gc[static_cast<size_t>(i) * n + j];
      }
    });
  }
  return c;
}

/// Row-wise softmax with optional key mask. Masked columns get exactly zero
/// probability; every row must keep at least one unmasked column. Max
/// subtraction keeps the exponentials in range.
template <typename T>
Tensor<T> row_softmax(Tensor<T> a, const std::vector<uint8_t>& keep = {}) {
  Graph<T>* g = a.graph();
  detail::require_2d("row_softmax", a);
  const int m = a.shape()[0], n = a.shape()[1];
  if (!keep.empty() && static_cast<int>(keep.size()) != n)
    op_error("row_softmax", "mask length " + std::to_string(keep.size()) + " vs columns " +
                                std::to_string(n));
  std::vector<T> out(a.value().size(), T(0));
  for (int i = 0; i < m; ++i) {
    const T* row = a.value().data() + static_cast<size_t>(i) * n;
    T* orow = out.data() + static_cast<size_t>(i) * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < n; ++j)
      if (keep.empty() || keep[static_cast<size_t>(j)]) mx = std::max(mx, row[j]);
    if (mx == -std::numeric_limits<T>::infinity())
      op_error("row_softmax", "row " + std::to_string(i) + " has no unmasked entries");
    T sum = T(0);
    for (int j = 0; j < n; ++j) {
      if (keep.empty() || keep[static_cast<size_t>(j)]) {
        orow[j] = std::exp(row[j] - mx);
        sum += orow[j];
      }
    }
    for (int j = 0; j < n; ++j) orow[j] /= sum;
  }
  const bool ng = g->node(a.id()).needs_grad;
  Tensor<T> c = g->make({m, n}, std::move(out), ng, "row_softmax");
  if (ng) {
    const int ia = a.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ic, m, n] {
      const auto& gc = g->node(ic).grad;
      const auto& p = g->node(ic).value;
      auto& ga = g->ensure_grad(ia);
      for (int i = 0; i < m; ++i) {
        const size_t off = static_cast<size_t>(i) * n;
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += p[off + j] * gc[off + j];
        for (int j = 0; j < n; ++j) ga[off + j] += p[off + j] * (gc[off + j] - dot);
      }
    });
  }
  return c;
}

/// Row-wise log-softmax (max subtraction), for listwise and KL losses.
template <typename T>
Tensor<T> row_log_softmax(Tensor<T> a) {
  Graph<T>* g = a.graph();
  detail::require_2d("row_log_softmax", a);
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(a.value().size());
  for (int i = 0; i < m; ++i) {
    const T* row = a.value().data() + static_cast<size_t>(i) * n;
    T* orow = out.data() + static_cast<size_t>(i) * n;
    T mx = row[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    for (int j = 0; j < n; ++j) orow[j] = row[j] - lse;
  }
  const bool ng = g->node(a.id()).needs_grad;
  Tensor<T> c = g->make({m, n}, std::move(out), ng, "row_log_softmax");
  if (ng) {
    const int ia = a.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ic, m, n] {
      const auto& gc = g->node(ic).grad;
      const auto& lsm = g->node(ic).value;
      auto& ga = g->ensure_grad(ia);
      for (int i = 0; i < m; ++i) {
        const size_t off = static_cast<size_t>(i) * n;
        T gsum = T(0);
        for (int j = 0; j < n; ++j) gsum += gc[off + j];
        for (int j = 0; j < n; ++j) ga[off + j] += gc[off + j] - std::exp(lsm[off + j]) * gsum;
      }
    });
  }
  return c;
}

/// Per-row layer normalization with affine transform. gamma/beta are length-n
/// vectors; variance is the population variance of the row.
template <typename T>
Tensor<T> layer_norm(Tensor<T> a, Tensor<T> gamma, Tensor<T> beta, T eps = T(1e-12)) {
  Graph<T>* g = detail::same_graph("layer_norm", a, gamma);
  detail::same_graph("layer_norm", a, beta);
  detail::require_2d("layer_norm", a);
  const int m = a.shape()[0], n = a.shape()[1];
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n})
    op_error("layer_norm", "affine shapes " + shape_str(gamma.shape()) + "/" +
                               shape_str(beta.shape()) + " do not match columns of " +
                               shape_str(a.shape()));
  std::vector<T> out(a.value().size());
  std::vector<T> xhat(a.value().size());
  std::vector<T> inv_sigma(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const T* row = a.value().data() + static_cast<size_t>(i) * n;
    T mean = T(0);
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (int j = 0; j < n; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(i)] = inv;
    for (int j = 0; j < n; ++j) {
      const size_t idx = static_cast<size_t>(i) * n + j;
      xhat[idx] = (row[j] - mean) * inv;
      out[idx] = xhat[idx] * gamma.value()[j] + beta.value()[j];
    }
  }
  const bool ng = g->node(a.id()).needs_grad || g->node(gamma.id()).needs_grad ||
                  g->node(beta.id()).needs_grad;
  Tensor<T> c = g->make({m, n}, std::move(out), ng, "layer_norm");
  if (ng) {
    const int ia = a.id(), ig = gamma.id(), ib = beta.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ig, ib, ic, m, n, xhat = std::move(xhat),
                         inv_sigma = std::move(inv_sigma)] {
      const auto& gc = g->node(ic).grad;
      const auto& gam = g->node(ig).value;
      if (g->node(ig).needs_grad) {
        auto& gg = g->ensure_grad(ig);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const size_t idx = static_cast<size_t>(i) * n + j;
            gg[j] += gc[idx] * xhat[idx];
          }
      }
      if (g->node(ib).needs_grad) {
        auto& gb = g->ensure_grad(ib);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += gc[static_cast<size_t>(i) * n + j];
      }
      if (g->node(ia).needs_grad) {
        auto& ga = g->ensure_grad(ia);
        for (int i = 0; i < m; ++i) {
          const size_t off = static_cast<size_t>(i) * n;
          T sum_h = T(0), sum_hx = T(0);
          for (int j = 0; j < n; ++j) {
            const T h = gc[off + j] * gam[j];
            sum_h += h;
            sum_hx += h * xhat[off + j];
          }
          const T inv_n = T(1) / static_cast<T>(n);
          for (int j = 0; j < n; ++j) {
            const T h = gc[off + j] * gam[j];
            ga[off + j] += inv_sigma[static_cast<size_t>(i)] *
                           (h - inv_n * sum_h - xhat[off + j] * inv_n * sum_hx);
          }
        }
      }
    });
  }
  return c;
}

/// Exact (erf-based) GELU.
template <typename T>
Tensor<T> gelu(Tensor<T> a) {
  Graph<T>* g = a.graph();
  std::vector<T> out(a.value().size());
  for (size_t i = 0; i < out.size(); ++i) {
    const T x = a.value()[i];
    out[i] = x * T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
  }
  const bool ng = g->node(a.id()).needs_grad;
  Tensor<T> c = g->make(a.shape(), std::move(out), ng, "gelu");
  if (ng) {
    const int ia = a.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ic] {
      const auto& gc = g->node(ic).grad;
      const auto& va = g->node(ia).value;
      auto& ga = g->ensure_grad(ia);
      for (size_t i = 0; i < gc.size(); ++i) {
        const T x = va[i];
        const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
        const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014326779);
        ga[i] += gc[i] * (cdf + x * pdf);
      }
    });
  }
  return c;
}

/// Gathers rows of a [V,d] table by id. Backward scatter-adds.
template <typename T>
Tensor<T> embedding(Tensor<T> table, const std::vector<int>& ids) {
  Graph<T>* g = table.graph();
  detail::require_2d("embedding", table);
  const int v = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) op_error("embedding", "empty id list");
  std::vector<T> out(ids.size() * static_cast<size_t>(d));
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v)
      op_error("embedding", "id " + std::to_string(ids[i]) + " out of range [0," +
                                std::to_string(v) + ")");
    const T* row = table.value().data() + static_cast<size_t>(ids[i]) * d;
    std::copy(row, row + d, out.data() + i * static_cast<size_t>(d));
  }
  const bool ng = g->node(table.id()).needs_grad;
  Tensor<T> c = g->make({static_cast<int>(ids.size()), d}, std::move(out), ng, "embedding");
  if (ng) {
    const int it = table.id(), ic = c.id();
    g->set_backprop(ic, [g, it, ic, ids, d] {
      const auto& gc = g->node(ic).grad;
      auto& gt = g->ensure_grad(it);
      for (size_t i = 0; i < ids.size(); ++i) {
        T* trow = gt.data() + static_cast<size_t>(ids[i]) * d;
        const T* grow = gc.data() + i * static_cast<size_t>(d);
        for (int j = 0; j < d; ++j) trow[j] += grow[j];
      }
    });
  }
  return c;
}

/// Vertical concatenation of 2-d tensors with equal column counts.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) op_error("concat_rows", "no inputs");
  Graph<T>* g = parts[0].graph();
  const int n = parts[0].cols();
  int m = 0;
  bool ng = false;
  for (const auto& p : parts) {
    detail::same_graph("concat_rows", parts[0], p);
    detail::require_2d("concat_rows", p);
    if (p.cols() != n)
      op_error("concat_rows", "column mismatch " + shape_str(p.shape()) + " vs " +
                                  shape_str(parts[0].shape()));
    m += p.rows();
    ng = ng || g->node(p.id()).needs_grad;
  }
  std::vector<T> out;
  out.reserve(static_cast<size_t>(m) * n);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  Tensor<T> c = g->make({m, n}, std::move(out), ng, "concat_rows");
  if (ng) {
    std::vector<int> pids;
    pids.reserve(parts.size());
    for (const auto& p : parts) pids.push_back(p.id());
    const int ic = c.id();
    g->set_backprop(ic, [g, pids, ic] {
      const auto& gc = g->node(ic).grad;
      size_t off = 0;
      for (int pid : pids) {
        const size_t sz = g->node(pid).value.size();
        if (g->node(pid).needs_grad) {
          auto& gp = g->ensure_grad(pid);
          for (size_t i = 0; i < sz; ++i) gp[i] += gc[off + i];
        }
        off += sz;
      }
    });
  }
  return c;
}

/// Horizontal concatenation of 2-d tensors with equal row counts.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) op_error("concat_cols", "no inputs");
  Graph<T>* g = parts[0].graph();
  const int m = parts[0].rows();
  int n = 0;
  bool ng = false;
  for (const auto& p : parts) {
    detail::same_graph("concat_cols", parts[0], p);
    detail::require_2d("concat_cols", p);
    if (p.rows() != m)
      op_error("concat_cols", "row mismatch " + shape_str(p.shape()) + " vs " +
                                  shape_str(parts[0].shape()));
    n += p.cols();
    ng = ng || g->node(p.id()).needs_grad;
  }
  std::vector<T> out(static_cast<size_t>(m) * n);
  {
    int coff = 0;
    for (const auto& p : parts) {
      const int pc = p.cols();
      for (int i = 0; i < m; ++i)
        std::copy(p.value().data() + static_cast<size_t>(i) * pc,
                  p.value().data() + static_cast<size_t>(i + 1) * pc,
                  out.data() + static_cast<size_t>(i) * n + coff);
      coff += pc;
    }
  }
  Tensor<T> c = g->make({m, n}, std::move(out), ng, "concat_cols");
  if (ng) {
    std::vector<int> pids;
    std::vector<int> widths;
    for (const auto& p : parts) {
      pids.push_back(p.id());
      widths.push_back(p.cols());
    }
    const int ic = c.id();
    g->set_backprop(ic, [g, pids, widths, ic, m, n] {
      const auto& gc = g->node(ic).grad;
      int coff = 0;
      for (size_t pi = 0; pi < pids.size(); ++pi) {
        const int pc = widths[pi];
        if (g->node(pids[pi]).needs_grad) {
          auto& gp = g->ensure_grad(pids[pi]);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < pc; ++j)
              gp[static_cast<size_t>(i) * pc + j] += gc[static_cast<size_t>(i) * n + coff + j];
        }
        coff += pc;
      }
    });
  }
  return c;
}

/// Rows [begin, end) of a 2-d tensor.
template <typename T>
Tensor<T> slice_rows(Tensor<T> a, int begin, int end) {
  Graph<T>* g = a.graph();
  detail::require_2d("slice_rows", a);
  const int m = a.shape()[0], n = a.shape()[1];
  if (begin < 0 || end > m || begin >= end)
    op_error("slice_rows", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                               ") invalid for " + shape_str(a.shape()));
  std::vector<T> out(a.value().begin() + static_cast<size_t>(begin) * n,
                     a.value().begin() + static_cast<size_t>(end) * n);
  const bool ng = g->node(a.id()).needs_grad;
  Tensor<T> c = g->make({end - begin, n}, std::move(out), ng, "slice_rows");
  if (ng) {
    const int ia = a.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ic, begin, n] {
      const auto& gc = g->node(ic).grad;
      auto& ga = g->ensure_grad(ia);
      const size_t off = static_cast<size_t>(begin) * n;
      for (size_t i = 0; i < gc.size(); ++i) ga[off + i] += gc[i];
    });
  }
  return c;
}

/// Columns [begin, end) of a 2-d tensor.
template <typename T>
Tensor<T> slice_cols(Tensor<T> a, int begin, int end) {
  Graph<T>* g = a.graph();
  detail::require_2d("slice_cols", a);
  const int m = a.shape()[0], n = a.shape()[1];
  if (begin < 0 || end > n || begin >= end)
    op_error("slice_cols", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                               ") invalid for " + shape_str(a.shape()));
  const int w = end - begin;
  std::vector<T> out(static_cast<size_t>(m) * w);
  for (int i = 0; i < m; ++i)
    std::copy(a.value().data() + static_cast<size_t>(i) * n + begin,
              a.value().data() + static_cast<size_t>(i) * n + end,
              out.data() + static_cast<size_t>(i) * w);
  const bool ng = g->node(a.id()).needs_grad;
  Tensor<T> c = g->make({m, w}, std::move(out), ng, "slice_cols");
  if (ng) {
    const int ia = a.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ic, m, n, begin, w] {
      const auto& gc = g->node(ic).grad;
      auto& ga = g->ensure_grad(ia);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          ga[static_cast<size_t>(i) * n + begin + j] += gc[static_cast<size_t>(i) * w + j];
    });
  }
  return c;
}

/// Mean over rows, optionally restricted to rows with a nonzero mask entry.
/// Returns a [1,n] tensor.
template <typename T>
Tensor<T> mean_rows(Tensor<T> a, const std::vector<uint8_t>& rows_keep = {}) {
  Graph<T>* g = a.graph();
  detail::require_2d("mean_rows", a);
  const int m = a.shape()[0], n = a.shape()[1];
  if (!rows_keep.empty() && static_cast<int>(rows_keep.size()) != m)
    op_error("mean_rows", "mask length " + std::to_string(rows_keep.size()) + " vs rows " +
                              std::to_string(m));
  int cnt = 0;
  for (int i = 0; i < m; ++i)
    if (rows_keep.empty() || rows_keep[static_cast<size_t>(i)]) ++cnt;
  if (cnt == 0) op_error("mean_rows", "no rows selected");
  std::vector<T> out(static_cast<size_t>(n), T(0));
  for (int i = 0; i < m; ++i) {
    if (!rows_keep.empty() && !rows_keep[static_cast<size_t>(i)]) continue;
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j)] += a.value()[static_cast<size_t>(i) * n + j];
  }
  for (auto& v : out) v /= static_cast<T>(cnt);
  const bool ng = g->node(a.id()).needs_grad;
  Tensor<T> c = g->make({1, n}, std::move(out), ng, "mean_rows");
  if (ng) {
    const int ia = a.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ic, m, n, rows_keep, cnt] {
      const auto& gc = g->node(ic).grad;
      auto& ga = g->ensure_grad(ia);
      const T inv = T(1) / static_cast<T>(cnt);
      for (int i = 0; i < m; ++i) {
        if (!rows_keep.empty() && !rows_keep[static_cast<size_t>(i)]) continue;
        for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += gc[static_cast<size_t>(j)] * inv;
      }
    });
  }
  return c;
}

/// Scales each row to unit L2 norm. Zero-norm rows are rejected.
template <typename T>
Tensor<T> l2_normalize_rows(Tensor<T> a) {
  Graph<T>* g = a.graph();
  detail::require_2d("l2_normalize_rows", a);
  const int m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(a.value().size());
  std::vector<T> inv_norm(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const T* row = a.value().data() + static_cast<size_t>(i) * n;
    T sq = T(0);
    for (int j = 0; j < n; ++j) sq += row[j] * row[j];
    if (sq <= T(0))
      op_error("l2_normalize_rows", "zero-norm row " + std::to_string(i));
    const T inv = T(1) / std::sqrt(sq);
    inv_norm[static_cast<size_t>(i)] = inv;
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = row[j] * inv;
  }
  const bool ng = g->node(a.id()).needs_grad;
  Tensor<T> c = g->make({m, n}, std::move(out), ng, "l2_normalize_rows");
  if (ng) {
    const int ia = a.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ic, m, n, inv_norm = std::move(inv_norm)] {
      const auto& gc = g->node(ic).grad;
      const auto& y = g->node(ic).value;
      auto& ga = g->ensure_grad(ia);
      for (int i = 0; i < m; ++i) {
        const size_t off = static_cast<size_t>(i) * n;
        T dot = T(0);
        for (int j = 0; j < n; ++j) dot += y[off + j] * gc[off + j];
        for (int j = 0; j < n; ++j)
          ga[off + j] += inv_norm[static_cast<size_t>(i)] * (gc[off + j] - y[off + j] * dot);
      }
    });
  }
  return c;
}

/// Sum of every element, as a scalar tensor.
template <typename T>
Tensor<T> sum_all(Tensor<T> a) {
  Graph<T>* g = a.graph();
  T s = T(0);
  for (T v : a.value()) s += v;
  const bool ng = g->node(a.id()).needs_grad;
  Tensor<T> c = g->make({1}, {s}, ng, "sum_all");
  if (ng) {
    const int ia = a.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ic] {
      const T gv = g->node(ic).grad[0];
      auto& ga = g->ensure_grad(ia);
      for (auto& v : ga) v += gv;
    });
  }
  return c;
}

/// Weighted sum with constant weights, as a scalar tensor.
template <typename T>
Tensor<T> dot_const(Tensor<T> a, const std::vector<T>& w) {
  Graph<T>* g = a.graph();
  if (a.value().size() != w.size())
    op_error("dot_const", "weight length " + std::to_string(w.size()) + " vs tensor size " +
                              std::to_string(a.value().size()));
  T s = T(0);
  for (size_t i = 0; i < w.size(); ++i) s += a.value()[i] * w[i];
  const bool ng = g->node(a.id()).needs_grad;
  Tensor<T> c = g->make({1}, {s}, ng, "dot_const");
  if (ng) {
    const int ia = a.id(), ic = c.id();
    g->set_backprop(ic, [g, ia, ic, w] {
      const T gv = g->node(ic).grad[0];
      auto& ga = g->ensure_grad(ia);
      for (size_t i = 0; i < w.size(); ++i) ga[i] += gv * w[i];
    });
  }
  return c;
}

/// Token-level cross entropy: mean negative log-probability of the target id
/// per non-ignored row of [N,V] logits. Rows with a nonzero ignore flag are
/// excluded; excluding every row is an error rather than a zero loss.
template <typename T>
Tensor<T> cross_entropy(Tensor<T> logits, const std::vector<int>& targets,
                        const std::vector<uint8_t>& ignore = {}) {
  Graph<T>* g = logits.graph();
  detail::require_2d("cross_entropy", logits);
  const int n = logits.shape()[0], v = logits.shape()[1];
  if (static_cast<int>(targets.size()) != n)
    op_error("cross_entropy", "targets length " + std::to_string(targets.size()) + " vs rows " +
                                  std::to_string(n));
  if (!ignore.empty() && static_cast<int>(ignore.size()) != n)
    op_error("cross_entropy", "ignore-mask length " + std::to_string(ignore.size()) + " vs rows " +
                                  std::to_string(n));
  int used = 0;
  for (int i = 0; i < n; ++i) {
    if (!ignore.empty() && ignore[static_cast<size_t>(i)]) continue;
    ++used;
    if (targets[static_cast<size_t>(i)] < 0 || targets[static_cast<size_t>(i)] >= v)
      op_error("cross_entropy", "target " + std::to_string(targets[static_cast<size_t>(i)]) +
                                    " out of range [0," + std::to_string(v) + ") at row " +
                                    std::to_string(i));
  }
  if (used == 0) op_error("cross_entropy", "all positions ignored");
  T loss = T(0);
  for (int i = 0; i < n; ++i) {
    if (!ignore.empty() && ignore[static_cast<size_t>(i)]) continue;
    const T* row = logits.value().data() + static_cast<size_t>(i) * v;
    T mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    loss += mx + std::log(sum) - row[targets[static_cast<size_t>(i)]];
  }
  loss /= static_cast<T>(used);
  const bool ng = g->node(logits.id()).needs_grad;
  Tensor<T> c = g->make({1}, {loss}, ng, "cross_entropy");
  if (ng) {
    const int il = logits.id(), ic = c.id();
    g->set_backprop(ic, [g, il, ic, targets, ignore, n, v, used] {
      const T gv = g->node(ic).grad[0] / static_cast<T>(used);
      const auto& lv = g->node(il).value;
      auto& gl = g->ensure_grad(il);
      for (int i = 0; i < n; ++i) {
        if (!ignore.empty() && ignore[static_cast<size_t>(i)]) continue;
        const T* row = lv.data() + static_cast<size_t>(i) * v;
        T* grow = gl.data() + static_cast<size_t>(i) * v;
        T mx = row[0];
        for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        for (int j = 0; j < v; ++j) {
          const T p = std::exp(row[j] - mx) / sum;
          grow[j] += gv * (p - (j == targets[static_cast<size_t>(i)] ? T(1) : T(0)));
        }
      }
    });
  }
  return c;
}

/// Mean binary cross entropy over unmasked entries of a logit column/vector.
/// labels are 0/1 flags; the stable max/log1p form is used.
template <typename T>
Tensor<T> binary_cross_entropy_with_logits(Tensor<T> logits, const std::vector<uint8_t>& labels,
                                           const std::vector<uint8_t>& keep = {}) {
  Graph<T>* g = logits.graph();
  const size_t n = logits.value().size();
  if (labels.size() != n)
    op_error("binary_cross_entropy", "labels length " + std::to_string(labels.size()) +
                                         " vs tensor size " + std::to_string(n));
  if (!keep.empty() && keep.size() != n)
    op_error("binary_cross_entropy", "mask length " + std::to_string(keep.size()) +
                                         " vs tensor size " + std::to_string(n));
  int used = 0;
  for (size_t i = 0; i < n; ++i)
    if (keep.empty() || keep[i]) ++used;
  if (used == 0) op_error("binary_cross_entropy", "all positions masked");
  T loss = T(0);
  for (size_t i = 0; i < n; ++i) {
    if (!keep.empty() && !keep[i]) continue;
    const T z = logits.value()[i];
    const T y = labels[i] ? T(1) : T(0);
    loss += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= static_cast<T>(used);
  const bool ng = g->node(logits.id()).needs_grad;
  Tensor<T> c = g->make({1}, {loss}, ng, "binary_cross_entropy");
  if (ng) {
    const int il = logits.id(), ic = c.id();
    g->set_backprop(ic, [g, il, ic, labels, keep, used] {
      const T gv = g->node(ic).grad[0] / static_cast<T>(used);
      const auto& lv = g->node(il).value;
      auto& gl = g->ensure_grad(il);
      for (size_t i = 0; i < lv.size(); ++i) {
        if (!keep.empty() && !keep[i]) continue;
        const T sig = T(1) / (T(1) + std::exp(-lv[i]));
        gl[i] += gv * (sig - (labels[i] ? T(1) : T(0)));
      }
    });
  }
  return c;
}

/// Batched InfoNCE over temperature-scaled score matrices.
///
/// score_q and score_p are [B,C] with C >= B candidates; candidate `i` is the
/// positive for row `i`. Row i's partition spans score_q[i, :] plus
/// score_p[i, j] for j != i, and the loss is the mean over rows of
/// logsumexp(partition) - score_q[i, i]. Log-space throughout.
template <typename T>
Tensor<T> info_nce(Tensor<T> score_q, Tensor<T> score_p) {
  Graph<T>* g = detail::same_graph("info_nce", score_q, score_p);
  detail::require_2d("info_nce", score_q);
  if (score_q.shape() != score_p.shape())
    op_error("info_nce", "shape mismatch " + shape_str(score_q.shape()) + " vs " +
                             shape_str(score_p.shape()));
  const int b = score_q.shape()[0], cnum = score_q.shape()[1];
  if (cnum < b) op_error("info_nce", "fewer candidates than rows in " + shape_str(score_q.shape()));
  const auto& sq = score_q.value();
  const auto& sp = score_p.value();
  T loss = T(0);
  for (int i = 0; i < b; ++i) {
    const size_t off = static_cast<size_t>(i) * cnum;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < cnum; ++j) {
      mx = std::max(mx, sq[off + j]);
      if (j != i) mx = std::max(mx, sp[off + j]);
    }
    T sum = T(0);
    for (int j = 0; j < cnum; ++j) {
      sum += std::exp(sq[off + j] - mx);
      if (j != i) sum += std::exp(sp[off + j] - mx);
    }
    loss += mx + std::log(sum) - sq[off + i];
  }
  loss /= static_cast<T>(b);
  const bool ng = g->node(score_q.id()).needs_grad || g->node(score_p.id()).needs_grad;
  Tensor<T> c = g->make({1}, {loss}, ng, "info_nce");
  if (ng) {
    const int iq = score_q.id(), ip = score_p.id(), ic = c.id();
    g->set_backprop(ic, [g, iq, ip, ic, b, cnum] {
      const T gv = g->node(ic).grad[0] / static_cast<T>(b);
      const auto& sq = g->node(iq).value;
      const auto& sp = g->node(ip).value;
      auto& gq = g->ensure_grad(iq);
      auto& gp = g->ensure_grad(ip);
      for (int i = 0; i < b; ++i) {
        const size_t off = static_cast<size_t>(i) * cnum;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < cnum; ++j) {
          mx = std::max(mx, sq[off + j]);
          if (j != i) mx = std::max(mx, sp[off + j]);
        }
        T sum = T(0);
        for (int j = 0; j < cnum; ++j) {
          sum += std::exp(sq[off + j] - mx);
          if (j != i) sum += std::exp(sp[off + j] - mx);
        }
        for (int j = 0; j < cnum; ++j) {
          gq[off + j] += gv * (std::exp(sq[off + j] - mx) / sum - (j == i ? T(1) : T(0)));
          if (j != i) gp[off + j] += gv * (std::exp(sp[off + j] - mx) / sum);
        }
      }
    });
  }
  return c;
}

/// Multiplies by a precomputed inverted-dropout mask (entries 0 or 1/(1-rate)).
template <typename T>
Tensor<T> dropout(Tensor<T> a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) op_error("dropout", "rate must be < 1");
  Graph<T>* g = a.graph();
  std::vector<T> mask(a.value().size());
  const T scale_keep = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& mv : mask) mv = rng.uniform() < rate ? T(0) : scale_keep;
  Tensor<T> m = g->constant(a.shape(), std::move(mask));
  return mul(a, m);
}

}  // namespace bret
