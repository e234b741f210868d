// Copyright 2026 The rangefield Authors
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

#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rangefield/ad/param.hpp"
#include "rangefield/common.hpp"
#include "rangefield/errors.hpp"

namespace rangefield::ad {

// Define-by-run reverse-mode tape over dense row-major matrices.
// Every node is a (rows x cols) array of S; scalars are (1 x 1).
// Nodes are appended in topological order, so walking the node list
// backwards is a valid reverse traversal. The graph is rebuilt each
// training step. Instantiated for float (training) and double
// (finite-difference verification).
template <class S>
class Tape;

template <class S>
class Value {
 public:
  Value() = default;
  Value(Tape<S>* tape, int node) : tape_(tape), node_(node) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<S>& tape() const { return *tape_; }
  int node() const { return node_; }

  int rows() const;
  int cols() const;
  int64_t size() const { return int64_t(rows()) * cols(); }
  std::span<S> data() const;
  std::span<S> grad() const;
  bool requires_grad() const;

  /// Scalar convenience accessor; the node must be (1 x 1).
  S item() const;

 private:
  Tape<S>* tape_ = nullptr;
  int node_ = -1;
};

template <class S>
class Tape {
 public:
  struct Node {
    int rows = 0, cols = 0;
    std::vector<S> storage;
    S* data = nullptr;
    std::vector<S> grad_storage;
    S* grad = nullptr;  // null unless requires_grad
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// When disabled, ops neither record backward closures nor allocate
  /// gradient buffers; used for rendering/evaluation passes.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  int size() const { return int(nodes_.size()); }
  Node& node(int i) { return nodes_[size_t(i)]; }
  const Node& node(int i) const { return nodes_[size_t(i)]; }

  /// Fresh node with owned, zero-initialized storage.
  Value<S> alloc(int rows, int cols, bool requires_grad) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.storage.assign(size_t(rows) * cols, S(0));
    n.data = n.storage.data();
    n.requires_grad = requires_grad && grad_enabled_;
    if (n.requires_grad) {
      n.grad_storage.assign(size_t(rows) * cols, S(0));
      n.grad = n.grad_storage.data();
    }
    nodes_.push_back(std::move(n));
    return Value<S>(this, size() - 1);
  }

  /// Non-trainable leaf holding a copy of the given data.
  Value<S> constant(int rows, int cols, std::span<const S> values) {
    Value<S> v = alloc(rows, cols, false);
    std::copy(values.begin(), values.end(), v.data().begin());
    return v;
  }

  Value<S> scalar(S x) {
    Value<S> v = alloc(1, 1, false);
    v.data()[0] = x;
    return v;
  }

  /// Trainable leaf viewing a Parameter's storage; backward accumulates
  /// straight into the parameter's persistent gradient buffer.
  Value<S> leaf(Parameter<S>& p) {
    Node n;
    n.rows = p.rows;
    n.cols = p.cols;
    n.data = p.data.data();
    n.requires_grad = grad_enabled_;
    if (n.requires_grad) n.grad = p.grad.data();
    nodes_.push_back(std::move(n));
    return Value<S>(this, size() - 1);
  }

  void set_backward(Value<S> v, std::function<void()> fn) {
    if (grad_enabled_) nodes_[size_t(v.node())].backward = std::move(fn);
  }

  /// Reverse pass from a scalar loss. A tape runs backward at most once;
  /// re-running without rebuilding the graph is rejected.
  void backward(Value<S> loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
      throw NonScalarLoss("backward requires a scalar loss, got (" +
                          std::to_string(loss.rows()) + "x" +
                          std::to_string(loss.cols()) + ")");
    if (backward_done_)
      throw NumericError("backward already ran on this tape; rebuild the graph");
    backward_done_ = true;
    if (!loss.requires_grad()) return;
    loss.grad()[0] = S(1);
    for (int i = loss.node(); i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (n.backward && n.requires_grad) n.backward();
    }
  }

  bool backward_done() const { return backward_done_; }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

 private:
  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

template <class S>
int Value<S>::rows() const {
  return tape_->node(node_).rows;
}
template <class S>
int Value<S>::cols() const {
  return tape_->node(node_).cols;
}
template <class S>
std::span<S> Value<S>::data() const {
  auto& n = tape_->node(node_);
  return {n.data, size_t(n.rows) * n.cols};
}
template <class S>
std::span<S> Value<S>::grad() const {
  auto& n = tape_->node(node_);
  return {n.grad, n.grad ? size_t(n.rows) * n.cols : 0};
}
template <class S>
bool Value<S>::requires_grad() const {
  return tape_->node(node_).requires_grad;
}
template <class S>
S Value<S>::item() const {
  auto& n = tape_->node(node_);
  if (n.rows != 1 || n.cols != 1)
    throw ShapeMismatch("item() on non-scalar (" + std::to_string(n.rows) +
                        "x" + std::to_string(n.cols) + ")");
  return n.data[0];
}

namespace detail {

inline std::string shape_str(int r, int c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

template <class S>
void require_same_tape(Value<S> a, Value<S> b) {
  if (&a.tape() != &b.tape())
    throw NumericError("operands live on different tapes");
}

enum class Broadcast { kNone, kRow, kScalar };

template <class S>
Broadcast broadcast_kind(Value<S> a, Value<S> b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::kNone;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
  throw ShapeMismatch(std::string(op) + ": " + shape_str(a.rows(), a.cols()) +
                      " vs " + shape_str(b.rows(), b.cols()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (b may broadcast as a scalar or a row vector)
// ---------------------------------------------------------------------------

template <class S>
Value<S> add(Value<S> a, Value<S> b) {
  detail::require_same_tape(a, b);
  auto kind = detail::broadcast_kind(a, b, "add");
  Tape<S>& t = a.tape();
  Value<S> out = t.alloc(a.rows(), a.cols(),
                         a.requires_grad() || b.requires_grad());
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  S* po = out.data().data();
  const int r = a.rows(), c = a.cols();
  if (kind == detail::Broadcast::kNone) {
    for (int64_t i = 0; i < int64_t(r) * c; ++i) po[i] = pa[i] + pb[i];
  } else if (kind == detail::Broadcast::kScalar) {
    const S s = pb[0];
    for (int64_t i = 0; i < int64_t(r) * c; ++i) po[i] = pa[i] + s;
  } else {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) po[int64_t(i) * c + j] = pa[int64_t(i) * c + j] + pb[j];
  }
  t.set_backward(out, [a, b, out, kind]() mutable {
    const S* g = out.grad().data();
    const int r = a.rows(), c = a.cols();
    if (a.requires_grad()) {
      S* ga = a.grad().data();
      for (int64_t i = 0; i < int64_t(r) * c; ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      S* gb = b.grad().data();
      if (kind == detail::Broadcast::kNone) {
        for (int64_t i = 0; i < int64_t(r) * c; ++i) gb[i] += g[i];
      } else if (kind == detail::Broadcast::kScalar) {
        S acc = 0;
        for (int64_t i = 0; i < int64_t(r) * c; ++i) acc += g[i];
        gb[0] += acc;
      } else {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gb[j] += g[int64_t(i) * c + j];
      }
    }
  });
  return out;
}

template <class S>
Value<S> sub(Value<S> a, Value<S> b) {
  detail::require_same_tape(a, b);
  auto kind = detail::broadcast_kind(a, b, "sub");
  Tape<S>& t = a.tape();
  Value<S> out = t.alloc(a.rows(), a.cols(),
                         a.requires_grad() || b.requires_grad());
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  S* po = out.data().data();
  const int r = a.rows(), c = a.cols();
  if (kind == detail::Broadcast::kNone) {
    for (int64_t i = 0; i < int64_t(r) * c; ++i) po[i] = pa[i] - pb[i];
  } else if (kind == detail::Broadcast::kScalar) {
    const S s = pb[0];
    for (int64_t i = 0; i < int64_t(r) * c; ++i) po[i] = pa[i] - s;
  } else {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) po[int64_t(i) * c + j] = pa[int64_t(i) * c + j] - pb[j];
  }
  t.set_backward(out, [a, b, out, kind]() mutable {
    const S* g = out.grad().data();
    const int r = a.rows(), c = a.cols();
    if (a.requires_grad()) {
      S* ga = a.grad().data();
      for (int64_t i = 0; i < int64_t(r) * c; ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      S* gb = b.grad().data();
      if (kind == detail::Broadcast::kNone) {
        for (int64_t i = 0; i < int64_t(r) * c; ++i) gb[i] -= g[i];
      } else if (kind == detail::Broadcast::kScalar) {
        S acc = 0;
        for (int64_t i = 0; i < int64_t(r) * c; ++i) acc += g[i];
        gb[0] -= acc;
      } else {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) gb[j] -= g[int64_t(i) * c + j];
      }
    }
  });
  return out;
}

template <class S>
Value<S> mul(Value<S> a, Value<S> b) {
  detail::require_same_tape(a, b);
  auto kind = detail::broadcast_kind(a, b, "mul");
  Tape<S>& t = a.tape();
  Value<S> out = t.alloc(a.rows(), a.cols(),
                         a.requires_grad() || b.requires_grad());
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  S* po = out.data().data();
  const int r = a.rows(), c = a.cols();
  if (kind == detail::Broadcast::kNone) {
    for (int64_t i = 0; i < int64_t(r) * c; ++i) po[i] = pa[i] * pb[i];
  } else if (kind == detail::Broadcast::kScalar) {
    const S s = pb[0];
    for (int64_t i = 0; i < int64_t(r) * c; ++i) po[i] = pa[i] * s;
  } else {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) po[int64_t(i) * c + j] = pa[int64_t(i) * c + j] * pb[j];
  }
  t.set_backward(out, [a, b, out, kind]() mutable {
    const S* g = out.grad().data();
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    const int r = a.rows(), c = a.cols();
    if (a.requires_grad()) {
      S* ga = a.grad().data();
      if (kind == detail::Broadcast::kNone) {
        for (int64_t i = 0; i < int64_t(r) * c; ++i) ga[i] += g[i] * pb[i];
      } else if (kind == detail::Broadcast::kScalar) {
        const S s = pb[0];
        for (int64_t i = 0; i < int64_t(r) * c; ++i) ga[i] += g[i] * s;
      } else {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            ga[int64_t(i) * c + j] += g[int64_t(i) * c + j] * pb[j];
      }
    }
    if (b.requires_grad()) {
      S* gb = b.grad().data();
      if (kind == detail::Broadcast::kNone) {
        for (int64_t i = 0; i < int64_t(r) * c; ++i) gb[i] += g[i] * pa[i];
      } else if (kind == detail::Broadcast::kScalar) {
        S acc = 0;
        for (int64_t i = 0; i < int64_t(r) * c; ++i) acc += g[i] * pa[i];
        gb[0] += acc;
      } else {
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j)
            gb[j] += g[int64_t(i) * c + j] * pa[int64_t(i) * c + j];
      }
    }
  });
  return out;
}

/// out = a * k for a compile-time-constant scalar k.
template <class S>
Value<S> scale(Value<S> a, S k) {
  Tape<S>& t = a.tape();
  Value<S> out = t.alloc(a.rows(), a.cols(), a.requires_grad());
  const S* pa = a.data().data();
  S* po = out.data().data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * k;
  t.set_backward(out, [a, out, k]() mutable {
    if (!a.requires_grad()) return;
    const S* g = out.grad().data();
    S* ga = a.grad().data();
    for (int64_t i = 0; i < a.size(); ++i) ga[i] += g[i] * k;
  });
  return out;
}

/// Elementwise product with a non-differentiable constant array.
template <class S>
Value<S> mul_const(Value<S> a, std::span<const S> k) {
  if (int64_t(k.size()) != a.size())
    throw ShapeMismatch("mul_const: constant size " + std::to_string(k.size()) +
                        " vs " + detail::shape_str(a.rows(), a.cols()));
  Tape<S>& t = a.tape();
  Value<S> out = t.alloc(a.rows(), a.cols(), a.requires_grad());
  const S* pa = a.data().data();
  S* po = out.data().data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * k[size_t(i)];
  std::vector<S> kept(k.begin(), k.end());
  t.set_backward(out, [a, out, kept = std::move(kept)]() mutable {
    if (!a.requires_grad()) return;
    const S* g = out.grad().data();
    S* ga = a.grad().data();
    for (int64_t i = 0; i < a.size(); ++i) ga[i] += g[i] * kept[size_t(i)];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

template <class S>
Value<S> matmul(Value<S> a, Value<S> b) {
  detail::require_same_tape(a, b);
  if (a.cols() != b.rows())
    throw ShapeMismatch("matmul: " + detail::shape_str(a.rows(), a.cols()) +
                        " vs " + detail::shape_str(b.rows(), b.cols()));
  Tape<S>& t = a.tape();
  const int r = a.rows(), k = a.cols(), c = b.cols();
  Value<S> out = t.alloc(r, c, a.requires_grad() || b.requires_grad());
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  S* po = out.data().data();
  parallel_for(r, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      S* crow = po + i * c;
      for (int kk = 0; kk < k; ++kk) {
        const S av = pa[i * k + kk];
        const S* brow = pb + int64_t(kk) * c;
        for (int j = 0; j < c; ++j) crow[j] += av * brow[j];
      }
    }
  });
  t.set_backward(out, [a, b, out]() mutable {
    const int r = a.rows(), k = a.cols(), c = b.cols();
    const S* g = out.grad().data();
    if (a.requires_grad()) {
      // dA = dC * B^T; transpose B once so the inner loop is contiguous.
      std::vector<S> bt(size_t(c) * k);
      const S* pb = b.data().data();
      for (int kk = 0; kk < k; ++kk)
        for (int j = 0; j < c; ++j) bt[size_t(j) * k + kk] = pb[int64_t(kk) * c + j];
      S* ga = a.grad().data();
      parallel_for(r, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
          S* garow = ga + i * k;
          for (int j = 0; j < c; ++j) {
            const S gv = g[i * c + j];
            const S* btrow = bt.data() + size_t(j) * k;
            for (int kk = 0; kk < k; ++kk) garow[kk] += gv * btrow[kk];
          }
        }
      });
    }
    if (b.requires_grad()) {
      const S* pa = a.data().data();
      S* gb = b.grad().data();
      for (int i = 0; i < r; ++i) {
        const S* grow = g + int64_t(i) * c;
        for (int kk = 0; kk < k; ++kk) {
          const S av = pa[int64_t(i) * k + kk];
          S* gbrow = gb + int64_t(kk) * c;
          for (int j = 0; j < c; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Unary ops
// ---------------------------------------------------------------------------

namespace detail {

template <class S, class Fwd, class MakeBwd>
Value<S> unary_op(Value<S> a, Fwd fwd, MakeBwd make_bwd) {
  Tape<S>& t = a.tape();
  Value<S> out = t.alloc(a.rows(), a.cols(), a.requires_grad());
  const S* pa = a.data().data();
  S* po = out.data().data();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = fwd(pa[i]);
  t.set_backward(out, make_bwd(a, out));
  return out;
}

}  // namespace detail

template <class S>
Value<S> neg(Value<S> a) {
  return detail::unary_op(
      a, [](S x) { return -x; },
      [](Value<S> a, Value<S> out) {
        return [a, out]() mutable {
          if (!a.requires_grad()) return;
          const S* g = out.grad().data();
          S* ga = a.grad().data();
          for (int64_t i = 0; i < a.size(); ++i) ga[i] -= g[i];
        };
      });
}

template <class S>
Value<S> vexp(Value<S> a) {
  return detail::unary_op(
      a, [](S x) { return std::exp(x); },
      [](Value<S> a, Value<S> out) {
        return [a, out]() mutable {
          if (!a.requires_grad()) return;
          const S* g = out.grad().data();
          const S* y = out.data().data();
          S* ga = a.grad().data();
          for (int64_t i = 0; i < a.size(); ++i) ga[i] += g[i] * y[i];
        };
      });
}

template <class S>
Value<S> vlog(Value<S> a) {
  return detail::unary_op(
      a, [](S x) { return std::log(x); },
      [](Value<S> a, Value<S> out) {
        return [a, out]() mutable {
          if (!a.requires_grad()) return;
          const S* g = out.grad().data();
          const S* x = a.data().data();
          S* ga = a.grad().data();
          for (int64_t i = 0; i < a.size(); ++i) ga[i] += g[i] / x[i];
        };
      });
}

template <class S>
Value<S> vsin(Value<S> a) {
  return detail::unary_op(
      a, [](S x) { return std::sin(x); },
      [](Value<S> a, Value<S> out) {
        return [a, out]() mutable {
          if (!a.requires_grad()) return;
          const S* g = out.grad().data();
          const S* x = a.data().data();
          S* ga = a.grad().data();
          for (int64_t i = 0; i < a.size(); ++i) ga[i] += g[i] * std::cos(x[i]);
        };
      });
}

template <class S>
Value<S> vcos(Value<S> a) {
  return detail::unary_op(
      a, [](S x) { return std::cos(x); },
      [](Value<S> a, Value<S> out) {
        return [a, out]() mutable {
          if (!a.requires_grad()) return;
          const S* g = out.grad().data();
          const S* x = a.data().data();
          S* ga = a.grad().data();
          for (int64_t i = 0; i < a.size(); ++i) ga[i] -= g[i] * std::sin(x[i]);
        };
      });
}

template <class S>
Value<S> relu(Value<S> a) {
  return detail::unary_op(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](Value<S> a, Value<S> out) {
        return [a, out]() mutable {
          if (!a.requires_grad()) return;
          const S* g = out.grad().data();
          const S* x = a.data().data();
          S* ga = a.grad().data();
          for (int64_t i = 0; i < a.size(); ++i)
            if (x[i] > S(0)) ga[i] += g[i];
        };
      });
}

/// hardswish(x) = x * clamp(x + 3, 0, 6) / 6
template <class S>
Value<S> hardswish(Value<S> a) {
  return detail::unary_op(
      a,
      [](S x) {
        S inner = x + S(3);
        if (inner < S(0)) inner = S(0);
        if (inner > S(6)) inner = S(6);
        return x * inner / S(6);
      },
      [](Value<S> a, Value<S> out) {
        return [a, out]() mutable {
          if (!a.requires_grad()) return;
          const S* g = out.grad().data();
          const S* x = a.data().data();
          S* ga = a.grad().data();
          for (int64_t i = 0; i < a.size(); ++i) {
            S d;
            if (x[i] <= S(-3))
              d = S(0);
            else if (x[i] >= S(3))
              d = S(1);
            else
              d = (S(2) * x[i] + S(3)) / S(6);
            ga[i] += g[i] * d;
          }
        };
      });
}

template <class S>
Value<S> sigmoid(Value<S> a) {
  return detail::unary_op(
      a,
      [](S x) {
        return x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                         : std::exp(x) / (S(1) + std::exp(x));
      },
      [](Value<S> a, Value<S> out) {
        return [a, out]() mutable {
          if (!a.requires_grad()) return;
          const S* g = out.grad().data();
          const S* y = out.data().data();
          S* ga = a.grad().data();
          for (int64_t i = 0; i < a.size(); ++i)
            ga[i] += g[i] * y[i] * (S(1) - y[i]);
        };
      });
}

template <class S>
Value<S> softplus(Value<S> a) {
  return detail::unary_op(
      a,
      [](S x) {
        // log(1 + e^x), overflow-safe on both tails.
        if (x > S(20)) return x;
        if (x < S(-20)) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](Value<S> a, Value<S> out) {
        return [a, out]() mutable {
          if (!a.requires_grad()) return;
          const S* g = out.grad().data();
          const S* x = a.data().data();
          S* ga = a.grad().data();
          for (int64_t i = 0; i < a.size(); ++i) {
            const S sig = x[i] >= S(0)
                              ? S(1) / (S(1) + std::exp(-x[i]))
                              : std::exp(x[i]) / (S(1) + std::exp(x[i]));
            ga[i] += g[i] * sig;
          }
        };
      });
}

template <class S>
Value<S> vabs(Value<S> a) {
  return detail::unary_op(
      a, [](S x) { return std::abs(x); },
      [](Value<S> a, Value<S> out) {
        return [a, out]() mutable {
          if (!a.requires_grad()) return;
          const S* g = out.grad().data();
          const S* x = a.data().data();
          S* ga = a.grad().data();
          // Subgradient 0 at the kink.
          for (int64_t i = 0; i < a.size(); ++i)
            ga[i] += x[i] > S(0) ? g[i] : (x[i] < S(0) ? -g[i] : S(0));
        };
      });
}

// ---------------------------------------------------------------------------
// Row-wise softmax family
// ---------------------------------------------------------------------------

template <class S>
Value<S> softmax(Value<S> a) {
  Tape<S>& t = a.tape();
  const int r = a.rows(), c = a.cols();
  Value<S> out = t.alloc(r, c, a.requires_grad());
  const S* pa = a.data().data();
  S* po = out.data().data();
  for (int i = 0; i < r; ++i) {
    const S* row = pa + int64_t(i) * c;
    S* orow = po + int64_t(i) * c;
    S m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    S sum = 0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - m);
      sum += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= sum;
  }
  t.set_backward(out, [a, out]() mutable {
    if (!a.requires_grad()) return;
    const int r = a.rows(), c = a.cols();
    const S* g = out.grad().data();
    const S* y = out.data().data();
    S* ga = a.grad().data();
    for (int i = 0; i < r; ++i) {
      const S* grow = g + int64_t(i) * c;
      const S* yrow = y + int64_t(i) * c;
      S dot = 0;
      for (int j = 0; j < c; ++j) dot += grow[j] * yrow[j];
      S* garow = ga + int64_t(i) * c;
      for (int j = 0; j < c; ++j) garow[j] += yrow[j] * (grow[j] - dot);
    }
  });
  return out;
}

template <class S>
Value<S> log_softmax(Value<S> a) {
  Tape<S>& t = a.tape();
  const int r = a.rows(), c = a.cols();
  Value<S> out = t.alloc(r, c, a.requires_grad());
  const S* pa = a.data().data();
  S* po = out.data().data();
  for (int i = 0; i < r; ++i) {
    const S* row = pa + int64_t(i) * c;
    S* orow = po + int64_t(i) * c;
    S m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    S sum = 0;
    for (int j = 0; j < c; ++j) sum += std::exp(row[j] - m);
    const S lse = m + std::log(sum);
    for (int j = 0; j < c; ++j) orow[j] = row[j] - lse;
  }
  t.set_backward(out, [a, out]() mutable {
    if (!a.requires_grad()) return;
    const int r = a.rows(), c = a.cols();
    const S* g = out.grad().data();
    const S* y = out.data().data();
    S* ga = a.grad().data();
    for (int i = 0; i < r; ++i) {
      const S* grow = g + int64_t(i) * c;
      const S* yrow = y + int64_t(i) * c;
      S gsum = 0;
      for (int j = 0; j < c; ++j) gsum += grow[j];
      S* garow = ga + int64_t(i) * c;
      for (int j = 0; j < c; ++j)
        garow[j] += grow[j] - std::exp(yrow[j]) * gsum;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and reshaping
// ---------------------------------------------------------------------------

template <class S>
Value<S> sum(Value<S> a) {
  Tape<S>& t = a.tape();
  Value<S> out = t.alloc(1, 1, a.requires_grad());
  const S* pa = a.data().data();
  S acc = 0;
  for (int64_t i = 0; i < a.size(); ++i) acc += pa[i];
  out.data()[0] = acc;
  t.set_backward(out, [a, out]() mutable {
    if (!a.requires_grad()) return;
    const S g = out.grad()[0];
    S* ga = a.grad().data();
    for (int64_t i = 0; i < a.size(); ++i) ga[i] += g;
  });
  return out;
}

template <class S>
Value<S> mean(Value<S> a) {
  return scale(sum(a), S(1) / S(a.size()));
}

template <class S>
Value<S> concat_cols(std::span<const Value<S>> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no operands");
  Tape<S>& t = parts[0].tape();
  const int r = parts[0].rows();
  int c = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rows() != r)
      throw ShapeMismatch("concat_cols: row mismatch " +
                          detail::shape_str(r, parts[0].cols()) + " vs " +
                          detail::shape_str(p.rows(), p.cols()));
    c += p.cols();
    rg = rg || p.requires_grad();
  }
  Value<S> out = t.alloc(r, c, rg);
  S* po = out.data().data();
  int off = 0;
  for (const auto& p : parts) {
    const S* pp = p.data().data();
    const int pc = p.cols();
    for (int i = 0; i < r; ++i)
      std::memcpy(po + int64_t(i) * c + off, pp + int64_t(i) * pc,
                  size_t(pc) * sizeof(S));
    off += pc;
  }
  std::vector<Value<S>> kept(parts.begin(), parts.end());
  t.set_backward(out, [kept = std::move(kept), out, r, c]() mutable {
    const S* g = out.grad().data();
    int off = 0;
    for (auto& p : kept) {
      const int pc = p.cols();
      if (p.requires_grad()) {
        S* gp = p.grad().data();
        for (int i = 0; i < r; ++i) {
          const S* gsrc = g + int64_t(i) * c + off;
          S* gdst = gp + int64_t(i) * pc;
          for (int j = 0; j < pc; ++j) gdst[j] += gsrc[j];
        }
      }
      off += pc;
    }
  });
  return out;
}

template <class S>
Value<S> concat_cols(std::initializer_list<Value<S>> parts) {
  std::vector<Value<S>> v(parts);
  return concat_cols(std::span<const Value<S>>(v));
}

template <class S>
Value<S> concat_rows(std::span<const Value<S>> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no operands");
  Tape<S>& t = parts[0].tape();
  const int c = parts[0].cols();
  int r = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.cols() != c)
      throw ShapeMismatch("concat_rows: col mismatch " +
                          detail::shape_str(parts[0].rows(), c) + " vs " +
                          detail::shape_str(p.rows(), p.cols()));
    r += p.rows();
    rg = rg || p.requires_grad();
  }
  Value<S> out = t.alloc(r, c, rg);
  S* po = out.data().data();
  int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(po + off, p.data().data(), size_t(p.size()) * sizeof(S));
    off += p.size();
  }
  std::vector<Value<S>> kept(parts.begin(), parts.end());
  t.set_backward(out, [kept = std::move(kept), out]() mutable {
    const S* g = out.grad().data();
    int64_t off = 0;
    for (auto& p : kept) {
      if (p.requires_grad()) {
        S* gp = p.grad().data();
        for (int64_t i = 0; i < p.size(); ++i) gp[i] += g[off + i];
      }
      off += p.size();
    }
  });
  return out;
}

template <class S>
Value<S> slice_cols(Value<S> a, int c0, int c1) {
  if (c0 < 0 || c1 > a.cols() || c0 >= c1)
    throw ShapeMismatch("slice_cols [" + std::to_string(c0) + "," +
                        std::to_string(c1) + ") of " +
                        detail::shape_str(a.rows(), a.cols()));
  Tape<S>& t = a.tape();
  const int r = a.rows(), c = a.cols(), w = c1 - c0;
  Value<S> out = t.alloc(r, w, a.requires_grad());
  const S* pa = a.data().data();
  S* po = out.data().data();
  for (int i = 0; i < r; ++i)
    std::memcpy(po + int64_t(i) * w, pa + int64_t(i) * c + c0,
                size_t(w) * sizeof(S));
  t.set_backward(out, [a, out, c0, w]() mutable {
    if (!a.requires_grad()) return;
    const int r = a.rows(), c = a.cols();
    const S* g = out.grad().data();
    S* ga = a.grad().data();
    for (int i = 0; i < r; ++i) {
      const S* gsrc = g + int64_t(i) * w;
      S* gdst = ga + int64_t(i) * c + c0;
      for (int j = 0; j < w; ++j) gdst[j] += gsrc[j];
    }
  });
  return out;
}

/// out[i, :] = a[idx[i], :]
template <class S>
Value<S> gather_rows(Value<S> a, std::span<const int> idx) {
  Tape<S>& t = a.tape();
  const int c = a.cols();
  const int m = int(idx.size());
  Value<S> out = t.alloc(m, c, a.requires_grad());
  const S* pa = a.data().data();
  S* po = out.data().data();
  for (int i = 0; i < m; ++i)
    std::memcpy(po + int64_t(i) * c, pa + int64_t(idx[size_t(i)]) * c,
                size_t(c) * sizeof(S));
  std::vector<int> kept(idx.begin(), idx.end());
  t.set_backward(out, [a, out, kept = std::move(kept)]() mutable {
    if (!a.requires_grad()) return;
    const int c = a.cols();
    const S* g = out.grad().data();
    S* ga = a.grad().data();
    for (size_t i = 0; i < kept.size(); ++i) {
      const S* gsrc = g + int64_t(i) * c;
      S* gdst = ga + int64_t(kept[i]) * c;
      for (int j = 0; j < c; ++j) gdst[j] += gsrc[j];
    }
  });
  return out;
}

/// Each row of a repeated `times` consecutive times.
template <class S>
Value<S> repeat_rows(Value<S> a, int times) {
  Tape<S>& t = a.tape();
  const int r = a.rows(), c = a.cols();
  Value<S> out = t.alloc(r * times, c, a.requires_grad());
  const S* pa = a.data().data();
  S* po = out.data().data();
  for (int i = 0; i < r; ++i)
    for (int k = 0; k < times; ++k)
      std::memcpy(po + (int64_t(i) * times + k) * c, pa + int64_t(i) * c,
                  size_t(c) * sizeof(S));
  t.set_backward(out, [a, out, times]() mutable {
    if (!a.requires_grad()) return;
    const int r = a.rows(), c = a.cols();
    const S* g = out.grad().data();
    S* ga = a.grad().data();
    for (int i = 0; i < r; ++i)
      for (int k = 0; k < times; ++k) {
        const S* gsrc = g + (int64_t(i) * times + k) * c;
        S* gdst = ga + int64_t(i) * c;
        for (int j = 0; j < c; ++j) gdst[j] += gsrc[j];
      }
  });
  return out;
}

/// Sums each consecutive block of seg_len rows: (n_seg*seg_len x c) -> (n_seg x c).
template <class S>
Value<S> segment_sum(Value<S> a, int n_seg, int seg_len) {
  if (a.rows() != n_seg * seg_len)
    throw ShapeMismatch("segment_sum: " + detail::shape_str(a.rows(), a.cols()) +
                        " vs " + std::to_string(n_seg) + " segments of " +
                        std::to_string(seg_len));
  Tape<S>& t = a.tape();
  const int c = a.cols();
  Value<S> out = t.alloc(n_seg, c, a.requires_grad());
  const S* pa = a.data().data();
  S* po = out.data().data();
  for (int s = 0; s < n_seg; ++s) {
    S* orow = po + int64_t(s) * c;
    for (int k = 0; k < seg_len; ++k) {
      const S* row = pa + (int64_t(s) * seg_len + k) * c;
      for (int j = 0; j < c; ++j) orow[j] += row[j];
    }
  }
  t.set_backward(out, [a, out, n_seg, seg_len]() mutable {
    if (!a.requires_grad()) return;
    const int c = a.cols();
    const S* g = out.grad().data();
    S* ga = a.grad().data();
    for (int s = 0; s < n_seg; ++s) {
      const S* grow = g + int64_t(s) * c;
      for (int k = 0; k < seg_len; ++k) {
        S* garow = ga + (int64_t(s) * seg_len + k) * c;
        for (int j = 0; j < c; ++j) garow[j] += grow[j];
      }
    }
  });
  return out;
}

/// out[i, j] = a[i, j] * s[i]; both operands differentiable.
template <class S>
Value<S> scale_rows(Value<S> a, Value<S> s) {
  detail::require_same_tape(a, s);
  if (s.rows() != a.rows() || s.cols() != 1)
    throw ShapeMismatch("scale_rows: " + detail::shape_str(a.rows(), a.cols()) +
                        " vs " + detail::shape_str(s.rows(), s.cols()));
  Tape<S>& t = a.tape();
  const int r = a.rows(), c = a.cols();
  Value<S> out = t.alloc(r, c, a.requires_grad() || s.requires_grad());
  const S* pa = a.data().data();
  const S* ps = s.data().data();
  S* po = out.data().data();
  for (int i = 0; i < r; ++i) {
    const S sv = ps[i];
    for (int j = 0; j < c; ++j) po[int64_t(i) * c + j] = pa[int64_t(i) * c + j] * sv;
  }
  t.set_backward(out, [a, s, out]() mutable {
    const int r = a.rows(), c = a.cols();
    const S* g = out.grad().data();
    const S* pa = a.data().data();
    const S* ps = s.data().data();
    if (a.requires_grad()) {
      S* ga = a.grad().data();
      for (int i = 0; i < r; ++i) {
        const S sv = ps[i];
        for (int j = 0; j < c; ++j)
          ga[int64_t(i) * c + j] += g[int64_t(i) * c + j] * sv;
      }
    }
    if (s.requires_grad()) {
      S* gs = s.grad().data();
      for (int i = 0; i < r; ++i) {
        S acc = 0;
        for (int j = 0; j < c; ++j)
          acc += g[int64_t(i) * c + j] * pa[int64_t(i) * c + j];
        gs[i] += acc;
      }
    }
  });
  return out;
}

/// out[i] = a[i, idx[i]] for per-row class picks.
template <class S>
Value<S> select_col(Value<S> a, std::span<const int> idx) {
  if (int(idx.size()) != a.rows())
    throw ShapeMismatch("select_col: " + std::to_string(idx.size()) +
                        " indices vs " + detail::shape_str(a.rows(), a.cols()));
  Tape<S>& t = a.tape();
  const int r = a.rows(), c = a.cols();
  Value<S> out = t.alloc(r, 1, a.requires_grad());
  const S* pa = a.data().data();
  S* po = out.data().data();
  for (int i = 0; i < r; ++i) po[i] = pa[int64_t(i) * c + idx[size_t(i)]];
  std::vector<int> kept(idx.begin(), idx.end());
  t.set_backward(out, [a, out, kept = std::move(kept)]() mutable {
    if (!a.requires_grad()) return;
    const int c = a.cols();
    const S* g = out.grad().data();
    S* ga = a.grad().data();
    for (size_t i = 0; i < kept.size(); ++i)
      ga[int64_t(i) * c + kept[i]] += g[i];
  });
  return out;
}

}  // namespace rangefield::ad
