#pragma once

// Reverse-mode differentiation over dense tensors. A Tape records every
// primitive application in creation order (which is already topological);
// backward() replays that order reversed. Tapes are single-writer; Values
// are cheap handles {tape, node id}.
//
// Every forward primitive verifies its output is finite and throws
// numeric_error otherwise. Clamp-style primitives define a zero gradient
// outside the open interior so that downstream arccos/arccosh/asin domain
// guards never leak infinities into parameter gradients.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lnn/common.hpp"
#include "lnn/tensor.hpp"

namespace lnn {

template <typename T>
class Tape;

template <typename T>
struct Value {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& val() const { return tape->val(id); }
  const Shape& shape() const { return val().shape(); }
  std::size_t size() const { return val().size(); }
};

template <typename T>
class Tape {
 public:
  Value<T> leaf(Tensor<T> v, bool requires_grad) {
    check_finite(v, "leaf");
    nodes_.push_back(Node{std::move(v), Tensor<T>{}, nullptr, requires_grad});
    return Value<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Value<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }
  Value<T> constant_scalar(T v) { return leaf(Tensor<T>::scalar(v), false); }

  const Tensor<T>& val(std::uint32_t id) const { return nodes_[id].value; }

  // Gradient of the last backward() w.r.t. node `id`; zeros if untouched.
  Tensor<T> grad(const Value<T>& v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor<T>(n.value.shape(), T(0));
    return n.grad;
  }

  void backward(const Value<T>& loss) {
    if (loss.tape != this) throw usage_error("loss recorded on a different tape");
    if (nodes_[loss.id].value.size() != 1)
      throw usage_error("backward requires a scalar loss, got " +
                        shape_str(nodes_[loss.id].value.shape()));
    for (Node& n : nodes_) n.grad = Tensor<T>{};
    grad_ref(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.requires_grad && !n.grad.empty()) n.backward(*this, n.grad);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

  // ---- primitive recording (used by the free functions below) ----

  using BackFn = std::function<void(Tape&, const Tensor<T>&)>;

  Value<T> record(Tensor<T> out, bool requires_grad, BackFn back, const char* op) {
    check_finite(out, op);
    nodes_.push_back(Node{std::move(out), Tensor<T>{},
                          requires_grad ? std::move(back) : BackFn{}, requires_grad});
    return Value<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  bool needs_grad(const Value<T>& v) const { return nodes_[v.id].requires_grad; }

  Tensor<T>& grad_ref(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape(), T(0));
    return n.grad;
  }

  void accumulate(std::uint32_t id, std::size_t offset, T g) {
    if (!nodes_[id].requires_grad) return;
    grad_ref(id)[offset] += g;
  }

  static void check_finite(const Tensor<T>& t, const char* op) {
    for (std::size_t i = 0; i < t.size(); ++i)
      if (!std::isfinite(static_cast<double>(t[i])))
        throw numeric_error(std::string(op) + " produced a non-finite value");
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise unary primitives
// ---------------------------------------------------------------------------

template <typename T, typename FwdF, typename DerF>
Value<T> unary_op(Value<T> x, const char* name, FwdF f, DerF df) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x.id);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const bool rq = tp.needs_grad(x);
  return tp.record(std::move(out), rq,
                   [xid = x.id, df](Tape<T>& t, const Tensor<T>& up) {
                     const Tensor<T>& xv = t.val(xid);
                     for (std::size_t i = 0; i < up.size(); ++i)
                       t.accumulate(xid, i, up[i] * df(xv[i]));
                   },
                   name);
}

template <typename T> Value<T> neg(Value<T> x) {
  return unary_op(x, "neg", [](T v) { return -v; }, [](T) { return T(-1); });
}
template <typename T> Value<T> square(Value<T> x) {
  return unary_op(x, "square", [](T v) { return v * v; }, [](T v) { return T(2) * v; });
}
template <typename T> Value<T> sqrt_v(Value<T> x) {
  return unary_op(x, "sqrt", [](T v) { return std::sqrt(v); },
                  [](T v) { return T(0.5) / std::sqrt(v); });
}
template <typename T> Value<T> exp_v(Value<T> x) {
  return unary_op(x, "exp", [](T v) { return std::exp(v); }, [](T v) { return std::exp(v); });
}
template <typename T> Value<T> log_v(Value<T> x) {
  return unary_op(x, "log", [](T v) { return std::log(v); }, [](T v) { return T(1) / v; });
}
template <typename T> Value<T> abs_v(Value<T> x) {
  return unary_op(x, "abs", [](T v) { return std::abs(v); },
                  [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}
// Piecewise constant: gradient defined as zero everywhere.
template <typename T> Value<T> sign_v(Value<T> x) {
  return unary_op(x, "sign", [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); },
                  [](T) { return T(0); });
}
template <typename T> Value<T> recip(Value<T> x) {
  return unary_op(x, "recip", [](T v) { return T(1) / v; },
                  [](T v) { return T(-1) / (v * v); });
}
template <typename T> Value<T> tanh_v(Value<T> x) {
  return unary_op(x, "tanh", [](T v) { return std::tanh(v); },
                  [](T v) { const T th = std::tanh(v); return T(1) - th * th; });
}
template <typename T> Value<T> asin_v(Value<T> x) {
  return unary_op(x, "asin", [](T v) { return std::asin(v); },
                  [](T v) { return T(1) / std::sqrt(T(1) - v * v); });
}
template <typename T> Value<T> acos_v(Value<T> x) {
  return unary_op(x, "acos", [](T v) { return std::acos(v); },
                  [](T v) { return T(-1) / std::sqrt(T(1) - v * v); });
}
template <typename T> Value<T> asinh_v(Value<T> x) {
  return unary_op(x, "asinh", [](T v) { return std::asinh(v); },
                  [](T v) { return T(1) / std::sqrt(T(1) + v * v); });
}
template <typename T> Value<T> acosh_v(Value<T> x) {
  return unary_op(x, "acosh", [](T v) { return std::acosh(v); },
                  [](T v) { return T(1) / std::sqrt(v * v - T(1)); });
}
template <typename T> Value<T> gelu(Value<T> x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return unary_op(x, "gelu",
                  [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
                  [=](T v) {
                    return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) +
                           v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
                  });
}
template <typename T> Value<T> softplus(Value<T> x) {
  return unary_op(x, "softplus",
                  [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
                  [](T v) { return T(1) / (T(1) + std::exp(-v)); });
}

// min(max(x, lo), hi); gradient passes only on the open interior. The
// backward selects rather than multiplies, so an infinite derivative from a
// following domain-edge function never reaches the inputs.
template <typename T>
Value<T> clamp(Value<T> x, T lo, T hi) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x.id);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::min(std::max(xv[i], lo), hi);
  return tp.record(std::move(out), tp.needs_grad(x),
                   [xid = x.id, lo, hi](Tape<T>& t, const Tensor<T>& up) {
                     const Tensor<T>& xv = t.val(xid);
                     for (std::size_t i = 0; i < up.size(); ++i)
                       if (xv[i] > lo && xv[i] < hi) t.accumulate(xid, i, up[i]);
                   },
                   "clamp");
}
template <typename T> Value<T> clamp_min(Value<T> x, T lo) {
  return clamp(x, lo, std::numeric_limits<T>::infinity());
}
template <typename T> Value<T> clamp_max(Value<T> x, T hi) {
  return clamp(x, -std::numeric_limits<T>::infinity(), hi);
}
template <typename T> Value<T> relu(Value<T> x) { return clamp_min(x, T(0)); }

// Constant affine a*x + b.
template <typename T>
Value<T> affine(Value<T> x, T a, T b) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x.id);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = a * xv[i] + b;
  return tp.record(std::move(out), tp.needs_grad(x),
                   [xid = x.id, a](Tape<T>& t, const Tensor<T>& up) {
                     for (std::size_t i = 0; i < up.size(); ++i) t.accumulate(xid, i, a * up[i]);
                   },
                   "affine");
}
template <typename T> Value<T> scale(Value<T> x, T a) { return affine(x, a, T(0)); }
template <typename T> Value<T> shift(Value<T> x, T b) { return affine(x, T(1), b); }

// Value copy that blocks gradient flow.
template <typename T>
Value<T> detach(Value<T> x) {
  return x.tape->leaf(x.tape->val(x.id), false);
}

// ---------------------------------------------------------------------------
// Elementwise binary primitives with suffix broadcasting
// ---------------------------------------------------------------------------

enum class BinOp { Add, Sub, Mul, Div };

template <typename T>
Value<T> binary_op(Value<T> a, Value<T> b, BinOp op) {
  if (a.tape != b.tape) throw usage_error("operands recorded on different tapes");
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = tp.val(a.id);
  const Tensor<T>& bv = tp.val(b.id);

  const bool a_big = av.size() >= bv.size();
  const Tensor<T>& big = a_big ? av : bv;
  const Tensor<T>& small = a_big ? bv : av;
  const bool scalar_small = small.size() == 1;
  if (!scalar_small && !broadcast_as_suffix(big.shape(), small.shape()))
    throw dim_error("cannot broadcast " + shape_str(av.shape()) + " with " +
                    shape_str(bv.shape()));

  const std::size_t m = small.size();
  Tensor<T> out(big.shape());
  for (std::size_t i = 0; i < big.size(); ++i) {
    const T x = a_big ? av[i] : av[i % m];
    const T y = a_big ? bv[i % m] : bv[i];
    switch (op) {
      case BinOp::Add: out[i] = x + y; break;
      case BinOp::Sub: out[i] = x - y; break;
      case BinOp::Mul: out[i] = x * y; break;
      case BinOp::Div: out[i] = x / y; break;
    }
  }
  const bool rq = tp.needs_grad(a) || tp.needs_grad(b);
  const char* name = op == BinOp::Add ? "add" : op == BinOp::Sub ? "sub"
                     : op == BinOp::Mul ? "mul" : "div";
  return tp.record(
      std::move(out), rq,
      [aid = a.id, bid = b.id, a_big, m, op](Tape<T>& t, const Tensor<T>& up) {
        const Tensor<T>& av = t.val(aid);
        const Tensor<T>& bv = t.val(bid);
        for (std::size_t i = 0; i < up.size(); ++i) {
          const std::size_t ia = a_big ? i : i % m;
          const std::size_t ib = a_big ? i % m : i;
          const T x = av[ia];
          const T y = bv[ib];
          T ga = 0, gb = 0;
          switch (op) {
            case BinOp::Add: ga = up[i]; gb = up[i]; break;
            case BinOp::Sub: ga = up[i]; gb = -up[i]; break;
            case BinOp::Mul: ga = up[i] * y; gb = up[i] * x; break;
            case BinOp::Div: ga = up[i] / y; gb = -up[i] * x / (y * y); break;
          }
          t.accumulate(aid, ia, ga);
          t.accumulate(bid, ib, gb);
        }
      },
      name);
}

template <typename T> Value<T> add(Value<T> a, Value<T> b) { return binary_op(a, b, BinOp::Add); }
template <typename T> Value<T> sub(Value<T> a, Value<T> b) { return binary_op(a, b, BinOp::Sub); }
template <typename T> Value<T> mul(Value<T> a, Value<T> b) { return binary_op(a, b, BinOp::Mul); }
template <typename T> Value<T> div(Value<T> a, Value<T> b) { return binary_op(a, b, BinOp::Div); }

template <typename T> Value<T> operator+(Value<T> a, Value<T> b) { return add(a, b); }
template <typename T> Value<T> operator-(Value<T> a, Value<T> b) { return sub(a, b); }
template <typename T> Value<T> operator*(Value<T> a, Value<T> b) { return mul(a, b); }
template <typename T> Value<T> operator/(Value<T> a, Value<T> b) { return div(a, b); }

// ---------------------------------------------------------------------------
// Row-wise binary: x viewed as [rows x cols], v of length rows
// ---------------------------------------------------------------------------

template <typename T>
Value<T> rows_op(Value<T> x, Value<T> v, BinOp op) {
  if (x.tape != v.tape) throw usage_error("operands recorded on different tapes");
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x.id);
  const Tensor<T>& vv = tp.val(v.id);
  const std::size_t rows = xv.lead(), cols = xv.last();
  if (vv.size() != rows)
    throw dim_error("row vector length " + std::to_string(vv.size()) + " vs rows " +
                    std::to_string(rows));
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const T a = xv[r * cols + c], b = vv[r];
      switch (op) {
        case BinOp::Add: out[r * cols + c] = a + b; break;
        case BinOp::Sub: out[r * cols + c] = a - b; break;
        case BinOp::Mul: out[r * cols + c] = a * b; break;
        case BinOp::Div: out[r * cols + c] = a / b; break;
      }
    }
  const bool rq = tp.needs_grad(x) || tp.needs_grad(v);
  return tp.record(
      std::move(out), rq,
      [xid = x.id, vid = v.id, rows, cols, op](Tape<T>& t, const Tensor<T>& up) {
        const Tensor<T>& xv = t.val(xid);
        const Tensor<T>& vv = t.val(vid);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            switch (op) {
              case BinOp::Add:
                t.accumulate(xid, i, up[i]);
                t.accumulate(vid, r, up[i]);
                break;
              case BinOp::Sub:
                t.accumulate(xid, i, up[i]);
                t.accumulate(vid, r, -up[i]);
                break;
              case BinOp::Mul:
                t.accumulate(xid, i, up[i] * vv[r]);
                t.accumulate(vid, r, up[i] * xv[i]);
                break;
              case BinOp::Div:
                t.accumulate(xid, i, up[i] / vv[r]);
                t.accumulate(vid, r, -up[i] * xv[i] / (vv[r] * vv[r]));
                break;
            }
          }
      },
      "rows_op");
}

template <typename T> Value<T> add_rows(Value<T> x, Value<T> v) { return rows_op(x, v, BinOp::Add); }
template <typename T> Value<T> sub_rows(Value<T> x, Value<T> v) { return rows_op(x, v, BinOp::Sub); }
template <typename T> Value<T> mul_rows(Value<T> x, Value<T> v) { return rows_op(x, v, BinOp::Mul); }
template <typename T> Value<T> div_rows(Value<T> x, Value<T> v) { return rows_op(x, v, BinOp::Div); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Value<T> row_sum(Value<T> x) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x.id);
  const std::size_t rows = xv.lead(), cols = xv.last();
  Shape os(xv.shape().begin(), xv.shape().end() - 1);
  if (os.empty()) os = {1};
  Tensor<T> out(os, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += xv[r * cols + c];
    out[r] = s;
  }
  return tp.record(std::move(out), tp.needs_grad(x),
                   [xid = x.id, rows, cols](Tape<T>& t, const Tensor<T>& up) {
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < cols; ++c)
                         t.accumulate(xid, r * cols + c, up[r]);
                   },
                   "row_sum");
}

template <typename T>
Value<T> row_mean(Value<T> x) {
  const std::size_t cols = x.val().last();
  return scale(row_sum(x), T(1) / static_cast<T>(cols));
}

// Per-row maximum. Gradient routes to the first attaining entry; in this
// codebase row_max feeds detached log-sum-exp shifts, so the route is moot.
template <typename T>
Value<T> row_max(Value<T> x) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x.id);
  const std::size_t rows = xv.lead(), cols = xv.last();
  Shape os(xv.shape().begin(), xv.shape().end() - 1);
  if (os.empty()) os = {1};
  Tensor<T> out(os, T(0));
  std::vector<std::size_t> arg(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    T best = xv[r * cols];
    for (std::size_t c = 1; c < cols; ++c)
      if (xv[r * cols + c] > best) { best = xv[r * cols + c]; arg[r] = c; }
    out[r] = best;
  }
  return tp.record(std::move(out), tp.needs_grad(x),
                   [xid = x.id, cols, arg = std::move(arg)](Tape<T>& t, const Tensor<T>& up) {
                     for (std::size_t r = 0; r < up.size(); ++r)
                       t.accumulate(xid, r * cols + arg[r], up[r]);
                   },
                   "row_max");
}

template <typename T>
Value<T> sum_all(Value<T> x) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x.id);
  T s = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  return tp.record(Tensor<T>::scalar(s), tp.needs_grad(x),
                   [xid = x.id, n = xv.size()](Tape<T>& t, const Tensor<T>& up) {
                     for (std::size_t i = 0; i < n; ++i) t.accumulate(xid, i, up[0]);
                   },
                   "sum");
}

template <typename T>
Value<T> mean_all(Value<T> x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.size()));
}

// ---------------------------------------------------------------------------
// softmax over the trailing axis (max-shifted)
// ---------------------------------------------------------------------------

template <typename T>
Value<T> softmax_last(Value<T> x) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x.id);
  const std::size_t rows = xv.lead(), cols = xv.last();
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    T m = xv[r * cols];
    for (std::size_t c = 1; c < cols; ++c) m = std::max(m, xv[r * cols + c]);
    T s = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = std::exp(xv[r * cols + c] - m);
      s += out[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= s;
  }
  Tensor<T> y = out;  // dx = y * (up - sum(up * y)) per row
  return tp.record(std::move(out), tp.needs_grad(x),
                   [xid = x.id, rows, cols, y = std::move(y)](Tape<T>& t, const Tensor<T>& up) {
                     for (std::size_t r = 0; r < rows; ++r) {
                       T dot = 0;
                       for (std::size_t c = 0; c < cols; ++c)
                         dot += up[r * cols + c] * y[r * cols + c];
                       for (std::size_t c = 0; c < cols; ++c)
                         t.accumulate(xid, r * cols + c,
                                      y[r * cols + c] * (up[r * cols + c] - dot));
                     }
                   },
                   "softmax");
}

// ---------------------------------------------------------------------------
// matmul (rank-2, optional transposes)
// ---------------------------------------------------------------------------

namespace detail {

// C (+)= op(A) * op(B); A is ra x ca as stored.
template <typename T>
void raw_matmul(const T* A, std::size_t ra, std::size_t ca, bool ta, const T* B, std::size_t rb,
                std::size_t cb, bool tb, T* C, bool accumulate) {
  const std::size_t m = ta ? ca : ra;
  const std::size_t k = ta ? ra : ca;
  const std::size_t n = tb ? rb : cb;
  if ((tb ? cb : rb) != k) throw dim_error("matmul inner dimensions disagree");
  if (!accumulate)
    for (std::size_t i = 0; i < m * n; ++i) C[i] = T(0);
  if (!ta && !tb) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t l = 0; l < k; ++l) {
        const T a = A[i * ca + l];
        if (a == T(0)) continue;
        const T* brow = B + l * cb;
        T* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
  } else if (!ta && tb) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const T* arow = A + i * ca;
        const T* brow = B + j * cb;
        T s = 0;
        for (std::size_t l = 0; l < k; ++l) s += arow[l] * brow[l];
        C[i * n + j] += s;
      }
  } else if (ta && !tb) {
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t i = 0; i < m; ++i) {
        const T a = A[l * ca + i];
        if (a == T(0)) continue;
        const T* brow = B + l * cb;
        T* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T s = 0;
        for (std::size_t l = 0; l < k; ++l) s += A[l * ca + i] * B[j * cb + l];
        C[i * n + j] += s;
      }
  }
}

}  // namespace detail

template <typename T>
Value<T> matmul(Value<T> a, Value<T> b, bool ta = false, bool tb = false) {
  if (a.tape != b.tape) throw usage_error("operands recorded on different tapes");
  Tape<T>& tp = *a.tape;
  const Tensor<T>& av = tp.val(a.id);
  const Tensor<T>& bv = tp.val(b.id);
  if (av.rank() != 2 || bv.rank() != 2)
    throw dim_error("matmul expects rank-2 operands, got " + shape_str(av.shape()) + " and " +
                    shape_str(bv.shape()));
  const std::size_t ra = av.shape()[0], ca = av.shape()[1];
  const std::size_t rb = bv.shape()[0], cb = bv.shape()[1];
  const std::size_t m = ta ? ca : ra, k = ta ? ra : ca, n = tb ? rb : cb;
  if ((tb ? cb : rb) != k)
    throw dim_error("matmul inner dimensions disagree: " + shape_str(av.shape()) +
                    (ta ? "^T" : "") + " x " + shape_str(bv.shape()) + (tb ? "^T" : ""));
  Tensor<T> out(Shape{m, n});
  detail::raw_matmul(av.data(), ra, ca, ta, bv.data(), rb, cb, tb, out.data(), false);
  const bool rq = tp.needs_grad(a) || tp.needs_grad(b);
  return tp.record(
      std::move(out), rq,
      [aid = a.id, bid = b.id, ra, ca, rb, cb, ta, tb, m, n](Tape<T>& t, const Tensor<T>& up) {
        const Tensor<T>& av = t.val(aid);
        const Tensor<T>& bv = t.val(bid);
        // dA and dB by the standard transpose rules, written for each flag case.
        if (t.needs_grad(Value<T>{&t, aid})) {
          Tensor<T>& ga = t.grad_ref(aid);
          if (!ta)
            detail::raw_matmul(up.data(), m, n, false, bv.data(), rb, cb, !tb, ga.data(), true);
          else
            detail::raw_matmul(bv.data(), rb, cb, tb, up.data(), m, n, true, ga.data(), true);
        }
        if (t.needs_grad(Value<T>{&t, bid})) {
          Tensor<T>& gb = t.grad_ref(bid);
          if (!tb)
            detail::raw_matmul(av.data(), ra, ca, !ta, up.data(), m, n, false, gb.data(), true);
          else
            detail::raw_matmul(up.data(), m, n, true, av.data(), ra, ca, ta, gb.data(), true);
        }
      },
      "matmul");
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

template <typename T>
Value<T> reshape(Value<T> x, Shape shape) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x.id);
  if (shape_size(shape) != xv.size())
    throw dim_error("reshape to " + shape_str(shape) + " changes element count");
  Tensor<T> out(shape, xv.vec());
  return tp.record(std::move(out), tp.needs_grad(x),
                   [xid = x.id](Tape<T>& t, const Tensor<T>& up) {
                     for (std::size_t i = 0; i < up.size(); ++i) t.accumulate(xid, i, up[i]);
                   },
                   "reshape");
}

template <typename T>
Value<T> concat_last(const std::vector<Value<T>>& parts) {
  if (parts.empty()) throw usage_error("concat of zero tensors");
  Tape<T>& tp = *parts[0].tape;
  const std::size_t rows = tp.val(parts[0].id).lead();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Tensor<T>& v = tp.val(p.id);
    if (v.lead() != rows) throw dim_error("concat_last leading shapes disagree");
    widths.push_back(v.last());
    total += v.last();
  }
  Shape os = tp.val(parts[0].id).shape();
  os.back() = total;
  Tensor<T> out(os);
  bool rq = false;
  std::size_t off = 0;
  std::vector<std::uint32_t> ids;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor<T>& v = tp.val(parts[p].id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[p]; ++c)
        out[r * total + off + c] = v[r * widths[p] + c];
    off += widths[p];
    rq = rq || tp.needs_grad(parts[p]);
    ids.push_back(parts[p].id);
  }
  return tp.record(std::move(out), rq,
                   [ids, widths, rows, total](Tape<T>& t, const Tensor<T>& up) {
                     std::size_t off = 0;
                     for (std::size_t p = 0; p < ids.size(); ++p) {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < widths[p]; ++c)
                           t.accumulate(ids[p], r * widths[p] + c, up[r * total + off + c]);
                       off += widths[p];
                     }
                   },
                   "concat_last");
}

template <typename T>
Value<T> slice_last(Value<T> x, std::size_t start, std::size_t len) {
  Tape<T>& tp = *x.tape;
  const Tensor<T>& xv = tp.val(x.id);
  const std::size_t rows = xv.lead(), cols = xv.last();
  if (start + len > cols) throw dim_error("slice_last past the trailing axis");
  Shape os = xv.shape();
  os.back() = len;
  Tensor<T> out(os);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < len; ++c) out[r * len + c] = xv[r * cols + start + c];
  return tp.record(std::move(out), tp.needs_grad(x),
                   [xid = x.id, rows, cols, start, len](Tape<T>& t, const Tensor<T>& up) {
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < len; ++c)
                         t.accumulate(xid, r * cols + start + c, up[r * len + c]);
                   },
                   "slice_last");
}

// Stack along axis 0; inputs must agree on every other axis.
template <typename T>
Value<T> concat_rows(const std::vector<Value<T>>& parts) {
  if (parts.empty()) throw usage_error("concat of zero tensors");
  Tape<T>& tp = *parts[0].tape;
  const Shape& first = tp.val(parts[0].id).shape();
  Shape inner(first.begin() + 1, first.end());
  std::size_t total_rows = 0;
  bool rq = false;
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    const Shape& s = tp.val(p.id).shape();
    if (Shape(s.begin() + 1, s.end()) != inner) throw dim_error("concat_rows trailing shapes disagree");
    total_rows += s[0];
    rq = rq || tp.needs_grad(p);
    ids.push_back(p.id);
    sizes.push_back(tp.val(p.id).size());
  }
  Shape os = first;
  os[0] = total_rows;
  Tensor<T> out(os);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor<T>& v = tp.val(p.id);
    for (std::size_t i = 0; i < v.size(); ++i) out[off + i] = v[i];
    off += v.size();
  }
  return tp.record(std::move(out), rq,
                   [ids, sizes](Tape<T>& t, const Tensor<T>& up) {
                     std::size_t off = 0;
                     for (std::size_t p = 0; p < ids.size(); ++p) {
                       for (std::size_t i = 0; i < sizes[p]; ++i)
                         t.accumulate(ids[p], i, up[off + i]);
                       off += sizes[p];
                     }
                   },
                   "concat_rows");
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

// Max relative error between the taped gradient and central differences.
// `fn` must build a scalar from the given leaves; float64 inputs expected.
template <typename T>
double grad_check(std::vector<Tensor<T>> inputs,
                  const std::function<Value<T>(Tape<T>&, std::vector<Value<T>>&)>& fn,
                  T eps = T(1e-6)) {
  Tape<T> tape;
  std::vector<Value<T>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
  Value<T> loss = fn(tape, leaves);
  if (loss.size() != 1) throw usage_error("grad_check requires a scalar function");
  tape.backward(loss);
  std::vector<Tensor<T>> analytic;
  for (const auto& l : leaves) analytic.push_back(tape.grad(l));

  auto eval = [&](const std::vector<Tensor<T>>& in) -> double {
    Tape<T> t2;
    std::vector<Value<T>> ls;
    for (const auto& t : in) ls.push_back(t2.leaf(t, false));
    return static_cast<double>(t2.val(fn(t2, ls).id)[0]);
  };

  double worst = 0.0;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    for (std::size_t i = 0; i < inputs[p].size(); ++i) {
      const T keep = inputs[p][i];
      inputs[p][i] = keep + eps;
      const double fp = eval(inputs);
      inputs[p][i] = keep - eps;
      const double fm = eval(inputs);
      inputs[p][i] = keep;
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[p][i]);
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace lnn
