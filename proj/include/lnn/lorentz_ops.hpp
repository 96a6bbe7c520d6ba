#pragma once

// Differentiable batched Lorentz geometry. A LorentzBatch is n hyperboloid
// points tracked on a tape: time [n], spatial [n x d], plus the (possibly
// learnable) curvature scalar they live at. Formulas mirror manifold.hpp.

#include <cstddef>

#include "lnn/manifold.hpp"
#include "lnn/tape.hpp"
#include "lnn/tensor.hpp"

namespace lnn {

template <typename T>
struct LorentzBatch {
  Value<T> time;     // [n]
  Value<T> spatial;  // [n, d]
  Value<T> curv;     // scalar

  std::size_t count() const { return spatial.val().shape()[0]; }
  std::size_t dim() const { return spatial.val().shape()[1]; }

  // Residency defect of row i, evaluated in double off the tape.
  double defect(std::size_t i) const {
    const Tensor<T>& s = spatial.val();
    const Tensor<T>& t = time.val();
    const double c = static_cast<double>(curv.val()[0]);
    double inner = -static_cast<double>(t[i]) * static_cast<double>(t[i]);
    for (std::size_t j = 0; j < dim(); ++j) {
      const double v = static_cast<double>(s.at(i, j));
      inner += v * v;
    }
    return std::abs(c * inner + 1.0);
  }
  double max_defect() const {
    double m = 0;
    for (std::size_t i = 0; i < count(); ++i) m = std::max(m, defect(i));
    return m;
  }
};

namespace detail {
template <typename T>
constexpr T tiny_floor() {
  return sizeof(T) == 4 ? T(1e-30) : T(1e-290);
}
}  // namespace detail

// Recompute time from spatial: (sqrt(1/c + |s|^2), s).
template <typename T>
LorentzBatch<T> lift_rows(Value<T> spatial, Value<T> curv) {
  Value<T> nsq = row_sum(square(spatial));
  Value<T> time = sqrt_v(add(nsq, recip(curv)));
  return LorentzBatch<T>{time, spatial, curv};
}

template <typename T>
LorentzBatch<T> rescale_rows(const LorentzBatch<T>& x, Value<T> c_to) {
  Value<T> f = sqrt_v(div(x.curv, c_to));
  return LorentzBatch<T>{mul(x.time, f), mul(x.spatial, f), c_to};
}

// Pairwise Lorentzian inner products: G[i][k] = <a_i, b_k>_L.
template <typename T>
Value<T> lorentz_inner_matrix(const LorentzBatch<T>& a, const LorentzBatch<T>& b) {
  Value<T> space = matmul(a.spatial, b.spatial, false, true);
  Value<T> at = reshape(a.time, Shape{a.count(), 1});
  Value<T> bt = reshape(b.time, Shape{b.count(), 1});
  return sub(space, matmul(at, bt, false, true));
}

// Row-paired inner products: g[i] = <a_i, b_i>_L.
template <typename T>
Value<T> lorentz_inner_rows(const LorentzBatch<T>& a, const LorentzBatch<T>& b) {
  return sub(row_sum(mul(a.spatial, b.spatial)), mul(a.time, b.time));
}

// d = arccosh(max(-c g, 1)) / sqrt(c) applied elementwise to an inner-product
// tensor g. The clamp floor at exactly 1 makes d(x,x) = 0; its gradient is
// zero on the clamped side.
template <typename T>
Value<T> distance_from_inner(Value<T> g, Value<T> curv) {
  Value<T> arg = clamp_min(neg(mul(g, curv)), T(1));
  return div(acosh_v(arg), sqrt_v(curv));
}

template <typename T>
Value<T> distance_matrix(const LorentzBatch<T>& a, const LorentzBatch<T>& b) {
  return distance_from_inner(lorentz_inner_matrix(a, b), a.curv);
}

template <typename T>
Value<T> distance_rows(const LorentzBatch<T>& a, const LorentzBatch<T>& b) {
  return distance_from_inner(lorentz_inner_rows(a, b), a.curv);
}

// Normalize ambient rows (t_i, s_i) onto the manifold: z / (sqrt(c) |z|_L).
// Inputs must be time-like, which holds for any nonnegative combination of
// hyperboloid points; the floor only guards rounding.
template <typename T>
LorentzBatch<T> normalize_onto(Value<T> time, Value<T> spatial, Value<T> curv) {
  Value<T> inner = sub(row_sum(square(spatial)), square(time));  // <z,z>_L per row
  Value<T> norm = sqrt_v(clamp_min(neg(inner), detail::tiny_floor<T>()));
  Value<T> denom = mul(norm, sqrt_v(curv));
  return LorentzBatch<T>{div(time, denom), div_rows(spatial, denom), curv};
}

// Weighted centroid of the batch collapsed to a single point ([1] + [1 x d]).
// Weights enter as a constant row; uniform pooling passes all-ones.
template <typename T>
LorentzBatch<T> centroid_pool(const LorentzBatch<T>& x, const Tensor<T>& weights) {
  const std::size_t n = x.count();
  if (weights.size() != n) throw dim_error("centroid weights length mismatch");
  T wsum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] < T(0)) throw usage_error("centroid weights must be non-negative");
    wsum += weights[i];
  }
  if (!(wsum > T(0))) throw degenerate_error("centroid of all-zero weights");
  Tape<T>& tp = *x.spatial.tape;
  Value<T> w = tp.constant(Tensor<T>(Shape{1, n}, weights.vec()));
  Value<T> zs = matmul(w, x.spatial);                              // [1, d]
  Value<T> zt = reshape(matmul(w, reshape(x.time, Shape{n, 1})), Shape{1});
  return normalize_onto(zt, zs, x.curv);
}

// Half aperture per row: asin(clamp(2K / (sqrt(c) |x_s|), 0, 1 - eps)).
template <typename T>
Value<T> aperture_rows(const LorentzBatch<T>& x, T K) {
  Value<T> ns = sqrt_v(clamp_min(row_sum(square(x.spatial)), detail::tiny_floor<T>()));
  Value<T> arg = div(x.spatial.tape->constant_scalar(T(2) * K), mul(ns, sqrt_v(x.curv)));
  return asin_v(clamp(arg, T(0), T(1) - T(kAngleEps)));
}

// Exterior angle of y_i seen from apex x_i. Throws if any apex sits exactly
// at the origin; coincident pairs clamp to the domain edge (zero gradient).
template <typename T>
Value<T> exterior_angle_rows(const LorentzBatch<T>& x, const LorentzBatch<T>& y) {
  const Tensor<T>& xs = x.spatial.val();
  for (std::size_t i = 0; i < x.count(); ++i) {
    double nsq = 0;
    for (std::size_t j = 0; j < x.dim(); ++j) {
      const double v = static_cast<double>(xs.at(i, j));
      nsq += v * v;
    }
    if (!(nsq > 0.0)) throw degenerate_error("exterior_angle apex at the origin");
  }
  Value<T> cg = mul(lorentz_inner_rows(x, y), x.curv);
  Value<T> num = add(y.time, mul(x.time, cg));
  Value<T> nsx = sqrt_v(clamp_min(row_sum(square(x.spatial)), detail::tiny_floor<T>()));
  Value<T> disc = clamp_min(sub(square(cg), x.spatial.tape->constant_scalar(T(1))),
                            detail::tiny_floor<T>());
  Value<T> ratio = clamp(div(num, mul(nsx, sqrt_v(disc))), T(-1), T(1));
  return acos_v(ratio);
}

// Geodesic distance from the origin per row.
template <typename T>
Value<T> radius_rows(const LorentzBatch<T>& x) {
  Value<T> arg = clamp_min(mul(x.time, sqrt_v(x.curv)), T(1));
  return div(acosh_v(arg), sqrt_v(x.curv));
}

// Ambient residual z = x + beta y renormalized onto the manifold (beta a
// tracked positive scalar).
template <typename T>
LorentzBatch<T> lorentz_residual(const LorentzBatch<T>& x, const LorentzBatch<T>& y,
                                 Value<T> beta) {
  Value<T> zt = add(x.time, mul(y.time, beta));
  Value<T> zs = add(x.spatial, mul(y.spatial, beta));
  return normalize_onto(zt, zs, x.curv);
}

}  // namespace lnn
