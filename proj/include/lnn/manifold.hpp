#pragma once

// Lorentz-model geometry on the hyperboloid {x : <x,x>_L = -1/c, x_time > 0}
// embedded in Minkowski space, time coordinate stored first. Everything here
// is a pure function of value-semantic inputs.
//
// Conventions:
//   <u,v>_L  = -u_t v_t + u_s . v_s
//   d(x,y)   = arccosh(max(-c <x,y>_L, 1)) / sqrt(c)
//   lift(s)  = (sqrt(1/c + |s|^2), s)
// Curvature rescaling multiplies the whole ambient point by sqrt(c_from/c_to),
// which is the direction that keeps the result on the target hyperboloid.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "lnn/common.hpp"
#include "lnn/rng.hpp"

namespace lnn {

// Positive curvature parameter; the manifold has sectional curvature -c.
struct Curvature {
  double c = 1.0;
  explicit Curvature(double v) : c(v) {
    if (!(v > 0.0) || !std::isfinite(v)) throw usage_error("curvature must be positive and finite");
  }
  double sqrt_c() const { return std::sqrt(c); }
};

// Half-angle clamp margin shared by asin/acos domain guards.
inline constexpr double kAngleEps = 1e-7;

template <typename T>
struct LorentzPoint {
  T time = T(1);
  std::vector<T> spatial;

  std::size_t dim() const { return spatial.size(); }
  std::size_t ambient_dim() const { return spatial.size() + 1; }

  std::vector<T> ambient() const {
    std::vector<T> a(ambient_dim());
    a[0] = time;
    std::copy(spatial.begin(), spatial.end(), a.begin() + 1);
    return a;
  }

  T spatial_norm() const {
    double s = 0;
    for (T v : spatial) s += static_cast<double>(v) * static_cast<double>(v);
    return static_cast<T>(std::sqrt(s));
  }
};

// Tangent vector anchored at a base point, stored in ambient coordinates.
template <typename T>
struct TangentVector {
  LorentzPoint<T> base;
  std::vector<T> ambient;  // length base.ambient_dim()
};

template <typename T>
TangentVector<T> make_tangent(const LorentzPoint<T>& base, std::vector<T> ambient);

template <typename T>
T lorentz_inner(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size() || u.size() < 2)
    throw dim_error("lorentz_inner needs equal lengths >= 2");
  double s = -static_cast<double>(u[0]) * static_cast<double>(v[0]);
  for (std::size_t i = 1; i < u.size(); ++i)
    s += static_cast<double>(u[i]) * static_cast<double>(v[i]);
  return static_cast<T>(s);
}

template <typename T>
T lorentz_inner(const std::vector<T>& u, const std::vector<T>& v) {
  return lorentz_inner(std::span<const T>(u), std::span<const T>(v));
}

template <typename T>
T lorentz_inner(const LorentzPoint<T>& x, const LorentzPoint<T>& y) {
  if (x.dim() != y.dim()) throw dim_error("points of different spatial dimension");
  double s = -static_cast<double>(x.time) * static_cast<double>(y.time);
  for (std::size_t i = 0; i < x.dim(); ++i)
    s += static_cast<double>(x.spatial[i]) * static_cast<double>(y.spatial[i]);
  return static_cast<T>(s);
}

// |c <x,x>_L + 1|, the residency defect.
template <typename T>
double residency_defect(const LorentzPoint<T>& x, Curvature c) {
  double s = -static_cast<double>(x.time) * static_cast<double>(x.time);
  for (T v : x.spatial) s += static_cast<double>(v) * static_cast<double>(v);
  return std::abs(c.c * s + 1.0);
}

namespace detail {
template <typename T>
constexpr double residency_check_tol() {
  return sizeof(T) == 4 ? 1e-3 : 1e-6;
}
}  // namespace detail

template <typename T>
LorentzPoint<T> lift(std::span<const T> spatial, Curvature c) {
  double nsq = 0;
  for (T v : spatial) {
    if (!std::isfinite(static_cast<double>(v))) throw numeric_error("lift of non-finite input");
    nsq += static_cast<double>(v) * static_cast<double>(v);
  }
  LorentzPoint<T> p;
  p.spatial.assign(spatial.begin(), spatial.end());
  p.time = static_cast<T>(std::sqrt(1.0 / c.c + nsq));
  return p;
}

template <typename T>
LorentzPoint<T> lift(const std::vector<T>& spatial, Curvature c) {
  return lift(std::span<const T>(spatial), c);
}

template <typename T>
LorentzPoint<T> origin(std::size_t dim, Curvature c) {
  LorentzPoint<T> p;
  p.spatial.assign(dim, T(0));
  p.time = static_cast<T>(1.0 / c.sqrt_c());
  return p;
}

template <typename T>
T distance(const LorentzPoint<T>& x, const LorentzPoint<T>& y, Curvature c) {
  const double tol = detail::residency_check_tol<T>();
  if (residency_defect(x, c) > tol || residency_defect(y, c) > tol)
    throw usage_error("distance: point not on the curvature-" + std::to_string(c.c) + " manifold");
  // -c<x,y> = 1 + (c/2)<x-y,x-y>_L on the manifold. The difference form is
  // exact at coincidence (arccosh(1) = 0) and avoids cancellation for near
  // pairs; fall back to the direct inner product once the pair is far.
  const double dt = static_cast<double>(x.time) - static_cast<double>(y.time);
  double q = -dt * dt;
  for (std::size_t i = 0; i < x.dim(); ++i) {
    const double ds = static_cast<double>(x.spatial[i]) - static_cast<double>(y.spatial[i]);
    q += ds * ds;
  }
  double arg;
  if (c.c * q < 2.0) {
    arg = 1.0 + 0.5 * c.c * std::max(q, 0.0);
  } else {
    arg = std::max(-c.c * static_cast<double>(lorentz_inner(x, y)), 1.0);
  }
  return static_cast<T>(std::acosh(arg) / c.sqrt_c());
}

// Geodesic distance from the manifold origin.
template <typename T>
T radius(const LorentzPoint<T>& x, Curvature c) {
  const double arg = std::max(c.sqrt_c() * static_cast<double>(x.time), 1.0);
  return static_cast<T>(std::acosh(arg) / c.sqrt_c());
}

template <typename T>
LorentzPoint<T> rescale_curvature(const LorentzPoint<T>& x, Curvature c_from, Curvature c_to) {
  const double f = std::sqrt(c_from.c / c_to.c);
  LorentzPoint<T> out;
  out.time = static_cast<T>(static_cast<double>(x.time) * f);
  out.spatial.resize(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i)
    out.spatial[i] = static_cast<T>(static_cast<double>(x.spatial[i]) * f);
  return out;
}

// Weighted Lorentz centroid: sum w_i x_i normalized back onto the manifold
// by the Lorentzian norm |<z,z>_L|^(1/2).
template <typename T>
LorentzPoint<T> centroid(const std::vector<LorentzPoint<T>>& points, const std::vector<T>& weights,
                         Curvature c) {
  if (points.empty() || points.size() != weights.size())
    throw dim_error("centroid: points/weights size mismatch");
  double wsum = 0;
  for (T w : weights) {
    if (w < T(0)) throw usage_error("centroid weights must be non-negative");
    wsum += static_cast<double>(w);
  }
  if (wsum <= 0.0) throw degenerate_error("centroid of all-zero weights");
  const std::size_t d = points[0].dim();
  double zt = 0;
  std::vector<double> zs(d, 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].dim() != d) throw dim_error("centroid points of mixed dimension");
    const double w = static_cast<double>(weights[i]);
    zt += w * static_cast<double>(points[i].time);
    for (std::size_t j = 0; j < d; ++j) zs[j] += w * static_cast<double>(points[i].spatial[j]);
  }
  double inner = -zt * zt;
  for (double v : zs) inner += v * v;
  const double norm = std::sqrt(std::abs(inner));
  if (!(norm > 0.0)) throw degenerate_error("centroid sum has zero Lorentzian norm");
  const double f = 1.0 / (c.sqrt_c() * norm);
  LorentzPoint<T> out;
  out.time = static_cast<T>(zt * f);
  out.spatial.resize(d);
  for (std::size_t j = 0; j < d; ++j) out.spatial[j] = static_cast<T>(zs[j] * f);
  return out;
}

// Entailment-cone half aperture, asin(2K / (sqrt(c) |x_s|)) with the argument
// clamped into [0, 1 - eps] so near-origin apexes degrade to a wide-open cone
// instead of erroring.
template <typename T>
T aperture(const LorentzPoint<T>& x, Curvature c, double K) {
  if (!(K > 0.0)) throw usage_error("aperture requires K > 0");
  const double ns = static_cast<double>(x.spatial_norm());
  double arg = ns > 0.0 ? 2.0 * K / (c.sqrt_c() * ns) : 1.0;
  arg = std::clamp(arg, 0.0, 1.0 - kAngleEps);
  return static_cast<T>(std::asin(arg));
}

// Exterior angle at x between the extension of the origin->x geodesic and the
// x->y geodesic (the cone-membership test compares it to aperture(x)).
template <typename T>
T exterior_angle(const LorentzPoint<T>& x, const LorentzPoint<T>& y, Curvature c) {
  const double ns = static_cast<double>(x.spatial_norm());
  if (!(ns > 0.0)) throw degenerate_error("exterior_angle apex at the origin");
  const double g = c.c * static_cast<double>(lorentz_inner(x, y));
  const double disc = g * g - 1.0;
  if (!(disc > 0.0)) throw degenerate_error("exterior_angle of coincident points");
  const double num = static_cast<double>(y.time) + static_cast<double>(x.time) * g;
  const double den = ns * std::sqrt(disc);
  const double ratio = std::clamp(num / den, -1.0, 1.0);
  return static_cast<T>(std::acos(ratio));
}

// ---------------------------------------------------------------------------
// Tangent-space machinery for Riemannian optimization
// ---------------------------------------------------------------------------

template <typename T>
T tangent_inner(const std::vector<T>& u, const std::vector<T>& v) {
  return lorentz_inner(u, v);
}

// Project an ambient vector onto the tangent space at x.
template <typename T>
std::vector<T> project_tangent(const LorentzPoint<T>& x, const std::vector<T>& g, Curvature c) {
  const std::vector<T> xa = x.ambient();
  if (g.size() != xa.size()) throw dim_error("project_tangent dimension mismatch");
  const double xg = static_cast<double>(lorentz_inner(xa, g));
  std::vector<T> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    out[i] = static_cast<T>(static_cast<double>(g[i]) + c.c * xg * static_cast<double>(xa[i]));
  return out;
}

// Euclidean-to-Riemannian gradient: flip the time component (inverse metric),
// then project to the tangent space.
template <typename T>
std::vector<T> riemannian_gradient(const LorentzPoint<T>& x, const std::vector<T>& euclidean_grad,
                                   Curvature c) {
  std::vector<T> h = euclidean_grad;
  if (h.empty()) throw dim_error("empty gradient");
  h[0] = -h[0];
  return project_tangent(x, h, c);
}

namespace detail {
template <typename T>
void check_tangent(const LorentzPoint<T>& x, const std::vector<T>& v) {
  const std::vector<T> xa = x.ambient();
  if (v.size() != xa.size()) throw dim_error("tangent vector dimension mismatch");
  double scale = 1.0;
  for (T a : v) scale = std::max(scale, std::abs(static_cast<double>(a)));
  if (std::abs(static_cast<double>(lorentz_inner(xa, v))) > 1e-5 * scale * std::max(1.0, static_cast<double>(x.time)))
    throw usage_error("vector is not tangent at the base point");
}
}  // namespace detail

template <typename T>
TangentVector<T> make_tangent(const LorentzPoint<T>& base, std::vector<T> ambient) {
  detail::check_tangent(base, ambient);
  return TangentVector<T>{base, std::move(ambient)};
}

template <typename T>
LorentzPoint<T> exp_map(const LorentzPoint<T>& x, const std::vector<T>& v, Curvature c) {
  detail::check_tangent(x, v);
  const std::vector<T> xa = x.ambient();
  double vv = static_cast<double>(lorentz_inner(v, v));
  vv = std::max(vv, 0.0);  // tangent vectors are space-like; rounding guard
  const double norm = std::sqrt(vv);
  LorentzPoint<T> out;
  out.spatial.resize(x.dim());
  if (norm < 1e-300) return x;
  const double theta = c.sqrt_c() * norm;
  const double ch = std::cosh(theta), sh_over = std::sinh(theta) / (c.sqrt_c() * norm);
  for (std::size_t i = 0; i < x.dim(); ++i)
    out.spatial[i] = static_cast<T>(ch * static_cast<double>(xa[i + 1]) +
                                    sh_over * static_cast<double>(v[i + 1]));
  // Recompute time from spatial so the result lands exactly on the sheet.
  return lift(out.spatial, c);
}

template <typename T>
LorentzPoint<T> exp_map(const TangentVector<T>& v, Curvature c) {
  return exp_map(v.base, v.ambient, c);
}

template <typename T>
std::vector<T> log_map(const LorentzPoint<T>& x, const LorentzPoint<T>& y, Curvature c) {
  const std::vector<T> xa = x.ambient();
  const std::vector<T> ya = y.ambient();
  const double d = static_cast<double>(distance(x, y, c));
  std::vector<T> w(xa.size());
  // w = y + c <x,y> x is tangent at x and points along the geodesic to y.
  const double g = static_cast<double>(lorentz_inner(x, y));
  double wn = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double wi = static_cast<double>(ya[i]) + c.c * g * static_cast<double>(xa[i]);
    w[i] = static_cast<T>(wi);
  }
  wn = std::sqrt(std::max(static_cast<double>(lorentz_inner(w, w)), 0.0));
  if (wn < 1e-300 || d == 0.0) return std::vector<T>(xa.size(), T(0));
  const double f = d / wn;
  for (auto& wi : w) wi = static_cast<T>(static_cast<double>(wi) * f);
  return w;
}

// Parallel transport of v along the geodesic from x to y.
template <typename T>
std::vector<T> transport(const LorentzPoint<T>& x, const LorentzPoint<T>& y,
                         const std::vector<T>& v, Curvature c) {
  detail::check_tangent(x, v);
  const std::vector<T> xa = x.ambient();
  const std::vector<T> ya = y.ambient();
  const double yv = static_cast<double>(lorentz_inner(ya, v));
  const double denom = 1.0 / c.c - static_cast<double>(lorentz_inner(x, y));
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = static_cast<T>(static_cast<double>(v[i]) +
                            (yv / denom) * (static_cast<double>(xa[i]) + static_cast<double>(ya[i])));
  return out;
}

// Recompute time from spatial so accumulated drift cannot leave the manifold.
template <typename T>
LorentzPoint<T> reproject(const LorentzPoint<T>& x, Curvature c) {
  return lift(x.spatial, c);
}

// Point at geodesic radius r from the origin along unit spatial direction u.
template <typename T>
LorentzPoint<T> geodesic_point(const std::vector<T>& unit_dir, double r, Curvature c) {
  LorentzPoint<T> p;
  p.spatial.resize(unit_dir.size());
  const double sc = c.sqrt_c();
  p.time = static_cast<T>(std::cosh(sc * r) / sc);
  for (std::size_t i = 0; i < unit_dir.size(); ++i)
    p.spatial[i] = static_cast<T>(std::sinh(sc * r) / sc * static_cast<double>(unit_dir[i]));
  return p;
}

// Random on-manifold point with spatial entries ~ N(0, sigma^2).
template <typename T>
LorentzPoint<T> random_point(Rng& rng, std::size_t dim, Curvature c, double sigma = 1.0) {
  std::vector<T> s(dim);
  for (auto& v : s) v = static_cast<T>(rng.normal(0.0, sigma));
  return lift(s, c);
}

// Random tangent vector at x with entries ~ N(0, sigma^2) before projection.
template <typename T>
std::vector<T> random_tangent(Rng& rng, const LorentzPoint<T>& x, Curvature c, double sigma = 1.0) {
  std::vector<T> g(x.ambient_dim());
  for (auto& v : g) v = static_cast<T>(rng.normal(0.0, sigma));
  return project_tangent(x, g, c);
}

}  // namespace lnn
