#pragma once

// Lorentz neural layers and their Euclidean twins. Both geometries share one
// parameter layout (identical names and tensor shapes); only the forward
// rules differ. Lorentz layers act on the spatial part and recompute / keep
// the time coordinate so every output stays on the hyperboloid.

#include <cstddef>
#include <string>
#include <vector>

#include "lnn/lorentz_ops.hpp"
#include "lnn/params.hpp"

namespace lnn {

// Curvature / temperature scalars bound to the current tape.
template <typename T>
struct ScalarBundle {
  Value<T> c_in;   // fixed at 1
  Value<T> c_mid;
  Value<T> c_out;
  Value<T> tau;
};

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

// Spatial-to-spatial affine map. Lorentz forward recomputes time at the input
// curvature, then rescales onto the target manifold; the Euclidean twin is a
// plain affine layer with the same tensors.
template <typename T>
struct LorentzLinear {
  std::size_t w = 0, b = 0;
  std::size_t d_in = 0, d_out = 0;

  static LorentzLinear create(ParamStore<T>& ps, const std::string& prefix, std::size_t d_in,
                              std::size_t d_out, Rng& rng, double bias_std = 0.0) {
    LorentzLinear l;
    l.d_in = d_in;
    l.d_out = d_out;
    l.w = ps.add_normal(prefix + ".w", Shape{d_in, d_out}, rng, 0.02);
    if (bias_std > 0.0) {
      l.b = ps.add_normal(prefix + ".b", Shape{d_out}, rng, bias_std);
      Tensor<T>& bias = ps.value(l.b);
      for (std::size_t i = 0; i < bias.size(); ++i)
        while (bias[i] == T(0)) bias[i] = static_cast<T>(rng.normal(0.0, bias_std));
    } else {
      l.b = ps.add(prefix + ".b", Tensor<T>(Shape{d_out}, T(0)));
    }
    return l;
  }

  Value<T> affine_spatial(ParamContext<T>& P, Value<T> spatial) const {
    return add(matmul(spatial, P[w]), P[b]);
  }

  LorentzBatch<T> forward(ParamContext<T>& P, const LorentzBatch<T>& x, Value<T> c_out) const {
    Value<T> s = affine_spatial(P, x.spatial);
    LorentzBatch<T> lifted = lift_rows(s, x.curv);
    return rescale_rows(lifted, c_out);
  }

  Value<T> forward_euclidean(ParamContext<T>& P, Value<T> x) const {
    return affine_spatial(P, x);
  }
};

// ---------------------------------------------------------------------------
// Layer norm
// ---------------------------------------------------------------------------

template <typename T>
struct LorentzLayerNorm {
  std::size_t gain = 0, bias = 0;
  std::size_t d = 0;
  static constexpr T kEps = T(1e-5);

  static LorentzLayerNorm create(ParamStore<T>& ps, const std::string& prefix, std::size_t d) {
    LorentzLayerNorm n;
    n.d = d;
    n.gain = ps.add(prefix + ".g", Tensor<T>(Shape{d}, T(1)));
    n.bias = ps.add(prefix + ".b", Tensor<T>(Shape{d}, T(0)));
    return n;
  }

  Value<T> normalize_spatial(ParamContext<T>& P, Value<T> s) const {
    Value<T> mu = row_mean(s);
    Value<T> centered = sub_rows(s, mu);
    Value<T> var = row_mean(square(centered));
    Value<T> inv = recip(sqrt_v(shift(var, kEps)));
    Value<T> unit = mul_rows(centered, inv);
    return add(mul(unit, P[gain]), P[bias]);
  }

  LorentzBatch<T> forward(ParamContext<T>& P, const LorentzBatch<T>& x) const {
    return lift_rows(normalize_spatial(P, x.spatial), x.curv);
  }

  Value<T> forward_euclidean(ParamContext<T>& P, Value<T> x) const {
    return normalize_spatial(P, x);
  }
};

// ---------------------------------------------------------------------------
// Multi-head self-attention
// ---------------------------------------------------------------------------

// Per head: Q/K/V Lorentz linears onto spatial dim d/h, scores from the raw
// Lorentzian inner product (no 1/sqrt(d) factor), value aggregation
// renormalized as a Lorentz centroid, heads merged by concatenating spatial
// parts and re-lifting. Euclidean twin uses scaled dot-product attention on
// the same tensors.
template <typename T>
struct LorentzMHSA {
  std::vector<LorentzLinear<T>> q, k, v;
  LorentzLinear<T> out;
  std::size_t heads = 1, d = 0;

  static LorentzMHSA create(ParamStore<T>& ps, const std::string& prefix, std::size_t d,
                            std::size_t heads, Rng& rng) {
    if (heads == 0 || d % heads != 0)
      throw config_error("attention dim " + std::to_string(d) + " not divisible by heads " +
                         std::to_string(heads));
    LorentzMHSA a;
    a.heads = heads;
    a.d = d;
    const std::size_t dh = d / heads;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::string hp = prefix + ".h" + std::to_string(h);
      a.q.push_back(LorentzLinear<T>::create(ps, hp + ".q", d, dh, rng));
      a.k.push_back(LorentzLinear<T>::create(ps, hp + ".k", d, dh, rng));
      a.v.push_back(LorentzLinear<T>::create(ps, hp + ".v", d, dh, rng));
    }
    a.out = LorentzLinear<T>::create(ps, prefix + ".out", d, d, rng);
    return a;
  }

  LorentzBatch<T> forward(ParamContext<T>& P, const LorentzBatch<T>& x) const {
    std::vector<Value<T>> merged;
    for (std::size_t h = 0; h < heads; ++h) {
      LorentzBatch<T> Q = q[h].forward(P, x, x.curv);
      LorentzBatch<T> K = k[h].forward(P, x, x.curv);
      LorentzBatch<T> V = v[h].forward(P, x, x.curv);
      Value<T> scores = lorentz_inner_matrix(Q, K);
      Value<T> alpha = softmax_last(scores);
      Value<T> vs = matmul(alpha, V.spatial);
      Value<T> vt = reshape(matmul(alpha, reshape(V.time, Shape{x.count(), 1})),
                            Shape{x.count()});
      LorentzBatch<T> head = normalize_onto(vt, vs, x.curv);
      merged.push_back(head.spatial);
    }
    LorentzBatch<T> joined = lift_rows(concat_last(merged), x.curv);
    return out.forward(P, joined, x.curv);
  }

  Value<T> forward_euclidean(ParamContext<T>& P, Value<T> x) const {
    const std::size_t dh = d / heads;
    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<Value<T>> merged;
    for (std::size_t h = 0; h < heads; ++h) {
      Value<T> Q = q[h].forward_euclidean(P, x);
      Value<T> K = k[h].forward_euclidean(P, x);
      Value<T> V = v[h].forward_euclidean(P, x);
      Value<T> alpha = softmax_last(scale(matmul(Q, K, false, true), inv_sqrt_dh));
      merged.push_back(matmul(alpha, V));
    }
    return out.forward_euclidean(P, concat_last(merged));
  }
};

// ---------------------------------------------------------------------------
// MLP (expand x4, gelu on the spatial part)
// ---------------------------------------------------------------------------

template <typename T>
struct LorentzMLP {
  LorentzLinear<T> up, down;

  static LorentzMLP create(ParamStore<T>& ps, const std::string& prefix, std::size_t d, Rng& rng) {
    LorentzMLP m;
    m.up = LorentzLinear<T>::create(ps, prefix + ".up", d, 4 * d, rng);
    m.down = LorentzLinear<T>::create(ps, prefix + ".down", 4 * d, d, rng);
    return m;
  }

  LorentzBatch<T> forward(ParamContext<T>& P, const LorentzBatch<T>& x) const {
    LorentzBatch<T> hidden = up.forward(P, x, x.curv);
    LorentzBatch<T> activated = lift_rows(gelu(hidden.spatial), x.curv);
    return down.forward(P, activated, x.curv);
  }

  Value<T> forward_euclidean(ParamContext<T>& P, Value<T> x) const {
    return down.forward_euclidean(P, gelu(up.forward_euclidean(P, x)));
  }
};

// ---------------------------------------------------------------------------
// Encoder block (pre-norm), with learnable positive residual weights
// ---------------------------------------------------------------------------

enum class BlockKind { Transformer, Mlp };

template <typename T>
struct LorentzBlock {
  BlockKind kind = BlockKind::Transformer;
  LorentzLayerNorm<T> norm1, norm2;
  LorentzMHSA<T> attn;
  LorentzMLP<T> mlp;
  std::size_t beta1 = 0, beta2 = 0;  // raw scalars, beta = softplus(raw)

  // softplus(x) = 1 at x = ln(e - 1)
  static constexpr double kBetaRawInit = 0.54132485461292165;

  static LorentzBlock create(ParamStore<T>& ps, const std::string& prefix, std::size_t d,
                             std::size_t heads, Rng& rng, BlockKind kind) {
    LorentzBlock b;
    b.kind = kind;
    b.norm1 = LorentzLayerNorm<T>::create(ps, prefix + ".ln1", d);
    if (kind == BlockKind::Transformer) {
      b.attn = LorentzMHSA<T>::create(ps, prefix + ".attn", d, heads, rng);
      b.beta1 = ps.add(prefix + ".beta1", Tensor<T>::scalar(T(kBetaRawInit)));
      b.norm2 = LorentzLayerNorm<T>::create(ps, prefix + ".ln2", d);
    }
    b.mlp = LorentzMLP<T>::create(ps, prefix + ".mlp", d, rng);
    b.beta2 = ps.add(prefix + ".beta2", Tensor<T>::scalar(T(kBetaRawInit)));
    return b;
  }

  LorentzBatch<T> forward(ParamContext<T>& P, const LorentzBatch<T>& x) const {
    LorentzBatch<T> cur = x;
    if (kind == BlockKind::Transformer) {
      LorentzBatch<T> a = attn.forward(P, norm1.forward(P, cur));
      cur = lorentz_residual(cur, a, softplus(P[beta1]));
      LorentzBatch<T> m = mlp.forward(P, norm2.forward(P, cur));
      return lorentz_residual(cur, m, softplus(P[beta2]));
    }
    LorentzBatch<T> m = mlp.forward(P, norm1.forward(P, cur));
    return lorentz_residual(cur, m, softplus(P[beta2]));
  }

  Value<T> forward_euclidean(ParamContext<T>& P, Value<T> x) const {
    Value<T> cur = x;
    if (kind == BlockKind::Transformer) {
      Value<T> a = attn.forward_euclidean(P, norm1.forward_euclidean(P, cur));
      cur = add(cur, mul(a, softplus(P[beta1])));
      Value<T> m = mlp.forward_euclidean(P, norm2.forward_euclidean(P, cur));
      return add(cur, mul(m, softplus(P[beta2])));
    }
    Value<T> m = mlp.forward_euclidean(P, norm1.forward_euclidean(P, cur));
    return add(cur, mul(m, softplus(P[beta2])));
  }
};

// ---------------------------------------------------------------------------
// Multinomial logistic regression head
// ---------------------------------------------------------------------------

// Signed hyperbolic distance to one learned hyperplane per class. The normal
// w_k = (tanh(p_k) |z_k|, z_k) is space-like for any nonzero z_k, so gamma =
// |z_k| sqrt(1 - tanh(p_k)^2) stays positive. Euclidean twin: y z_k + p_k.
template <typename T>
struct LorentzMLR {
  std::size_t z = 0, p = 0;
  std::size_t d = 0, classes = 0;

  static LorentzMLR create(ParamStore<T>& ps, const std::string& prefix, std::size_t d,
                           std::size_t classes, Rng& rng) {
    LorentzMLR m;
    m.d = d;
    m.classes = classes;
    m.z = ps.add_normal(prefix + ".z", Shape{classes, d}, rng, 0.02);
    m.p = ps.add(prefix + ".p", Tensor<T>(Shape{classes}, T(0)));
    return m;
  }

  // y: single pooled point (batch of n), already at c_out.
  Value<T> forward(ParamContext<T>& P, const LorentzBatch<T>& y) const {
    const Tensor<T>& zval = P[z].val();
    for (std::size_t k = 0; k < classes; ++k) {
      double n = 0;
      for (std::size_t j = 0; j < d; ++j)
        n += static_cast<double>(zval.at(k, j)) * static_cast<double>(zval.at(k, j));
      if (!(n > 0.0)) throw degenerate_error("mlr class " + std::to_string(k) + " has zero normal");
    }
    Value<T> znorm = sqrt_v(row_sum(square(P[z])));                 // [C]
    Value<T> wt = mul(tanh_v(P[p]), znorm);                         // [C]
    Value<T> tcol = reshape(y.time, Shape{y.count(), 1});
    Value<T> alpha = sub(matmul(y.spatial, P[z], false, true),
                         matmul(tcol, reshape(wt, Shape{1, classes})));  // [n, C]
    Value<T> gamma = mul(znorm, sqrt_v(clamp_min(sub(y.spatial.tape->constant_scalar(T(1)),
                                                     square(tanh_v(P[p]))),
                                                 T(1e-12))));         // [C]
    Value<T> gsc = mul(gamma, sqrt_v(y.curv));                        // [C]
    Value<T> arg = div(alpha, gsc);                                   // suffix broadcast
    return mul(sign_v(alpha), mul(abs_v(asinh_v(arg)), gsc));
  }

  Value<T> forward_euclidean(ParamContext<T>& P, Value<T> y) const {
    return add(matmul(y, P[z], false, true), P[p]);
  }
};

}  // namespace lnn
