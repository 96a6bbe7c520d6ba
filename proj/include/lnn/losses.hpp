#pragma once

// Contrastive, entailment, total and multi-label losses. All are batch means
// so the entailment weight is independent of batch size.

#include <cstdint>
#include <vector>

#include "lnn/lorentz_ops.hpp"
#include "lnn/tape.hpp"

namespace lnn {

struct LossConfig {
  double tau_init = 0.07;    // learnable temperature, floor below
  double tau_floor = 0.01;
  double lambda = 0.01;      // entailment weight
  double cone_k = 0.1;       // entailment-cone boundary constant
  bool strict_eq8 = false;   // exclude the positive from the denominator
  bool entailment = true;
};

namespace detail {

// Symmetric InfoNCE from a score matrix. Diagonal entries are the positives.
// strict = true removes them from the denominator (which makes the objective
// unbounded below as positives collapse; the default keeps them).
template <typename T>
Value<T> info_nce(Value<T> scores, bool strict) {
  const std::size_t n = scores.val().shape()[0];
  Tape<T>& tp = *scores.tape;
  Tensor<T> eye(Shape{n, n}, T(0));
  for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = T(1);
  Value<T> diag = row_sum(mul(scores, tp.constant(eye)));
  Value<T> masked = scores;
  if (strict) {
    Tensor<T> neg_inf_diag(Shape{n, n}, T(0));
    for (std::size_t i = 0; i < n; ++i) neg_inf_diag.at(i, i) = T(-1e30);
    masked = add(scores, tp.constant(neg_inf_diag));
  }
  Value<T> m = detach(row_max(masked));  // shift is exact for log-sum-exp grads
  Value<T> expd = exp_v(sub_rows(masked, m));
  Value<T> lse = add(log_v(row_sum(expd)), m);
  return mean_all(sub(lse, diag));
}

}  // namespace detail

// Bidirectional hyperbolic contrastive loss over matched pooled batches.
// Scores are negative geodesic distances over temperature.
template <typename T>
Value<T> contrastive_loss(const LorentzBatch<T>& img, const LorentzBatch<T>& brain, Value<T> tau,
                          bool strict_eq8 = false) {
  const std::size_t n = img.count();
  if (n < 2 || brain.count() != n)
    throw usage_error("contrastive loss needs matched batches of at least 2");
  Value<T> s_ib = neg(div(distance_matrix(img, brain), tau));
  Value<T> s_bi = neg(div(distance_matrix(brain, img), tau));
  return scale(add(detail::info_nce(s_ib, strict_eq8), detail::info_nce(s_bi, strict_eq8)),
               T(0.5));
}

// Euclidean twin: cosine similarity over temperature.
template <typename T>
Value<T> contrastive_loss_euclidean(Value<T> img, Value<T> brain, Value<T> tau,
                                    bool strict_eq8 = false) {
  const std::size_t n = img.val().shape()[0];
  if (n < 2 || brain.val().shape()[0] != n)
    throw usage_error("contrastive loss needs matched batches of at least 2");
  auto unit = [](Value<T> x) {
    Value<T> norm = sqrt_v(clamp_min(row_sum(square(x)), T(1e-24)));
    return div_rows(x, norm);
  };
  Value<T> sims = matmul(unit(img), unit(brain), false, true);
  Value<T> s_ib = div(sims, tau);
  Value<T> sims_t = matmul(unit(brain), unit(img), false, true);
  Value<T> s_bi = div(sims_t, tau);
  return scale(add(detail::info_nce(s_ib, strict_eq8), detail::info_nce(s_bi, strict_eq8)),
               T(0.5));
}

// Hinge on the exterior angle exceeding the apex aperture, image embeddings
// as apexes of the cones, matched pairs only.
template <typename T>
Value<T> entailment_loss(const LorentzBatch<T>& img, const LorentzBatch<T>& brain, T cone_k) {
  if (img.count() != brain.count()) throw usage_error("entailment loss needs matched batches");
  Value<T> ext = exterior_angle_rows(img, brain);
  Value<T> aper = aperture_rows(img, cone_k);
  return mean_all(relu(sub(ext, aper)));
}

template <typename T>
Value<T> total_loss(const LorentzBatch<T>& img, const LorentzBatch<T>& brain, Value<T> tau,
                    const LossConfig& cfg) {
  Value<T> con = contrastive_loss(img, brain, tau, cfg.strict_eq8);
  if (!cfg.entailment || cfg.lambda == 0.0) return con;
  Value<T> ent = entailment_loss(img, brain, static_cast<T>(cfg.cone_k));
  return add(con, scale(ent, static_cast<T>(cfg.lambda)));
}

// Independent per-class binary cross-entropy with logits, averaged over all
// entries; softplus keeps the evaluation stable at large magnitudes.
template <typename T>
Value<T> multilabel_loss(Value<T> logits, const Tensor<std::uint8_t>& targets) {
  const Tensor<T>& lv = logits.val();
  if (lv.shape() != targets.shape() || lv.rank() != 2)
    throw dim_error("multilabel loss shape mismatch");
  Tensor<T> t(lv.shape());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] > 1) throw usage_error("multilabel targets must be 0/1");
    t[i] = static_cast<T>(targets[i]);
  }
  Tape<T>& tp = *logits.tape;
  Value<T> tv = tp.constant(std::move(t));
  return mean_all(sub(softplus(logits), mul(logits, tv)));
}

}  // namespace lnn
