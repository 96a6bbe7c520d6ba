#pragma once

// Hybrid optimization: decoupled-weight-decay Adam for the Euclidean group,
// Riemannian Adam on the hyperboloid for manifold-valued parameters, and
// log-space Adam with value-space clamping for the curvature/temperature
// scalars. Every step is a deterministic function of state and gradients.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lnn/common.hpp"
#include "lnn/manifold.hpp"
#include "lnn/params.hpp"
#include "lnn/tensor.hpp"

namespace lnn {

struct OptimConfig {
  double lr = 2e-4;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// ---------------------------------------------------------------------------
// AdamW over a set of ParamStore tensors
// ---------------------------------------------------------------------------

template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamStore<T>& store, std::vector<std::size_t> ids, OptimConfig cfg)
      : cfg_(cfg), ids_(std::move(ids)) {
    for (std::size_t id : ids_) {
      m_.emplace_back(store.value(id).shape(), T(0));
      v_.emplace_back(store.value(id).shape(), T(0));
    }
  }

  const std::vector<std::size_t>& ids() const { return ids_; }
  std::size_t step_count() const { return step_; }

  // grads[i] pairs with ids()[i].
  void step(ParamStore<T>& store, const std::vector<Tensor<T>>& grads) {
    if (grads.size() != ids_.size()) throw state_error("gradient list does not match state");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      Tensor<T>& p = store.value(ids_[i]);
      const Tensor<T>& g = grads[i];
      if (!p.same_shape(g)) throw state_error("gradient shape mismatch for " +
                                              store.def(ids_[i]).name);
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double update = (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
        double pj = static_cast<double>(p[j]);
        pj -= cfg_.lr * update;
        pj -= cfg_.lr * cfg_.weight_decay * static_cast<double>(p[j]);  // decoupled decay
        p[j] = static_cast<T>(pj);
      }
    }
  }

  // State arrays for checkpointing, in id order.
  const Tensor<T>& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor<T>& second_moment(std::size_t i) const { return v_[i]; }
  Tensor<T>& first_moment(std::size_t i) { return m_[i]; }
  Tensor<T>& second_moment(std::size_t i) { return v_[i]; }
  void set_step_count(std::size_t s) { step_ = s; }

 private:
  OptimConfig cfg_;
  std::vector<std::size_t> ids_;
  std::vector<Tensor<T>> m_, v_;
  std::size_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Log-space scalar with value-space clamping
// ---------------------------------------------------------------------------

struct LogScalar {
  std::string name;
  double log_value = 0.0;
  double value = 1.0;  // clamp(exp(log_value)); exact at the bounds
  double lo = 0.0, hi = 0.0;

  static LogScalar init(std::string name, double v, double lo, double hi) {
    if (!(lo > 0.0) || !(hi >= lo)) throw config_error("bad clamp range for " + name);
    LogScalar s;
    s.name = std::move(name);
    s.lo = lo;
    s.hi = hi;
    s.set_value(v);
    return s;
  }

  void set_value(double v) {
    value = std::min(std::max(v, lo), hi);
    log_value = std::log(value);
  }

  void clamp_from_log() {
    const double v = std::exp(log_value);
    if (v < lo) {
      value = lo;
      log_value = std::log(lo);
    } else if (v > hi) {
      value = hi;
      log_value = std::log(hi);
    } else {
      value = v;
    }
  }
};

// Adam in log space; accepts the gradient w.r.t. the VALUE and applies the
// chain rule d/dlog = value * d/dvalue internally.
class ScalarAdam {
 public:
  ScalarAdam() = default;
  explicit ScalarAdam(OptimConfig cfg) : cfg_(cfg) {}

  void step(LogScalar& s, double grad_wrt_value) {
    ++step_;
    const double g = grad_wrt_value * s.value;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g * g;
    const double mh = m_ / (1.0 - std::pow(cfg_.beta1, static_cast<double>(step_)));
    const double vh = v_ / (1.0 - std::pow(cfg_.beta2, static_cast<double>(step_)));
    s.log_value -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    s.clamp_from_log();
  }

  double first_moment() const { return m_; }
  double second_moment() const { return v_; }
  std::size_t step_count() const { return step_; }
  void restore(double m, double v, std::size_t t) { m_ = m; v_ = v; step_ = t; }

 private:
  OptimConfig cfg_;
  double m_ = 0.0, v_ = 0.0;
  std::size_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Riemannian Adam on hyperboloid points
// ---------------------------------------------------------------------------

// Moments live in ambient tangent coordinates at the current iterate. After
// each move the first moment is parallel-transported to the new point; the
// elementwise second moment is carried over unchanged (magnitude-preserving).
template <typename T>
class RiemannianAdam {
 public:
  RiemannianAdam() = default;
  RiemannianAdam(std::size_t ambient_dim, OptimConfig cfg)
      : cfg_(cfg), m_(ambient_dim, T(0)), v_(ambient_dim, T(0)) {}

  void step(LorentzPoint<T>& x, const std::vector<T>& euclidean_grad, Curvature c) {
    if (residency_defect(x, c) > (sizeof(T) == 4 ? 1e-4 : 1e-8))
      throw state_error("riemannian adam parameter left the manifold");
    if (euclidean_grad.size() != x.ambient_dim()) throw state_error("gradient dimension mismatch");
    ++step_;
    const std::vector<T> g = riemannian_gradient(x, euclidean_grad, c);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    std::vector<T> dir(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg_.beta1 * static_cast<double>(m_[i]) + (1.0 - cfg_.beta1) * gi;
      const double vi = cfg_.beta2 * static_cast<double>(v_[i]) + (1.0 - cfg_.beta2) * gi * gi;
      m_[i] = static_cast<T>(mi);
      v_[i] = static_cast<T>(vi);
      dir[i] = static_cast<T>(-cfg_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps));
    }
    // Elementwise scaling can leave the tangent space; re-project before exp.
    std::vector<T> tangent_dir = project_tangent(x, dir, c);
    LorentzPoint<T> next = exp_map(x, tangent_dir, c);
    next = reproject(next, c);
    m_ = transport(x, next, project_tangent(x, m_, c), c);
    x = next;
  }

  const std::vector<T>& first_moment() const { return m_; }
  const std::vector<T>& second_moment() const { return v_; }
  std::size_t step_count() const { return step_; }

 private:
  OptimConfig cfg_;
  std::vector<T> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace lnn
