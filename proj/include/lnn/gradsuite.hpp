#pragma once

// Registered central-finite-difference suite over every layer and loss,
// float64, eps 1e-6. Parameters are drawn at unit-ish scale so every
// gradient is resolvable by central differences (at the 0.02 training init
// the attention projections sit below the fd noise floor). Temperature and
// curvature scalars enter as checked inputs wherever they participate.

#include <string>
#include <vector>

#include "lnn/layers.hpp"
#include "lnn/losses.hpp"
#include "lnn/model.hpp"

namespace lnn {

struct GradCheckResult {
  std::string name;
  double max_error = 0.0;
  std::size_t configs = 0;
};

namespace gradsuite_detail {

inline Tensor<double> spatial_draw(Rng& rng, std::size_t n, std::size_t d, double sigma = 0.6,
                                   double off = 0.0) {
  Tensor<double> s(Shape{n, d});
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.normal(0.0, sigma);
    if (off > 0.0) s[i] += s[i] >= 0 ? off : -off;
  }
  return s;
}

inline void rescale_params(ParamStore<double>& ps, Rng& rng, double sigma = 0.4) {
  for (std::size_t id = 0; id < ps.size(); ++id)
    for (std::size_t i = 0; i < ps.value(id).size(); ++i)
      ps.value(id)[i] = rng.normal(0.0, sigma);
}

// Random cotangent drawn once per configuration. Contracting the output
// against it keeps parameter coordinates first-order visible where plain
// sums cancel (attention reweighting). The small magnitude matters too:
// softmax attention has exact null directions (a constant shift of every
// key row), whose true gradient is zero; keeping |loss| small puts the
// central-difference noise under the 1e-8 absolute floor of the error
// formula, so genuinely-zero coordinates certify instead of reading noise.
inline Tensor<double> probe(Rng& rng, Shape shape) {
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, 0.002);
  return t;
}

template <typename T>
Value<T> contract(Value<T> out, const Tensor<T>& w) {
  return mean_all(mul(out, out.tape->constant(w)));
}

// grad_check over [inputs..., params...] with the context adopting the
// parameter leaves.
template <typename BuildFn>
double check_with_params(ParamStore<double>& ps, std::vector<Tensor<double>> inputs,
                         BuildFn&& build) {
  const std::size_t base = inputs.size();
  for (std::size_t id = 0; id < ps.size(); ++id) inputs.push_back(ps.value(id));
  return grad_check<double>(
      inputs,
      [&](Tape<double>& tp, std::vector<Value<double>>& xs) {
        ParamContext<double> P(tp, ps, true);
        for (std::size_t id = 0; id < ps.size(); ++id) P.preset(id, xs[base + id]);
        return build(tp, P, xs);
      });
}

}  // namespace gradsuite_detail

// Runs every registered check `configs` times; deterministic under `seed`.
inline std::vector<GradCheckResult> run_gradient_suite(std::size_t configs,
                                                       std::uint64_t seed = 20240501) {
  using namespace gradsuite_detail;
  std::vector<GradCheckResult> results;

  auto record = [&](const std::string& name, auto&& one_config) {
    Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * (results.size() + 1)));
    double worst = 0.0;
    for (std::size_t i = 0; i < configs; ++i) worst = std::max(worst, one_config(rng));
    results.push_back(GradCheckResult{name, worst, configs});
  };

  record("lorentz_linear", [](Rng& rng) {
    ParamStore<double> ps;
    auto lin = LorentzLinear<double>::create(ps, "l", 3, 4, rng, 0.02);
    rescale_params(ps, rng);
    return check_with_params(
        ps, {spatial_draw(rng, 2, 3), Tensor<double>::scalar(rng.uniform(0.5, 2.0)),
             Tensor<double>::scalar(rng.uniform(0.5, 2.0))},
        [&](Tape<double>&, ParamContext<double>& P, std::vector<Value<double>>& xs) {
          auto y = lin.forward(P, lift_rows(xs[0], xs[1]), xs[2]);
          return mean_all(mul_rows(y.spatial, y.time));
        });
  });

  record("lorentz_layer_norm", [](Rng& rng) {
    ParamStore<double> ps;
    auto ln = LorentzLayerNorm<double>::create(ps, "n", 5);
    rescale_params(ps, rng);
    return check_with_params(
        ps, {spatial_draw(rng, 3, 5, 1.0), Tensor<double>::scalar(rng.uniform(0.5, 2.0))},
        [&](Tape<double>&, ParamContext<double>& P, std::vector<Value<double>>& xs) {
          auto y = ln.forward(P, lift_rows(xs[0], xs[1]));
          return mean_all(mul_rows(square(y.spatial), y.time));
        });
  });

  record("lorentz_attention", [](Rng& rng) {
    ParamStore<double> ps;
    auto attn = LorentzMHSA<double>::create(ps, "a", 4, 2, rng);
    rescale_params(ps, rng);
    const Tensor<double> ws = probe(rng, {3, 4});
    const Tensor<double> wt = probe(rng, {3});
    return check_with_params(
        ps, {spatial_draw(rng, 3, 4), Tensor<double>::scalar(rng.uniform(0.5, 2.0))},
        [&](Tape<double>&, ParamContext<double>& P, std::vector<Value<double>>& xs) {
          auto y = attn.forward(P, lift_rows(xs[0], xs[1]));
          return add(contract(y.spatial, ws), contract(y.time, wt));
        });
  });

  record("lorentz_residual", [](Rng& rng) {
    ParamStore<double> ps;  // no parameters; beta enters as an input
    return check_with_params(
        ps,
        {spatial_draw(rng, 3, 4), spatial_draw(rng, 3, 4),
         Tensor<double>::scalar(rng.uniform(0.5, 2.0)),
         Tensor<double>::scalar(rng.uniform(0.2, 1.5))},
        [&](Tape<double>&, ParamContext<double>&, std::vector<Value<double>>& xs) {
          auto x = lift_rows(xs[0], xs[2]);
          auto y = lift_rows(xs[1], xs[2]);
          auto r = lorentz_residual(x, y, xs[3]);
          return mean_all(mul_rows(r.spatial, r.time));
        });
  });

  record("lorentz_mlp", [](Rng& rng) {
    ParamStore<double> ps;
    auto mlp = LorentzMLP<double>::create(ps, "m", 3, rng);
    rescale_params(ps, rng);
    return check_with_params(
        ps, {spatial_draw(rng, 2, 3), Tensor<double>::scalar(rng.uniform(0.5, 2.0))},
        [&](Tape<double>&, ParamContext<double>& P, std::vector<Value<double>>& xs) {
          auto y = mlp.forward(P, lift_rows(xs[0], xs[1]));
          return mean_all(mul_rows(y.spatial, y.time));
        });
  });

  record("lorentz_block", [](Rng& rng) {
    ParamStore<double> ps;
    auto blk = LorentzBlock<double>::create(ps, "b", 4, 2, rng, BlockKind::Transformer);
    rescale_params(ps, rng);
    const Tensor<double> ws = probe(rng, {3, 4});
    const Tensor<double> wt = probe(rng, {3});
    return check_with_params(
        ps, {spatial_draw(rng, 3, 4), Tensor<double>::scalar(rng.uniform(0.5, 2.0))},
        [&](Tape<double>&, ParamContext<double>& P, std::vector<Value<double>>& xs) {
          auto y = blk.forward(P, lift_rows(xs[0], xs[1]));
          return add(contract(y.spatial, ws), contract(y.time, wt));
        });
  });

  record("lorentz_mlr", [](Rng& rng) {
    ParamStore<double> ps;
    auto mlr = LorentzMLR<double>::create(ps, "r", 3, 2, rng);
    rescale_params(ps, rng);
    return check_with_params(
        ps, {spatial_draw(rng, 2, 3), Tensor<double>::scalar(rng.uniform(0.5, 2.0))},
        [&](Tape<double>&, ParamContext<double>& P, std::vector<Value<double>>& xs) {
          return mean_all(tanh_v(mlr.forward(P, lift_rows(xs[0], xs[1]))));
        });
  });

  record("euclidean_block", [](Rng& rng) {
    ParamStore<double> ps;
    auto blk = LorentzBlock<double>::create(ps, "b", 4, 2, rng, BlockKind::Transformer);
    rescale_params(ps, rng);
    const Tensor<double> ws = probe(rng, {3, 4});
    return check_with_params(
        ps, {spatial_draw(rng, 3, 4, 1.0)},
        [&](Tape<double>&, ParamContext<double>& P, std::vector<Value<double>>& xs) {
          return contract(blk.forward_euclidean(P, xs[0]), ws);
        });
  });

  // encode_image -> classify composite: exercises the projector, pooling,
  // the c_mid -> c_out rescale and the MLR head end to end. The deep brain
  // stack is covered layer-by-layer above; pooling after t=2 near-identical
  // tokens flattens attention-score gradients below what eps=1e-6 central
  // differences can resolve, so the composite here is the classify path the
  // losses actually consume.
  record("image_encoder_classify", [](Rng& rng) {
    ModelConfig cfg;
    cfg.voxels = 8;
    cfg.tokens = 3;
    cfg.dim = 4;
    cfg.feat = 5;
    cfg.heads = 2;
    cfg.depth = 1;
    cfg.classes = 3;
    cfg.subjects = {"S1"};
    Model<double> model(cfg, rng.next_u64());
    rescale_params(model.params, rng, 0.3);
    const Tensor<double> wl = probe(rng, {1, 3});
    return check_with_params(
        model.params,
        {spatial_draw(rng, 3, 5, 0.8), Tensor<double>::scalar(rng.uniform(0.7, 1.5)),
         Tensor<double>::scalar(rng.uniform(1.0, 2.5))},
        [&](Tape<double>& tp, ParamContext<double>& P, std::vector<Value<double>>& xs) {
          ScalarBundle<double> sc;
          sc.c_in = tp.constant_scalar(1.0);
          sc.c_mid = xs[1];
          sc.c_out = xs[2];
          sc.tau = tp.constant_scalar(0.07);
          LorentzBatch<double> lifted = lift_rows(xs[0], sc.c_in);
          LorentzBatch<double> tok = model.image_proj.forward(P, lifted, sc.c_mid);
          auto pooled = centroid_pool(tok, Tensor<double>(Shape{3}, 1.0));
          return contract(model.classify(P, pooled, sc.c_out), wl);
        });
  });

  record("contrastive_loss", [](Rng& rng) {
    ParamStore<double> ps;
    return check_with_params(
        ps,
        {spatial_draw(rng, 4, 3), spatial_draw(rng, 4, 3),
         Tensor<double>::scalar(rng.uniform(0.5, 2.0)),
         Tensor<double>::scalar(rng.uniform(0.05, 0.5))},
        [&](Tape<double>&, ParamContext<double>&, std::vector<Value<double>>& xs) {
          return contrastive_loss(lift_rows(xs[0], xs[2]), lift_rows(xs[1], xs[2]), xs[3]);
        });
  });

  record("entailment_loss", [](Rng& rng) {
    ParamStore<double> ps;
    return check_with_params(
        ps,
        {spatial_draw(rng, 4, 3, 0.8, 0.4), spatial_draw(rng, 4, 3, 0.8),
         Tensor<double>::scalar(rng.uniform(0.5, 2.0))},
        [&](Tape<double>&, ParamContext<double>&, std::vector<Value<double>>& xs) {
          return entailment_loss(lift_rows(xs[0], xs[2]), lift_rows(xs[1], xs[2]), 0.1);
        });
  });

  record("total_loss", [](Rng& rng) {
    ParamStore<double> ps;
    return check_with_params(
        ps,
        {spatial_draw(rng, 4, 3, 0.8, 0.4), spatial_draw(rng, 4, 3),
         Tensor<double>::scalar(rng.uniform(0.5, 2.0)),
         Tensor<double>::scalar(rng.uniform(0.05, 0.5))},
        [&](Tape<double>&, ParamContext<double>&, std::vector<Value<double>>& xs) {
          LossConfig cfg;
          return total_loss(lift_rows(xs[0], xs[2]), lift_rows(xs[1], xs[2]), xs[3], cfg);
        });
  });

  record("multilabel_loss", [](Rng& rng) {
    ParamStore<double> ps;
    Tensor<std::uint8_t> targets(Shape{3, 4});
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = rng.uniform() < 0.4 ? 1 : 0;
    Tensor<double> logits(Shape{3, 4});
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = rng.normal(0.0, 1.5);
    return check_with_params(
        ps, {logits},
        [&, targets](Tape<double>&, ParamContext<double>&, std::vector<Value<double>>& xs) {
          return multilabel_loss(xs[0], targets);
        });
  });

  return results;
}

}  // namespace lnn
