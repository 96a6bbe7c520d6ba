#pragma once

// Run configuration: one JSON file covering model, loss, optimizer, dataset
// path and ablation switches. Every field has a default; unknown keys are
// rejected so typos cannot silently fall back.

#include <set>
#include <string>

#include "lnn/data.hpp"
#include "lnn/losses.hpp"
#include "lnn/model.hpp"
#include "lnn/optim.hpp"

namespace lnn {

struct RunConfig {
  std::string dataset;
  std::string out = "out";
  std::uint64_t seed = 7;
  std::size_t epochs = 50;
  std::size_t batch = 32;
  std::size_t threads = 1;
  Geometry geometry = Geometry::Lorentz;
  std::string encoder = "transformer";  // transformer | mlp
  std::size_t tokens = 16;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t depth = 2;
  LossConfig loss;
  OptimConfig optim;
  bool curvature_learnable = true;
  double c_mid_init = 1.0;
  double c_out_init = 2.0;
  double c_lo = 0.1, c_hi = 10.0;
  bool train_classifier = true;
};

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& known,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw config_error("unknown key '" + it.key() + "' in " + where);
}

}  // namespace detail

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  detail::check_keys(j,
                     {"dataset", "out", "seed", "epochs", "batch", "threads", "geometry",
                      "model", "loss", "optim", "curvature", "train_classifier"},
                     "config");
  c.dataset = j.value("dataset", c.dataset);
  c.out = j.value("out", c.out);
  c.seed = j.value("seed", c.seed);
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.threads = j.value("threads", c.threads);
  if (j.contains("geometry")) c.geometry = geometry_from_name(j.at("geometry").get<std::string>());
  c.train_classifier = j.value("train_classifier", c.train_classifier);
  if (j.contains("model")) {
    const json& m = j.at("model");
    detail::check_keys(m, {"encoder", "tokens", "dim", "heads", "depth"}, "config.model");
    c.encoder = m.value("encoder", c.encoder);
    if (c.encoder != "transformer" && c.encoder != "mlp")
      throw config_error("model.encoder must be transformer or mlp");
    c.tokens = m.value("tokens", c.tokens);
    c.dim = m.value("dim", c.dim);
    c.heads = m.value("heads", c.heads);
    c.depth = m.value("depth", c.depth);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    detail::check_keys(
        l, {"tau_init", "tau_floor", "lambda", "cone_k", "strict_eq8", "entailment"},
        "config.loss");
    c.loss.tau_init = l.value("tau_init", c.loss.tau_init);
    c.loss.tau_floor = l.value("tau_floor", c.loss.tau_floor);
    c.loss.lambda = l.value("lambda", c.loss.lambda);
    c.loss.cone_k = l.value("cone_k", c.loss.cone_k);
    c.loss.strict_eq8 = l.value("strict_eq8", c.loss.strict_eq8);
    c.loss.entailment = l.value("entailment", c.loss.entailment);
  }
  if (j.contains("optim")) {
    const json& o = j.at("optim");
    detail::check_keys(o, {"lr", "weight_decay", "beta1", "beta2", "eps"}, "config.optim");
    c.optim.lr = o.value("lr", c.optim.lr);
    c.optim.weight_decay = o.value("weight_decay", c.optim.weight_decay);
    c.optim.beta1 = o.value("beta1", c.optim.beta1);
    c.optim.beta2 = o.value("beta2", c.optim.beta2);
    c.optim.eps = o.value("eps", c.optim.eps);
  }
  if (j.contains("curvature")) {
    const json& cv = j.at("curvature");
    detail::check_keys(cv, {"learnable", "c_mid_init", "c_out_init", "lo", "hi"},
                       "config.curvature");
    c.curvature_learnable = cv.value("learnable", c.curvature_learnable);
    c.c_mid_init = cv.value("c_mid_init", c.c_mid_init);
    c.c_out_init = cv.value("c_out_init", c.c_out_init);
    c.c_lo = cv.value("lo", c.c_lo);
    c.c_hi = cv.value("hi", c.c_hi);
  }
  return c;
}

inline json run_config_to_json(const RunConfig& c) {
  return json{
      {"dataset", c.dataset},
      {"out", c.out},
      {"seed", c.seed},
      {"epochs", c.epochs},
      {"batch", c.batch},
      {"threads", c.threads},
      {"geometry", geometry_name(c.geometry)},
      {"train_classifier", c.train_classifier},
      {"model",
       json{{"encoder", c.encoder},
            {"tokens", c.tokens},
            {"dim", c.dim},
            {"heads", c.heads},
            {"depth", c.depth}}},
      {"loss",
       json{{"tau_init", c.loss.tau_init},
            {"tau_floor", c.loss.tau_floor},
            {"lambda", c.loss.lambda},
            {"cone_k", c.loss.cone_k},
            {"strict_eq8", c.loss.strict_eq8},
            {"entailment", c.loss.entailment}}},
      {"optim",
       json{{"lr", c.optim.lr},
            {"weight_decay", c.optim.weight_decay},
            {"beta1", c.optim.beta1},
            {"beta2", c.optim.beta2},
            {"eps", c.optim.eps}}},
      {"curvature",
       json{{"learnable", c.curvature_learnable},
            {"c_mid_init", c.c_mid_init},
            {"c_out_init", c.c_out_init},
            {"lo", c.c_lo},
            {"hi", c.c_hi}}}};
}

// Model configuration for a given dataset under this run configuration.
inline ModelConfig model_config_for(const RunConfig& rc, const SyntheticDataset& data) {
  ModelConfig mc;
  mc.voxels = data.config.voxels;
  mc.tokens = rc.tokens;
  mc.dim = rc.dim;
  mc.feat = data.config.feat_dim;
  mc.heads = rc.heads;
  mc.depth = rc.depth;
  mc.classes = data.num_classes();
  mc.geometry = rc.geometry;
  mc.encoder = rc.encoder == "mlp" ? BlockKind::Mlp : BlockKind::Transformer;
  mc.subjects = data.subjects;
  mc.curvature_learnable = rc.curvature_learnable;
  mc.c_mid_init = rc.c_mid_init;
  mc.c_out_init = rc.c_out_init;
  mc.c_lo = rc.c_lo;
  mc.c_hi = rc.c_hi;
  mc.tau_init = rc.loss.tau_init;
  mc.tau_floor = rc.loss.tau_floor;
  if (rc.tokens != data.config.tokens)
    throw config_error("model.tokens (" + std::to_string(rc.tokens) +
                       ") must match the dataset token count (" +
                       std::to_string(data.config.tokens) + ")");
  mc.validate();
  return mc;
}

}  // namespace lnn
