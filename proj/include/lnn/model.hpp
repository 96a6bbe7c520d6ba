#pragma once

// The full alignment model: per-subject tokenizers lifting voxel vectors
// into token batches, a shared encoder stack, an image projector, centroid
// pooling, and the classification head, in either geometry. Parameter layout
// is identical across geometries so the baseline differs only in forward
// rules.

#include <cstdint>
#include <string>
#include <vector>

#include "lnn/layers.hpp"
#include "lnn/losses.hpp"
#include "lnn/optim.hpp"
#include "lnn/serialize.hpp"

namespace lnn {

enum class Geometry { Lorentz, Euclidean };

inline std::string geometry_name(Geometry g) {
  return g == Geometry::Lorentz ? "lorentz" : "euclidean";
}
inline Geometry geometry_from_name(const std::string& s) {
  if (s == "lorentz") return Geometry::Lorentz;
  if (s == "euclidean") return Geometry::Euclidean;
  throw config_error("unknown geometry '" + s + "'");
}

struct ModelConfig {
  std::size_t voxels = 512;
  std::size_t tokens = 16;
  std::size_t dim = 64;
  std::size_t feat = 96;
  std::size_t heads = 4;
  std::size_t depth = 2;
  std::size_t classes = 12;
  Geometry geometry = Geometry::Lorentz;
  BlockKind encoder = BlockKind::Transformer;
  std::vector<std::string> subjects{"S1", "S2", "S3", "S4"};
  bool curvature_learnable = true;
  double c_mid_init = 1.0;
  double c_out_init = 2.0;
  double c_lo = 0.1, c_hi = 10.0;
  double tau_init = 0.07;
  double tau_floor = 0.01, tau_ceil = 100.0;

  void validate() const {
    if (voxels == 0 || tokens == 0 || dim == 0 || feat == 0 || depth > 64)
      throw config_error("model dimensions must be positive");
    if (heads == 0 || dim % heads != 0) throw config_error("dim must be divisible by heads");
    if (subjects.empty()) throw config_error("at least one subject required");
    if (classes == 0) throw config_error("at least one class required");
    if (!(c_mid_init >= c_lo && c_mid_init <= c_hi && c_out_init >= c_lo && c_out_init <= c_hi))
      throw config_error("curvature init outside clamp range");
  }
};

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"voxels", c.voxels},
              {"tokens", c.tokens},
              {"dim", c.dim},
              {"feat", c.feat},
              {"heads", c.heads},
              {"depth", c.depth},
              {"classes", c.classes},
              {"geometry", geometry_name(c.geometry)},
              {"encoder", c.encoder == BlockKind::Transformer ? "transformer" : "mlp"},
              {"subjects", c.subjects},
              {"curvature_learnable", c.curvature_learnable},
              {"c_mid_init", c.c_mid_init},
              {"c_out_init", c.c_out_init},
              {"c_lo", c.c_lo},
              {"c_hi", c.c_hi},
              {"tau_init", c.tau_init},
              {"tau_floor", c.tau_floor},
              {"tau_ceil", c.tau_ceil}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.voxels = j.at("voxels").get<std::size_t>();
  c.tokens = j.at("tokens").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.feat = j.at("feat").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.depth = j.at("depth").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.geometry = geometry_from_name(j.at("geometry").get<std::string>());
  const std::string enc = j.at("encoder").get<std::string>();
  if (enc != "transformer" && enc != "mlp") throw config_error("unknown encoder '" + enc + "'");
  c.encoder = enc == "transformer" ? BlockKind::Transformer : BlockKind::Mlp;
  c.subjects = j.at("subjects").get<std::vector<std::string>>();
  c.curvature_learnable = j.at("curvature_learnable").get<bool>();
  c.c_mid_init = j.at("c_mid_init").get<double>();
  c.c_out_init = j.at("c_out_init").get<double>();
  c.c_lo = j.at("c_lo").get<double>();
  c.c_hi = j.at("c_hi").get<double>();
  c.tau_init = j.at("tau_init").get<double>();
  c.tau_floor = j.at("tau_floor").get<double>();
  c.tau_ceil = j.at("tau_ceil").get<double>();
  return c;
}

template <typename T>
class Model {
 public:
  ModelConfig config;
  ParamStore<T> params;
  std::vector<LorentzLinear<T>> tokenizers;  // one per subject, subjects order
  std::vector<LorentzBlock<T>> blocks;
  LorentzLinear<T> image_proj;
  LorentzMLR<T> mlr;
  LogScalar tau, c_mid, c_out;
  std::uint64_t init_seed = 0;

  Model(ModelConfig cfg, std::uint64_t seed) : config(std::move(cfg)), init_seed(seed) {
    config.validate();
    Rng rng(seed);
    for (const auto& s : config.subjects)
      tokenizers.push_back(LorentzLinear<T>::create(params, "tok." + s, config.voxels,
                                                    config.tokens * config.dim, rng));
    for (std::size_t i = 0; i < config.depth; ++i)
      blocks.push_back(LorentzBlock<T>::create(params, "enc." + std::to_string(i), config.dim,
                                               config.heads, rng, config.encoder));
    // nonzero bias keeps image embeddings off the exact origin
    image_proj = LorentzLinear<T>::create(params, "img", config.feat, config.dim, rng, 0.02);
    mlr = LorentzMLR<T>::create(params, "mlr", config.dim, config.classes, rng);
    tau = LogScalar::init("tau", config.tau_init, config.tau_floor, config.tau_ceil);
    c_mid = LogScalar::init("c_mid", config.c_mid_init, config.c_lo, config.c_hi);
    c_out = LogScalar::init("c_out", config.c_out_init, config.c_lo, config.c_hi);
  }

  std::size_t subject_index(const std::string& id) const {
    for (std::size_t i = 0; i < config.subjects.size(); ++i)
      if (config.subjects[i] == id) return i;
    throw usage_error("unknown subject '" + id + "'");
  }

  // Scalars become tracked leaves once per tape. c_in is pinned at 1.
  ScalarBundle<T> bind_scalars(Tape<T>& tape, bool track_grads = true) const {
    ScalarBundle<T> b;
    b.c_in = tape.constant_scalar(T(1));
    b.c_mid = tape.leaf(Tensor<T>::scalar(static_cast<T>(c_mid.value)),
                        track_grads && config.curvature_learnable);
    b.c_out = tape.leaf(Tensor<T>::scalar(static_cast<T>(c_out.value)),
                        track_grads && config.curvature_learnable);
    b.tau = tape.leaf(Tensor<T>::scalar(static_cast<T>(tau.value)), track_grads);
    return b;
  }

  // ---- Lorentz forward paths ----

  LorentzBatch<T> brain_tokens(ParamContext<T>& P, const ScalarBundle<T>& sc,
                               std::size_t subject, const Tensor<T>& voxels) const {
    if (subject >= tokenizers.size()) throw usage_error("subject index out of range");
    if (voxels.size() != config.voxels)
      throw dim_error("voxel vector length " + std::to_string(voxels.size()));
    Tape<T>& tape = P.tape();
    Value<T> vox = tape.constant(Tensor<T>(Shape{1, config.voxels}, voxels.vec()));
    LorentzBatch<T> lifted = lift_rows(vox, sc.c_in);
    Value<T> s = tokenizers[subject].affine_spatial(P, lifted.spatial);   // [1, t*d]
    Value<T> tok = reshape(s, Shape{config.tokens, config.dim});
    return rescale_rows(lift_rows(tok, sc.c_in), sc.c_mid);
  }

  LorentzBatch<T> encode_brain(ParamContext<T>& P, const ScalarBundle<T>& sc, std::size_t subject,
                               const Tensor<T>& voxels) const {
    LorentzBatch<T> tok = brain_tokens(P, sc, subject, voxels);
    for (const auto& blk : blocks) tok = blk.forward(P, tok);
    return centroid_pool(tok, Tensor<T>(Shape{config.tokens}, T(1)));
  }

  LorentzBatch<T> encode_image(ParamContext<T>& P, const ScalarBundle<T>& sc,
                               const Tensor<T>& features) const {
    if (features.shape() != Shape{config.tokens, config.feat})
      throw dim_error("image features must be " + std::to_string(config.tokens) + "x" +
                      std::to_string(config.feat) + ", got " + shape_str(features.shape()));
    Tape<T>& tape = P.tape();
    LorentzBatch<T> lifted = lift_rows(tape.constant(features), sc.c_in);
    LorentzBatch<T> tok = image_proj.forward(P, lifted, sc.c_mid);
    return centroid_pool(tok, Tensor<T>(Shape{config.tokens}, T(1)));
  }

  // pooled at c_mid -> logits at c_out.
  Value<T> classify(ParamContext<T>& P, const LorentzBatch<T>& pooled, Value<T> c_out_v) const {
    return mlr.forward(P, rescale_rows(pooled, c_out_v));
  }

  // ---- Euclidean twin paths (same parameters, flat geometry) ----

  Value<T> encode_brain_euclidean(ParamContext<T>& P, std::size_t subject,
                                  const Tensor<T>& voxels) const {
    if (subject >= tokenizers.size()) throw usage_error("subject index out of range");
    if (voxels.size() != config.voxels)
      throw dim_error("voxel vector length " + std::to_string(voxels.size()));
    Tape<T>& tape = P.tape();
    Value<T> vox = tape.constant(Tensor<T>(Shape{1, config.voxels}, voxels.vec()));
    Value<T> tok = reshape(tokenizers[subject].forward_euclidean(P, vox),
                           Shape{config.tokens, config.dim});
    for (const auto& blk : blocks) tok = blk.forward_euclidean(P, tok);
    return mean_pool_rows(tok);
  }

  Value<T> encode_image_euclidean(ParamContext<T>& P, const Tensor<T>& features) const {
    if (features.shape() != Shape{config.tokens, config.feat})
      throw dim_error("image features shape mismatch");
    Value<T> tok = image_proj.forward_euclidean(P, P.tape().constant(features));
    return mean_pool_rows(tok);
  }

  Value<T> classify_euclidean(ParamContext<T>& P, Value<T> pooled) const {
    return mlr.forward_euclidean(P, pooled);
  }

 private:
  static Value<T> mean_pool_rows(Value<T> tok) {
    const std::size_t t = tok.val().shape()[0];
    const std::size_t d = tok.val().shape()[1];
    Tape<T>& tape = *tok.tape;
    Value<T> w = tape.constant(Tensor<T>(Shape{1, t}, T(1) / static_cast<T>(t)));
    return matmul(w, tok);  // [1, d]
  }
};

// ---------------------------------------------------------------------------
// Checkpoint: manifest.json + params.bin (little-endian float32 blob)
// ---------------------------------------------------------------------------

struct CheckpointExtra {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& dir,
                     const std::vector<CheckpointExtra>& extras = {},
                     const json& trainer_meta = json::object()) {
  ensure_dir(dir);
  json arrays = json::array();
  std::vector<float> blob;
  auto append = [&](const std::string& name, const Shape& shape, const float* data,
                    std::size_t n) {
    arrays.push_back(json{{"name", name}, {"shape", shape_to_json(shape)}, {"dtype", "f32"}});
    blob.insert(blob.end(), data, data + n);
  };
  for (std::size_t id = 0; id < model.params.size(); ++id) {
    const auto& def = model.params.def(id);
    std::vector<float> cast(def.value.size());
    for (std::size_t i = 0; i < cast.size(); ++i) cast[i] = static_cast<float>(def.value[i]);
    append(def.name, def.value.shape(), cast.data(), cast.size());
  }
  for (const auto& e : extras) append(e.name, e.shape, e.data.data(), e.data.size());

  json manifest{{"format", "lnn-checkpoint"},
                {"version", 1},
                {"config", model_config_to_json(model.config)},
                {"init_seed", model.init_seed},
                {"scalars",
                 json{{"tau", model.tau.value},
                      {"c_mid", model.c_mid.value},
                      {"c_out", model.c_out.value}}},
                {"arrays", arrays},
                {"trainer", trainer_meta}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
  write_array_file(dir / "params.bin", blob.data(), blob.size());
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& dir,
                         std::vector<CheckpointExtra>* extras_out = nullptr,
                         json* trainer_meta_out = nullptr) {
  const json manifest = parse_json_file(dir / "manifest.json");
  if (manifest.value("format", "") != "lnn-checkpoint")
    throw format_error("not a checkpoint manifest: " + (dir / "manifest.json").string());
  Model<T> model(model_config_from_json(manifest.at("config")),
                 manifest.at("init_seed").get<std::uint64_t>());
  std::size_t total = 0;
  for (const auto& a : manifest.at("arrays")) total += shape_size(shape_from_json(a.at("shape")));
  const std::vector<float> blob = read_array_file<float>(dir / "params.bin", total);
  std::size_t off = 0;
  for (const auto& a : manifest.at("arrays")) {
    const std::string name = a.at("name").get<std::string>();
    const Shape shape = shape_from_json(a.at("shape"));
    const std::size_t n = shape_size(shape);
    if (model.params.contains(name)) {
      Tensor<T>& dst = model.params.value(model.params.find(name));
      if (dst.shape() != shape)
        throw format_error("checkpoint array " + name + " has shape " + shape_str(shape) +
                           ", model expects " + shape_str(dst.shape()));
      for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(blob[off + i]);
    } else if (extras_out) {
      CheckpointExtra e;
      e.name = name;
      e.shape = shape;
      e.data.assign(blob.begin() + static_cast<std::ptrdiff_t>(off),
                    blob.begin() + static_cast<std::ptrdiff_t>(off + n));
      extras_out->push_back(std::move(e));
    }
    off += n;
  }
  const json& sc = manifest.at("scalars");
  model.tau.set_value(sc.at("tau").get<double>());
  model.c_mid.set_value(sc.at("c_mid").get<double>());
  model.c_out.set_value(sc.at("c_out").get<double>());
  if (trainer_meta_out) *trainer_meta_out = manifest.value("trainer", json::object());
  return model;
}

}  // namespace lnn
