#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "lnn/model.hpp"
#include "lnn/rng.hpp"

using namespace lnn;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.voxels = 12;
  c.tokens = 3;
  c.dim = 4;
  c.feat = 5;
  c.heads = 2;
  c.depth = 1;
  c.classes = 3;
  c.subjects = {"S1", "S2"};
  return c;
}

Tensor<double> random_vec(Rng& rng, Shape shape, double sigma = 1.0) {
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, sigma);
  return t;
}

}  // namespace

TEST_CASE("encode_brain is deterministic and subject-specific") {
  Model<double> model(small_config(), 99);
  Rng rng(1);
  Tensor<double> vox = random_vec(rng, Shape{12});

  auto run = [&](std::size_t subject) {
    Tape<double> tp;
    ParamContext<double> P(tp, model.params, false);
    auto sc = model.bind_scalars(tp, false);
    auto pooled = model.encode_brain(P, sc, subject, vox);
    std::vector<double> out{pooled.time.val()[0]};
    for (std::size_t j = 0; j < 4; ++j) out.push_back(pooled.spatial.val().at(0, j));
    return out;
  };
  auto a1 = run(0), a2 = run(0), b = run(1);
  CHECK(a1 == a2);  // bitwise deterministic
  bool differs = false;
  for (std::size_t i = 0; i < a1.size(); ++i) differs = differs || a1[i] != b[i];
  CHECK(differs);
  CHECK_THROWS_AS(model.subject_index("S9"), usage_error);
}

TEST_CASE("depth-0 identity tokenizer pools lifted slices") {
  ModelConfig cfg = small_config();
  cfg.depth = 0;
  cfg.subjects = {"S1"};
  Model<double> model(cfg, 5);
  // tokenizer = identity slices: token t picks voxels [4t..4t+4)
  Tensor<double>& w = model.params.value(model.tokenizers[0].w);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.0;
  for (std::size_t tok = 0; tok < 3; ++tok)
    for (std::size_t j = 0; j < 4; ++j) w.at(tok * 4 + j, tok * 4 + j) = 1.0;
  Tensor<double>& b = model.params.value(model.tokenizers[0].b);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.0;

  Rng rng(2);
  Tensor<double> vox = random_vec(rng, Shape{12}, 0.5);
  Tape<double> tp;
  ParamContext<double> P(tp, model.params, false);
  auto sc = model.bind_scalars(tp, false);
  auto pooled = model.encode_brain(P, sc, 0, vox);
  CHECK(pooled.max_defect() < 1e-12);

  // oracle: lift the three slices at c_in=1, rescale to c_mid, centroid
  Curvature cin(1.0), cmid(model.c_mid.value);
  std::vector<LorentzPoint<double>> pts;
  for (std::size_t tok = 0; tok < 3; ++tok) {
    std::vector<double> s(vox.vec().begin() + tok * 4, vox.vec().begin() + (tok + 1) * 4);
    pts.push_back(rescale_curvature(lift(s, cin), cin, cmid));
  }
  auto mu = centroid<double>(pts, {1.0, 1.0, 1.0}, cmid);
  CHECK(pooled.time.val()[0] == doctest::Approx(mu.time).epsilon(1e-10));
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(pooled.spatial.val().at(0, j) == doctest::Approx(mu.spatial[j]).epsilon(1e-10));
}

TEST_CASE("encode_image pooling collapses identical tokens") {
  ModelConfig cfg = small_config();
  Model<double> model(cfg, 7);
  Rng rng(3);
  Tensor<double> feats(Shape{3, 5});
  for (std::size_t j = 0; j < 5; ++j) {
    const double v = rng.normal();
    for (std::size_t t = 0; t < 3; ++t) feats.at(t, j) = v;
  }
  Tape<double> tp;
  ParamContext<double> P(tp, model.params, false);
  auto sc = model.bind_scalars(tp, false);
  auto pooled = model.encode_image(P, sc, feats);
  CHECK(pooled.max_defect() < 1e-12);

  LorentzBatch<double> lifted = lift_rows(tp.constant(feats), sc.c_in);
  auto tok = model.image_proj.forward(P, lifted, sc.c_mid);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(pooled.spatial.val().at(0, j) == doctest::Approx(tok.spatial.val().at(0, j)).epsilon(1e-10));

  // projector bias init keeps embeddings off the origin even for zero input
  Tape<double> tp2;
  ParamContext<double> P2(tp2, model.params, false);
  auto sc2 = model.bind_scalars(tp2, false);
  auto zero_pooled = model.encode_image(P2, sc2, Tensor<double>(Shape{3, 5}, 0.0));
  double nsq = 0;
  for (std::size_t j = 0; j < 4; ++j)
    nsq += zero_pooled.spatial.val().at(0, j) * zero_pooled.spatial.val().at(0, j);
  CHECK(nsq > 0.0);
}

TEST_CASE("residency of pooled outputs in float32") {
  ModelConfig cfg = small_config();
  Model<float> model(cfg, 21);
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor<float> vox(Shape{12});
    for (std::size_t i = 0; i < 12; ++i) vox[i] = static_cast<float>(rng.normal(0.0, 1.0));
    Tape<float> tp;
    ParamContext<float> P(tp, model.params, false);
    auto sc = model.bind_scalars(tp, false);
    CHECK(model.encode_brain(P, sc, rep % 2, vox).max_defect() < 1e-5);
  }
}

TEST_CASE("classify produces finite logits and passes finite differences") {
  ModelConfig cfg = small_config();
  Model<double> model(cfg, 31);
  Rng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    Tape<double> tp;
    ParamContext<double> P(tp, model.params, false);
    auto sc = model.bind_scalars(tp, false);
    auto pooled = lift_rows(tp.constant(random_vec(rng, Shape{1, 4}, 1.5)), sc.c_mid);
    auto logits = model.classify(P, pooled, sc.c_out);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::isfinite(logits.val()[k]));
  }

  // finite differences through encode_image -> classify w.r.t. scalars too
  Tensor<double> feats = random_vec(rng, Shape{3, 5}, 0.8);
  std::vector<Tensor<double>> inputs{feats, Tensor<double>::scalar(1.1),
                                     Tensor<double>::scalar(1.9)};
  const std::size_t base = inputs.size();
  for (std::size_t id = 0; id < model.params.size(); ++id)
    inputs.push_back(model.params.value(id));
  double err = grad_check<double>(
      inputs,
      [&](Tape<double>& tp, std::vector<Value<double>>& xs) {
        ParamContext<double> P(tp, model.params, true);
        for (std::size_t id = 0; id < model.params.size(); ++id) P.preset(id, xs[base + id]);
        ScalarBundle<double> sc;
        sc.c_in = tp.constant_scalar(1.0);
        sc.c_mid = xs[1];
        sc.c_out = xs[2];
        sc.tau = tp.constant_scalar(0.07);
        LorentzBatch<double> lifted = lift_rows(xs[0], sc.c_in);
        auto tok = model.image_proj.forward(P, lifted, sc.c_mid);
        auto pooled = centroid_pool(tok, Tensor<double>(Shape{3}, 1.0));
        return mean_all(tanh_v(model.classify(P, pooled, sc.c_out)));
      });
  CHECK(err < 1e-4);
}

TEST_CASE("geometry swap preserves parameter names and shapes") {
  ModelConfig cfg = small_config();
  cfg.geometry = Geometry::Lorentz;
  Model<double> lorentz(cfg, 77);
  cfg.geometry = Geometry::Euclidean;
  Model<double> euclid(cfg, 77);
  REQUIRE(lorentz.params.size() == euclid.params.size());
  for (std::size_t id = 0; id < lorentz.params.size(); ++id) {
    CHECK(lorentz.params.def(id).name == euclid.params.def(id).name);
    CHECK(lorentz.params.def(id).value.shape() == euclid.params.def(id).value.shape());
  }
}

TEST_CASE("euclidean forward paths have matching shapes") {
  ModelConfig cfg = small_config();
  cfg.geometry = Geometry::Euclidean;
  Model<double> model(cfg, 13);
  Rng rng(6);
  Tape<double> tp;
  ParamContext<double> P(tp, model.params, false);
  auto brain = model.encode_brain_euclidean(P, 0, random_vec(rng, Shape{12}));
  CHECK(brain.val().shape() == Shape{1, 4});
  auto img = model.encode_image_euclidean(P, random_vec(rng, Shape{3, 5}));
  CHECK(img.val().shape() == Shape{1, 4});
  auto logits = model.classify_euclidean(P, brain);
  CHECK(logits.val().shape() == Shape{1, 3});
}

TEST_CASE("checkpoint round trip is byte-stable") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "lnn_ckpt_test";
  fs::remove_all(dir);

  Model<float> model(small_config(), 123);
  model.tau.set_value(0.05);
  std::vector<CheckpointExtra> extras{{"opt.step_marker", Shape{1}, {42.0f}}};
  save_checkpoint(model, dir, extras, json{{"step", 42}});
  const std::string manifest1 = read_text_file(dir / "manifest.json");
  auto blob1 = read_array_file<float>(dir / "params.bin",
                                      model.params.total_elements() + 1);

  std::vector<CheckpointExtra> extras_out;
  json trainer;
  Model<float> loaded = load_checkpoint<float>(dir, &extras_out, &trainer);
  CHECK(loaded.tau.value == doctest::Approx(0.05).epsilon(1e-6));
  CHECK(trainer.at("step").get<int>() == 42);
  REQUIRE(extras_out.size() == 1);
  CHECK(extras_out[0].data[0] == 42.0f);
  for (std::size_t id = 0; id < model.params.size(); ++id)
    for (std::size_t i = 0; i < model.params.value(id).size(); ++i)
      CHECK(loaded.params.value(id)[i] == model.params.value(id)[i]);

  save_checkpoint(loaded, dir, extras_out, trainer);
  CHECK(read_text_file(dir / "manifest.json") == manifest1);
  auto blob2 = read_array_file<float>(dir / "params.bin", blob1.size());
  CHECK(blob1 == blob2);
  fs::remove_all(dir);
}
