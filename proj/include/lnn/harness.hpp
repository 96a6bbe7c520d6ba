#pragma once

// Test-set evaluation harness shared by the CLI and the acceptance suite:
// pooled embeddings over the shared test split, per-subject classification
// and retrieval reports, and the geometry diagnostics.

#include <map>
#include <string>
#include <thread>
#include <vector>

#include "lnn/data.hpp"
#include "lnn/eval.hpp"
#include "lnn/model.hpp"

namespace lnn {

struct TestEmbeddings {
  PooledSet images;                                 // shared stimuli, M rows
  std::map<std::string, PooledSet> brains;          // per subject, M rows each
  Geometry geometry = Geometry::Lorentz;
};

namespace detail {

// Fixed-order parallel map: results land in preassigned slots, so the output
// is identical for any thread count.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t used = std::min(threads, n);
  for (std::size_t t = 0; t < used; ++t)
    pool.emplace_back([&, t]() {
      for (std::size_t i = t; i < n; i += used) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Forward passes over the shared test split (no gradients).
template <typename T>
TestEmbeddings compute_test_embeddings(const Model<T>& model_in, const SyntheticDataset& data,
                                       std::size_t threads = 1) {
  Model<T>& model = const_cast<Model<T>&>(model_in);  // contexts register read-only leaves
  const std::size_t m = data.test_features.size();
  const bool lorentz = model.config.geometry == Geometry::Lorentz;
  const std::size_t cols = lorentz ? model.config.dim + 1 : model.config.dim;

  TestEmbeddings out;
  out.geometry = model.config.geometry;

  // Pooled points computed in T land on the double manifold by recomputing
  // the time coordinate from the spatial part (nearest on-sheet neighbour).
  auto relift_row = [&](Tensor<double>& rows, std::size_t i) {
    double nsq = 0;
    for (std::size_t j = 1; j < cols; ++j) nsq += rows.at(i, j) * rows.at(i, j);
    rows.at(i, 0) = std::sqrt(1.0 / model.c_mid.value + nsq);
  };

  Tensor<double> img_rows(Shape{m, cols});
  detail::parallel_for(m, threads, [&](std::size_t i) {
    Tape<T> tape;
    ParamContext<T> P(tape, model.params, false);
    ScalarBundle<T> sc = model.bind_scalars(tape, false);
    if (lorentz) {
      auto pooled = model.encode_image(P, sc, data.test_features[i].template cast<T>());
      for (std::size_t j = 0; j < model.config.dim; ++j)
        img_rows.at(i, j + 1) = static_cast<double>(pooled.spatial.val().at(0, j));
      relift_row(img_rows, i);
    } else {
      auto pooled = model.encode_image_euclidean(P, data.test_features[i].template cast<T>());
      for (std::size_t j = 0; j < model.config.dim; ++j)
        img_rows.at(i, j) = static_cast<double>(pooled.val().at(0, j));
    }
  });
  out.images = PooledSet{img_rows, model.config.geometry, model.c_mid.value};

  for (std::size_t s = 0; s < data.subjects.size(); ++s) {
    Tensor<double> rows(Shape{m, cols});
    detail::parallel_for(m, threads, [&](std::size_t i) {
      Tape<T> tape;
      ParamContext<T> P(tape, model.params, false);
      ScalarBundle<T> sc = model.bind_scalars(tape, false);
      if (lorentz) {
        auto pooled = model.encode_brain(P, sc, s, data.test_voxels[s][i].template cast<T>());
        for (std::size_t j = 0; j < model.config.dim; ++j)
          rows.at(i, j + 1) = static_cast<double>(pooled.spatial.val().at(0, j));
        relift_row(rows, i);
      } else {
        auto pooled =
            model.encode_brain_euclidean(P, s, data.test_voxels[s][i].template cast<T>());
        for (std::size_t j = 0; j < model.config.dim; ++j)
          rows.at(i, j) = static_cast<double>(pooled.val().at(0, j));
      }
    });
    out.brains[data.subjects[s]] = PooledSet{rows, model.config.geometry, model.c_mid.value};
  }
  return out;
}

// Per-subject classification scores over the test split.
template <typename T>
Tensor<double> test_logits(const Model<T>& model_in, const SyntheticDataset& data,
                           std::size_t subject, std::size_t threads = 1) {
  Model<T>& model = const_cast<Model<T>&>(model_in);
  const std::size_t m = data.test_features.size();
  Tensor<double> scores(Shape{m, model.config.classes});
  detail::parallel_for(m, threads, [&](std::size_t i) {
    Tape<T> tape;
    ParamContext<T> P(tape, model.params, false);
    ScalarBundle<T> sc = model.bind_scalars(tape, false);
    Value<T> logits{};
    if (model.config.geometry == Geometry::Lorentz) {
      auto pooled = model.encode_brain(P, sc, subject, data.test_voxels[subject][i].template cast<T>());
      logits = model.classify(P, pooled, sc.c_out);
    } else {
      auto pooled =
          model.encode_brain_euclidean(P, subject, data.test_voxels[subject][i].template cast<T>());
      logits = model.classify_euclidean(P, pooled);
    }
    for (std::size_t c = 0; c < model.config.classes; ++c)
      scores.at(i, c) = static_cast<double>(logits.val().at(0, c));
  });
  return scores;
}

inline Tensor<std::uint8_t> test_label_matrix(const SyntheticDataset& data) {
  const std::size_t m = data.test_labels.size();
  const std::size_t c = data.num_classes();
  Tensor<std::uint8_t> t(Shape{m, c});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < c; ++k) t.at(i, k) = data.test_labels[i][k];
  return t;
}

// Classification metrics per subject plus the cross-subject average.
template <typename T>
json classification_report(const Model<T>& model, const SyntheticDataset& data,
                           std::size_t threads = 1) {
  const Tensor<std::uint8_t> labels = test_label_matrix(data);
  json per_subject = json::object();
  double map = 0, auc = 0, ham = 0;
  for (std::size_t s = 0; s < data.subjects.size(); ++s) {
    const auto m = multilabel_metrics(test_logits(model, data, s, threads), labels);
    per_subject[data.subjects[s]] = classif_metrics_to_json(m);
    map += m.map;
    auc += m.auc;
    ham += m.hamming;
  }
  const double ns = static_cast<double>(data.subjects.size());
  return json{{"per_subject", per_subject},
              {"average", json{{"mAP", map / ns}, {"AUC", auc / ns}, {"hamming", ham / ns}}}};
}

// Top-1 retrieval per subject plus the cross-subject average.
inline json retrieval_report(const TestEmbeddings& emb) {
  json per_subject = json::object();
  double img = 0, brn = 0;
  for (const auto& [name, pool] : emb.brains) {
    const RetrievalResult r = retrieval(emb.images, pool);
    per_subject[name] = json{{"image_top1", r.image_top1}, {"brain_top1", r.brain_top1}};
    img += r.image_top1;
    brn += r.brain_top1;
  }
  const double ns = static_cast<double>(emb.brains.size());
  return json{{"per_subject", per_subject},
              {"average", json{{"image_top1", img / ns}, {"brain_top1", brn / ns}}}};
}

// Images tiled per subject against all subjects' brains, matched pairwise.
inline GeometryReport combined_geometry(const TestEmbeddings& emb, double cone_k) {
  const std::size_t m = emb.images.count();
  const std::size_t s = emb.brains.size();
  const std::size_t cols = emb.images.rows.last();
  Tensor<double> tiled(Shape{m * s, cols});
  Tensor<double> stacked(Shape{m * s, cols});
  std::size_t row = 0;
  for (const auto& [name, pool] : emb.brains) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        tiled.at(row, j) = emb.images.rows.at(i, j);
        stacked.at(row, j) = pool.rows.at(i, j);
      }
      ++row;
    }
  }
  PooledSet I{tiled, emb.images.geometry, emb.images.curvature};
  PooledSet U{stacked, emb.images.geometry, emb.images.curvature};
  return geometry_report(I, U, cone_k);
}

}  // namespace lnn
