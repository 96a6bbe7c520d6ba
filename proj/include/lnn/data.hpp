#pragma once

// Synthetic multi-subject stimulus/response data with a concept taxonomy.
// Image features descend from hierarchically correlated leaf prototypes;
// voxel responses mix the (leaf + ancestor) activation vector through a
// subject-specific random matrix. Training stimuli are unique per subject,
// the test set is shared: every subject responds to the same test images.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lnn/common.hpp"
#include "lnn/rng.hpp"
#include "lnn/serialize.hpp"
#include "lnn/tensor.hpp"

namespace lnn {

struct TaxonomyNode {
  std::string name;
  int parent = -1;  // index into nodes; -1 for the root
};

struct TaxonomySpec {
  std::vector<TaxonomyNode> nodes;   // root first, parents precede children
  std::vector<std::size_t> leaves;   // node index per label class, 0..C-1
  std::size_t max_labels = 3;

  std::size_t num_classes() const { return leaves.size(); }

  void validate() const {
    if (nodes.empty() || nodes[0].parent != -1) throw config_error("taxonomy needs a root first");
    for (std::size_t i = 1; i < nodes.size(); ++i)
      if (nodes[i].parent < 0 || static_cast<std::size_t>(nodes[i].parent) >= i)
        throw config_error("taxonomy parents must precede children");
    if (leaves.empty()) throw config_error("taxonomy needs at least one leaf class");
    for (std::size_t l : leaves)
      if (l >= nodes.size()) throw config_error("leaf index out of range");
    if (max_labels == 0 || max_labels > leaves.size())
      throw config_error("max labels per sample must lie in [1, classes]");
  }

  // Node index chain from the leaf's node up to (and including) the root.
  std::vector<std::size_t> chain(std::size_t leaf_class) const {
    std::vector<std::size_t> out;
    int cur = static_cast<int>(leaves.at(leaf_class));
    while (cur >= 0) {
      out.push_back(static_cast<std::size_t>(cur));
      cur = nodes[static_cast<std::size_t>(cur)].parent;
    }
    return out;
  }

  // Depth-3 tree: 3 branches x 4 leaves = 12 classes.
  static TaxonomySpec default_tree() {
    TaxonomySpec t;
    t.nodes.push_back({"thing", -1});
    const std::vector<std::pair<std::string, std::vector<std::string>>> groups = {
        {"animal", {"cat", "dog", "horse", "bird"}},
        {"food", {"apple", "carrot", "pizza", "cake"}},
        {"object", {"phone", "laptop", "car", "chair"}}};
    for (const auto& [branch, kids] : groups) {
      t.nodes.push_back({branch, 0});
      const int bidx = static_cast<int>(t.nodes.size() - 1);
      for (const auto& kid : kids) {
        t.nodes.push_back({kid, bidx});
        t.leaves.push_back(t.nodes.size() - 1);
      }
    }
    t.max_labels = 3;
    return t;
  }
};

struct GenConfig {
  std::size_t subjects = 4;
  std::size_t train_per_subject = 200;
  std::size_t test_count = 50;
  std::size_t voxels = 512;
  std::size_t tokens = 16;
  std::size_t feat_dim = 96;
  double noise_sigma = 0.005;   // voxel noise
  double feature_noise = 0.005; // per-token image feature noise
  std::uint64_t seed = 7;
};

struct Sample {
  Tensor<float> voxels;              // [v]
  Tensor<float> features;            // [t, p]
  std::vector<std::uint8_t> labels;  // [C] multi-hot, 1..m active
};

struct SyntheticDataset {
  GenConfig config;
  TaxonomySpec taxonomy;
  std::vector<std::string> subjects;
  std::vector<std::vector<Sample>> train;              // [subject][i]
  std::vector<Tensor<float>> test_features;            // shared stimuli
  std::vector<std::vector<std::uint8_t>> test_labels;  // shared labels
  std::vector<std::vector<Tensor<float>>> test_voxels; // [subject][i]

  std::size_t num_classes() const { return taxonomy.num_classes(); }
};

namespace detail {

inline std::vector<std::uint8_t> draw_labels(Rng& rng, std::size_t classes, std::size_t max_labels) {
  const std::size_t k = 1 + rng.uniform_index(max_labels);
  std::vector<std::size_t> idx(classes);
  for (std::size_t i = 0; i < classes; ++i) idx[i] = i;
  rng.shuffle(idx.begin(), idx.end());
  std::vector<std::uint8_t> labels(classes, 0);
  for (std::size_t i = 0; i < k; ++i) labels[idx[i]] = 1;
  return labels;
}

// Activation over all taxonomy nodes: +1 on each active leaf and every one
// of its ancestors, so composite stimuli accumulate shared parents.
inline std::vector<double> activation(const TaxonomySpec& tax,
                                      const std::vector<std::uint8_t>& labels) {
  std::vector<double> act(tax.nodes.size(), 0.0);
  for (std::size_t c = 0; c < labels.size(); ++c)
    if (labels[c])
      for (std::size_t node : tax.chain(c)) act[node] += 1.0;
  return act;
}

inline Tensor<float> make_features(Rng& rng, const TaxonomySpec& tax,
                                   const std::vector<std::vector<double>>& leaf_protos,
                                   const std::vector<std::uint8_t>& labels,
                                   std::size_t tokens, std::size_t feat_dim, double noise) {
  std::vector<double> base(feat_dim, 0.0);
  std::size_t active = 0;
  for (std::size_t c = 0; c < labels.size(); ++c)
    if (labels[c]) {
      ++active;
      for (std::size_t j = 0; j < feat_dim; ++j) base[j] += leaf_protos[c][j];
    }
  for (auto& v : base) v /= static_cast<double>(active);
  Tensor<float> out(Shape{tokens, feat_dim});
  for (std::size_t t = 0; t < tokens; ++t)
    for (std::size_t j = 0; j < feat_dim; ++j)
      out.at(t, j) = static_cast<float>(base[j] + rng.normal(0.0, noise));
  return out;
}

inline Tensor<float> make_voxels(Rng& rng, const std::vector<double>& mixing,
                                 const std::vector<double>& act, std::size_t voxels,
                                 double sigma) {
  const std::size_t n = act.size();
  Tensor<float> out(Shape{voxels});
  for (std::size_t i = 0; i < voxels; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += mixing[i * n + j] * act[j];
    out[i] = static_cast<float>(s + (sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0));
  }
  return out;
}

}  // namespace detail

inline SyntheticDataset generate(const TaxonomySpec& tax, const GenConfig& cfg) {
  tax.validate();
  if (cfg.subjects == 0 || cfg.train_per_subject == 0 || cfg.test_count == 0)
    throw config_error("dataset counts must be positive");
  Rng rng(cfg.seed);
  const std::size_t C = tax.num_classes();
  const std::size_t n_nodes = tax.nodes.size();

  // Hierarchical prototypes: every node adds its own offset onto its parent,
  // so sibling leaves share the branch component. Scales keep image features
  // compact, which puts projected image embeddings near the manifold origin
  // where the entailment cones are wide.
  std::vector<std::vector<double>> node_protos(n_nodes, std::vector<double>(cfg.feat_dim, 0.0));
  for (std::size_t i = 0; i < n_nodes; ++i) {
    const double sd = i == 0 ? 0.5 : 0.25;
    for (std::size_t j = 0; j < cfg.feat_dim; ++j) {
      node_protos[i][j] = rng.normal(0.0, sd);
      if (tax.nodes[i].parent >= 0)
        node_protos[i][j] += node_protos[static_cast<std::size_t>(tax.nodes[i].parent)][j];
    }
  }
  std::vector<std::vector<double>> leaf_protos;
  for (std::size_t c = 0; c < C; ++c) leaf_protos.push_back(node_protos[tax.leaves[c]]);

  // Subject mixing matrices [v x nodes].
  const double mix_scale = 1.0 / std::sqrt(static_cast<double>(n_nodes));
  std::vector<std::vector<double>> mixing(cfg.subjects);
  for (auto& m : mixing) {
    m.resize(cfg.voxels * n_nodes);
    for (auto& v : m) v = rng.normal(0.0, mix_scale);
  }

  SyntheticDataset ds;
  ds.config = cfg;
  ds.taxonomy = tax;
  for (std::size_t s = 0; s < cfg.subjects; ++s) ds.subjects.push_back("S" + std::to_string(s + 1));

  ds.train.resize(cfg.subjects);
  for (std::size_t s = 0; s < cfg.subjects; ++s) {
    for (std::size_t i = 0; i < cfg.train_per_subject; ++i) {
      Sample smp;
      smp.labels = detail::draw_labels(rng, C, tax.max_labels);
      smp.features = detail::make_features(rng, tax, leaf_protos, smp.labels, cfg.tokens,
                                           cfg.feat_dim, cfg.feature_noise);
      smp.voxels = detail::make_voxels(rng, mixing[s], detail::activation(tax, smp.labels),
                                       cfg.voxels, cfg.noise_sigma);
      ds.train[s].push_back(std::move(smp));
    }
  }

  // Shared test stimuli, per-subject responses.
  for (std::size_t i = 0; i < cfg.test_count; ++i) {
    ds.test_labels.push_back(detail::draw_labels(rng, C, tax.max_labels));
    ds.test_features.push_back(detail::make_features(rng, tax, leaf_protos, ds.test_labels.back(),
                                                     cfg.tokens, cfg.feat_dim, cfg.feature_noise));
  }
  ds.test_voxels.resize(cfg.subjects);
  for (std::size_t s = 0; s < cfg.subjects; ++s)
    for (std::size_t i = 0; i < cfg.test_count; ++i)
      ds.test_voxels[s].push_back(detail::make_voxels(
          rng, mixing[s], detail::activation(tax, ds.test_labels[i]), cfg.voxels,
          cfg.noise_sigma));
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk format: manifest.json + one raw array file per entry
// ---------------------------------------------------------------------------

namespace detail {

template <typename U>
void flatten_rows(const std::vector<Tensor<float>>& rows, std::vector<U>& out) {
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) out.push_back(static_cast<U>(r[i]));
}

}  // namespace detail

inline void write_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  ensure_dir(dir);
  json arrays = json::array();
  auto put_f32 = [&](const std::string& name, Shape shape, const std::vector<float>& data) {
    if (data.size() != shape_size(shape)) throw io_error("array size bug for " + name);
    arrays.push_back(json{{"name", name}, {"shape", shape_to_json(shape)}, {"dtype", "f32"}});
    write_array_file(dir / (name + ".bin"), data.data(), data.size());
  };
  auto put_u8 = [&](const std::string& name, Shape shape, const std::vector<std::uint8_t>& data) {
    if (data.size() != shape_size(shape)) throw io_error("array size bug for " + name);
    arrays.push_back(json{{"name", name}, {"shape", shape_to_json(shape)}, {"dtype", "u8"}});
    write_array_file(dir / (name + ".bin"), data.data(), data.size());
  };

  const auto& cfg = ds.config;
  const std::size_t C = ds.num_classes();
  for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
    const std::string base = "train/" + ds.subjects[s];
    std::vector<float> vox, feat;
    std::vector<std::uint8_t> lab;
    for (const auto& smp : ds.train[s]) {
      vox.insert(vox.end(), smp.voxels.vec().begin(), smp.voxels.vec().end());
      feat.insert(feat.end(), smp.features.vec().begin(), smp.features.vec().end());
      lab.insert(lab.end(), smp.labels.begin(), smp.labels.end());
    }
    const std::size_t n = ds.train[s].size();
    put_f32(base + "/voxels", Shape{n, cfg.voxels}, vox);
    put_f32(base + "/features", Shape{n, cfg.tokens, cfg.feat_dim}, feat);
    put_u8(base + "/labels", Shape{n, C}, lab);
  }
  {
    std::vector<float> feat;
    detail::flatten_rows(ds.test_features, feat);
    put_f32("test/features", Shape{ds.test_features.size(), cfg.tokens, cfg.feat_dim}, feat);
    std::vector<std::uint8_t> lab;
    for (const auto& l : ds.test_labels) lab.insert(lab.end(), l.begin(), l.end());
    put_u8("test/labels", Shape{ds.test_labels.size(), C}, lab);
  }
  for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
    std::vector<float> vox;
    detail::flatten_rows(ds.test_voxels[s], vox);
    put_f32("test/" + ds.subjects[s] + "/voxels", Shape{ds.test_voxels[s].size(), cfg.voxels},
            vox);
  }

  json tax_nodes = json::array();
  for (const auto& n : ds.taxonomy.nodes)
    tax_nodes.push_back(json{{"name", n.name}, {"parent", n.parent}});
  json manifest{
      {"format", "lnn-dataset"},
      {"version", 1},
      {"seed", cfg.seed},
      {"dims",
       json{{"voxels", cfg.voxels}, {"tokens", cfg.tokens}, {"feat", cfg.feat_dim},
            {"classes", C}}},
      {"counts", json{{"train_per_subject", cfg.train_per_subject}, {"test", cfg.test_count}}},
      {"noise", json{{"voxel_sigma", cfg.noise_sigma}, {"feature_sigma", cfg.feature_noise}}},
      {"subjects", ds.subjects},
      {"taxonomy",
       json{{"nodes", tax_nodes},
            {"leaves", ds.taxonomy.leaves},
            {"max_labels", ds.taxonomy.max_labels}}},
      {"arrays", arrays}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline SyntheticDataset read_dataset(const std::filesystem::path& dir) {
  const json m = parse_json_file(dir / "manifest.json");
  if (m.value("format", "") != "lnn-dataset")
    throw format_error("not a dataset manifest: " + (dir / "manifest.json").string());

  SyntheticDataset ds;
  ds.config.seed = m.at("seed").get<std::uint64_t>();
  const json& dims = m.at("dims");
  ds.config.voxels = dims.at("voxels").get<std::size_t>();
  ds.config.tokens = dims.at("tokens").get<std::size_t>();
  ds.config.feat_dim = dims.at("feat").get<std::size_t>();
  const std::size_t C = dims.at("classes").get<std::size_t>();
  ds.config.train_per_subject = m.at("counts").at("train_per_subject").get<std::size_t>();
  ds.config.test_count = m.at("counts").at("test").get<std::size_t>();
  ds.config.noise_sigma = m.at("noise").at("voxel_sigma").get<double>();
  ds.config.feature_noise = m.at("noise").at("feature_sigma").get<double>();
  ds.subjects = m.at("subjects").get<std::vector<std::string>>();
  ds.config.subjects = ds.subjects.size();

  for (const auto& n : m.at("taxonomy").at("nodes"))
    ds.taxonomy.nodes.push_back({n.at("name").get<std::string>(), n.at("parent").get<int>()});
  ds.taxonomy.leaves = m.at("taxonomy").at("leaves").get<std::vector<std::size_t>>();
  ds.taxonomy.max_labels = m.at("taxonomy").at("max_labels").get<std::size_t>();
  ds.taxonomy.validate();
  if (ds.taxonomy.num_classes() != C) throw format_error("manifest class count disagrees");

  std::map<std::string, std::pair<Shape, std::string>> entries;
  for (const auto& a : m.at("arrays"))
    entries[a.at("name").get<std::string>()] = {shape_from_json(a.at("shape")),
                                                a.at("dtype").get<std::string>()};
  auto need = [&](const std::string& name, const Shape& shape, const std::string& dtype) {
    auto it = entries.find(name);
    if (it == entries.end()) throw format_error("manifest missing array " + name);
    if (it->second.first != shape)
      throw format_error("array " + name + " has shape " + shape_str(it->second.first) +
                         ", expected " + shape_str(shape));
    if (it->second.second != dtype) throw format_error("array " + name + " dtype mismatch");
  };

  const auto& cfg = ds.config;
  ds.train.resize(ds.subjects.size());
  for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
    const std::string base = "train/" + ds.subjects[s];
    const std::size_t n = cfg.train_per_subject;
    need(base + "/voxels", Shape{n, cfg.voxels}, "f32");
    need(base + "/features", Shape{n, cfg.tokens, cfg.feat_dim}, "f32");
    need(base + "/labels", Shape{n, C}, "u8");
    auto vox = read_array_file<float>(dir / (base + "/voxels.bin"), n * cfg.voxels);
    auto feat =
        read_array_file<float>(dir / (base + "/features.bin"), n * cfg.tokens * cfg.feat_dim);
    auto lab = read_array_file<std::uint8_t>(dir / (base + "/labels.bin"), n * C);
    for (std::size_t i = 0; i < n; ++i) {
      Sample smp;
      smp.voxels = Tensor<float>(Shape{cfg.voxels},
                                 std::vector<float>(vox.begin() + i * cfg.voxels,
                                                    vox.begin() + (i + 1) * cfg.voxels));
      const std::size_t fs = cfg.tokens * cfg.feat_dim;
      smp.features = Tensor<float>(Shape{cfg.tokens, cfg.feat_dim},
                                   std::vector<float>(feat.begin() + i * fs,
                                                      feat.begin() + (i + 1) * fs));
      smp.labels.assign(lab.begin() + i * C, lab.begin() + (i + 1) * C);
      ds.train[s].push_back(std::move(smp));
    }
  }
  {
    const std::size_t n = cfg.test_count;
    need("test/features", Shape{n, cfg.tokens, cfg.feat_dim}, "f32");
    need("test/labels", Shape{n, C}, "u8");
    auto feat = read_array_file<float>(dir / "test/features.bin", n * cfg.tokens * cfg.feat_dim);
    auto lab = read_array_file<std::uint8_t>(dir / "test/labels.bin", n * C);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t fs = cfg.tokens * cfg.feat_dim;
      ds.test_features.push_back(Tensor<float>(
          Shape{cfg.tokens, cfg.feat_dim},
          std::vector<float>(feat.begin() + i * fs, feat.begin() + (i + 1) * fs)));
      ds.test_labels.emplace_back(lab.begin() + i * C, lab.begin() + (i + 1) * C);
    }
  }
  ds.test_voxels.resize(ds.subjects.size());
  for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
    const std::size_t n = cfg.test_count;
    const std::string name = "test/" + ds.subjects[s] + "/voxels";
    need(name, Shape{n, cfg.voxels}, "f32");
    auto vox = read_array_file<float>(dir / (name + ".bin"), n * cfg.voxels);
    for (std::size_t i = 0; i < n; ++i)
      ds.test_voxels[s].push_back(
          Tensor<float>(Shape{cfg.voxels}, std::vector<float>(vox.begin() + i * cfg.voxels,
                                                              vox.begin() + (i + 1) * cfg.voxels)));
  }
  return ds;
}

}  // namespace lnn
