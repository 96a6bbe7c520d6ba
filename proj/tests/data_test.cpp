#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "lnn/data.hpp"

using namespace lnn;
namespace fs = std::filesystem;

namespace {

GenConfig small_gen() {
  GenConfig g;
  g.subjects = 2;
  g.train_per_subject = 40;
  g.test_count = 10;
  g.voxels = 24;
  g.tokens = 3;
  g.feat_dim = 8;
  g.seed = 7;
  return g;
}

bool samples_equal(const Sample& a, const Sample& b) {
  return a.voxels.vec() == b.voxels.vec() && a.features.vec() == b.features.vec() &&
         a.labels == b.labels;
}

double cosine(const Tensor<float>& a, const Tensor<float>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("default taxonomy is well-formed") {
  auto tax = TaxonomySpec::default_tree();
  tax.validate();
  CHECK(tax.num_classes() == 12);
  CHECK(tax.nodes.size() == 16);
  auto chain = tax.chain(0);
  CHECK(chain.size() == 3);  // leaf, branch, root
  CHECK(chain.back() == 0);
}

TEST_CASE("generation is bitwise deterministic under the seed") {
  auto tax = TaxonomySpec::default_tree();
  auto a = generate(tax, small_gen());
  auto b = generate(tax, small_gen());
  for (std::size_t s = 0; s < a.train.size(); ++s)
    for (std::size_t i = 0; i < a.train[s].size(); ++i)
      CHECK(samples_equal(a.train[s][i], b.train[s][i]));
  for (std::size_t i = 0; i < a.test_features.size(); ++i) {
    CHECK(a.test_features[i].vec() == b.test_features[i].vec());
    CHECK(a.test_labels[i] == b.test_labels[i]);
  }
  GenConfig other = small_gen();
  other.seed = 8;
  auto c = generate(tax, other);
  CHECK_FALSE(samples_equal(a.train[0][0], c.train[0][0]));
}

TEST_CASE("zero noise makes voxels an exact function of labels") {
  auto tax = TaxonomySpec::default_tree();
  GenConfig g = small_gen();
  g.subjects = 1;
  g.train_per_subject = 120;
  g.noise_sigma = 0.0;
  auto ds = generate(tax, g);
  bool found_pair = false;
  for (std::size_t i = 0; i < ds.train[0].size() && !found_pair; ++i)
    for (std::size_t j = i + 1; j < ds.train[0].size(); ++j)
      if (ds.train[0][i].labels == ds.train[0][j].labels) {
        CHECK(ds.train[0][i].voxels.vec() == ds.train[0][j].voxels.vec());
        found_pair = true;
        break;
      }
  CHECK(found_pair);
}

TEST_CASE("every leaf appears in the default-config training set") {
  auto tax = TaxonomySpec::default_tree();
  auto ds = generate(tax, GenConfig{});
  std::vector<std::size_t> counts(tax.num_classes(), 0);
  for (const auto& subj : ds.train)
    for (const auto& smp : subj)
      for (std::size_t c = 0; c < smp.labels.size(); ++c)
        if (smp.labels[c]) ++counts[c];
  for (std::size_t c = 0; c < counts.size(); ++c) CHECK(counts[c] >= 1);
  // test set shared across subjects by construction
  CHECK(ds.test_features.size() == ds.config.test_count);
  CHECK(ds.test_voxels.size() == ds.config.subjects);
}

TEST_CASE("labels carry between one and max_labels leaves") {
  auto tax = TaxonomySpec::default_tree();
  auto ds = generate(tax, small_gen());
  for (const auto& subj : ds.train)
    for (const auto& smp : subj) {
      std::size_t active = 0;
      for (auto l : smp.labels) active += l;
      CHECK(active >= 1);
      CHECK(active <= tax.max_labels);
    }
}

TEST_CASE("sibling concepts are closer than cross-branch concepts") {
  auto tax = TaxonomySpec::default_tree();
  GenConfig g = small_gen();
  g.train_per_subject = 300;
  g.subjects = 1;
  g.noise_sigma = 0.1;    // margin must survive the noisiest supported setting
  g.feature_noise = 0.1;
  auto ds = generate(tax, g);

  // single-label samples only, compared through their feature tensors
  auto branch_of = [&](std::size_t leaf_class) { return tax.chain(leaf_class)[1]; };
  double same_sum = 0, cross_sum = 0;
  std::size_t same_n = 0, cross_n = 0;
  const auto& samples = ds.train[0];
  std::vector<std::pair<std::size_t, const Sample*>> singles;
  for (const auto& smp : samples) {
    std::size_t active = 0, cls = 0;
    for (std::size_t c = 0; c < smp.labels.size(); ++c)
      if (smp.labels[c]) {
        ++active;
        cls = c;
      }
    if (active == 1) singles.emplace_back(cls, &smp);
  }
  for (std::size_t i = 0; i < singles.size(); ++i)
    for (std::size_t j = i + 1; j < singles.size(); ++j) {
      if (singles[i].first == singles[j].first) continue;
      const double cs = cosine(singles[i].second->features, singles[j].second->features);
      if (branch_of(singles[i].first) == branch_of(singles[j].first)) {
        same_sum += cs;
        ++same_n;
      } else {
        cross_sum += cs;
        ++cross_n;
      }
    }
  REQUIRE(same_n > 10);
  REQUIRE(cross_n > 10);
  CHECK(same_sum / same_n > cross_sum / cross_n);
}

TEST_CASE("dataset round trip is bitwise identical") {
  const fs::path dir = fs::temp_directory_path() / "lnn_ds_test";
  fs::remove_all(dir);
  auto ds = generate(TaxonomySpec::default_tree(), small_gen());
  write_dataset(ds, dir);
  const std::string manifest1 = read_text_file(dir / "manifest.json");

  auto loaded = read_dataset(dir);
  for (std::size_t s = 0; s < ds.train.size(); ++s)
    for (std::size_t i = 0; i < ds.train[s].size(); ++i)
      CHECK(samples_equal(ds.train[s][i], loaded.train[s][i]));
  for (std::size_t s = 0; s < ds.test_voxels.size(); ++s)
    for (std::size_t i = 0; i < ds.test_voxels[s].size(); ++i)
      CHECK(ds.test_voxels[s][i].vec() == loaded.test_voxels[s][i].vec());

  const fs::path dir2 = fs::temp_directory_path() / "lnn_ds_test2";
  fs::remove_all(dir2);
  write_dataset(loaded, dir2);
  CHECK(read_text_file(dir2 / "manifest.json") == manifest1);
  CHECK(read_text_file(dir2 / "train/S1/voxels.bin") == read_text_file(dir / "train/S1/voxels.bin"));
  CHECK(read_text_file(dir2 / "test/labels.bin") == read_text_file(dir / "test/labels.bin"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("truncated array files fail closed") {
  const fs::path dir = fs::temp_directory_path() / "lnn_ds_corrupt";
  fs::remove_all(dir);
  auto ds = generate(TaxonomySpec::default_tree(), small_gen());
  write_dataset(ds, dir);
  // chop one byte off an array file
  const fs::path victim = dir / "train/S2/features.bin";
  const auto size = fs::file_size(victim);
  fs::resize_file(victim, size - 1);
  CHECK_THROWS_AS(read_dataset(dir), format_error);
  fs::remove_all(dir);
}

TEST_CASE("manifest shape disagreement fails closed") {
  const fs::path dir = fs::temp_directory_path() / "lnn_ds_badshape";
  fs::remove_all(dir);
  auto ds = generate(TaxonomySpec::default_tree(), small_gen());
  write_dataset(ds, dir);
  json m = parse_json_file(dir / "manifest.json");
  m["counts"]["test"] = 11;  // lies about the test count
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
  CHECK_THROWS_AS(read_dataset(dir), format_error);
  fs::remove_all(dir);
}

TEST_CASE("hand-built external arrays import cleanly") {
  const fs::path dir = fs::temp_directory_path() / "lnn_ds_import";
  fs::remove_all(dir);
  ensure_dir(dir);

  // two train samples for one subject, one test sample, 2 classes
  const std::size_t v = 4, t = 2, p = 3, C = 2;
  auto put_f32 = [&](const std::string& name, const std::vector<float>& data) {
    write_array_file(dir / (name + ".bin"), data.data(), data.size());
  };
  auto put_u8 = [&](const std::string& name, const std::vector<std::uint8_t>& data) {
    write_array_file(dir / (name + ".bin"), data.data(), data.size());
  };
  put_f32("train/S1/voxels", {1, 2, 3, 4, 5, 6, 7, 8});
  put_f32("train/S1/features", std::vector<float>(2 * t * p, 0.5f));
  put_u8("train/S1/labels", {1, 0, 0, 1});
  put_f32("test/features", std::vector<float>(t * p, 0.25f));
  put_u8("test/labels", {1, 1});
  put_f32("test/S1/voxels", {9, 10, 11, 12});

  json arrays = json::array();
  auto arr = [&](const std::string& name, Shape shape, const std::string& dtype) {
    arrays.push_back(json{{"name", name}, {"shape", shape_to_json(shape)}, {"dtype", dtype}});
  };
  arr("train/S1/voxels", {2, v}, "f32");
  arr("train/S1/features", {2, t, p}, "f32");
  arr("train/S1/labels", {2, C}, "u8");
  arr("test/features", {1, t, p}, "f32");
  arr("test/labels", {1, C}, "u8");
  arr("test/S1/voxels", {1, v}, "f32");
  json manifest{
      {"format", "lnn-dataset"},
      {"version", 1},
      {"seed", 0},
      {"dims", json{{"voxels", v}, {"tokens", t}, {"feat", p}, {"classes", C}}},
      {"counts", json{{"train_per_subject", 2}, {"test", 1}}},
      {"noise", json{{"voxel_sigma", 0.0}, {"feature_sigma", 0.0}}},
      {"subjects", json::array({"S1"})},
      {"taxonomy",
       json{{"nodes", json::array({json{{"name", "root"}, {"parent", -1}},
                                   json{{"name", "a"}, {"parent", 0}},
                                   json{{"name", "b"}, {"parent", 0}}})},
            {"leaves", json::array({1, 2})},
            {"max_labels", 2}}},
      {"arrays", arrays}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");

  auto ds = read_dataset(dir);
  CHECK(ds.train[0].size() == 2);
  CHECK(ds.train[0][1].voxels[0] == 5.0f);
  CHECK(ds.test_voxels[0][0][3] == 12.0f);
  CHECK(ds.num_classes() == 2);
  fs::remove_all(dir);
}

TEST_CASE("invalid taxonomy and counts are configuration errors") {
  TaxonomySpec bad;
  bad.nodes.push_back({"root", -1});
  bad.max_labels = 1;
  CHECK_THROWS_AS(bad.validate(), config_error);  // no leaves

  auto tax = TaxonomySpec::default_tree();
  tax.max_labels = 13;  // m > C
  CHECK_THROWS_AS(generate(tax, small_gen()), config_error);
}
