// Command-line entry point: dataset synthesis, training, evaluation,
// retrieval, embedding export, gradient checking and the ablation grid.
// Exit codes: 0 success, 2 invalid configuration/input, 3 numeric failure,
// 1 anything else. Errors print as a single machine-parseable line.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lnn/config.hpp"
#include "lnn/data.hpp"
#include "lnn/eval.hpp"
#include "lnn/gradsuite.hpp"
#include "lnn/harness.hpp"
#include "lnn/model.hpp"
#include "lnn/train.hpp"

namespace fs = std::filesystem;
using namespace lnn;

namespace {

struct CommonFlags {
  std::optional<std::string> config_path;
  std::optional<std::string> dataset;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> geometry;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> threads;
  std::optional<std::string> encoder;
  bool no_entailment = false;
  bool strict_eq8 = false;
  std::optional<double> fixed_curvature;
};

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig rc;
  if (f.config_path) rc = run_config_from_json(parse_json_file(*f.config_path));
  if (f.dataset) rc.dataset = *f.dataset;
  if (f.out) rc.out = *f.out;
  if (f.seed) rc.seed = *f.seed;
  if (f.geometry) rc.geometry = geometry_from_name(*f.geometry);
  if (f.epochs) rc.epochs = *f.epochs;
  if (f.batch) rc.batch = *f.batch;
  if (f.threads) rc.threads = *f.threads;
  if (f.encoder) {
    rc.encoder = *f.encoder;
    if (rc.encoder != "transformer" && rc.encoder != "mlp")
      throw config_error("encoder must be transformer or mlp");
  }
  if (f.no_entailment) rc.loss.entailment = false;
  if (f.strict_eq8) rc.loss.strict_eq8 = true;
  if (f.fixed_curvature) {
    rc.curvature_learnable = false;
    rc.c_mid_init = *f.fixed_curvature;
  }
  if (rc.dataset.empty()) throw config_error("a dataset path is required (--dataset)");
  return rc;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool wants_training_flags) {
  cmd->add_option("--config", f.config_path, "JSON run configuration file");
  cmd->add_option("--dataset", f.dataset, "dataset directory");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--threads", f.threads, "evaluation threads (fixed-order reduction)");
  if (wants_training_flags) {
    cmd->add_option("--geometry", f.geometry, "lorentz | euclidean");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--batch", f.batch, "batch size");
    cmd->add_option("--encoder", f.encoder, "transformer | mlp");
    cmd->add_flag("--no-entailment", f.no_entailment, "drop the entailment term");
    cmd->add_flag("--strict-eq8", f.strict_eq8,
                  "exclude the positive from the contrastive denominator");
    cmd->add_option("--fixed-curvature", f.fixed_curvature,
                    "freeze curvatures, set the mid curvature to this value");
  }
}

json train_once(const RunConfig& rc, const SyntheticDataset& data, const fs::path& out_dir) {
  Model<float> model(model_config_for(rc, data), rc.seed);
  TrainOptions opts;
  opts.epochs = rc.epochs;
  opts.batch_size = rc.batch;
  opts.seed = rc.seed;
  opts.loss = rc.loss;
  opts.optim = rc.optim;
  opts.train_classifier = rc.train_classifier;
  Trainer<float> trainer(model, opts);
  const std::vector<EpochLog> log = trainer.fit(data);

  ensure_dir(out_dir);
  write_text_file(out_dir / "loss_log.csv", format_loss_log(log));
  write_text_file(out_dir / "run_config.json", run_config_to_json(rc).dump(2) + "\n");
  save_checkpoint(model, out_dir / "checkpoint", trainer.state_extras(), trainer.trainer_meta());

  TestEmbeddings emb = compute_test_embeddings(model, data, rc.threads);
  json summary{{"epochs", log.size()},
               {"final", json{{"total", log.back().total},
                              {"contrastive", log.back().contrastive},
                              {"entailment", log.back().entailment},
                              {"tau", log.back().tau},
                              {"c_mid", log.back().c_mid},
                              {"c_out", log.back().c_out}}},
               {"retrieval", retrieval_report(emb)},
               {"classification", classification_report(model, data, rc.threads)}};
  return summary;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Lorentz-model cross-modal alignment toolkit"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-subject dataset");
  std::string synth_out = "dataset";
  GenConfig gen;
  synth->add_option("--out", synth_out, "dataset directory");
  synth->add_option("--seed", gen.seed, "generator seed");
  synth->add_option("--subjects", gen.subjects, "number of subjects");
  synth->add_option("--train-per-subject", gen.train_per_subject, "training samples per subject");
  synth->add_option("--test", gen.test_count, "shared test samples");
  synth->add_option("--voxels", gen.voxels, "voxels per subject");
  synth->add_option("--tokens", gen.tokens, "image feature tokens");
  synth->add_option("--feat", gen.feat_dim, "image feature dimension");
  synth->add_option("--noise", gen.noise_sigma, "voxel noise sigma");

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train a model and write a checkpoint");
  CommonFlags train_flags;
  add_common(train_cmd, train_flags, true);

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "classification metrics and geometry report");
  CommonFlags eval_flags;
  std::string eval_ckpt;
  add_common(eval_cmd, eval_flags, false);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();

  // ---- retrieve ----
  auto* retr_cmd = app.add_subcommand("retrieve", "bidirectional top-1 retrieval report");
  CommonFlags retr_flags;
  std::string retr_ckpt;
  add_common(retr_cmd, retr_flags, false);
  retr_cmd->add_option("--checkpoint", retr_ckpt, "checkpoint directory")->required();

  // ---- export ----
  auto* export_cmd = app.add_subcommand("export", "export pooled embeddings and histograms");
  CommonFlags export_flags;
  std::string export_ckpt;
  add_common(export_cmd, export_flags, false);
  export_cmd->add_option("--checkpoint", export_ckpt, "checkpoint directory")->required();

  // ---- gradcheck ----
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference suite over layers/losses");
  std::size_t grad_configs = 20;
  std::uint64_t grad_seed = 20240501;
  grad_cmd->add_option("--configs", grad_configs, "random configurations per item");
  grad_cmd->add_option("--seed", grad_seed, "suite seed");

  // ---- ablate ----
  auto* ablate_cmd = app.add_subcommand("ablate", "run the ablation grid and compare");
  CommonFlags ablate_flags;
  add_common(ablate_cmd, ablate_flags, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help and friends
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  if (synth->parsed()) {
    auto ds = generate(TaxonomySpec::default_tree(), gen);
    write_dataset(ds, synth_out);
    std::printf("wrote dataset to %s (%zu subjects, %zu train/subject, %zu shared test)\n",
                synth_out.c_str(), ds.subjects.size(), gen.train_per_subject, gen.test_count);
    return 0;
  }

  if (train_cmd->parsed()) {
    const RunConfig rc = resolve_config(train_flags);
    const SyntheticDataset data = read_dataset(rc.dataset);
    RunConfig adjusted = rc;
    adjusted.tokens = data.config.tokens;  // tokens follow the dataset
    const json summary = train_once(adjusted, data, rc.out);
    write_text_file(fs::path(rc.out) / "train_summary.json", summary.dump(2) + "\n");
    std::printf("%s\n", summary.dump(2).c_str());
    return 0;
  }

  auto load_for_eval = [&](const std::string& ckpt, const CommonFlags& flags) {
    RunConfig rc;
    if (flags.config_path) rc = run_config_from_json(parse_json_file(*flags.config_path));
    if (flags.dataset) rc.dataset = *flags.dataset;
    if (flags.out) rc.out = *flags.out;
    if (flags.threads) rc.threads = *flags.threads;
    if (rc.dataset.empty()) throw config_error("a dataset path is required (--dataset)");
    Model<float> model = load_checkpoint<float>(ckpt);
    SyntheticDataset data = read_dataset(rc.dataset);
    return std::tuple<Model<float>, SyntheticDataset, RunConfig>{std::move(model),
                                                                 std::move(data), rc};
  };

  if (eval_cmd->parsed()) {
    auto [model, data, rc] = load_for_eval(eval_ckpt, eval_flags);
    json report{{"classification", classification_report(model, data, rc.threads)}};
    if (model.config.geometry == Geometry::Lorentz) {
      TestEmbeddings emb = compute_test_embeddings(model, data, rc.threads);
      report["geometry"] = geometry_report_to_json(combined_geometry(emb, 0.1));
    }
    ensure_dir(rc.out);
    write_text_file(fs::path(rc.out) / "metrics_report.json", report.dump(2) + "\n");
    std::printf("%s\n", report.dump(2).c_str());
    return 0;
  }

  if (retr_cmd->parsed()) {
    auto [model, data, rc] = load_for_eval(retr_ckpt, retr_flags);
    TestEmbeddings emb = compute_test_embeddings(model, data, rc.threads);
    const json report = retrieval_report(emb);
    ensure_dir(rc.out);
    write_text_file(fs::path(rc.out) / "retrieval_report.json", report.dump(2) + "\n");
    std::printf("%s\n", report.dump(2).c_str());
    return 0;
  }

  if (export_cmd->parsed()) {
    auto [model, data, rc] = load_for_eval(export_ckpt, export_flags);
    TestEmbeddings emb = compute_test_embeddings(model, data, rc.threads);
    std::vector<std::string> image_ids;
    for (std::size_t i = 0; i < emb.images.count(); ++i) image_ids.push_back(std::to_string(i));
    // concatenate subjects into one brain pool with subject-tagged ids
    const std::size_t cols = emb.images.rows.last();
    const std::size_t m = emb.images.count();
    Tensor<double> brain_rows(Shape{m * emb.brains.size(), cols});
    std::vector<std::string> brain_ids;
    std::size_t row = 0;
    for (const auto& [name, pool] : emb.brains)
      for (std::size_t i = 0; i < m; ++i, ++row) {
        for (std::size_t j = 0; j < cols; ++j) brain_rows.at(row, j) = pool.rows.at(i, j);
        brain_ids.push_back(name + "/" + std::to_string(i));
      }
    PooledSet brains{brain_rows, emb.images.geometry, emb.images.curvature};
    ensure_dir(rc.out);
    export_embeddings(emb.images, image_ids, brains, brain_ids,
                      fs::path(rc.out) / "embeddings.csv",
                      fs::path(rc.out) / "histogram.json");
    std::printf("wrote %zu embeddings to %s\n", m + brain_ids.size(), rc.out.c_str());
    return 0;
  }

  if (grad_cmd->parsed()) {
    const auto results = run_gradient_suite(grad_configs, grad_seed);
    double worst = 0.0;
    for (const auto& r : results) {
      std::printf("%-24s max_rel_err %.3e over %zu configs %s\n", r.name.c_str(), r.max_error,
                  r.configs, r.max_error < 1e-4 ? "PASS" : "FAIL");
      worst = std::max(worst, r.max_error);
    }
    std::printf("worst %.3e\n", worst);
    return worst < 1e-4 ? 0 : 1;
  }

  if (ablate_cmd->parsed()) {
    RunConfig base = resolve_config(ablate_flags);
    if (!ablate_flags.epochs) base.epochs = 10;  // desk-scale grid default
    const SyntheticDataset data = read_dataset(base.dataset);
    base.tokens = data.config.tokens;

    struct Variant {
      std::string name;
      std::function<void(RunConfig&)> mutate;
    };
    const std::vector<Variant> grid{
        {"full", [](RunConfig&) {}},
        {"mlp_encoder", [](RunConfig& c) { c.encoder = "mlp"; }},
        {"no_entailment", [](RunConfig& c) { c.loss.entailment = false; }},
        {"fixed_c_1.0",
         [](RunConfig& c) {
           c.curvature_learnable = false;
           c.c_mid_init = 1.0;
         }},
        {"fixed_c_2.0",
         [](RunConfig& c) {
           c.curvature_learnable = false;
           c.c_mid_init = 2.0;
         }},
        {"fixed_c_3.0",
         [](RunConfig& c) {
           c.curvature_learnable = false;
           c.c_mid_init = 3.0;
         }},
    };

    json rows = json::array();
    std::string table =
        "variant         mAP      AUC      Ham      image@1  brain@1\n";
    for (const auto& v : grid) {
      RunConfig rc = base;
      v.mutate(rc);
      const fs::path out_dir = fs::path(base.out) / v.name;
      const json summary = train_once(rc, data, out_dir);
      const json& cls = summary.at("classification").at("average");
      const json& ret = summary.at("retrieval").at("average");
      char line[160];
      std::snprintf(line, sizeof(line), "%-15s %.4f   %.4f   %.4f   %.4f   %.4f\n",
                    v.name.c_str(), cls.at("mAP").get<double>(), cls.at("AUC").get<double>(),
                    cls.at("hamming").get<double>(), ret.at("image_top1").get<double>(),
                    ret.at("brain_top1").get<double>());
      table += line;
      rows.push_back(json{{"variant", v.name},
                          {"classification", cls},
                          {"retrieval", ret},
                          {"out", out_dir.string()}});
    }
    ensure_dir(base.out);
    write_text_file(fs::path(base.out) / "ablation_table.txt", table);
    write_text_file(fs::path(base.out) / "ablation.json",
                    json{{"epochs", base.epochs}, {"rows", rows}}.dump(2) + "\n");
    std::printf("%s", table.c_str());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const config_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const format_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const usage_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const dim_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
