#pragma once

// Training driver: epoch shuffling from one seeded stream, per-batch tapes,
// hybrid optimizer steps, and a fixed-format loss log. The classification
// head trains jointly on detached pooled embeddings, so the alignment
// objective (contrastive + lambda * entailment) owns the encoder while the
// head owns only its own parameters and the output curvature.

#include <functional>
#include <string>
#include <vector>

#include "lnn/data.hpp"
#include "lnn/losses.hpp"
#include "lnn/model.hpp"
#include "lnn/optim.hpp"

namespace lnn {

struct TrainOptions {
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 7;
  LossConfig loss;
  OptimConfig optim;
  bool train_classifier = true;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double total = 0.0;     // contrastive + lambda * entailment
  double contrastive = 0.0;
  double entailment = 0.0;
  double tau = 0.0, c_mid = 0.0, c_out = 0.0;  // values after the epoch
};

template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, TrainOptions opts)
      : model_(model), opts_(opts), shuffle_rng_(opts.seed) {
    std::vector<std::size_t> euclidean_ids;
    for (std::size_t id = 0; id < model.params.size(); ++id)
      if (model.params.def(id).group == ParamGroup::Euclidean) euclidean_ids.push_back(id);
    adamw_ = AdamW<T>(model.params, euclidean_ids, opts.optim);
    tau_opt_ = ScalarAdam(opts.optim);
    c_mid_opt_ = ScalarAdam(opts.optim);
    c_out_opt_ = ScalarAdam(opts.optim);
  }

  const TrainOptions& options() const { return opts_; }

  // Runs all epochs; invokes `on_epoch` (if set) after each epoch's updates.
  std::vector<EpochLog> fit(const SyntheticDataset& data,
                            const std::function<void(const EpochLog&)>& on_epoch = {}) {
    std::vector<std::pair<std::size_t, std::size_t>> order;  // (subject, index)
    for (std::size_t s = 0; s < data.train.size(); ++s)
      for (std::size_t i = 0; i < data.train[s].size(); ++i) order.emplace_back(s, i);
    if (order.size() < 2) throw usage_error("training needs at least two samples");

    std::vector<EpochLog> log;
    for (std::size_t epoch = 1; epoch <= opts_.epochs; ++epoch) {
      shuffle_rng_.shuffle(order.begin(), order.end());
      double sum_con = 0.0, sum_ent = 0.0;
      std::size_t seen = 0;
      for (std::size_t start = 0; start < order.size(); start += opts_.batch_size) {
        const std::size_t n = std::min(opts_.batch_size, order.size() - start);
        if (n < 2) continue;  // a trailing singleton has no negatives
        double bc = 0, be = 0;
        try {
          run_batch(data, order, start, n, bc, be);
        } catch (const numeric_error& e) {
          throw numeric_error("epoch " + std::to_string(epoch) + ": " + e.what());
        }
        sum_con += bc * static_cast<double>(n);
        sum_ent += be * static_cast<double>(n);
        seen += n;
      }
      EpochLog row;
      row.epoch = epoch;
      row.contrastive = sum_con / static_cast<double>(seen);
      row.entailment = sum_ent / static_cast<double>(seen);
      row.total = row.contrastive + opts_.loss.lambda * row.entailment;
      row.tau = model_.tau.value;
      row.c_mid = model_.c_mid.value;
      row.c_out = model_.c_out.value;
      log.push_back(row);
      if (on_epoch) on_epoch(row);
    }
    return log;
  }

  // Optimizer state for the checkpoint blob.
  std::vector<CheckpointExtra> state_extras() const {
    std::vector<CheckpointExtra> out;
    const auto& ids = adamw_.ids();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto& name = model_.params.def(ids[i]).name;
      auto dump = [&](const std::string& tag, const Tensor<T>& t) {
        CheckpointExtra e;
        e.name = "opt." + tag + "." + name;
        e.shape = t.shape();
        e.data.resize(t.size());
        for (std::size_t j = 0; j < t.size(); ++j) e.data[j] = static_cast<float>(t[j]);
        out.push_back(std::move(e));
      };
      dump("m", adamw_.first_moment(i));
      dump("v", adamw_.second_moment(i));
    }
    auto scalar_state = [&](const std::string& name, const ScalarAdam& s) {
      out.push_back(CheckpointExtra{
          "opt.scalar." + name, Shape{2},
          {static_cast<float>(s.first_moment()), static_cast<float>(s.second_moment())}});
    };
    scalar_state("tau", tau_opt_);
    scalar_state("c_mid", c_mid_opt_);
    scalar_state("c_out", c_out_opt_);
    return out;
  }

  json trainer_meta() const {
    return json{{"adamw_steps", adamw_.step_count()},
                {"scalar_steps", tau_opt_.step_count()},
                {"seed", opts_.seed}};
  }

 private:
  void run_batch(const SyntheticDataset& data,
                 const std::vector<std::pair<std::size_t, std::size_t>>& order, std::size_t start,
                 std::size_t n, double& out_con, double& out_ent) {
    Tape<T> tape;
    ParamContext<T> P(tape, model_.params, true);
    ScalarBundle<T> sc = model_.bind_scalars(tape, true);

    Tensor<std::uint8_t> labels(Shape{n, model_.config.classes});
    Value<T> objective{};
    Value<T> con{}, ent{};
    bool have_ent = false;

    if (model_.config.geometry == Geometry::Lorentz) {
      std::vector<Value<T>> it, is, ut, us;
      for (std::size_t b = 0; b < n; ++b) {
        const auto [subj, idx] = order[start + b];
        const Sample& smp = data.train[subj][idx];
        LorentzBatch<T> U = model_.encode_brain(P, sc, subj, smp.voxels.template cast<T>());
        LorentzBatch<T> I = model_.encode_image(P, sc, smp.features.template cast<T>());
        it.push_back(I.time);
        is.push_back(I.spatial);
        ut.push_back(U.time);
        us.push_back(U.spatial);
        for (std::size_t c = 0; c < model_.config.classes; ++c)
          labels.at(b, c) = smp.labels[c];
      }
      LorentzBatch<T> I{concat_rows(it), concat_rows(is), sc.c_mid};
      LorentzBatch<T> U{concat_rows(ut), concat_rows(us), sc.c_mid};
      con = contrastive_loss(I, U, sc.tau, opts_.loss.strict_eq8);
      objective = con;
      if (opts_.loss.entailment && opts_.loss.lambda > 0.0) {
        ent = entailment_loss(I, U, static_cast<T>(opts_.loss.cone_k));
        objective = add(objective, scale(ent, static_cast<T>(opts_.loss.lambda)));
        have_ent = true;
      }
      if (opts_.train_classifier) {
        LorentzBatch<T> frozen{detach(U.time), detach(U.spatial), detach(sc.c_mid)};
        Value<T> logits = model_.classify(P, frozen, sc.c_out);
        objective = add(objective, multilabel_loss(logits, labels));
      }
    } else {
      std::vector<Value<T>> iv, uv;
      for (std::size_t b = 0; b < n; ++b) {
        const auto [subj, idx] = order[start + b];
        const Sample& smp = data.train[subj][idx];
        uv.push_back(model_.encode_brain_euclidean(P, subj, smp.voxels.template cast<T>()));
        iv.push_back(model_.encode_image_euclidean(P, smp.features.template cast<T>()));
        for (std::size_t c = 0; c < model_.config.classes; ++c)
          labels.at(b, c) = smp.labels[c];
      }
      Value<T> I = concat_rows(iv);
      Value<T> U = concat_rows(uv);
      con = contrastive_loss_euclidean(I, U, sc.tau, opts_.loss.strict_eq8);
      objective = con;
      if (opts_.train_classifier) {
        Value<T> logits = model_.classify_euclidean(P, detach(U));
        objective = add(objective, multilabel_loss(logits, labels));
      }
    }

    tape.backward(objective);

    std::vector<Tensor<T>> grads;
    for (std::size_t id : adamw_.ids()) grads.push_back(P.grad(id));
    adamw_.step(model_.params, grads);

    const double g_tau = static_cast<double>(tape.grad(sc.tau)[0]);
    tau_opt_.step(model_.tau, g_tau);
    if (model_.config.curvature_learnable) {
      c_mid_opt_.step(model_.c_mid, static_cast<double>(tape.grad(sc.c_mid)[0]));
      c_out_opt_.step(model_.c_out, static_cast<double>(tape.grad(sc.c_out)[0]));
    }

    out_con = static_cast<double>(con.val()[0]);
    out_ent = have_ent ? static_cast<double>(ent.val()[0]) : 0.0;
  }

  Model<T>& model_;
  TrainOptions opts_;
  Rng shuffle_rng_;
  AdamW<T> adamw_;
  ScalarAdam tau_opt_, c_mid_opt_, c_out_opt_;
};

// Fixed loss-log format: one line per epoch.
inline std::string format_loss_log(const std::vector<EpochLog>& log) {
  std::string out = "epoch,total,contrastive,entailment,tau,c_mid,c_out\n";
  char buf[256];
  for (const auto& row : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", row.epoch, row.total,
                  row.contrastive, row.entailment, row.tau, row.c_mid, row.c_out);
    out += buf;
  }
  return out;
}

}  // namespace lnn
