#pragma once

// The training loop: two-stage epoch schedule, per-batch confidence and
// prototype updates, SGD with classical momentum and weight decay, cosine
// learning-rate annealing, seeded shuffling, checkpointing, and per-epoch
// history records.
//
// The loop never sees ground-truth labels: it accepts a TrainView, which
// carries features and candidate sets only. Accuracy-style metrics are
// filled in by an observer callback owned by the evaluation layer.

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cel/data.hpp"
#include "cel/losses.hpp"
#include "cel/network.hpp"

namespace cel::train {

struct TrainView {
  std::size_t m = 0;
  std::size_t d = 0;
  const std::vector<float>* features = nullptr;  // m x d, row-major
  const data::CandidateMatrix* candidates = nullptr;
  const data::LabelSpace* labels = nullptr;
};

// Deliberately drops the truth column.
TrainView make_train_view(const data::PartialLabelDataset& ds);

struct TrainConfig {
  loss::LossWeights weights;
  std::uint32_t batch_size = 128;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  loss::SelectionMode selection = loss::SelectionMode::strict;
  std::string augmentation = "identity";  // the only supported hook
  std::uint32_t eval_every = 1;           // observer cadence; final epoch always fires
  std::uint32_t checkpoint_every = 0;     // 0 disables periodic checkpoints
  std::string checkpoint_dir;             // required when checkpoint_every > 0
  bool verify_each_update = false;        // re-validate confidence rows after every batch
};

void validate_config(const TrainConfig& cfg);

struct EpochRecord {
  std::uint32_t epoch = 0;
  double lr = 0.0;
  double loss_cls = 0.0;
  double loss_cal = 0.0;
  double loss_pdl = 0.0;  // 0 for epochs at or below t_w (not computed)
  double train_acc = std::nan("");
  double test_acc = std::nan("");
  std::uint64_t pdl_skipped = 0;
  double conf_hit_rate = std::nan("");
  // Diagnostics outside the CSV contract:
  std::uint64_t conf_fallback_rows = 0;
  std::uint64_t cal_full_set_rows = 0;
  std::uint64_t zero_embedding_rows = 0;
  std::uint64_t selected = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

struct TrainState {
  net::ModelConfig model_config;
  net::CelModel model;
  net::CelModel velocity;
  loss::PrototypeBank bank;
  data::ConfidenceMatrix confidence;
  TrainHistory history;
  std::uint32_t epoch = 0;  // completed epochs
};

struct EpochContext {
  const TrainState& state;
  std::uint32_t epoch;
};

// The observer may fill train_acc / test_acc / conf_hit_rate on the record.
using Observer = std::function<void(const EpochContext&, EpochRecord&)>;

struct NumericError : std::runtime_error {
  NumericError(std::uint32_t epoch, std::size_t batch, const std::string& what,
               std::string last_checkpoint);
  std::uint32_t epoch;
  std::size_t batch;
  std::string last_checkpoint;  // empty when no checkpoint was written
};

// lr_t = lr0 * (1 + cos(pi * (epoch - 1) / t_max)) / 2, epoch in [1, t_max].
double lr_schedule(std::uint32_t epoch, std::uint32_t t_max, double lr0);

// v <- momentum * v + grad + weight_decay * param; param <- param - lr_t * v.
void optimizer_step(net::CelModel& params, const net::CelModel& grads, net::CelModel& velocity,
                    double lr_t, double momentum, double weight_decay);
void optimizer_step(net::BaselineModel& params, const net::BaselineModel& grads,
                    net::BaselineModel& velocity, double lr_t, double momentum,
                    double weight_decay);

TrainState init_state(const TrainView& view, const net::ModelConfig& mcfg,
                      const TrainConfig& cfg);

// Runs epochs state.epoch+1 .. until (capped at t_max; until = 0 means t_max).
// Appends to state.history; bit-deterministic for a fixed seed in serial mode.
void train(const TrainView& view, const TrainConfig& cfg, TrainState& state,
           const Observer& obs = {}, std::uint32_t until = 0);

// Checkpoints: manifest.json plus float64 little-endian blobs, each guarded
// by an FNV-1a 64 content hash. The shuffle stream is keyed by (seed, epoch),
// so the stored epoch index is the complete RNG state.
void save_checkpoint(const std::string& dir, const TrainState& state, const TrainConfig& cfg);
TrainState load_checkpoint(const std::string& dir, TrainConfig* cfg_out = nullptr);

// history.csv: epoch,lr,loss_cls,loss_cal,loss_pdl,train_acc,test_acc,
// pdl_skipped,conf_hit_rate. Values print with %.17g so reruns compare
// byte-for-byte; missing metrics print as nan.
void write_history_csv(const std::string& path, const TrainHistory& history);
TrainHistory read_history_csv(const std::string& path);

// Forward pass over a feature block in deterministic chunks; returns B x q
// probabilities. Shared by training-side metrics and the eval harness.
Mat predict(const net::CelModel& model, const float* features, std::size_t m, std::size_t d);
Mat predict(const net::BaselineModel& model, const float* features, std::size_t m,
            std::size_t d);

// Baseline (mean-pool, single head) trained with the classification loss
// only; used by the candidate-generation contrast experiment.
struct BaselineState {
  net::BaselineModel model;
  net::BaselineModel velocity;
  data::ConfidenceMatrix confidence;
  TrainHistory history;
};

using BaselineObserver =
    std::function<void(const BaselineState&, std::uint32_t epoch, EpochRecord&)>;

BaselineState train_baseline(const TrainView& view, const net::BackboneConfig& bcfg,
                             const TrainConfig& cfg, const BaselineObserver& obs = {});

}  // namespace cel::train
