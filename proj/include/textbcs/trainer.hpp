#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textbcs/config.hpp"
#include "textbcs/metrics.hpp"
#include "textbcs/model.hpp"
#include "textbcs/objective.hpp"
#include "textbcs/optimizer.hpp"
#include "textbcs/synth.hpp"

namespace textbcs::train {

inline constexpr const char* kCodeVersion = "textbcs-0.1.0";

struct EpochRecord {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  objective::LossReport train;
  objective::LossReport val;
  double val_dice = 0.0;
  double val_miou = 0.0;
  int clipped_steps = 0;
  bool improved = false;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

struct TrainState {
  int epoch = 0;  // completed epochs
  double lr = 0.0;
  double best_val = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int epochs_since_improve = 0;
  int plateau_count = 0;
  std::string rng_digest;
  std::vector<EpochRecord> history;

  static TrainState initial(const ExperimentConfig& cfg);
  nlohmann::json to_json(bool with_history = false) const;
};

// Records the epoch's validation score and returns the learning rate for the
// next epoch. Improvement means strictly greater than best_val + min_delta.
// After lr_patience epochs without improvement the rate is multiplied by
// lr_factor and the plateau counter restarts.
double lr_on_plateau(TrainState& state, double current_val, const ExperimentConfig& cfg);
bool early_stop(const TrainState& state, const ExperimentConfig& cfg);

struct BatchPrediction {
  LabelMap labels;
  Tensor probs;        // [N,C,H,W], expected probabilities (softmax without the evidential head)
  Tensor uncertainty;  // [N,H,W], C / S; empty without the evidential head
  ForwardResult forward;
};

// Inference (eval-mode normalisation, no graph).
BatchPrediction predict_batch(TextBcsModel& model, const Tensor& images, const std::vector<std::string>& prompts);
metrics::MetricReport evaluate(TextBcsModel& model, const synth::SplitData& data, int batch_size = 8);

// Forward pass and objective for one batch. With backprop set, parameter
// gradients are accumulated. rng drives the alignment negative sampling.
objective::LossReport batch_loss(TextBcsModel& model, const synth::Batch& batch, int epoch, Rng& rng, bool training,
                                 bool backprop);

struct LoadedCheckpoint {
  ExperimentConfig cfg;
  std::unique_ptr<TextBcsModel> model;
  nlohmann::json meta;
};

void save_weights(TextBcsModel& model, const std::filesystem::path& path);
void load_weights(TextBcsModel& model, const std::filesystem::path& path);
void save_checkpoint(const std::filesystem::path& dir, TextBcsModel& model, const Adam* optimizer,
                     const TrainState& state, const nlohmann::json& extra = nlohmann::json::object());
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

struct TrainOptions {
  bool log_epochs = true;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  TrainState state;
  std::filesystem::path checkpoint;
  std::filesystem::path history;
  bool early_stopped = false;
};

// Trains on the manifest's train split, monitoring validation Dice. Writes
// out_dir/run.json, out_dir/history.jsonl and the best checkpoint under
// out_dir/checkpoint. A non-finite loss raises TrainingAborted and leaves the
// last good checkpoint in place.
TrainResult train(const ExperimentConfig& cfg, const synth::DatasetManifest& manifest,
                  const std::filesystem::path& out_dir, const TrainOptions& options = {});

}  // namespace textbcs::train
