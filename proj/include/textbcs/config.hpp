#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace textbcs {

// How the alignment loss is normalized: by the number of summed terms over
// all stages, or per stage and then averaged over stages.
enum class AlignmentNorm { kAllTerms, kPerStage };

struct ExperimentConfig {
  // architecture
  int image_size = 64;
  int num_stages = 4;
  std::vector<int> stage_channels = {32, 64, 128, 256};
  int text_dim = 64;
  int token_length = 12;
  int num_classes = 2;
  int num_heads = 4;
  bool use_svli = true;
  bool use_el = true;
  double tau_init = 0.07;

  // objective
  double lambda1 = 0.01;
  double lambda3 = 0.01;
  double lambda2_max = 5e-7;
  int lambda2_warmup_epochs = 100;
  int negative_ratio = 3;
  AlignmentNorm alignment_norm = AlignmentNorm::kAllTerms;

  // optimization protocol
  int batch_size = 4;
  double init_lr = 1e-4;
  double lr_factor = 0.1;
  int lr_patience = 5;
  int early_stop_patience = 50;
  int max_epochs = 150;
  double min_delta = 0.0;
  double grad_clip = 5.0;  // global-norm clip; 0 disables
  std::int64_t seed = 0;

  // synthetic benchmark
  double lesion_contrast = 0.2;
  double distractor_prob = 0.5;

  // Throws ConfigError naming the first violated key.
  void validate() const;

  nlohmann::json to_json() const;
  // Strict: unknown keys are errors. Missing keys keep their defaults.
  static ExperimentConfig from_json(const nlohmann::json& j);

  // SHA-256 of the canonical (sorted-key) JSON form.
  std::string hash() const;

  bool operator==(const ExperimentConfig&) const = default;
};

// Loads a JSON document (an empty file means "all defaults"), applies
// TEXTBCS_<KEY> environment variables, then `overrides`, then validates.
// Override values are parsed as JSON when possible and as strings otherwise.
ExperimentConfig load_config(const std::filesystem::path& path,
                             const std::map<std::string, std::string>& overrides = {});

// Same layering without a file.
ExperimentConfig config_from_overrides(const std::map<std::string, std::string>& overrides);

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

struct RunManifest {
  std::string config_hash;
  std::string created_at;
  std::filesystem::path root;
  std::filesystem::path checkpoints;
  std::filesystem::path metrics;
  std::filesystem::path figures;

  nlohmann::json to_json() const;
};

// Creates the run directory layout under `root` and writes run.json.
RunManifest make_run_manifest(const ExperimentConfig& cfg, const std::filesystem::path& root);

}  // namespace textbcs
