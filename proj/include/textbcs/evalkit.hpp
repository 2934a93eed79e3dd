#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textbcs/config.hpp"
#include "textbcs/image_io.hpp"
#include "textbcs/metrics.hpp"
#include "textbcs/model.hpp"
#include "textbcs/synth.hpp"

namespace textbcs::evalkit {

// ---- paired t-test ----

enum class Alternative { kTwoSided, kGreater };

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  int df = 0;
  std::size_t n = 0;
  double mean_diff = 0.0;
  // "", "degenerate_variance" (constant non-zero differences) or
  // "zero_differences" (all differences zero).
  std::string flag;

  nlohmann::json to_json() const;
};

// Paired t-test on a - b. kGreater tests mean(a - b) > 0.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b,
                          Alternative alternative = Alternative::kTwoSided);

// ---- saliency ----

struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // in [0,1]
  bool degenerate = false;     // constant input, map is all zeros
};

// Channel mean of |activation| for one sample ([C,h,w] slice of an NCHW
// tensor), min-max normalised and upsampled (nearest) to target x target.
Heatmap saliency_map(const Tensor& activations, int sample, int target);
std::vector<Heatmap> saliency_maps(const ForwardResult& forward, int sample, int target);

// ---- figures ----

RgbImage colorize(const Heatmap& map);
// Gray image with ground truth (green) and prediction (red) outlines.
RgbImage overlay(const std::vector<double>& image, int size, const std::vector<int>& gt, const std::vector<int>& pred);
// Blend of the image with a heatmap.
RgbImage heat_overlay(const std::vector<double>& image, int size, const Heatmap& map, double alpha = 0.5);

// ---- morphology ----

std::vector<int> dilate(const std::vector<int>& mask, int size, int radius);
std::vector<int> erode(const std::vector<int>& mask, int size, int radius);
int boundary_radius(int image_size);

// ---- harnesses ----

inline const std::vector<std::string> kVariants = {"base", "base+svli", "base+el", "full"};
ExperimentConfig variant_config(const ExperimentConfig& cfg, const std::string& variant);

struct RunOutcome {
  std::filesystem::path dir;
  metrics::MetricReport test;
  double best_val = 0.0;
  int epochs = 0;
  bool reused = false;
};

// Trains cfg into dir (or reuses a finished run there with the same config
// hash) and evaluates the best checkpoint on the test split.
RunOutcome train_and_test(const ExperimentConfig& cfg, const synth::DatasetManifest& manifest,
                          const std::filesystem::path& dir, bool reuse = true);

struct AblationRow {
  std::string variant;
  std::int64_t seed = 0;
  double dice = 0.0;
  double miou = 0.0;
  int epochs = 0;
};

struct VariantSummary {
  double dice_mean = 0.0, dice_std = 0.0, miou_mean = 0.0, miou_std = 0.0;
  std::map<std::string, double> per_sample_dice;  // id -> mean over seeds
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::map<std::string, VariantSummary> summary;
  std::map<std::string, TTestResult> tests;  // "<variant>_vs_base", two-sided

  void write_csv(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;
};

AblationTable run_ablation(const ExperimentConfig& cfg, const synth::DatasetManifest& manifest,
                           const std::vector<std::string>& variants, const std::vector<std::int64_t>& seeds,
                           const std::filesystem::path& out_dir, bool reuse = true);

struct SweepRow {
  double value = 0.0;
  double dice = 0.0;
  double miou = 0.0;
  bool best = false;
};

struct SweepTable {
  std::string param;
  std::vector<SweepRow> rows;
  void write_csv(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;
};

SweepTable run_sweep(const ExperimentConfig& cfg, const synth::DatasetManifest& manifest, const std::string& param,
                     const std::vector<double>& values, const std::filesystem::path& out_dir, bool reuse = true);

// canonical prompt -> style -> prompt
using ParaphraseTable = std::map<std::string, std::map<std::string, std::string>>;
// "reordered" (phrases permuted, in vocabulary) and "paraphrase" (free wording,
// mostly out of vocabulary) for every record.
ParaphraseTable default_paraphrases(const std::vector<synth::SampleRecord>& records);

struct RobustnessRow {
  std::string style;
  double dice = 0.0;
  double delta = 0.0;
  double unk_fraction = 0.0;  // share of valid tokens mapped to UNK
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;
  void write_csv(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;
};

RobustnessReport prompt_robustness_eval(TextBcsModel& model, const synth::SplitData& data,
                                        const ParaphraseTable& paraphrases);

struct BoundaryStats {
  double mean_band = 0.0;
  double mean_interior = 0.0;
  double mean_background = 0.0;
  std::vector<std::string> ids;          // images with both band and interior pixels
  std::vector<double> band_per_image;
  std::vector<double> interior_per_image;
  int skipped = 0;                       // images without lesion interior
  TTestResult test;                      // band > interior, one-sided
  std::vector<double> histogram_edges;   // u histogram bins over [0,1]
  std::vector<long> histogram_band, histogram_interior, histogram_background;

  void write_histogram_csv(const std::filesystem::path& path) const;
  nlohmann::json to_json() const;
};

BoundaryStats uncertainty_boundary_stats(TextBcsModel& model, const synth::SplitData& data, int bins = 20);

}  // namespace textbcs::evalkit
