#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textbcs/config.hpp"
#include "textbcs/labels.hpp"
#include "textbcs/rng.hpp"
#include "textbcs/tensor.hpp"

namespace textbcs::synth {

inline constexpr const char* kGeneratorVersion = "textbcs-synth-1";
inline constexpr int kMaxLesions = 4;

enum class Location { kLeft, kRight };
enum class Shape { kRound, kEllipse, kIrregular };
enum class SizeClass { kSmall, kMedium, kLarge };
enum class Split { kTrain, kVal, kTest };

std::string to_string(Location v);
std::string to_string(Shape v);
std::string to_string(SizeClass v);
std::string to_string(Split v);
Location parse_location(const std::string& s);
Shape parse_shape(const std::string& s);
SizeClass parse_size(const std::string& s);
Split parse_split(const std::string& s);

// Area of one lesion as a fraction of the image.
std::pair<double, double> area_fraction_range(SizeClass size);

struct LesionAttributes {
  Location location = Location::kLeft;
  Shape shape = Shape::kRound;
  SizeClass size = SizeClass::kSmall;
  int count = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static LesionAttributes from_json(const nlohmann::json& j);
  bool operator==(const LesionAttributes&) const = default;
};

// "location {loc}; shape {shape}; size {size}; number {count-word}."
std::string render_prompt(const LesionAttributes& attrs);
std::string count_word(int count);

struct Sample {
  std::string id;
  int size = 0;
  std::vector<double> image;  // size*size, values k/255 in [0,1]
  std::vector<int> mask;      // size*size, 0 background / 1 lesion
  LesionAttributes attributes;
  std::string prompt;
  int group_id = 0;
  Split split = Split::kTrain;
};

struct SampleOptions {
  int image_size = 64;
  double contrast = 0.2;
  // Chance of adding a lesion-like blob, absent from the mask, in the half
  // opposite to the prompted location.
  double distractor_prob = 0.0;
  // Optional shared low-frequency background (one per virtual patient).
  const std::vector<double>* background = nullptr;
};

// Smoothed noise field in roughly [0.25, 0.55].
std::vector<double> background_field(Rng& rng, int image_size);

// Renders one sample. Raises DataError when the requested lesions cannot be
// placed in the half-image after bounded retries.
Sample generate_sample(Rng& rng, const LesionAttributes& attrs, double contrast);
Sample generate_sample(Rng& rng, const LesionAttributes& attrs, const SampleOptions& options);

// 8-connected component count of the non-zero pixels.
int count_components(const std::vector<int>& mask, int width, int height);

struct SampleRecord {
  std::string id;
  std::string image;  // relative path
  std::string mask;
  std::string prompt;
  LesionAttributes attributes;
  int group_id = 0;
  Split split = Split::kTrain;

  nlohmann::json to_json() const;
  static SampleRecord from_json(const nlohmann::json& j);
};

struct DatasetManifest {
  std::filesystem::path root;
  std::uint64_t seed = 0;
  std::string version = kGeneratorVersion;
  int image_size = 0;
  std::vector<SampleRecord> records;

  std::vector<SampleRecord> split(Split s) const;
  std::vector<int> groups(Split s) const;
};

struct SplitCounts {
  int train = 0, val = 0, test = 0;
};
// Group counts for the 7:1:2 split. Raises ConfigError below 10 groups.
SplitCounts split_group_counts(int n_groups);

DatasetManifest generate_dataset(const ExperimentConfig& cfg, int n_groups, int samples_per_group,
                                 const std::filesystem::path& out_dir);
DatasetManifest load_manifest(const std::filesystem::path& dir);

struct Batch {
  std::vector<std::string> ids;
  Tensor images;  // [B,1,H,W]
  LabelMap masks;
  std::vector<std::string> prompts;
};

// Decoded samples of one split, held in memory.
class SplitData {
 public:
  SplitData() = default;
  SplitData(const DatasetManifest& manifest, Split split);

  std::size_t size() const { return samples_.size(); }
  const std::vector<Sample>& samples() const { return samples_; }
  Split split() const { return split_; }

  // Every sample exactly once. The train split is shuffled with rng; the
  // other splits keep manifest order and ignore rng.
  std::vector<Batch> batches(int batch_size, Rng* rng) const;
  Batch batch_of(const std::vector<std::size_t>& indices) const;

 private:
  Split split_ = Split::kTrain;
  std::vector<Sample> samples_;
};

std::vector<Batch> load_batches(const DatasetManifest& manifest, Split split, int batch_size, Rng* rng);

}  // namespace textbcs::synth
