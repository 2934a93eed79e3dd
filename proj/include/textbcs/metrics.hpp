#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace textbcs::metrics {

// Values are percentages in [0,100]. A class absent from both prediction and
// ground truth scores 100.
struct ClassScores {
  std::vector<double> per_class;
  double mean = 0.0;
};

ClassScores dice_metric(std::span<const int> pred, std::span<const int> gt, int num_classes);
ClassScores miou_metric(std::span<const int> pred, std::span<const int> gt, int num_classes);

struct MetricReport {
  int num_classes = 0;
  std::vector<std::string> ids;
  std::vector<double> dice;  // per sample, mean over classes
  std::vector<double> miou;
  std::vector<double> class_dice;  // per class, averaged over samples
  std::vector<double> class_miou;
  double mean_dice = 0.0;
  double mean_miou = 0.0;

  void add(const std::string& id, const ClassScores& d, const ClassScores& j);
  void finalize();
  nlohmann::json to_json(bool per_sample = true) const;
};

}  // namespace textbcs::metrics
