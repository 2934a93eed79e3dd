#include "textbcs/metrics.hpp"

#include <stdexcept>

namespace textbcs::metrics {

namespace {

struct Counts {
  std::vector<long> inter, pred, gt;
};

Counts count(std::span<const int> pred, std::span<const int> gt, int num_classes) {
  if (pred.size() != gt.size()) throw std::invalid_argument("prediction and ground truth differ in size");
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  Counts c{std::vector<long>(num_classes), std::vector<long>(num_classes), std::vector<long>(num_classes)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p < 0 || p >= num_classes || g < 0 || g >= num_classes) throw std::invalid_argument("label outside [0, C)");
    ++c.pred[p];
    ++c.gt[g];
    if (p == g) ++c.inter[p];
  }
  return c;
}

ClassScores finish(std::vector<double> per_class) {
  ClassScores s{std::move(per_class), 0.0};
  for (double v : s.per_class) s.mean += v;
  s.mean /= static_cast<double>(s.per_class.size());
  return s;
}

}  // namespace

ClassScores dice_metric(std::span<const int> pred, std::span<const int> gt, int num_classes) {
  const Counts c = count(pred, gt, num_classes);
  std::vector<double> out(num_classes);
  for (int k = 0; k < num_classes; ++k) {
    const long denom = c.pred[k] + c.gt[k];
    out[k] = denom == 0 ? 100.0 : 100.0 * 2.0 * c.inter[k] / denom;
  }
  return finish(std::move(out));
}

ClassScores miou_metric(std::span<const int> pred, std::span<const int> gt, int num_classes) {
  const Counts c = count(pred, gt, num_classes);
  std::vector<double> out(num_classes);
  for (int k = 0; k < num_classes; ++k) {
    const long uni = c.pred[k] + c.gt[k] - c.inter[k];
    out[k] = uni == 0 ? 100.0 : 100.0 * c.inter[k] / uni;
  }
  return finish(std::move(out));
}

void MetricReport::add(const std::string& id, const ClassScores& d, const ClassScores& j) {
  if (num_classes == 0) {
    num_classes = static_cast<int>(d.per_class.size());
    class_dice.assign(num_classes, 0.0);
    class_miou.assign(num_classes, 0.0);
  }
  ids.push_back(id);
  dice.push_back(d.mean);
  miou.push_back(j.mean);
  for (int k = 0; k < num_classes; ++k) {
    class_dice[k] += d.per_class[k];
    class_miou[k] += j.per_class[k];
  }
}

void MetricReport::finalize() {
  const double n = static_cast<double>(ids.size());
  if (n == 0) return;
  for (double& v : class_dice) v /= n;
  for (double& v : class_miou) v /= n;
  mean_dice = mean_miou = 0.0;
  for (std::size_t i = 0; i < dice.size(); ++i) {
    mean_dice += dice[i];
    mean_miou += miou[i];
  }
  mean_dice /= n;
  mean_miou /= n;
}

nlohmann::json MetricReport::to_json(bool per_sample) const {
  nlohmann::json j{{"dice", mean_dice},       {"miou", mean_miou},       {"dice_per_class", class_dice},
                   {"miou_per_class", class_miou}, {"num_samples", ids.size()}};
  if (per_sample) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) rows.push_back({{"id", ids[i]}, {"dice", dice[i]}, {"miou", miou[i]}});
    j["samples"] = rows;
  }
  return j;
}

}  // namespace textbcs::metrics
