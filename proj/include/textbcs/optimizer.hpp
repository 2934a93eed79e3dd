#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "textbcs/layers.hpp"

namespace textbcs {

// Adam with bias correction and no weight decay.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(std::vector<std::pair<std::string, ag::Var>> params);

  void zero_grad();
  void step(double lr);
  long steps() const { return t_; }

  nlohmann::json settings() const;
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, ag::Var>> params_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

// Rescales gradients so their global L2 norm is at most max_norm (0 disables).
// Returns the norm before clipping.
double clip_grad_norm(const std::vector<std::pair<std::string, ag::Var>>& params, double max_norm);

// Flat binary blob of named tensors.
void save_tensors(const std::filesystem::path& path, const std::vector<std::pair<std::string, const Tensor*>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::filesystem::path& path);

}  // namespace textbcs
