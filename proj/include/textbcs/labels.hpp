#pragma once

#include <cstddef>
#include <vector>

namespace textbcs {

// Integer class labels for a batch of images, [N,H,W] row-major.
struct LabelMap {
  int batch = 0;
  int height = 0;
  int width = 0;
  std::vector<int> data;

  LabelMap() = default;
  LabelMap(int n, int h, int w, int fill = 0)
      : batch(n), height(h), width(w), data(static_cast<std::size_t>(n) * h * w, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  int& at(int n, int y, int x) { return data[(static_cast<std::size_t>(n) * height + y) * width + x]; }
  int at(int n, int y, int x) const { return data[(static_cast<std::size_t>(n) * height + y) * width + x]; }
};

}  // namespace textbcs
