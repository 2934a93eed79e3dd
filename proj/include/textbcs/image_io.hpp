#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace textbcs {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB
};

// Lossless 8-bit PNG I/O. Errors raise DataError.
void write_png(const std::filesystem::path& path, const GrayImage& img);
void write_png(const std::filesystem::path& path, const RgbImage& img);
GrayImage read_png_gray(const std::filesystem::path& path);

}  // namespace textbcs
