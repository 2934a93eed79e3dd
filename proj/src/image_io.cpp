#include "textbcs/image_io.hpp"

#include <png.h>

#include <cstring>

#include "textbcs/errors.hpp"

namespace textbcs {

namespace {

void write_any(const std::filesystem::path& path, int width, int height, png_uint_32 format, const std::uint8_t* data,
               std::size_t channels) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, static_cast<png_int_32>(width * channels), nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot write PNG " + path.string() + ": " + msg);
  }
}

}  // namespace

void write_png(const std::filesystem::path& path, const GrayImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height) {
    throw DataError("write_png: pixel buffer does not match dimensions");
  }
  write_any(path, img.width, img.height, PNG_FORMAT_GRAY, img.pixels.data(), 1);
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
    throw DataError("write_png: pixel buffer does not match dimensions");
  }
  write_any(path, img.width, img.height, PNG_FORMAT_RGB, img.pixels.data(), 3);
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + image.message);
  }
  if (image.format != PNG_FORMAT_GRAY) {
    png_image_free(&image);
    throw DataError("expected an 8-bit grayscale PNG: " + path.string());
  }
  GrayImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + msg);
  }
  return out;
}

}  // namespace textbcs
