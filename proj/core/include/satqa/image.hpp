#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "satqa/tensor.hpp"

namespace satqa {

// H x W x 3 interleaved RGB plane with intensities in [0, 1].
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int height, int width, float fill = 0.0f);
  RgbImage(int height, int width, std::vector<float> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return pixels_.empty(); }

  float& at(int y, int x, int c) { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  std::span<float> pixels() { return pixels_; }
  std::span<const float> pixels() const { return pixels_; }

  void clamp01();
  bool operator==(const RgbImage&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> pixels_;
};

// PNG (8/16 bit), JPEG and binary PPM by extension.
RgbImage load_image(const std::filesystem::path& path);
// PNG is written 8-bit; JPEG at the given quality.
void save_png(const RgbImage& img, const std::filesystem::path& path);
void save_jpeg(const RgbImage& img, const std::filesystem::path& path, int quality);
void save_bytes(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_jpeg(const RgbImage& img, int quality);
RgbImage decode_jpeg(std::span<const std::uint8_t> bytes);

// Round-trips intensities through the 8-bit grid used by the PNG writer.
RgbImage quantize8(const RgbImage& img);

RgbImage crop(const RgbImage& img, int top, int left, int height, int width);
RgbImage flip_horizontal(const RgbImage& img);
RgbImage flip_vertical(const RgbImage& img);
// Keys cubic convolution (a = -0.5), clamped borders.
RgbImage resize_bicubic(const RgbImage& img, int height, int width);

double mse(const RgbImage& a, const RgbImage& b);
// Peak 1.0; identical images give +infinity.
double psnr(const RgbImage& a, const RgbImage& b);

// 3 x H x W tensor, per-channel standardised with fixed statistics.
Tensor to_model_input(const RgbImage& img);

}  // namespace satqa
