#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "salaud/tensor.hpp"

namespace salaud {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major
};

void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);

/// 3xHxW tensor in [0,1] <-> 8-bit RGB; values are rounded to the nearest level.
RgbImage to_rgb(const Tensor& image);
Tensor from_rgb(const RgbImage& image);

/// Rounds every value to the nearest multiple of 1/255 (what a PNG round trip
/// would produce).
void quantize_8bit(Tensor& image);

}  // namespace salaud
