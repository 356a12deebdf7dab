#include "salaud/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace salaud {

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  require(image.width > 0 && image.height > 0 &&
              image.pixels.size() == static_cast<std::size_t>(image.width) * image.height * 3,
          ErrorCode::InvalidArgument, "RGB buffer does not match its dimensions");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorCode::Io, "writing " + path.string() + ": " + msg);
  }
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    fail(ErrorCode::Io, "reading " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = static_cast<int>(png.width);
  out.height = static_cast<int>(png.height);
  out.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorCode::Io, "decoding " + path.string() + ": " + msg);
  }
  return out;
}

RgbImage to_rgb(const Tensor& image) {
  require(image.rank() == 3 && image.channels() == 3, ErrorCode::InputShape, "expected a 3xHxW image");
  RgbImage out{image.width(), image.height(), {}};
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * 3);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        out.pixels[(static_cast<std::size_t>(y) * out.width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return out;
}

Tensor from_rgb(const RgbImage& image) {
  Tensor out({3, image.height, image.width});
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(c, y, x) =
            static_cast<float>(image.pixels[(static_cast<std::size_t>(y) * image.width + x) * 3 + c]) / 255.0f;
      }
    }
  }
  return out;
}

void quantize_8bit(Tensor& image) {
  for (float& v : image.data()) {
    v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  }
}

}  // namespace salaud
