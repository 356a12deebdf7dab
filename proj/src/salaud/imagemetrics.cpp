#include "salaud/imagemetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace salaud {

using nlohmann::json;

json SsimConfig::to_json() const {
  return json{{"window", window}, {"sliding", sliding}, {"dynamic_range", dynamic_range}, {"c1", c1()}, {"c2", c2()}};
}

double ssim(const SaliencyMap& a, const SaliencyMap& b, const SsimConfig& cfg) {
  require(a.height == b.height && a.width == b.width && a.values.size() == b.values.size(), ErrorCode::InputShape,
          "SSIM inputs differ in size");
  require(cfg.window >= 2 && cfg.window <= std::min(a.height, a.width), ErrorCode::Config,
          "SSIM window must lie in [2, min(H, W)]");
  require(cfg.dynamic_range > 0.0, ErrorCode::Config, "SSIM dynamic range must be positive");
  const int win = cfg.window;
  const int stride = cfg.sliding ? 1 : win;
  const double n = static_cast<double>(win) * win;
  const double c1 = cfg.c1(), c2 = cfg.c2();
  double total = 0.0;
  long windows = 0;
  for (int y0 = 0; y0 + win <= a.height; y0 += stride) {
    for (int x0 = 0; x0 + win <= a.width; x0 += stride) {
      double ma = 0.0, mb = 0.0;
      for (int y = y0; y < y0 + win; ++y) {
        for (int x = x0; x < x0 + win; ++x) {
          ma += a.at(y, x);
          mb += b.at(y, x);
        }
      }
      ma /= n;
      mb /= n;
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int y = y0; y < y0 + win; ++y) {
        for (int x = x0; x < x0 + win; ++x) {
          const double da = a.at(y, x) - ma;
          const double db = b.at(y, x) - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      }
      va /= n;
      vb /= n;
      cov /= n;
      total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

SaliencyMap normalize_map(const SaliencyMap& map) {
  SaliencyMap out = map;
  if (map.values.empty()) return out;
  for (double v : map.values) require(std::isfinite(v), ErrorCode::Domain, "saliency map contains non-finite values");
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double range = *hi - *lo;
  for (double& v : out.values) v = range > 0.0 ? (v - *lo) / range : 0.0;
  return out;
}

double map_similarity(const SaliencyMap& a, const SaliencyMap& b, const SsimConfig& config) {
  return ssim(normalize_map(a), normalize_map(b), config);
}

RgbImage overlay(const Tensor& image, const SaliencyMap& map, double max_alpha) {
  require(image.rank() == 3 && image.channels() == 3 && image.height() == map.height && image.width() == map.width,
          ErrorCode::InputShape, "overlay: map and image dimensions differ");
  double peak = 0.0;
  for (double v : map.values) peak = std::max(peak, std::abs(v));
  Tensor blended = image;
  if (peak > 0.0) {
    for (int y = 0; y < map.height; ++y) {
      for (int x = 0; x < map.width; ++x) {
        const double v = map.at(y, x);
        const double alpha = max_alpha * std::abs(v) / peak;
        const int hue = v >= 0.0 ? 1 : 0;  // green channel for positive, red for negative
        for (int c = 0; c < 3; ++c) {
          const double target = c == hue ? 1.0 : 0.0;
          blended.at(c, y, x) = static_cast<float>((1.0 - alpha) * image.at(c, y, x) + alpha * target);
        }
      }
    }
  }
  return to_rgb(blended);
}

void render_overlay(const Tensor& image, const SaliencyMap& map, const std::filesystem::path& path, double max_alpha) {
  write_png(path, overlay(image, map, max_alpha));
}

RgbImage hconcat(const std::vector<RgbImage>& tiles, int gap) {
  require(!tiles.empty(), ErrorCode::InvalidArgument, "no tiles to concatenate");
  const int h = tiles.front().height;
  int w = 0;
  for (const auto& t : tiles) {
    require(t.height == h, ErrorCode::InputShape, "panel tiles differ in height");
    w += t.width;
  }
  w += gap * static_cast<int>(tiles.size() - 1);
  RgbImage out{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3, 255)};
  int x0 = 0;
  for (const auto& t : tiles) {
    for (int y = 0; y < h; ++y) {
      std::copy_n(&t.pixels[static_cast<std::size_t>(y) * t.width * 3], static_cast<std::size_t>(t.width) * 3,
                  &out.pixels[(static_cast<std::size_t>(y) * w + x0) * 3]);
    }
    x0 += t.width + gap;
  }
  return out;
}

void write_map_csv(const SaliencyMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  char buf[32];
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      std::snprintf(buf, sizeof buf, "%.17g", map.at(y, x));
      out << (x ? "," : "") << buf;
    }
    out << "\n";
  }
}

SaliencyMap read_map_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + path.string());
  SaliencyMap m;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    int cols = 0;
    while (std::getline(row, cell, ',')) {
      try {
        m.values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        fail(ErrorCode::Format, path.string() + ": bad number '" + cell + "' on row " + std::to_string(m.height + 1));
      }
      ++cols;
    }
    if (m.height == 0) m.width = cols;
    require(cols == m.width, ErrorCode::Format, path.string() + ": ragged CSV grid");
    ++m.height;
  }
  require(m.height > 0 && m.width > 0, ErrorCode::Format, path.string() + ": empty map");
  return m;
}

json map_to_json(const SaliencyMap& map) {
  return json{{"height", map.height},
              {"width", map.width},
              {"method", map.method},
              {"target_class", map.target_class},
              {"model_id", map.model_id},
              {"values", map.values}};
}

}  // namespace salaud
