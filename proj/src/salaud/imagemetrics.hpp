#pragma once

#include <filesystem>

#include "json.hpp"
#include "salaud/explain.hpp"
#include "salaud/png_io.hpp"

namespace salaud {

struct SsimConfig {
  int window = 8;
  bool sliding = false;  // stride-1 windows instead of non-overlapping tiles
  double dynamic_range = 1.0;

  double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
  double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }
  nlohmann::json to_json() const;
};

/// Mean over windows of
///   (2 mu_a mu_b + C1)(2 cov_ab + C2) / ((mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2))
/// with population (1/N) moments. Tiles that do not fit are dropped. Callers
/// normalize first (see map_similarity).
double ssim(const SaliencyMap& a, const SaliencyMap& b, const SsimConfig& config = {});

/// Min-max normalization to [0,1]; constant maps become all zeros.
SaliencyMap normalize_map(const SaliencyMap& map);

/// ssim(normalize_map(a), normalize_map(b)).
double map_similarity(const SaliencyMap& a, const SaliencyMap& b, const SsimConfig& config = {});

/// Alpha-blends green where the map is positive and red where it is negative,
/// opacity max_alpha * |v| / max|v|. Non-negative maps therefore render as a
/// single-hue overlay.
RgbImage overlay(const Tensor& image, const SaliencyMap& map, double max_alpha = 0.6);

void render_overlay(const Tensor& image, const SaliencyMap& map, const std::filesystem::path& path,
                    double max_alpha = 0.6);

/// Side-by-side strip of equally sized RGB images.
RgbImage hconcat(const std::vector<RgbImage>& tiles, int gap = 2);

void write_map_csv(const SaliencyMap& map, const std::filesystem::path& path);
SaliencyMap read_map_csv(const std::filesystem::path& path);

nlohmann::json map_to_json(const SaliencyMap& map);

}  // namespace salaud
