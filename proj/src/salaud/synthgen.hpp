#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "salaud/tensor.hpp"

namespace salaud {

inline constexpr int kNaevus = 0;
inline constexpr int kMelanoma = 1;

enum class ArtifactKind { None, DarkCorners };

struct ArtifactSpec {
  ArtifactKind kind = ArtifactKind::None;
  double strength = 0.7;    // in [0,1]; corner pixels are scaled by 1 - strength
  double p_naevus = 0.0;    // class-conditional probability of the artifact
  double p_melanoma = 0.0;
};

struct GenConfig {
  int height = 64;
  int width = 64;
  int n_naevus = 200;
  int n_melanoma = 200;
  int test_per_class = 50;   // balanced hold-out size per class; 0 disables it
  double radius_min = 0.20;  // lesion semi-axes, as fractions of min(H, W)
  double radius_max = 0.32;
  double irregularity = 0.25;  // melanoma boundary perturbation amplitude
  int melanoma_tones_min = 2;
  int melanoma_tones_max = 3;
  ArtifactSpec artifact;
  std::uint64_t seed = 0;

  /// "clean", "biased" (dark corners, p1 = 0.9 / p0 = 0.1) or "imbalanced"
  /// (540 naevi / 61 melanoma).
  static GenConfig preset(std::string_view name);

  void validate() const;
};

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

enum class Split { Train, Test };

struct LabeledImage {
  std::string id;
  Tensor image;  // 3 x H x W, values in [0,1] on the 8-bit grid
  int label = kNaevus;
  bool artifact = false;
  Split split = Split::Train;
  std::string lineage;  // empty for originals, "source:transform" for augmentations
};

struct Dataset {
  GenConfig config;
  std::vector<LabeledImage> images;

  std::vector<const LabeledImage*> split(Split s) const;
  std::vector<const LabeledImage*> split(Split s, int label) const;
  nlohmann::json manifest() const;
};

/// Deterministic under config.seed: image i is rendered from its own stream
/// derive_seed(seed, i), so generation order does not matter.
Dataset generate_dataset(const GenConfig& config);

/// Renders image `index` of the configured dataset; exposed for testing.
LabeledImage render_image(const GenConfig& config, int index, int label);

/// Multiplies intensities by 1 - strength * max(0, r - r0) / (1 - r0), r the
/// centre distance normalized so the corners sit at r = 1, r0 = 0.7.
void apply_dark_corners(Tensor& image, double strength);

enum class Dihedral { Identity, Rot90, Rot180, Rot270, FlipH, FlipV, Transpose, AntiTranspose };

const char* to_string(Dihedral t);
Tensor apply_transform(const Tensor& image, Dihedral t);

/// Up to `count` (max 7) distinct non-identity flips/rotations of `image` in a
/// seed-shuffled order. Labels and artifact flags carry over.
std::vector<LabeledImage> augment(const LabeledImage& image, std::uint64_t seed, int count = 7);

/// Augments the minority class of the train split until it holds
/// round(factor * original) images (capped at 8x).
Dataset augment_minority(const Dataset& dataset, double factor, std::uint64_t seed);

/// Uniform without-replacement sample of n_per_class train images per class;
/// the test split is kept unchanged.
Dataset subsample_balanced(const Dataset& dataset, int n_per_class, std::uint64_t seed);

/// Layout: <root>/manifest.json and <root>/data/{train,test}/{naevus,melanoma}/<id>.png
void write_dataset(const Dataset& dataset, const std::filesystem::path& root);
Dataset read_dataset(const std::filesystem::path& root);

}  // namespace salaud
