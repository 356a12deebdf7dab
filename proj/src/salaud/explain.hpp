#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "salaud/netcore.hpp"

namespace salaud {

/// Relevance grid at input resolution, row-major. Signed for SHAP; Grad-CAM
/// maps are non-negative.
struct SaliencyMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  std::string method;
  int target_class = 1;
  std::string model_id;

  SaliencyMap() = default;
  SaliencyMap(int h, int w, double fill = 0.0) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// ---------------------------------------------------------------- Grad-CAM

struct GradCamResult {
  SaliencyMap map;                // ReLU'd, upsampled to the input size
  std::vector<double> alphas;     // one importance weight per feature map
  std::vector<double> raw;        // sum_k alpha_k A^k before the ReLU, feature resolution
  int feature_height = 0;
  int feature_width = 0;
  int feature_activation = 0;     // trace index of the feature maps A^k
};

/// Trace index of the Grad-CAM feature maps: the output of the last conv2d
/// layer, taken after its rectifier when one follows directly.
int gradcam_feature_index(const Network& network);

/// alpha_k = (1/Z) sum_ij dS_c/dA^k_ij with S_c the class logit, map =
/// ReLU(sum_k alpha_k A^k), bilinearly upsampled (half-pixel centres).
GradCamResult gradcam(const Network& network, const Tensor& image, int class_index);

/// Bilinear resize with half-pixel centres and edge clamping.
std::vector<double> upsample_bilinear(std::span<const double> src, int src_h, int src_w, int dst_h, int dst_w);

// ------------------------------------------------------------ segmentation

struct Segmentation {
  int height = 0;
  int width = 0;
  int count = 0;            // number of features d
  std::vector<int> labels;  // H x W, values 0..d-1

  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::vector<int> segment_sizes() const;
};

/// grid_k x grid_k rectangular cells; the remainder pixels of each axis go to
/// the last row/column of cells.
Segmentation grid_segmentation(int height, int width, int grid_k);
Segmentation grid_segmentation(const Tensor& image, int grid_k);

enum class BackgroundKind { ChannelMean, Constant };

/// Per-channel fill value for masked-out segments.
std::vector<float> background_values(const Tensor& image, BackgroundKind kind, double constant = 0.5);

/// Included segments keep their pixels; excluded ones take the background.
Tensor mask_image(const Tensor& image, const Segmentation& segmentation, std::span<const std::uint8_t> coalition,
                  std::span<const float> background);

// ---------------------------------------------------------------- Shapley

/// (d - 1) / (C(d, s) * s * (d - s)) for 0 < s < d. The empty and full
/// coalitions are constraints, not weights, and are rejected.
double shap_kernel_weight(int d, int coalition_size);

inline constexpr int kMaxExactPlayers = 16;

/// Value of a coalition given as a bitmask (bit k set = player k present).
using MaskGame = std::function<double(std::uint32_t)>;

/// Exact enumeration: phi_k = sum_{S without k} |S|!(d-|S|-1)!/d! (v(S u k) - v(S)).
/// Evaluates v once per subset (2^d calls).
std::vector<double> exact_shapley(const MaskGame& value, int d);

struct ShapOptions {
  int n_samples = 2048;
  bool exhaustive = false;  // enumerate all 2^d - 2 proper coalitions (d <= 16)
  bool paired = true;       // draw each coalition together with its complement
  std::uint64_t seed = 0;
  int threads = 0;
};

struct Attribution {
  std::vector<double> phi;
  double phi0 = 0.0;        // value of the empty coalition
  double full_value = 0.0;  // value of the full coalition
  int target_class = 1;
  int samples_used = 0;
  int distinct_coalitions = 0;
  bool exhaustive = false;

  nlohmann::json to_json() const;
};

/// Value of a coalition given as a 0/1 inclusion vector of length d. Must be
/// safe to call concurrently when options.threads > 1.
using CoalitionGame = std::function<double(std::span<const std::uint8_t>)>;

/// Kernel SHAP: kernel-weighted least squares over coalitions with
/// phi0 = v(empty) and phi0 + sum(phi) = v(full) imposed exactly by
/// eliminating the last feature.
///
/// Sampled mode draws a size uniformly from 1..d-1 and then a uniform
/// coalition of that size; each draw is weighted by kernel / sampling
/// probability, which is proportional to 1 / (s (d - s)). Duplicate
/// coalitions are merged by summing weights.
Attribution kernel_shap(const CoalitionGame& value, int d, const ShapOptions& options);

enum class ExplainedOutput { Probability, Logit };

struct ShapConfig {
  int grid_k = 8;
  int n_samples = 2048;
  bool exhaustive = false;
  bool paired = true;
  BackgroundKind background = BackgroundKind::ChannelMean;
  double background_value = 0.5;
  std::uint64_t seed = 0;
  int target_class = 1;
  ExplainedOutput output = ExplainedOutput::Probability;
  int threads = 0;

  nlohmann::json to_json() const;
};

/// Kernel SHAP over a segmentation of `image`; coalition value is the target
/// class probability (or logit) of the masked image.
Attribution kernel_shap(const Network& network, const Tensor& image, const Segmentation& segmentation,
                        const ShapConfig& config);

/// Each pixel receives the phi of its segment.
SaliencyMap attribution_to_map(const Attribution& attribution, const Segmentation& segmentation);

}  // namespace salaud
