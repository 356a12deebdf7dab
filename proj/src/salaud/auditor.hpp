#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "salaud/explain.hpp"
#include "salaud/imagemetrics.hpp"
#include "salaud/models.hpp"
#include "salaud/synthgen.hpp"

namespace salaud {

enum class Method { GradCam, KernelShap };

const char* to_string(Method m);
Method method_from_string(const std::string& name);

struct ExplainSettings {
  Method method = Method::GradCam;
  int target_class = 1;
  ShapConfig shap;  // target_class above wins over shap.target_class
  SsimConfig ssim;
  int threads = 0;

  nlohmann::json to_json() const;
};

/// One saliency map at input resolution. SHAP uses settings.shap.seed.
SaliencyMap explain_image(const Network& network, const Tensor& image, const ExplainSettings& settings);

struct Stats {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n - 1); 0 for a single value
  int count = 0;
};

Stats describe(const std::vector<double>& values);

struct SanityReport {
  std::string check;  // reproducibility | model_dependence | sensitivity
  Method method = Method::GradCam;
  std::vector<std::string> image_ids;

  // per_image[i] holds the SSIM values for image i: pairwise values for
  // reproducibility and sensitivity, one value per stage for model dependence.
  std::vector<std::vector<double>> per_image;
  Stats ssim;

  // model dependence
  bool cascading = true;
  std::vector<int> layer_order;
  std::vector<double> stage_mean_ssim;    // stage 0 is the intact baseline
  std::vector<double> degradation_pct;    // 100 (1 - mean SSIM) per randomized stage
  std::vector<double> incremental_pct;    // drop relative to the previous stage
  std::vector<std::uint8_t> monotone;     // per image: SSIM non-increasing over the cascade
  double monotone_fraction = 0.0;

  // sensitivity
  std::vector<std::string> model_ids;
  std::vector<double> model_aucs;
  double variation_of_mean = 0.0;         // 1 - mean SSIM
  double mean_per_image_variation = 0.0;  // mean over images of (1 - per-image mean SSIM)
  double mean_worst_pair_variation = 0.0; // mean over images of (1 - min pairwise SSIM)

  nlohmann::json config;
  // maps[i][j]: image i, repeat / stage / model j. Not serialized.
  std::vector<std::vector<SaliencyMap>> maps;

  nlohmann::json to_json() const;
};

SanityReport check_reproducibility(const Network& network, const std::string& model_id,
                                   const std::vector<const LabeledImage*>& images, const ExplainSettings& settings,
                                   int n_repeats, std::vector<std::uint64_t> seeds = {});

enum class RandomizationMode { Cascading, Independent };

/// Layer ids must be parameterized and are randomized in the given order
/// (normally output to input). Cascading keeps earlier randomizations.
SanityReport check_model_dependence(const Network& network, const std::string& model_id,
                                    const std::vector<const LabeledImage*>& images, const ExplainSettings& settings,
                                    const std::vector<int>& layer_ids_top_down, std::uint64_t seed,
                                    RandomizationMode mode = RandomizationMode::Cascading);

/// Resolves "top<N>", "all" or a comma separated id list against the network.
std::vector<int> resolve_layer_selection(const Network& network, const std::string& selection);

/// Indices of the largest group of models whose test AUCs span at most
/// `auc_tolerance`. Throws a selection error listing the AUCs when no two
/// models qualify.
std::vector<std::size_t> select_equal_auc(const std::vector<const ModelBundle*>& models, double auc_tolerance);

SanityReport check_sensitivity(const std::vector<const ModelBundle*>& models, double auc_tolerance,
                               const std::vector<const LabeledImage*>& images, const ExplainSettings& settings);

/// Share of positive map mass inside the four corner squares of side
/// floor(corner_fraction * min(H, W)) (at least one pixel).
double corner_mass_score(const SaliencyMap& map, double corner_fraction = 0.15);

struct SpuriousReport {
  Method method = Method::GradCam;
  double corner_fraction = 0.15;
  double threshold = 2.0;
  std::vector<std::string> image_ids;
  std::string biased_model_id;
  std::string control_model_id;
  std::vector<double> biased_scores;
  std::vector<double> control_scores;
  double biased_mean = 0.0;
  double control_mean = 0.0;
  bool has_control = false;
  bool verdict = false;  // biased_mean >= threshold * control_mean and biased_mean > 0
  nlohmann::json config;
  std::vector<std::vector<SaliencyMap>> maps;  // [image][biased, control]

  nlohmann::json to_json() const;
};

SpuriousReport audit_spurious(const ModelBundle& biased, const ModelBundle* control,
                              const std::vector<const LabeledImage*>& images, const ExplainSettings& settings,
                              double corner_fraction = 0.15, double threshold = 2.0);

/// Original image followed by one overlay per map.
RgbImage render_panel(const Tensor& image, const std::vector<SaliencyMap>& maps);

}  // namespace salaud
