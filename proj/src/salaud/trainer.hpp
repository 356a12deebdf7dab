#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "salaud/models.hpp"
#include "salaud/synthgen.hpp"

namespace salaud {

enum class OptimizerKind { SgdMomentum, Adam };

const char* to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& name);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 0.001;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int epochs = 15;
  int batch_size = 32;
  std::uint64_t seed = 0;
  std::string subsample_id = "full";
  int threads = 0;  // 0 = library default

  void validate() const;
  nlohmann::json to_json() const;
};

/// Per-epoch mean training loss, recorded alongside the bundle.
struct TrainHistory {
  std::vector<double> epoch_loss;
};

/// Mean two-class cross-entropy of the logits over `batch`, and its gradient
/// with respect to every parameter (indexed by layer id).
struct BatchGradient {
  double loss = 0.0;
  std::vector<ParameterGradient> parameters;
};

BatchGradient batch_gradient(const Network& network, const std::vector<const LabeledImage*>& batch, int threads = 0);

/// Melanoma probability for each image.
std::vector<double> predict(const Network& network, const std::vector<const LabeledImage*>& images, int threads = 0);

MetricsRecord evaluate(const Network& network, const std::vector<const LabeledImage*>& test, int threads = 0);

/// Minimizes cross-entropy on the train split (the caller balances it) and
/// evaluates on the test split. Throws a training error naming the step if
/// the loss diverges.
ModelBundle train(const ModelBundle& initial, const Dataset& dataset, const TrainConfig& config,
                  TrainHistory* history = nullptr);

struct SearchSpace {
  std::vector<OptimizerKind> optimizers{OptimizerKind::SgdMomentum, OptimizerKind::Adam};
  double sgd_lr_min = 0.01, sgd_lr_max = 0.05;  // log-uniform
  double adam_lr_min = 0.001, adam_lr_max = 0.005;
  double momentum_min = 0.85, momentum_max = 0.95;
  double beta1_min = 0.85, beta1_max = 0.95;
  double beta2_min = 0.99, beta2_max = 0.999;
  int epochs_min = 6, epochs_max = 10;
  std::vector<int> batch_sizes{16, 32};

  TrainConfig draw(std::uint64_t seed) const;
  nlohmann::json to_json() const;
};

struct SuiteConfig {
  int n_models = 6;
  int n_subsets = 0;            // 0 = one subset per model
  int n_per_class = 0;          // 0 = half of the smaller balanced pool class
  double augment_factor = 0.0;  // 0 = expand the minority class up to the majority size
  bool shared_member_seed = false;  // every member reuses master_seed
  std::uint64_t master_seed = 0;
  NetworkSpec network = NetworkSpec::toy();
  SearchSpace space;
  int threads = 0;
};

struct SuiteMember {
  ModelBundle bundle;
  TrainConfig config;
};

struct SuiteSummary {
  std::vector<std::string> model_ids;
  std::vector<double> aucs;
  std::vector<double> recalls;
  std::vector<double> accuracies;
  double mean_auc = 0.0;
  double auc_variance = 0.0;  // sample variance (n - 1)
  double auc_stddev = 0.0;
  double mean_recall = 0.0;
  int misclassified_threshold = 0;  // ceil(5/6 n)
  std::vector<std::string> consistently_misclassified;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

SuiteSummary summarize_suite(const std::vector<SuiteMember>& members);

/// Balances the train split (minority augmentation, then per-model balanced
/// subsamples) and trains n_models members with random hyperparameters.
std::vector<SuiteMember> train_suite(const Dataset& dataset, const SuiteConfig& config);

}  // namespace salaud
