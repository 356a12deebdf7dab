#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "salaud/metrics.hpp"
#include "salaud/netcore.hpp"

namespace salaud {

struct LayerDesc {
  LayerKind kind = LayerKind::Relu;
  int out_channels = 0;  // conv2d
  int kernel = 0;        // conv2d
  int units = 0;         // dense
  float input_offset = 0.0f;  // conv2d
};

struct NetworkSpec {
  Shape input_shape{3, 64, 64};
  std::vector<LayerDesc> layers;
  int num_classes = 2;
  std::uint64_t init_seed = 0;

  /// conv8-relu-pool-conv16-relu-pool-conv32-relu-gap-dense16-relu-dense2
  /// followed by the probability head. All convolutions are 3x3; the first
  /// one centres its [0,1] input by subtracting 0.5.
  static NetworkSpec toy(int height = 64, int width = 64, std::uint64_t seed = 0);

  /// Output shape of every layer; throws a spec error when they do not compose.
  std::vector<Shape> layer_shapes() const;
};

void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

/// Seeded He-style uniform initialization: weights ~ U(-b, b) with
/// b = sqrt(6 / fan_in), biases zero. Same seed, same bytes.
Network build_network(const NetworkSpec& spec);

/// Copy of `network` with layer `layer_id` re-drawn from the initialization
/// distribution. Only that layer changes.
Network randomize_layer(const Network& network, int layer_id, std::uint64_t seed);

/// Parameterized layer ids ordered output to input.
std::vector<int> weighted_layers_top_down(const Network& network);

struct Provenance {
  std::uint64_t train_seed = 0;
  std::string subsample_id;
  nlohmann::json hyperparameters = nlohmann::json::object();
  std::string dataset;
  std::optional<MetricsRecord> metrics;
};

struct ModelBundle {
  std::string model_id;
  NetworkSpec spec;
  Network network;
  Provenance provenance;
};

ModelBundle make_bundle(std::string model_id, const NetworkSpec& spec);

inline constexpr char kModelMagic[] = "SALAUD01";
inline constexpr int kModelFormatVersion = 1;

/// Container: 8-byte magic, little-endian u64 manifest length, UTF-8 JSON
/// manifest (spec, provenance, tensor index), little-endian float32 blob.
std::string serialize_model(const ModelBundle& bundle);
ModelBundle deserialize_model(const std::string& bytes);

void save_model(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace salaud
