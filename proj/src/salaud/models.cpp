#include "salaud/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "salaud/rng.hpp"

namespace salaud {

using nlohmann::json;

NetworkSpec NetworkSpec::toy(int height, int width, std::uint64_t seed) {
  NetworkSpec s;
  s.input_shape = {3, height, width};
  s.init_seed = seed;
  s.layers = {
      {LayerKind::Conv2d, 8, 3, 0, 0.5f}, {LayerKind::Relu},          {LayerKind::MaxPool2x2},
      {LayerKind::Conv2d, 16, 3, 0}, {LayerKind::Relu},          {LayerKind::MaxPool2x2},
      {LayerKind::Conv2d, 32, 3, 0}, {LayerKind::Relu},          {LayerKind::GlobalAvgPool},
      {LayerKind::Dense, 0, 0, 16},  {LayerKind::Relu},          {LayerKind::Dense, 0, 0, 2},
      {LayerKind::Sigmoid},
  };
  return s;
}

std::vector<Shape> NetworkSpec::layer_shapes() const {
  require(input_shape.size() == 3, ErrorCode::Spec, "input shape must be CxHxW");
  std::vector<Shape> shapes;
  Shape current = input_shape;
  bool has_conv = false;
  for (const LayerDesc& d : layers) {
    current = infer_output_shape(d.kind, current, d.out_channels, d.kernel, d.units);
    has_conv |= d.kind == LayerKind::Conv2d;
    shapes.push_back(current);
  }
  require(has_conv, ErrorCode::Spec, "network spec needs at least one conv2d layer");
  require(layers.size() >= 2 && layers.back().kind == LayerKind::Sigmoid, ErrorCode::Spec,
          "network spec must end with the sigmoid head");
  require(shapes.back() == Shape{num_classes}, ErrorCode::Spec,
          "final layer emits " + shape_string(shapes.back()) + " but the spec declares " +
              std::to_string(num_classes) + " classes");
  return shapes;
}

void to_json(json& j, const NetworkSpec& spec) {
  json layers = json::array();
  for (const LayerDesc& d : spec.layers) {
    json l{{"kind", to_string(d.kind)}};
    if (d.kind == LayerKind::Conv2d) {
      l["out_channels"] = d.out_channels;
      l["kernel"] = d.kernel;
      if (d.input_offset != 0.0f) l["input_offset"] = d.input_offset;
    } else if (d.kind == LayerKind::Dense) {
      l["units"] = d.units;
    }
    layers.push_back(l);
  }
  j = json{{"input_shape", spec.input_shape},
           {"layers", layers},
           {"num_classes", spec.num_classes},
           {"init_seed", spec.init_seed}};
}

void from_json(const json& j, NetworkSpec& spec) {
  spec.input_shape = j.at("input_shape").get<Shape>();
  spec.num_classes = j.at("num_classes").get<int>();
  spec.init_seed = j.at("init_seed").get<std::uint64_t>();
  spec.layers.clear();
  for (const json& l : j.at("layers")) {
    LayerDesc d;
    d.kind = layer_kind_from_string(l.at("kind").get<std::string>());
    d.out_channels = l.value("out_channels", 0);
    d.kernel = l.value("kernel", 0);
    d.units = l.value("units", 0);
    d.input_offset = l.value("input_offset", 0.0f);
    spec.layers.push_back(d);
  }
}

namespace {

void draw_parameters(Layer& layer, std::uint64_t seed) {
  Rng rng(seed);
  const Shape& ws = layer.weights.shape();
  const int fan_in = layer.kind == LayerKind::Conv2d ? ws[1] * ws[2] * ws[3] : ws[1];
  const double bound = std::sqrt(6.0 / fan_in);
  for (float& w : layer.weights.data()) w = static_cast<float>(rng.uniform(-bound, bound));
  layer.bias.fill(0.0f);
}

}  // namespace

Network build_network(const NetworkSpec& spec) {
  const std::vector<Shape> shapes = spec.layer_shapes();
  std::vector<Layer> layers;
  Shape current = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& d = spec.layers[i];
    Layer l;
    l.kind = d.kind;
    l.layer_id = static_cast<int>(i);
    l.input_offset = d.input_offset;
    if (d.kind == LayerKind::Conv2d) {
      l.weights = Tensor({d.out_channels, current[0], d.kernel, d.kernel});
      l.bias = Tensor({d.out_channels});
    } else if (d.kind == LayerKind::Dense) {
      l.weights = Tensor({d.units, current[0]});
      l.bias = Tensor({d.units});
    }
    if (l.has_parameters()) draw_parameters(l, derive_seed(spec.init_seed, i));
    layers.push_back(std::move(l));
    current = shapes[i];
  }
  return Network(spec.input_shape, std::move(layers));
}

Network randomize_layer(const Network& network, int layer_id, std::uint64_t seed) {
  Layer l = network.layer(layer_id);
  require(l.has_parameters(), ErrorCode::InvalidArgument,
          "layer " + std::to_string(layer_id) + " (" + to_string(l.kind) +
              ") has no weights; randomization would be a no-op");
  draw_parameters(l, derive_seed(seed, static_cast<std::uint64_t>(layer_id)));
  return network.with_parameters(layer_id, std::move(l.weights), std::move(l.bias));
}

std::vector<int> weighted_layers_top_down(const Network& network) {
  std::vector<int> ids;
  for (int i = network.layer_count() - 1; i >= 0; --i) {
    if (network.layer(i).has_parameters()) ids.push_back(i);
  }
  return ids;
}

ModelBundle make_bundle(std::string model_id, const NetworkSpec& spec) {
  return ModelBundle{std::move(model_id), spec, build_network(spec), Provenance{}};
}

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_floats(std::string& out, std::span<const float> values) {
  for (float f : values) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
}

json provenance_json(const Provenance& p) {
  json j{{"train_seed", p.train_seed},
         {"subsample_id", p.subsample_id},
         {"hyperparameters", p.hyperparameters},
         {"dataset", p.dataset}};
  j["metrics"] = p.metrics ? json(*p.metrics) : json(nullptr);
  return j;
}

Provenance provenance_from_json(const json& j) {
  Provenance p;
  p.train_seed = j.at("train_seed").get<std::uint64_t>();
  p.subsample_id = j.at("subsample_id").get<std::string>();
  p.hyperparameters = j.at("hyperparameters");
  p.dataset = j.at("dataset").get<std::string>();
  if (!j.at("metrics").is_null()) p.metrics = j.at("metrics").get<MetricsRecord>();
  return p;
}

}  // namespace

std::string serialize_model(const ModelBundle& bundle) {
  json tensors = json::array();
  std::string blob;
  std::uint64_t offset = 0;
  for (const Layer& l : bundle.network.layers()) {
    if (!l.has_parameters()) continue;
    for (const auto& [name, t] : {std::pair<const char*, const Tensor*>{"weights", &l.weights}, {"bias", &l.bias}}) {
      tensors.push_back(json{{"layer_id", l.layer_id}, {"name", name}, {"shape", t->shape()}, {"offset", offset},
                             {"count", t->size()}});
      put_floats(blob, t->data());
      offset += t->size();
    }
  }
  const json manifest{{"format", kModelMagic},
                      {"version", kModelFormatVersion},
                      {"model_id", bundle.model_id},
                      {"spec", bundle.spec},
                      {"provenance", provenance_json(bundle.provenance)},
                      {"tensors", tensors}};
  const std::string text = manifest.dump();
  std::string out(kModelMagic, 8);
  put_u64(out, text.size());
  out += text;
  out += blob;
  return out;
}

ModelBundle deserialize_model(const std::string& bytes) {
  require(bytes.size() >= 16 && bytes.compare(0, 8, kModelMagic) == 0, ErrorCode::Format,
          "not a model file (missing SALAUD01 magic)");
  const std::uint64_t len = get_u64(bytes, 8);
  require(len <= bytes.size() - 16, ErrorCode::Format, "truncated model file: manifest extends past end");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("model manifest is not valid JSON: ") + e.what());
  }
  try {
    require(manifest.at("version").get<int>() == kModelFormatVersion, ErrorCode::Format,
            "unsupported model format version " + manifest.at("version").dump());
    ModelBundle bundle;
    bundle.model_id = manifest.at("model_id").get<std::string>();
    bundle.spec = manifest.at("spec").get<NetworkSpec>();
    bundle.provenance = provenance_from_json(manifest.at("provenance"));
    Network net = build_network(bundle.spec);

    const std::size_t blob_start = 16 + len;
    const std::size_t blob_floats = (bytes.size() - blob_start) / 4;
    require((bytes.size() - blob_start) % 4 == 0, ErrorCode::Format, "truncated model file: partial float in blob");
    const json& tensors = manifest.at("tensors");
    std::size_t expected_tensors = 0;
    for (const Layer& l : net.layers()) expected_tensors += l.has_parameters() ? 2 : 0;
    require(tensors.size() == expected_tensors, ErrorCode::Format,
            "manifest lists " + std::to_string(tensors.size()) + " tensors but the spec has " +
                std::to_string(expected_tensors));
    std::size_t total = 0;
    for (const json& t : tensors) {
      const int layer_id = t.at("layer_id").get<int>();
      const std::string name = t.at("name").get<std::string>();
      const Layer& l = net.layer(layer_id);
      require(l.has_parameters() && (name == "weights" || name == "bias"), ErrorCode::Format,
              "manifest tensor " + name + " for layer " + std::to_string(layer_id) + " does not fit the spec");
      const Tensor& target = name == "weights" ? l.weights : l.bias;
      const Shape shape = t.at("shape").get<Shape>();
      const std::size_t count = t.at("count").get<std::size_t>();
      const std::size_t off = t.at("offset").get<std::size_t>();
      require(shape == target.shape() && count == target.size(), ErrorCode::Format,
              "tensor shape in manifest disagrees with the spec for layer " + std::to_string(layer_id));
      require(off + count <= blob_floats, ErrorCode::Format, "truncated model file: tensor data missing");
      std::vector<float> values(count);
      for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
          bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[blob_start + 4 * (off + i) + b]))
                  << (8 * b);
        }
        values[i] = std::bit_cast<float>(bits);
      }
      Tensor w = name == "weights" ? Tensor(shape, std::move(values)) : l.weights;
      Tensor b = name == "bias" ? Tensor(shape, std::move(values)) : l.bias;
      net = net.with_parameters(layer_id, std::move(w), std::move(b));
      total += count;
    }
    require(total == blob_floats, ErrorCode::Format, "model blob length disagrees with the manifest");
    bundle.network = std::move(net);
    return bundle;
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, std::string("malformed model manifest: ") + e.what());
  }
}

void save_model(const ModelBundle& bundle, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::Io, "failed writing " + path.string());
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open model file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace salaud
