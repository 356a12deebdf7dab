#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "salaud/models.hpp"
#include "test_util.hpp"

using namespace salaud;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(NetworkSpec, ToyLayoutAndShapes) {
  const NetworkSpec spec = NetworkSpec::toy(64, 64, 1);
  const auto shapes = spec.layer_shapes();
  ASSERT_EQ(shapes.size(), 13u);
  EXPECT_EQ(shapes[0], (Shape{8, 62, 62}));
  EXPECT_EQ(shapes[2], (Shape{8, 31, 31}));
  EXPECT_EQ(shapes[5], (Shape{16, 14, 14}));
  EXPECT_EQ(shapes[6], (Shape{32, 12, 12}));
  EXPECT_EQ(shapes[8], Shape{32});
  EXPECT_EQ(shapes[11], Shape{2});
  EXPECT_EQ(shapes[12], Shape{2});
  const Network net = build_network(spec);
  EXPECT_EQ(weighted_layers_top_down(net), (std::vector<int>{11, 9, 6, 3, 0}));
  EXPECT_EQ(net.last_conv_layer(), 6);
}

TEST(NetworkSpec, JsonRoundTrip) {
  const NetworkSpec spec = NetworkSpec::toy(32, 40, 9);
  nlohmann::json j = spec;
  const NetworkSpec back = j.get<NetworkSpec>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(build_network(back), build_network(spec));
}

TEST(NetworkSpec, InputOffsetSerializedOnlyWhenSet) {
  const NetworkSpec spec = NetworkSpec::toy(32, 32, 2);
  const nlohmann::json j = spec;
  int with_offset = 0;
  for (const auto& l : j.at("layers")) with_offset += l.contains("input_offset");
  EXPECT_EQ(with_offset, 1);
  nlohmann::json stripped = j;
  for (auto& l : stripped.at("layers")) l.erase("input_offset");
  const Network plain = build_network(stripped.get<NetworkSpec>());
  EXPECT_EQ(plain.layers()[0].input_offset, 0.0f);
  EXPECT_FALSE(plain == build_network(spec));
}

TEST(NetworkSpec, RejectsNetworksWithoutConvolution) {
  NetworkSpec spec;
  spec.input_shape = {3, 8, 8};
  spec.layers = {{LayerKind::GlobalAvgPool}, {LayerKind::Dense, 0, 0, 2}, {LayerKind::Sigmoid}};
  EXPECT_EQ(code_of([&] { build_network(spec); }), ErrorCode::Spec);
}

TEST(NetworkSpec, RejectsWrongClassCountAndOversizedKernels) {
  NetworkSpec spec = NetworkSpec::toy(64, 64, 0);
  spec.num_classes = 3;
  EXPECT_EQ(code_of([&] { spec.layer_shapes(); }), ErrorCode::Spec);
  EXPECT_EQ(code_of([] { NetworkSpec::toy(8, 8, 0).layer_shapes(); }), ErrorCode::Spec);
}

TEST(BuildNetwork, DeterministicAndSeedSensitive) {
  const Network a = testutil::toy_network(32, 7);
  const Network b = testutil::toy_network(32, 7);
  const Network c = testutil::toy_network(32, 8);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
}

TEST(BuildNetwork, HeUniformBoundsAndZeroBias) {
  const Network net = testutil::toy_network(32, 3);
  for (const Layer& l : net.layers()) {
    if (!l.has_parameters()) continue;
    const Shape& ws = l.weights.shape();
    const int fan_in = ws.size() == 4 ? ws[1] * ws[2] * ws[3] : ws[1];
    const double bound = std::sqrt(6.0 / fan_in);
    double max_abs = 0.0;
    for (float v : l.weights.values()) max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
    EXPECT_LE(max_abs, bound);
    EXPECT_GT(max_abs, 0.5 * bound);
    for (float v : l.bias.values()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(RandomizeLayer, OnlyTargetLayerChanges) {
  const Network net = testutil::toy_network(32, 3);
  for (int id : weighted_layers_top_down(net)) {
    const Network r = randomize_layer(net, id, 99);
    for (const Layer& l : net.layers()) {
      const Layer& m = r.layer(l.layer_id);
      if (l.layer_id == id) {
        EXPECT_FALSE(l.weights == m.weights) << id;
      } else {
        EXPECT_TRUE(l.weights == m.weights && l.bias == m.bias) << id << " vs " << l.layer_id;
      }
    }
    EXPECT_EQ(randomize_layer(net, id, 99), r);
  }
}

TEST(RandomizeLayer, RejectsUnparameterizedAndMissingLayers) {
  const Network net = testutil::toy_network(32, 3);
  EXPECT_EQ(code_of([&] { randomize_layer(net, 1, 0); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { randomize_layer(net, 40, 0); }), ErrorCode::Index);
}

TEST(Serialization, RoundTripIsIdempotent) {
  ModelBundle b = make_bundle("m1", NetworkSpec::toy(32, 32, 4));
  b.provenance.train_seed = 12;
  b.provenance.subsample_id = "subset_3";
  b.provenance.hyperparameters = {{"lr", 0.01}};
  b.provenance.dataset = "{\"generator\":{}}";
  b.provenance.metrics = evaluate_predictions({"a", "b", "c"}, {0, 1, 1}, {0.2, 0.7, 0.4});
  const std::string bytes = serialize_model(b);
  EXPECT_EQ(bytes.compare(0, 8, kModelMagic), 0);
  const ModelBundle back = deserialize_model(bytes);
  EXPECT_EQ(back.model_id, "m1");
  EXPECT_EQ(back.network, b.network);
  EXPECT_EQ(back.provenance.train_seed, 12u);
  EXPECT_EQ(back.provenance.subsample_id, "subset_3");
  ASSERT_TRUE(back.provenance.metrics.has_value());
  EXPECT_DOUBLE_EQ(back.provenance.metrics->auc, 1.0);
  EXPECT_EQ(serialize_model(back), bytes);
}

TEST(Serialization, FileRoundTrip) {
  testutil::TempDir dir("models");
  const ModelBundle b = make_bundle("file", NetworkSpec::toy(32, 32, 5));
  save_model(b, dir / "m.salaud");
  const ModelBundle back = load_model(dir / "m.salaud");
  EXPECT_EQ(back.network, b.network);
  EXPECT_FALSE(back.provenance.metrics.has_value());
  EXPECT_EQ(code_of([&] { load_model(dir / "missing.salaud"); }), ErrorCode::Io);
}

TEST(Serialization, RejectsCorruptContainers) {
  const std::string bytes = serialize_model(make_bundle("x", NetworkSpec::toy(32, 32, 5)));
  EXPECT_EQ(code_of([&] { deserialize_model("NOTMAGIC" + bytes.substr(8)); }), ErrorCode::Format);
  EXPECT_EQ(code_of([&] { deserialize_model(bytes.substr(0, bytes.size() - 4)); }), ErrorCode::Format);
  EXPECT_EQ(code_of([&] { deserialize_model(bytes.substr(0, bytes.size() - 2)); }), ErrorCode::Format);
  EXPECT_EQ(code_of([&] { deserialize_model(bytes + "abcd"); }), ErrorCode::Format);
  EXPECT_EQ(code_of([&] { deserialize_model(bytes.substr(0, 10)); }), ErrorCode::Format);

  // A manifest whose declared tensor shape disagrees with the spec.
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  nlohmann::json manifest = nlohmann::json::parse(bytes.substr(16, len));
  manifest["spec"]["layers"][0]["out_channels"] = 4;
  std::string text = manifest.dump();
  std::string tampered = bytes.substr(0, 8);
  for (int i = 0; i < 8; ++i) tampered.push_back(static_cast<char>((text.size() >> (8 * i)) & 0xff));
  tampered += text + bytes.substr(16 + len);
  EXPECT_EQ(code_of([&] { deserialize_model(tampered); }), ErrorCode::Format);
}
