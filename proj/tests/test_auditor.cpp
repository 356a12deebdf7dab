#include <gtest/gtest.h>

#include <cmath>

#include "salaud/auditor.hpp"
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

struct Fixture {
  Dataset data = generate_dataset(testutil::small_config(4, 32, 8, 4));
  std::vector<const LabeledImage*> images = data.split(Split::Test);
};

ModelBundle bundle_with_auc(const std::string& id, std::uint64_t seed, double auc_value) {
  ModelBundle b = make_bundle(id, NetworkSpec::toy(32, 32, seed));
  MetricsRecord m;
  m.auc = auc_value;
  b.provenance.metrics = m;
  return b;
}

ExplainSettings shap_settings(int samples = 64) {
  ExplainSettings s;
  s.method = Method::KernelShap;
  s.shap.grid_k = 4;
  s.shap.n_samples = samples;
  return s;
}

}  // namespace

TEST(Methods, NamesRoundTrip) {
  EXPECT_EQ(method_from_string("gradcam"), Method::GradCam);
  EXPECT_EQ(method_from_string("kshap"), Method::KernelShap);
  EXPECT_EQ(method_from_string("kernel_shap"), Method::KernelShap);
  EXPECT_STREQ(to_string(Method::KernelShap), "kernel_shap");
  EXPECT_EQ(code_of([] { method_from_string("lime"); }), ErrorCode::Config);
}

TEST(Describe, SampleStatistics) {
  const Stats s = describe({1.0, 2.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 7.0 / 3.0);
  const double var = ((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) + (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 2;
  EXPECT_NEAR(s.stddev, std::sqrt(var), 1e-15);
  EXPECT_EQ(s.count, 3);
  EXPECT_EQ(describe({5.0}).stddev, 0.0);
}

TEST(CornerMass, Examples) {
  // 20x20, side = floor(0.15 * 20) = 3
  EXPECT_NEAR(corner_mass_score(SaliencyMap(20, 20, 1.0)), 4.0 * 9 / 400, 1e-15);
  SaliencyMap centre(20, 20, 0.0);
  centre.at(10, 10) = 5.0;
  EXPECT_EQ(corner_mass_score(centre), 0.0);
  SaliencyMap corners(20, 20, 0.0);
  corners.at(0, 0) = 1.0;
  corners.at(19, 19) = 2.0;
  corners.at(18, 1) = 0.5;
  EXPECT_EQ(corner_mass_score(corners), 1.0);
  EXPECT_EQ(corner_mass_score(SaliencyMap(20, 20, 0.0)), 0.0);
  // negative mass is ignored
  SaliencyMap mixed(20, 20, -1.0);
  mixed.at(0, 0) = 1.0;
  mixed.at(10, 10) = 3.0;
  EXPECT_DOUBLE_EQ(corner_mass_score(mixed), 0.25);
  // tiny maps still get one pixel per corner
  EXPECT_DOUBLE_EQ(corner_mass_score(SaliencyMap(4, 4, 1.0)), 4.0 / 16.0);
  EXPECT_EQ(code_of([] { corner_mass_score(SaliencyMap(8, 8, 1.0), 0.5); }), ErrorCode::Config);
  EXPECT_EQ(code_of([] { corner_mass_score(SaliencyMap(8, 8, 1.0), 0.0); }), ErrorCode::Config);
}

TEST(Reproducibility, GradCamIsExactlyOne) {
  Fixture f;
  const Network net = testutil::toy_network(32, 3);
  const SanityReport r = check_reproducibility(net, "m", f.images, ExplainSettings{}, 3);
  EXPECT_EQ(r.check, "reproducibility");
  ASSERT_EQ(r.per_image.size(), f.images.size());
  for (const auto& row : r.per_image) {
    ASSERT_EQ(row.size(), 3u);
    for (double v : row) EXPECT_EQ(v, 1.0);
  }
  EXPECT_EQ(r.ssim.mean, 1.0);
  EXPECT_EQ(r.ssim.stddev, 0.0);
}

TEST(Reproducibility, ShapSameSeedIsOneDistinctSeedsDiffer) {
  Fixture f;
  const Network net = testutil::toy_network(32, 3);
  const std::vector<const LabeledImage*> two(f.images.begin(), f.images.begin() + 2);
  const SanityReport same = check_reproducibility(net, "m", two, shap_settings(), 2, {5, 5});
  for (const auto& row : same.per_image) EXPECT_EQ(row.at(0), 1.0);
  const SanityReport diff = check_reproducibility(net, "m", two, shap_settings(), 3);
  EXPECT_EQ(diff.per_image.at(0).size(), 3u);
  EXPECT_LT(diff.ssim.mean, 1.0);
  EXPECT_GT(diff.ssim.mean, -1.0);
  const auto j = diff.to_json();
  EXPECT_EQ(j.at("check"), "reproducibility");
  EXPECT_EQ(j.at("method"), "kernel_shap");
  EXPECT_TRUE(j.at("config").contains("seeds"));
}

TEST(Reproducibility, Preconditions) {
  Fixture f;
  const Network net = testutil::toy_network(32, 3);
  EXPECT_EQ(code_of([&] { check_reproducibility(net, "m", f.images, ExplainSettings{}, 1); }), ErrorCode::Config);
  EXPECT_EQ(code_of([&] { check_reproducibility(net, "m", {}, ExplainSettings{}, 2); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { check_reproducibility(net, "m", f.images, ExplainSettings{}, 2, {1}); }), ErrorCode::Config);
}

TEST(ModelDependence, StructureAndCascade) {
  Fixture f;
  const Network net = testutil::toy_network(32, 3);
  const auto layers = resolve_layer_selection(net, "top5");
  EXPECT_EQ(layers, (std::vector<int>{11, 9, 6, 3, 0}));
  const SanityReport r = check_model_dependence(net, "m", f.images, ExplainSettings{}, layers, 9);
  EXPECT_EQ(r.check, "model_dependence");
  EXPECT_EQ(r.layer_order, layers);
  ASSERT_EQ(r.stage_mean_ssim.size(), 6u);
  EXPECT_EQ(r.stage_mean_ssim[0], 1.0);
  ASSERT_EQ(r.degradation_pct.size(), 5u);
  ASSERT_EQ(r.incremental_pct.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_NEAR(r.degradation_pct[k], 100.0 * (1.0 - r.stage_mean_ssim[k + 1]), 1e-9);
  }
  for (const auto& row : r.per_image) {
    ASSERT_EQ(row.size(), 6u);
    for (double v : row) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(r.monotone.size(), f.images.size());
  const auto j = r.to_json();
  EXPECT_EQ(j.at("degradation_pct").size(), 5u);
  EXPECT_EQ(j.at("config").at("randomization_seed"), 9);

  // cascading stage k uses the network with the first k layers re-drawn
  Network cascaded = net;
  for (int id : {11, 9}) cascaded = randomize_layer(cascaded, id, 9);
  const SaliencyMap expected = explain_image(cascaded, f.images[0]->image, ExplainSettings{});
  EXPECT_EQ(r.maps.at(0).at(2).values, expected.values);
}

TEST(ModelDependence, IndependentModeRandomizesOneLayerAtATime) {
  Fixture f;
  const Network net = testutil::toy_network(32, 3);
  const std::vector<const LabeledImage*> one{f.images[0]};
  const SanityReport r =
      check_model_dependence(net, "m", one, ExplainSettings{}, {11, 6}, 4, RandomizationMode::Independent);
  EXPECT_FALSE(r.cascading);
  const SaliencyMap expected = explain_image(randomize_layer(net, 6, 4), one[0]->image, ExplainSettings{});
  EXPECT_EQ(r.maps.at(0).at(2).values, expected.values);
}

TEST(ModelDependence, RejectsBadLayers) {
  Fixture f;
  const Network net = testutil::toy_network(32, 3);
  EXPECT_EQ(code_of([&] { check_model_dependence(net, "m", f.images, ExplainSettings{}, {11, 10}, 1); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { check_model_dependence(net, "m", f.images, ExplainSettings{}, {50}, 1); }),
            ErrorCode::Index);
  EXPECT_EQ(code_of([&] { check_model_dependence(net, "m", f.images, ExplainSettings{}, {}, 1); }),
            ErrorCode::Config);
  EXPECT_EQ(code_of([&] { resolve_layer_selection(net, "top6"); }), ErrorCode::Config);
  EXPECT_EQ(code_of([&] { resolve_layer_selection(net, "topx"); }), ErrorCode::Config);
  EXPECT_EQ(resolve_layer_selection(net, "all").size(), 5u);
  EXPECT_EQ(resolve_layer_selection(net, "9,3"), (std::vector<int>{9, 3}));
}

TEST(Sensitivity, SelectionPicksLargestTightGroup) {
  const ModelBundle a = bundle_with_auc("a", 1, 0.80), b = bundle_with_auc("b", 2, 0.91),
                    c = bundle_with_auc("c", 3, 0.905), d = bundle_with_auc("d", 4, 0.92),
                    e = bundle_with_auc("e", 5, 0.70);
  const std::vector<const ModelBundle*> all{&a, &b, &c, &d, &e};
  EXPECT_EQ(select_equal_auc(all, 0.02), (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(select_equal_auc(all, 0.005).size(), 2u);
  try {
    select_equal_auc({&a, &e}, 0.02);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::Selection);
    EXPECT_NE(std::string(err.what()).find("0.8"), std::string::npos);
  }
  ModelBundle bare = make_bundle("bare", NetworkSpec::toy(32, 32, 1));
  EXPECT_EQ(code_of([&] { select_equal_auc({&a, &bare}, 0.02); }), ErrorCode::Selection);
}

TEST(Sensitivity, SelfComparisonHasNoVariationAndPairsAreSymmetric) {
  Fixture f;
  const ModelBundle a = bundle_with_auc("a", 1, 0.9);
  const ModelBundle a2 = a;
  const SanityReport self = check_sensitivity({&a, &a2}, 0.02, f.images, ExplainSettings{});
  EXPECT_EQ(self.ssim.mean, 1.0);
  EXPECT_EQ(self.variation_of_mean, 0.0);
  EXPECT_EQ(self.mean_worst_pair_variation, 0.0);

  const ModelBundle b = bundle_with_auc("b", 2, 0.9);
  const SanityReport ab = check_sensitivity({&a, &b}, 0.02, f.images, ExplainSettings{});
  const SanityReport ba = check_sensitivity({&b, &a}, 0.02, f.images, ExplainSettings{});
  for (std::size_t i = 0; i < ab.per_image.size(); ++i) EXPECT_EQ(ab.per_image[i], ba.per_image[i]);
  EXPECT_NEAR(ab.variation_of_mean, 1.0 - ab.ssim.mean, 1e-15);
  EXPECT_EQ(ab.model_ids, (std::vector<std::string>{"a", "b"}));
}

TEST(Spurious, ControlAgainstItselfIsNotFlagged) {
  Fixture f;
  const ModelBundle a = bundle_with_auc("a", 1, 0.9);
  const SpuriousReport r = audit_spurious(a, &a, f.images, ExplainSettings{});
  EXPECT_FALSE(r.verdict);
  EXPECT_EQ(r.biased_scores, r.control_scores);
  for (double s : r.biased_scores) {
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
  EXPECT_EQ(r.to_json().at("corner_fraction"), 0.15);

  const SpuriousReport solo = audit_spurious(a, nullptr, f.images, ExplainSettings{});
  EXPECT_FALSE(solo.has_control);
  EXPECT_TRUE(solo.to_json().at("verdict").is_null());
}

TEST(Spurious, VerdictFollowsThreshold) {
  Fixture f;
  const ModelBundle a = bundle_with_auc("a", 1, 0.9);
  const ModelBundle b = bundle_with_auc("b", 2, 0.9);
  const SpuriousReport r = audit_spurious(a, &b, f.images, ExplainSettings{}, 0.15, 1e-9);
  EXPECT_EQ(r.verdict, r.biased_mean > 0 && r.biased_mean >= 1e-9 * r.control_mean);
  EXPECT_EQ(code_of([&] { audit_spurious(a, &b, {}, ExplainSettings{}); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { audit_spurious(a, &b, f.images, ExplainSettings{}, 0.15, 0.0); }), ErrorCode::Config);
}

TEST(Panel, OriginalFollowedByOverlays) {
  const Tensor img = testutil::random_image(3, 16, 16, 1);
  const RgbImage p = render_panel(img, {SaliencyMap(16, 16, 1.0), SaliencyMap(16, 16, 0.0)});
  EXPECT_EQ(p.width, 16 * 3 + 2 * 2);
  EXPECT_EQ(p.height, 16);
}

TEST(ExplainSettingsJson, EchoesShapConfig) {
  ExplainSettings s = shap_settings(100);
  s.target_class = 0;
  const auto j = s.to_json();
  EXPECT_EQ(j.at("method"), "kernel_shap");
  EXPECT_EQ(j.at("target_class"), 0);
  EXPECT_EQ(j.at("shap").at("n_samples"), 100);
  EXPECT_TRUE(j.contains("ssim"));
}
