#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "salaud/explain.hpp"
#include "test_util.hpp"

using namespace salaud;

namespace {

Layer make(LayerKind kind, Tensor w = {}, Tensor b = {}) {
  Layer l;
  l.kind = kind;
  l.weights = std::move(w);
  l.bias = std::move(b);
  return l;
}

// 1x1 conv with two maps (gains g0, g1) -> relu -> gap -> dense -> head.
// Row 1 of the dense layer is (w0, w1).
Network gap_network(float g0, float g1, float w0, float w1, int h, int w) {
  std::vector<Layer> layers;
  layers.push_back(make(LayerKind::Conv2d, Tensor({2, 1, 1, 1}, {g0, g1}), Tensor({2})));
  layers.push_back(make(LayerKind::Relu));
  layers.push_back(make(LayerKind::GlobalAvgPool));
  layers.push_back(make(LayerKind::Dense, Tensor({2, 2}, {0.0f, 0.0f, w0, w1}), Tensor({2})));
  layers.push_back(make(LayerKind::Sigmoid));
  return Network({1, h, w}, std::move(layers));
}

Tensor positive_image(int h, int w, std::uint64_t seed) {
  Tensor t = testutil::random_image(1, h, w, seed);
  for (auto& v : t.data()) v = 0.1f + 0.9f * v;
  return t;
}

std::vector<double> random_game_table(int d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(1u << d);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

MaskGame table_game(const std::vector<double>& t) {
  return [&t](std::uint32_t m) { return t[m]; };
}

CoalitionGame as_coalition_game(const std::vector<double>& t) {
  return [&t](std::span<const std::uint8_t> z) {
    std::uint32_t m = 0;
    for (std::size_t k = 0; k < z.size(); ++k) m |= static_cast<std::uint32_t>(z[k] != 0) << k;
    return t[m];
  };
}

std::vector<double> permutation_oracle(const std::vector<double>& t, int d) {
  std::vector<int> perm(static_cast<std::size_t>(d));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> phi(static_cast<std::size_t>(d), 0.0);
  long count = 0;
  do {
    std::uint32_t m = 0;
    for (int k : perm) {
      phi[static_cast<std::size_t>(k)] += t[m | (1u << k)] - t[m];
      m |= 1u << k;
    }
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (auto& p : phi) p /= static_cast<double>(count);
  return phi;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ShapOptions exhaustive() {
  ShapOptions o;
  o.exhaustive = true;
  return o;
}

}  // namespace

// ------------------------------------------------------------------ Grad-CAM

TEST(GradCam, SingleMapMeanLogitGivesOneOverZ) {
  const int h = 4, w = 5;
  const Network net = gap_network(1.0f, 0.0f, 1.0f, 0.0f, h, w);
  Tensor ones({1, h, w}, 1.0f);
  const GradCamResult r = gradcam(net, ones, 1);
  const double z = h * w;
  EXPECT_NEAR(r.alphas[0], 1.0 / z, 1e-6);
  EXPECT_NEAR(r.alphas[1], 0.0, 1e-12);
  for (double v : r.raw) EXPECT_NEAR(v, 1.0 / z, 1e-6);
  for (double v : r.map.values) EXPECT_NEAR(v, 1.0 / z, 1e-6);
  EXPECT_EQ(r.feature_activation, 2);
}

TEST(GradCam, AlphasAndRawMapMatchHandDerivation) {
  const int h = 6, w = 6;
  const float g0 = 1.0f, g1 = 0.5f, w0 = 0.8f, w1 = -0.3f;
  const Network net = gap_network(g0, g1, w0, w1, h, w);
  const Tensor img = positive_image(h, w, 3);
  const GradCamResult r = gradcam(net, img, 1);
  const double z = h * w;
  EXPECT_NEAR(r.alphas[0], w0 / z, 1e-6);
  EXPECT_NEAR(r.alphas[1], w1 / z, 1e-6);
  for (int i = 0; i < h * w; ++i) {
    const double a0 = g0 * img[static_cast<std::size_t>(i)], a1 = g1 * img[static_cast<std::size_t>(i)];
    EXPECT_NEAR(r.raw[static_cast<std::size_t>(i)], (w0 * a0 + w1 * a1) / z, 1e-6);
  }
}

TEST(GradCam, LogitScalingScalesAlphaAndRawMap) {
  const int h = 6, w = 7;
  const Tensor img = positive_image(h, w, 4);
  const GradCamResult base = gradcam(gap_network(1.0f, 0.7f, 0.4f, 0.9f, h, w), img, 1);
  for (float c : {0.5f, 3.0f, 8.0f}) {
    const GradCamResult s = gradcam(gap_network(1.0f, 0.7f, 0.4f * c, 0.9f * c, h, w), img, 1);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(s.alphas[k] / base.alphas[k], c, 1e-6 * c);
    for (std::size_t i = 0; i < base.raw.size(); ++i) EXPECT_NEAR(s.raw[i] / base.raw[i], c, 1e-6 * c);
  }
}

TEST(GradCam, ZeroAndNegativeCombinationsGiveZeroMaps) {
  const Tensor img = positive_image(5, 5, 1);
  const GradCamResult disconnected = gradcam(gap_network(1.0f, 1.0f, 0.0f, 0.0f, 5, 5), img, 1);
  for (double v : disconnected.map.values) EXPECT_EQ(v, 0.0);
  const GradCamResult negative = gradcam(gap_network(1.0f, 1.0f, -1.0f, -0.5f, 5, 5), img, 1);
  for (double v : negative.raw) EXPECT_LT(v, 0.0);
  for (double v : negative.map.values) EXPECT_EQ(v, 0.0);
}

TEST(GradCam, ToyNetworkMapIsNonNegativeAndDeterministic) {
  const Network net = testutil::toy_network(32, 6);
  const Tensor img = testutil::random_image(3, 32, 32, 2);
  const GradCamResult a = gradcam(net, img, 1);
  const GradCamResult b = gradcam(net, img, 1);
  EXPECT_EQ(a.map.values, b.map.values);
  EXPECT_EQ(a.map.height, 32);
  EXPECT_EQ(a.feature_activation, 8);  // after the third conv's relu
  for (double v : a.map.values) EXPECT_GE(v, 0.0);
}

TEST(GradCam, RequiresConvolution) {
  std::vector<Layer> layers;
  layers.push_back(make(LayerKind::GlobalAvgPool));
  layers.push_back(make(LayerKind::Dense, Tensor({2, 1}, {1.0f, 1.0f}), Tensor({2})));
  layers.push_back(make(LayerKind::Sigmoid));
  const Network net({1, 3, 3}, std::move(layers));
  try {
    gradcam(net, Tensor({1, 3, 3}), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Architecture);
  }
}

TEST(Upsample, IdentityConstantAndInterpolation) {
  const std::vector<double> src{1, 2, 3, 4};
  EXPECT_EQ(upsample_bilinear(src, 2, 2, 2, 2), src);
  for (double v : upsample_bilinear(std::vector<double>(9, 0.25), 3, 3, 7, 5)) EXPECT_DOUBLE_EQ(v, 0.25);
  // 1x2 -> 1x4 with half-pixel centres: 1, 1.25, 1.75, 2
  const auto up = upsample_bilinear(std::vector<double>{1, 2}, 1, 2, 1, 4);
  EXPECT_DOUBLE_EQ(up[0], 1.0);
  EXPECT_DOUBLE_EQ(up[1], 1.25);
  EXPECT_DOUBLE_EQ(up[2], 1.75);
  EXPECT_DOUBLE_EQ(up[3], 2.0);
}

// ------------------------------------------------------------- segmentation

TEST(Segmentation, GridExamples) {
  const Segmentation one = grid_segmentation(5, 7, 1);
  EXPECT_EQ(one.count, 1);
  EXPECT_EQ(one.segment_sizes(), std::vector<int>{35});
  const Segmentation four = grid_segmentation(64, 64, 4);
  for (int s : four.segment_sizes()) EXPECT_EQ(s, 256);
  EXPECT_EQ(four.at(15, 16), 1);
  EXPECT_EQ(four.at(16, 0), 4);
  const Segmentation ten = grid_segmentation(10, 10, 3);
  const auto sizes = ten.segment_sizes();
  EXPECT_EQ(sizes, (std::vector<int>{9, 9, 12, 9, 9, 12, 12, 12, 16}));
  EXPECT_EQ(std::accumulate(sizes.begin(), sizes.end(), 0), 100);
  EXPECT_THROW(grid_segmentation(10, 10, 11), Error);
  EXPECT_THROW(grid_segmentation(10, 10, 0), Error);
}

TEST(Masking, FullEmptyAndHalfCoalitions) {
  const Tensor img = testutil::random_image(3, 4, 6, 9);
  const Segmentation seg = grid_segmentation(4, 6, 1);
  const std::vector<float> bg = background_values(img, BackgroundKind::ChannelMean);
  EXPECT_EQ(mask_image(img, seg, std::vector<std::uint8_t>{1}, bg), img);
  const Tensor empty = mask_image(img, seg, std::vector<std::uint8_t>{0}, bg);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 6; ++x) EXPECT_EQ(empty.at(c, y, x), bg[static_cast<std::size_t>(c)]);
    }
  }
  // two segments: left and right halves
  Segmentation halves{4, 6, 2, std::vector<int>(24)};
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 6; ++x) halves.labels[static_cast<std::size_t>(y * 6 + x)] = x < 3 ? 0 : 1;
  }
  const std::vector<float> gray = background_values(img, BackgroundKind::Constant, 0.5);
  const Tensor half = mask_image(img, halves, std::vector<std::uint8_t>{1, 0}, gray);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 6; ++x) EXPECT_EQ(half.at(c, y, x), x < 3 ? img.at(c, y, x) : 0.5f);
    }
  }
  EXPECT_THROW(mask_image(img, halves, std::vector<std::uint8_t>{1}, gray), Error);
}

TEST(Masking, ChannelMeanBackground) {
  Tensor img({2, 1, 2}, {0.2f, 0.4f, 1.0f, 0.0f});
  const auto bg = background_values(img, BackgroundKind::ChannelMean);
  EXPECT_FLOAT_EQ(bg[0], 0.3f);
  EXPECT_FLOAT_EQ(bg[1], 0.5f);
}

TEST(AttributionMap, SegmentValuesAndSumIdentity) {
  const Segmentation seg = grid_segmentation(10, 10, 3);
  Attribution a;
  a.phi = {0.5, -1.0, 2.0, 0.0, 0.25, -0.75, 1.5, 0.1, -0.2};
  const SaliencyMap m = attribution_to_map(a, seg);
  const auto sizes = seg.segment_sizes();
  double total = 0;
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 10; ++x) total += m.at(y, x) / sizes[static_cast<std::size_t>(seg.at(y, x))];
  }
  EXPECT_NEAR(total, std::accumulate(a.phi.begin(), a.phi.end(), 0.0), 1e-12);
  EXPECT_EQ(m.at(9, 9), -0.2);
  a.phi.pop_back();
  EXPECT_THROW(attribution_to_map(a, seg), Error);
}

// ------------------------------------------------------------------ Shapley

TEST(KernelWeight, Examples) {
  EXPECT_DOUBLE_EQ(shap_kernel_weight(2, 1), 0.5);
  EXPECT_DOUBLE_EQ(shap_kernel_weight(4, 2), 0.125);
  for (int d = 2; d < 12; ++d) {
    for (int s = 1; s < d; ++s) EXPECT_DOUBLE_EQ(shap_kernel_weight(d, s), shap_kernel_weight(d, d - s));
  }
  EXPECT_THROW(shap_kernel_weight(4, 0), Error);
  EXPECT_THROW(shap_kernel_weight(4, 4), Error);
}

TEST(ExactShapley, CardinalityGameAndDummy) {
  const auto phi = exact_shapley([](std::uint32_t m) { return static_cast<double>(std::popcount(m)); }, 6);
  for (double p : phi) EXPECT_NEAR(p, 1.0, 1e-12);
  // player 2 never matters
  const auto t = random_game_table(5, 3);
  const auto dummy = exact_shapley([&t](std::uint32_t m) { return t[m & ~4u]; }, 5);
  EXPECT_NEAR(dummy[2], 0.0, 1e-12);
}

TEST(ExactShapley, MatchesPermutationOracle) {
  for (int d = 2; d <= 7; ++d) {
    for (std::uint64_t s = 0; s < 3; ++s) {
      const auto t = random_game_table(d, 100 * d + s);
      EXPECT_LE(max_abs_diff(exact_shapley(table_game(t), d), permutation_oracle(t, d)), 1e-9) << d;
    }
  }
}

TEST(ExactShapley, Axioms) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const int d = 3 + static_cast<int>(s % 5);
    const auto t1 = random_game_table(d, s);
    const auto t2 = random_game_table(d, s + 1000);
    const auto p1 = exact_shapley(table_game(t1), d);
    const auto p2 = exact_shapley(table_game(t2), d);
    // efficiency
    EXPECT_NEAR(std::accumulate(p1.begin(), p1.end(), 0.0), t1.back() - t1.front(), 1e-9);
    // linearity
    std::vector<double> sum(t1.size());
    for (std::size_t i = 0; i < t1.size(); ++i) sum[i] = t1[i] + t2[i];
    const auto ps = exact_shapley(table_game(sum), d);
    for (int k = 0; k < d; ++k) {
      EXPECT_NEAR(ps[static_cast<std::size_t>(k)], p1[static_cast<std::size_t>(k)] + p2[static_cast<std::size_t>(k)], 1e-9);
    }
    // symmetry: make players 0 and 1 interchangeable
    std::vector<double> sym(t1.size());
    for (std::uint32_t m = 0; m < sym.size(); ++m) {
      const std::uint32_t swapped = (m & ~3u) | ((m & 1u) << 1) | ((m >> 1) & 1u);
      sym[m] = t1[m] + t1[swapped];
    }
    const auto pq = exact_shapley(table_game(sym), d);
    EXPECT_NEAR(pq[0], pq[1], 1e-9);
  }
}

TEST(ExactShapley, CapacityLimit) {
  try {
    exact_shapley([](std::uint32_t) { return 0.0; }, kMaxExactPlayers + 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Capacity);
  }
}

TEST(KernelShap, ExhaustiveMatchesExactShapley) {
  for (int d = 2; d <= 10; ++d) {
    const auto t = random_game_table(d, 7 * d);
    const Attribution a = kernel_shap(as_coalition_game(t), d, exhaustive());
    EXPECT_LE(max_abs_diff(a.phi, exact_shapley(table_game(t), d)), 1e-6) << d;
    EXPECT_EQ(a.phi0, t.front());
    EXPECT_EQ(a.full_value, t.back());
    EXPECT_EQ(a.samples_used, (1 << d) - 2);
  }
}

TEST(KernelShap, AdditiveGameIsRecoveredExactly) {
  const std::vector<double> coef{0.3, -1.2, 2.0, 0.0, 0.7};
  CoalitionGame f = [&](std::span<const std::uint8_t> z) {
    double v = 0.25;
    for (std::size_t i = 0; i < z.size(); ++i) v += coef[i] * z[i];
    return v;
  };
  const Attribution a = kernel_shap(f, 5, exhaustive());
  EXPECT_LE(max_abs_diff(a.phi, coef), 1e-12);
  ShapOptions sampled;
  sampled.n_samples = 40;
  EXPECT_LE(max_abs_diff(kernel_shap(f, 5, sampled).phi, coef), 1e-10);
}

TEST(KernelShap, EfficiencyHoldsForEveryBudget) {
  const int d = 9;
  const auto t = random_game_table(d, 5);
  for (int n : {9, 20, 100, 1000}) {
    ShapOptions o;
    o.n_samples = n;
    o.seed = 3;
    try {
      const Attribution a = kernel_shap(as_coalition_game(t), d, o);
      EXPECT_NEAR(a.phi0 + std::accumulate(a.phi.begin(), a.phi.end(), 0.0), t.back(), 1e-9);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::Solver);
    }
  }
}

TEST(KernelShap, DeterministicPerSeedAndThreadCount) {
  const int d = 8;
  const auto t = random_game_table(d, 12);
  ShapOptions o;
  o.n_samples = 300;
  o.seed = 5;
  const Attribution a = kernel_shap(as_coalition_game(t), d, o);
  o.threads = 4;
  const Attribution b = kernel_shap(as_coalition_game(t), d, o);
  EXPECT_EQ(a.phi, b.phi);
  o.seed = 6;
  EXPECT_NE(kernel_shap(as_coalition_game(t), d, o).phi, a.phi);
}

TEST(KernelShap, ErrorShrinksAsSamplesDouble) {
  const int d = 8;
  std::vector<int> budgets{32, 64, 128, 256, 512, 1024, 2048};
  std::vector<double> mean_err(budgets.size(), 0.0);
  const int games = 10, seeds = 10;
  for (int g = 0; g < games; ++g) {
    const auto t = random_game_table(d, 500 + g);
    const auto exact = exact_shapley(table_game(t), d);
    for (std::size_t b = 0; b < budgets.size(); ++b) {
      for (int s = 0; s < seeds; ++s) {
        ShapOptions o;
        o.n_samples = budgets[b];
        o.seed = static_cast<std::uint64_t>(s);
        const auto phi = kernel_shap(as_coalition_game(t), d, o).phi;
        double err = 0;
        for (int k = 0; k < d; ++k) {
          const double e = phi[static_cast<std::size_t>(k)] - exact[static_cast<std::size_t>(k)];
          err += e * e;
        }
        mean_err[b] += std::sqrt(err) / (games * seeds);
      }
    }
  }
  for (std::size_t b = 1; b < budgets.size(); ++b) {
    EXPECT_LT(mean_err[b], mean_err[b - 1]) << "budget " << budgets[b];
  }
  EXPECT_LT(mean_err.back(), 0.1 * mean_err.front());
}

TEST(KernelShap, SolverErrorOnDegenerateSamples) {
  // d = 10 with only ten unpaired draws: some seeds leave the system rank deficient
  const auto t = random_game_table(10, 1);
  int solver_errors = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    ShapOptions o;
    o.n_samples = 10;
    o.paired = false;
    o.seed = s;
    try {
      kernel_shap(as_coalition_game(t), 10, o);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::Solver);
      EXPECT_NE(std::string(e.what()).find("increase"), std::string::npos);
      ++solver_errors;
    }
  }
  EXPECT_GT(solver_errors, 0);
}

TEST(KernelShap, RejectsBadBudgetsAndSizes) {
  const auto zero = [](std::span<const std::uint8_t>) { return 0.0; };
  ShapOptions o;
  o.n_samples = 3;
  EXPECT_THROW(kernel_shap(zero, 4, o), Error);
  EXPECT_THROW(kernel_shap(zero, 1, exhaustive()), Error);
  try {
    kernel_shap(zero, kMaxExactPlayers + 1, exhaustive());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Capacity);
  }
}

TEST(KernelShapNetwork, ConstantModelGivesZeroAttribution) {
  Network net = testutil::toy_network(24, 2);
  const Layer& first = net.layer(0);
  net = net.with_parameters(0, Tensor(first.weights.shape()), Tensor(first.bias.shape(), 0.1f));
  ShapConfig cfg;
  cfg.grid_k = 4;
  cfg.n_samples = 200;
  const Tensor img = testutil::random_image(3, 24, 24, 3);
  const Attribution a = kernel_shap(net, img, grid_segmentation(img, 4), cfg);
  for (double p : a.phi) EXPECT_NEAR(p, 0.0, 1e-12);
  EXPECT_EQ(a.phi0, a.full_value);
}

TEST(KernelShapNetwork, EfficiencyAgainstModelProbability) {
  const Network net = testutil::toy_network(24, 5);
  const Tensor img = testutil::random_image(3, 24, 24, 8);
  ShapConfig cfg;
  cfg.grid_k = 3;
  cfg.exhaustive = true;
  const Segmentation seg = grid_segmentation(img, 3);
  const Attribution a = kernel_shap(net, img, seg, cfg);
  const double p = forward_pass(net, img).probabilities()[1];
  EXPECT_NEAR(a.phi0 + std::accumulate(a.phi.begin(), a.phi.end(), 0.0), p, 1e-9);

  // exhaustive result equals the brute-force Shapley values of the masking game
  const auto bg = background_values(img, BackgroundKind::ChannelMean);
  const auto exact = exact_shapley(
      [&](std::uint32_t m) {
        std::vector<std::uint8_t> z(9);
        for (int k = 0; k < 9; ++k) z[static_cast<std::size_t>(k)] = (m >> k) & 1u;
        return static_cast<double>(forward_pass(net, mask_image(img, seg, z, bg)).probabilities()[1]);
      },
      9);
  EXPECT_LE(max_abs_diff(a.phi, exact), 1e-6);

  cfg.output = ExplainedOutput::Logit;
  const Attribution l = kernel_shap(net, img, seg, cfg);
  EXPECT_NEAR(l.full_value, forward_pass(net, img).logits()[1], 1e-6);
  cfg.target_class = 2;
  EXPECT_THROW(kernel_shap(net, img, seg, cfg), Error);
}
