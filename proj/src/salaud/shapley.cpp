#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <string>
#include <unordered_map>

#include "salaud/explain.hpp"
#include "salaud/parallel.hpp"
#include "salaud/rng.hpp"

namespace salaud {

using nlohmann::json;

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r *= static_cast<double>(n - k + i) / i;
  return r;
}

}  // namespace

double shap_kernel_weight(int d, int s) {
  require(d >= 2, ErrorCode::InvalidArgument, "kernel weight needs d >= 2");
  require(s > 0 && s < d, ErrorCode::InvalidArgument,
          "coalition size " + std::to_string(s) +
              " is the empty or full coalition; those enter as exact constraints, not weights");
  return static_cast<double>(d - 1) / (binomial(d, s) * s * (d - s));
}

std::vector<double> exact_shapley(const MaskGame& value, int d) {
  require(d >= 1, ErrorCode::InvalidArgument, "need at least one player");
  require(d <= kMaxExactPlayers, ErrorCode::Capacity,
          "exact Shapley enumeration supports at most " + std::to_string(kMaxExactPlayers) + " players, got " +
              std::to_string(d));
  const std::uint32_t n = 1u << d;
  std::vector<double> v(n);
  for (std::uint32_t m = 0; m < n; ++m) v[m] = value(m);
  // |S|!(d-|S|-1)!/d! = 1 / (d * C(d-1, |S|))
  std::vector<double> weight(static_cast<std::size_t>(d));
  for (int s = 0; s < d; ++s) weight[static_cast<std::size_t>(s)] = 1.0 / (d * binomial(d - 1, s));
  std::vector<double> phi(static_cast<std::size_t>(d), 0.0);
  for (int k = 0; k < d; ++k) {
    const std::uint32_t bit = 1u << k;
    double sum = 0.0;
    for (std::uint32_t m = 0; m < n; ++m) {
      if (m & bit) continue;
      sum += weight[static_cast<std::size_t>(std::popcount(m))] * (v[m | bit] - v[m]);
    }
    phi[static_cast<std::size_t>(k)] = sum;
  }
  return phi;
}

json Attribution::to_json() const {
  return json{{"phi", phi},
              {"phi0", phi0},
              {"full_value", full_value},
              {"target_class", target_class},
              {"samples_used", samples_used},
              {"distinct_coalitions", distinct_coalitions},
              {"exhaustive", exhaustive}};
}

json ShapConfig::to_json() const {
  return json{{"grid_k", grid_k},
              {"n_samples", n_samples},
              {"exhaustive", exhaustive},
              {"paired", paired},
              {"background", background == BackgroundKind::ChannelMean ? "channel_mean" : "constant"},
              {"background_value", background_value},
              {"seed", seed},
              {"target_class", target_class},
              {"output", output == ExplainedOutput::Probability ? "probability" : "logit"}};
}

namespace {

class CoalitionSet {
 public:
  explicit CoalitionSet(int d) : d_(d) {}

  void add(std::string key, double weight) {
    auto [it, inserted] = index_.emplace(key, keys_.size());
    if (inserted) {
      keys_.push_back(std::move(key));
      weights_.push_back(weight);
    } else {
      weights_[it->second] += weight;
    }
  }

  std::size_t size() const { return keys_.size(); }
  std::span<const std::uint8_t> coalition(std::size_t i) const {
    return {reinterpret_cast<const std::uint8_t*>(keys_[i].data()), static_cast<std::size_t>(d_)};
  }
  double weight(std::size_t i) const { return weights_[i]; }

 private:
  int d_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> keys_;  // insertion order fixes the regression row order
  std::vector<double> weights_;
};

}  // namespace

Attribution kernel_shap(const CoalitionGame& value, int d, const ShapOptions& options) {
  require(d >= 2, ErrorCode::InvalidArgument, "Kernel SHAP needs at least two features");
  if (options.exhaustive) {
    require(d <= kMaxExactPlayers, ErrorCode::Capacity,
            "exhaustive mode supports at most " + std::to_string(kMaxExactPlayers) + " features");
  } else {
    require(options.n_samples >= d, ErrorCode::Config,
            "need at least d = " + std::to_string(d) + " coalition samples, got " + std::to_string(options.n_samples));
  }

  Attribution out;
  out.exhaustive = options.exhaustive;
  const std::string empty(static_cast<std::size_t>(d), '\0');
  const std::string full(static_cast<std::size_t>(d), '\1');
  auto as_span = [d](const std::string& s) {
    return std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), static_cast<std::size_t>(d));
  };

  CoalitionSet set(d);
  if (options.exhaustive) {
    const std::uint32_t n = 1u << d;
    for (std::uint32_t m = 1; m + 1 < n; ++m) {
      std::string key(static_cast<std::size_t>(d), '\0');
      for (int k = 0; k < d; ++k) key[static_cast<std::size_t>(k)] = static_cast<char>((m >> k) & 1u);
      set.add(std::move(key), shap_kernel_weight(d, std::popcount(m)));
    }
    out.samples_used = static_cast<int>(n - 2);
  } else {
    std::vector<int> order(static_cast<std::size_t>(d));
    int drawn = 0;
    for (std::uint64_t draw = 0; drawn < options.n_samples; ++draw) {
      Rng rng(derive_seed(options.seed, draw));
      const int s = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(d - 1)));
      for (int k = 0; k < d; ++k) order[static_cast<std::size_t>(k)] = k;
      std::string key(static_cast<std::size_t>(d), '\0');
      for (int i = 0; i < s; ++i) {
        const std::size_t j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(d - i));
        std::swap(order[static_cast<std::size_t>(i)], order[j]);
        key[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = '\1';
      }
      const double w = 1.0 / (static_cast<double>(s) * (d - s));
      if (options.paired && drawn + 1 < options.n_samples) {
        std::string complement = key;
        for (char& c : complement) c = c ? '\0' : '\1';
        set.add(std::move(key), w);
        set.add(std::move(complement), w);
        drawn += 2;
      } else {
        set.add(std::move(key), w);
        drawn += 1;
      }
    }
    out.samples_used = drawn;
  }
  out.distinct_coalitions = static_cast<int>(set.size());

  std::vector<double> values(set.size());
  double base = 0.0, top = 0.0;
  parallel_for(
      set.size() + 2,
      [&](std::size_t i) {
        if (i == set.size()) {
          base = value(as_span(empty));
        } else if (i == set.size() + 1) {
          top = value(as_span(full));
        } else {
          values[i] = value(set.coalition(i));
        }
      },
      options.threads);
  out.phi0 = base;
  out.full_value = top;
  const double delta = top - base;

  // Eliminate the last feature: phi_last = delta - sum(others).
  const int unknowns = d - 1;
  const Eigen::Index rows = static_cast<Eigen::Index>(set.size());
  Eigen::MatrixXd a(rows, unknowns);
  Eigen::VectorXd b(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto z = set.coalition(static_cast<std::size_t>(r));
    const double sw = std::sqrt(set.weight(static_cast<std::size_t>(r)));
    const double last = z[static_cast<std::size_t>(unknowns)];
    for (int k = 0; k < unknowns; ++k) a(r, k) = sw * (z[static_cast<std::size_t>(k)] - last);
    b(r) = sw * (values[static_cast<std::size_t>(r)] - base - last * delta);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (rows < unknowns || qr.rank() < unknowns) {
    fail(ErrorCode::Solver, "Kernel SHAP regression is singular (" + std::to_string(set.size()) +
                                " distinct coalitions for " + std::to_string(d) +
                                " features); increase the sample budget");
  }
  const Eigen::VectorXd beta = qr.solve(b);
  out.phi.resize(static_cast<std::size_t>(d));
  double sum = 0.0;
  for (int k = 0; k < unknowns; ++k) {
    out.phi[static_cast<std::size_t>(k)] = beta(k);
    sum += beta(k);
  }
  out.phi[static_cast<std::size_t>(unknowns)] = delta - sum;
  return out;
}

Attribution kernel_shap(const Network& network, const Tensor& image, const Segmentation& segmentation,
                        const ShapConfig& config) {
  require(config.target_class >= 0 && config.target_class < network.num_classes(), ErrorCode::Index,
          "target class " + std::to_string(config.target_class) + " out of range");
  require(image.shape() == network.input_shape(), ErrorCode::InputShape,
          "image shape " + shape_string(image.shape()) + " does not match network input " +
              shape_string(network.input_shape()));
  const std::vector<float> bg = background_values(image, config.background, config.background_value);
  const auto target = static_cast<std::size_t>(config.target_class);
  CoalitionGame game = [&](std::span<const std::uint8_t> z) {
    const ActivationTrace t = forward_pass(network, mask_image(image, segmentation, z, bg));
    return static_cast<double>(config.output == ExplainedOutput::Probability ? t.probabilities()[target]
                                                                              : t.logits()[target]);
  };
  ShapOptions opts;
  opts.n_samples = config.n_samples;
  opts.exhaustive = config.exhaustive;
  opts.paired = config.paired;
  opts.seed = config.seed;
  opts.threads = config.threads;
  Attribution a = kernel_shap(game, segmentation.count, opts);
  a.target_class = config.target_class;
  return a;
}

}  // namespace salaud
