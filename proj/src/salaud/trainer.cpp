#include "salaud/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "salaud/parallel.hpp"
#include "salaud/rng.hpp"

namespace salaud {

using nlohmann::json;

const char* to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd_momentum"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd" || name == "sgd_momentum") return OptimizerKind::SgdMomentum;
  fail(ErrorCode::Config, "unknown optimizer '" + name + "' (sgd, adam)");
}

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorCode::Config,
          "learning rate must be finite and non-negative");
  require(epochs >= 1, ErrorCode::Config, "epochs must be >= 1");
  require(batch_size >= 1, ErrorCode::Config, "batch size must be >= 1");
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::Config, "momentum must lie in [0,1)");
  require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, ErrorCode::Config,
          "Adam betas must lie in (0,1)");
}

json TrainConfig::to_json() const {
  json j{{"optimizer", salaud::to_string(optimizer)},
         {"learning_rate", learning_rate},
         {"epochs", epochs},
         {"batch_size", batch_size},
         {"seed", seed},
         {"subsample_id", subsample_id}};
  if (optimizer == OptimizerKind::Adam) {
    j["beta1"] = beta1;
    j["beta2"] = beta2;
  } else {
    j["momentum"] = momentum;
  }
  return j;
}

namespace {

struct SampleResult {
  double loss = 0.0;
  std::vector<ParameterGradient> grads;
};

SampleResult sample_gradient(const Network& net, const LabeledImage& img) {
  const ActivationTrace trace = forward_pass(net, img.image);
  const Tensor& logits = trace.logits();
  const Tensor& probs = trace.probabilities();
  double mx = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max<double>(mx, logits[i]);
  double lse = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) lse += std::exp(static_cast<double>(logits[i]) - mx);
  lse = mx + std::log(lse);
  SampleResult r;
  r.loss = lse - logits[static_cast<std::size_t>(img.label)];
  Tensor g(logits.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = probs[i] - (static_cast<int>(i) == img.label ? 1.0f : 0.0f);
  r.grads = backpropagate(net, trace, g, true).parameters;
  return r;
}

}  // namespace

BatchGradient batch_gradient(const Network& network, const std::vector<const LabeledImage*>& batch, int threads) {
  require(!batch.empty(), ErrorCode::InvalidArgument, "empty batch");
  std::vector<SampleResult> per(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { per[i] = sample_gradient(network, *batch[i]); }, threads);

  BatchGradient out;
  out.parameters.resize(network.layers().size());
  for (const Layer& l : network.layers()) {
    if (l.has_parameters()) {
      out.parameters[static_cast<std::size_t>(l.layer_id)] = {Tensor(l.weights.shape()), Tensor(l.bias.shape())};
    }
  }
  const float scale = 1.0f / static_cast<float>(batch.size());
  for (const SampleResult& s : per) {
    out.loss += s.loss;
    for (std::size_t li = 0; li < out.parameters.size(); ++li) {
      if (out.parameters[li].weights.empty()) continue;
      auto dw = out.parameters[li].weights.data();
      auto sw = s.grads[li].weights.data();
      for (std::size_t k = 0; k < dw.size(); ++k) dw[k] += sw[k] * scale;
      auto db = out.parameters[li].bias.data();
      auto sb = s.grads[li].bias.data();
      for (std::size_t k = 0; k < db.size(); ++k) db[k] += sb[k] * scale;
    }
  }
  out.loss /= static_cast<double>(batch.size());
  return out;
}

std::vector<double> predict(const Network& network, const std::vector<const LabeledImage*>& images, int threads) {
  std::vector<double> p(images.size());
  parallel_for(
      images.size(),
      [&](std::size_t i) {
        p[i] = forward_pass(network, images[i]->image).probabilities()[static_cast<std::size_t>(kMelanoma)];
      },
      threads);
  return p;
}

MetricsRecord evaluate(const Network& network, const std::vector<const LabeledImage*>& test, int threads) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto* img : test) {
    ids.push_back(img->id);
    labels.push_back(img->label);
  }
  return evaluate_predictions(std::move(ids), std::move(labels), predict(network, test, threads));
}

namespace {

class Optimizer {
 public:
  Optimizer(const Network& net, const TrainConfig& cfg) : cfg_(cfg) {
    for (const Layer& l : net.layers()) {
      first_.emplace_back(l.weights.size() + l.bias.size(), 0.0f);
      second_.emplace_back(cfg.optimizer == OptimizerKind::Adam ? l.weights.size() + l.bias.size() : 0, 0.0f);
    }
  }

  Network step(const Network& net, const std::vector<ParameterGradient>& grads) {
    ++t_;
    Network next = net;
    for (const Layer& l : net.layers()) {
      if (!l.has_parameters()) continue;
      const auto li = static_cast<std::size_t>(l.layer_id);
      Tensor w = l.weights;
      Tensor b = l.bias;
      update(w.data(), grads[li].weights.data(), first_[li].data(), second_[li].data());
      const std::size_t off = w.size();
      update(b.data(), grads[li].bias.data(), first_[li].data() + off,
             second_[li].empty() ? nullptr : second_[li].data() + off);
      next = next.with_parameters(l.layer_id, std::move(w), std::move(b));
    }
    return next;
  }

 private:
  void update(std::span<float> p, std::span<const float> g, float* m, float* v) const {
    if (cfg_.optimizer == OptimizerKind::SgdMomentum) {
      const float lr = static_cast<float>(cfg_.learning_rate);
      const float mu = static_cast<float>(cfg_.momentum);
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = mu * m[i] + g[i];
        p[i] -= lr * m[i];
      }
      return;
    }
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i]);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= static_cast<float>(cfg_.learning_rate * mhat / (std::sqrt(vhat) + 1e-8));
    }
  }

  TrainConfig cfg_;
  long t_ = 0;
  std::vector<std::vector<float>> first_;
  std::vector<std::vector<float>> second_;
};

}  // namespace

ModelBundle train(const ModelBundle& initial, const Dataset& dataset, const TrainConfig& config,
                  TrainHistory* history) {
  config.validate();
  std::vector<const LabeledImage*> train_set = dataset.split(Split::Train);
  require(!train_set.empty(), ErrorCode::Size, "dataset has no training images");

  Network net = initial.network;
  Optimizer opt(net, config);
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(train_set);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_set.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(train_set.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<const LabeledImage*> batch(train_set.begin() + static_cast<std::ptrdiff_t>(start),
                                                   train_set.begin() + static_cast<std::ptrdiff_t>(end));
      BatchGradient g;
      try {
        g = batch_gradient(net, batch, config.threads);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Domain) throw;
        fail(ErrorCode::Training, "training diverged at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(g.loss)) {
        fail(ErrorCode::Training, "loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(step));
      }
      epoch_loss += g.loss * static_cast<double>(batch.size());
      net = opt.step(net, g.parameters);
      ++step;
    }
    if (history) history->epoch_loss.push_back(epoch_loss / static_cast<double>(train_set.size()));
  }
  for (const Layer& l : net.layers()) {
    if (!l.weights.all_finite() || !l.bias.all_finite()) {
      fail(ErrorCode::Training, "parameters of layer " + std::to_string(l.layer_id) + " became non-finite");
    }
  }

  ModelBundle out = initial;
  out.network = std::move(net);
  out.provenance.train_seed = config.seed;
  out.provenance.subsample_id = config.subsample_id;
  out.provenance.hyperparameters = config.to_json();
  out.provenance.dataset = json{{"generator", dataset.config}, {"images", dataset.images.size()}}.dump();
  const auto test = dataset.split(Split::Test);
  if (!test.empty()) out.provenance.metrics = evaluate(out.network, test, config.threads);
  return out;
}

TrainConfig SearchSpace::draw(std::uint64_t seed) const {
  require(!optimizers.empty() && !batch_sizes.empty(), ErrorCode::Config, "search space has an empty choice set");
  Rng rng(seed);
  auto log_uniform = [&](double lo, double hi) { return std::exp(rng.uniform(std::log(lo), std::log(hi))); };
  TrainConfig c;
  c.optimizer = optimizers[rng.below(optimizers.size())];
  if (c.optimizer == OptimizerKind::Adam) {
    c.learning_rate = log_uniform(adam_lr_min, adam_lr_max);
  } else {
    c.learning_rate = log_uniform(sgd_lr_min, sgd_lr_max);
  }
  c.momentum = rng.uniform(momentum_min, momentum_max);
  c.beta1 = rng.uniform(beta1_min, beta1_max);
  c.beta2 = rng.uniform(beta2_min, beta2_max);
  c.epochs = rng.range(epochs_min, epochs_max);
  c.batch_size = batch_sizes[rng.below(batch_sizes.size())];
  return c;
}

json SearchSpace::to_json() const {
  json opts = json::array();
  for (auto o : optimizers) opts.push_back(salaud::to_string(o));
  return json{{"optimizers", opts},
              {"sgd_lr", {sgd_lr_min, sgd_lr_max}},
              {"adam_lr", {adam_lr_min, adam_lr_max}},
              {"momentum", {momentum_min, momentum_max}},
              {"beta1", {beta1_min, beta1_max}},
              {"beta2", {beta2_min, beta2_max}},
              {"epochs", {epochs_min, epochs_max}},
              {"batch_sizes", batch_sizes}};
}

SuiteSummary summarize_suite(const std::vector<SuiteMember>& members) {
  require(!members.empty(), ErrorCode::InvalidArgument, "empty suite");
  SuiteSummary s;
  for (const auto& m : members) {
    require(m.bundle.provenance.metrics.has_value(), ErrorCode::InvalidArgument,
            "suite member " + m.bundle.model_id + " has no test metrics");
    const MetricsRecord& r = *m.bundle.provenance.metrics;
    s.model_ids.push_back(m.bundle.model_id);
    s.aucs.push_back(r.auc);
    s.recalls.push_back(r.recall);
    s.accuracies.push_back(r.accuracy);
  }
  const double n = static_cast<double>(members.size());
  for (double a : s.aucs) s.mean_auc += a;
  s.mean_auc /= n;
  for (double r : s.recalls) s.mean_recall += r;
  s.mean_recall /= n;
  if (members.size() > 1) {
    for (double a : s.aucs) s.auc_variance += (a - s.mean_auc) * (a - s.mean_auc);
    s.auc_variance /= n - 1.0;
  }
  s.auc_stddev = std::sqrt(s.auc_variance);

  const int count = static_cast<int>(members.size());
  s.misclassified_threshold = (5 * count + 5) / 6;
  const MetricsRecord& first = *members.front().bundle.provenance.metrics;
  for (std::size_t i = 0; i < first.ids.size(); ++i) {
    int wrong = 0;
    for (const auto& m : members) {
      const MetricsRecord& r = *m.bundle.provenance.metrics;
      require(r.ids.size() == first.ids.size() && r.ids[i] == first.ids[i], ErrorCode::Consistency,
              "suite members were evaluated on different test splits");
      const bool predicted = r.probabilities[i] >= 0.5;
      if (predicted != (r.labels[i] == kMelanoma)) ++wrong;
    }
    if (wrong >= s.misclassified_threshold) s.consistently_misclassified.push_back(first.ids[i]);
  }
  return s;
}

json SuiteSummary::to_json() const {
  json models = json::array();
  for (std::size_t i = 0; i < model_ids.size(); ++i) {
    models.push_back(json{{"model_id", model_ids[i]}, {"auc", aucs[i]}, {"recall", recalls[i]}, {"accuracy", accuracies[i]}});
  }
  return json{{"models", models},
              {"mean_auc", mean_auc},
              {"auc_variance", auc_variance},
              {"auc_stddev", auc_stddev},
              {"mean_recall", mean_recall},
              {"misclassified_threshold", misclassified_threshold},
              {"consistently_misclassified", consistently_misclassified}};
}

std::string SuiteSummary::to_csv() const {
  std::ostringstream out;
  out << "model_id,auc,recall,accuracy\n";
  char buf[128];
  for (std::size_t i = 0; i < model_ids.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g", aucs[i], recalls[i], accuracies[i]);
    out << model_ids[i] << "," << buf << "\n";
  }
  return out.str();
}

std::vector<SuiteMember> train_suite(const Dataset& dataset, const SuiteConfig& config) {
  require(config.n_models >= 2, ErrorCode::Config, "a suite needs at least two models");
  const auto seed_for = [&](std::uint64_t a, std::uint64_t b) {
    return config.shared_member_seed ? config.master_seed : derive_seed(config.master_seed, a, b);
  };

  const std::size_t naevi = dataset.split(Split::Train, kNaevus).size();
  const std::size_t melanoma = dataset.split(Split::Train, kMelanoma).size();
  require(naevi > 0 && melanoma > 0, ErrorCode::Size, "both classes need training images");
  double factor = config.augment_factor;
  if (factor <= 0.0) {
    factor = std::clamp(static_cast<double>(std::max(naevi, melanoma)) / static_cast<double>(std::min(naevi, melanoma)),
                        1.0, 8.0);
  }
  const Dataset pool = factor > 1.0 ? augment_minority(dataset, factor, derive_seed(config.master_seed, 0xa0)) : dataset;
  const std::size_t smaller =
      std::min(pool.split(Split::Train, kNaevus).size(), pool.split(Split::Train, kMelanoma).size());
  const int per_class = config.n_per_class > 0 ? config.n_per_class : std::max<int>(1, static_cast<int>(smaller / 2));
  const int subsets = config.n_subsets > 0 ? config.n_subsets : config.n_models;

  std::vector<SuiteMember> members;
  for (int i = 0; i < config.n_models; ++i) {
    const int subset = i % subsets;
    char id[32];
    std::snprintf(id, sizeof id, "model_%02d", i);
    try {
      const Dataset data = subsample_balanced(pool, per_class, seed_for(1, static_cast<std::uint64_t>(subset)));
      TrainConfig tc = config.space.draw(seed_for(2, static_cast<std::uint64_t>(i)));
      tc.seed = seed_for(3, static_cast<std::uint64_t>(i));
      tc.subsample_id = "subset_" + std::to_string(subset);
      tc.threads = config.threads;
      NetworkSpec spec = config.network;
      spec.init_seed = seed_for(4, static_cast<std::uint64_t>(i));
      ModelBundle bundle = train(make_bundle(id, spec), data, tc);
      members.push_back(SuiteMember{std::move(bundle), tc});
    } catch (const Error& e) {
      throw Error(e.code(), "suite member " + std::to_string(i) + ": " + e.what());
    }
  }
  return members;
}

}  // namespace salaud
