#include "salaud/config.hpp"

#include <set>

namespace salaud {

using nlohmann::json;

namespace {

class Reader {
 public:
  Reader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    require(j.is_object() || j.is_null(), ErrorCode::Config, context_ + " must be a JSON object");
  }

  template <typename T>
  bool get(const char* key, T& dst) {
    seen_.insert(key);
    if (j_.is_null() || !j_.contains(key)) return false;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::Config, context_ + "." + key + ": " + e.what());
    }
    return true;
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    if (j_.is_null() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  void finish() const {
    if (j_.is_null()) return;
    for (const auto& [k, v] : j_.items()) {
      require(seen_.count(k) > 0, ErrorCode::Config, "unknown key '" + k + "' in " + context_);
    }
  }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

void read_range(Reader& r, const char* key, double& lo, double& hi) {
  std::vector<double> v;
  if (r.get(key, v)) {
    require(v.size() == 2 && v[0] <= v[1], ErrorCode::Config, std::string(key) + " must be [min, max]");
    lo = v[0];
    hi = v[1];
  }
}

}  // namespace

json parse_json_text(const char* text, const char* what) {
  if (text == nullptr || *text == '\0') return json::object();
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, std::string(what) + " is not valid JSON: " + e.what());
  }
}

GenConfig parse_gen_config(const json& j) {
  Reader r(j, "generate config");
  std::string preset = "clean";
  r.get("preset", preset);
  GenConfig c = GenConfig::preset(preset);
  r.get("height", c.height);
  r.get("width", c.width);
  r.get("n_naevus", c.n_naevus);
  r.get("n_melanoma", c.n_melanoma);
  r.get("test_per_class", c.test_per_class);
  r.get("radius_min", c.radius_min);
  r.get("radius_max", c.radius_max);
  r.get("irregularity", c.irregularity);
  r.get("melanoma_tones_min", c.melanoma_tones_min);
  r.get("melanoma_tones_max", c.melanoma_tones_max);
  r.get("seed", c.seed);
  if (const json* a = r.sub("artifact")) {
    Reader ar(*a, "artifact");
    std::string kind;
    if (ar.get("kind", kind)) {
      require(kind == "none" || kind == "dark_corners", ErrorCode::Config, "unknown artifact kind '" + kind + "'");
      c.artifact.kind = kind == "dark_corners" ? ArtifactKind::DarkCorners : ArtifactKind::None;
    }
    ar.get("strength", c.artifact.strength);
    ar.get("p_naevus", c.artifact.p_naevus);
    ar.get("p_melanoma", c.artifact.p_melanoma);
    ar.finish();
  }
  r.finish();
  c.validate();
  return c;
}

TrainConfig parse_train_config(const json& j) {
  Reader r(j, "train config");
  TrainConfig c;
  std::string opt;
  if (r.get("optimizer", opt)) c.optimizer = optimizer_from_string(opt);
  r.get("learning_rate", c.learning_rate);
  r.get("momentum", c.momentum);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("seed", c.seed);
  r.get("subsample_id", c.subsample_id);
  r.get("threads", c.threads);
  r.finish();
  c.validate();
  return c;
}

SearchSpace parse_search_space(const json& j) {
  Reader r(j, "search space");
  SearchSpace s;
  std::vector<std::string> opts;
  if (r.get("optimizers", opts)) {
    require(!opts.empty(), ErrorCode::Config, "search space needs at least one optimizer");
    s.optimizers.clear();
    for (const auto& o : opts) s.optimizers.push_back(optimizer_from_string(o));
  }
  read_range(r, "sgd_lr", s.sgd_lr_min, s.sgd_lr_max);
  read_range(r, "adam_lr", s.adam_lr_min, s.adam_lr_max);
  read_range(r, "momentum", s.momentum_min, s.momentum_max);
  read_range(r, "beta1", s.beta1_min, s.beta1_max);
  read_range(r, "beta2", s.beta2_min, s.beta2_max);
  std::vector<int> epochs;
  if (r.get("epochs", epochs)) {
    require(epochs.size() == 2 && epochs[0] >= 1 && epochs[0] <= epochs[1], ErrorCode::Config,
            "epochs must be [min, max] with min >= 1");
    s.epochs_min = epochs[0];
    s.epochs_max = epochs[1];
  }
  if (r.get("batch_sizes", s.batch_sizes)) {
    require(!s.batch_sizes.empty(), ErrorCode::Config, "batch_sizes must not be empty");
    for (int b : s.batch_sizes) require(b >= 1, ErrorCode::Config, "batch sizes must be positive");
  }
  r.finish();
  require(s.sgd_lr_min > 0.0 && s.adam_lr_min > 0.0, ErrorCode::Config, "learning rate ranges must be positive");
  return s;
}

SuiteConfig parse_suite_config(const json& j, int height, int width) {
  Reader r(j, "suite config");
  SuiteConfig c;
  c.network = NetworkSpec::toy(height, width);
  r.get("n_models", c.n_models);
  r.get("n_subsets", c.n_subsets);
  r.get("n_per_class", c.n_per_class);
  r.get("augment_factor", c.augment_factor);
  r.get("shared_member_seed", c.shared_member_seed);
  r.get("master_seed", c.master_seed);
  r.get("threads", c.threads);
  if (const json* s = r.sub("space")) c.space = parse_search_space(*s);
  if (const json* n = r.sub("network")) {
    try {
      c.network = n->get<NetworkSpec>();
    } catch (const json::exception& e) {
      fail(ErrorCode::Config, std::string("suite network spec: ") + e.what());
    }
  }
  r.finish();
  require(c.n_models >= 2, ErrorCode::Config, "a suite needs at least two models");
  require(c.n_subsets >= 0 && c.n_per_class >= 0, ErrorCode::Config, "subset settings must be non-negative");
  require(c.augment_factor == 0.0 || (c.augment_factor >= 1.0 && c.augment_factor <= 8.0), ErrorCode::Config,
          "augment_factor must be 0 (auto) or lie in [1, 8]");
  return c;
}

json suite_config_to_json(const SuiteConfig& c) {
  return json{{"n_models", c.n_models},
              {"n_subsets", c.n_subsets},
              {"n_per_class", c.n_per_class},
              {"augment_factor", c.augment_factor},
              {"shared_member_seed", c.shared_member_seed},
              {"master_seed", c.master_seed},
              {"space", c.space.to_json()},
              {"network", c.network}};
}

SsimConfig parse_ssim_config(const json& j) {
  Reader r(j, "ssim config");
  SsimConfig c;
  r.get("window", c.window);
  r.get("sliding", c.sliding);
  r.get("dynamic_range", c.dynamic_range);
  // derived values echoed by to_json
  double ignored = 0.0;
  r.get("c1", ignored);
  r.get("c2", ignored);
  r.finish();
  require(c.window >= 2, ErrorCode::Config, "SSIM window must be at least 2");
  require(c.dynamic_range > 0.0, ErrorCode::Config, "SSIM dynamic range must be positive");
  return c;
}

ExplainSettings parse_explain_settings(const json& j) {
  Reader r(j, "explain config");
  ExplainSettings s;
  std::string method;
  if (r.get("method", method)) s.method = method_from_string(method);
  r.get("target_class", s.target_class);
  r.get("grid_k", s.shap.grid_k);
  if (const json* n = r.sub("n_samples")) {
    if (n->is_string()) {
      require(n->get<std::string>() == "exhaustive", ErrorCode::Config,
              "n_samples must be an integer or \"exhaustive\"");
      s.shap.exhaustive = true;
    } else {
      require(n->is_number_integer(), ErrorCode::Config, "n_samples must be an integer or \"exhaustive\"");
      s.shap.n_samples = n->get<int>();
      s.shap.exhaustive = false;
    }
  }
  r.get("exhaustive", s.shap.exhaustive);
  r.get("paired", s.shap.paired);
  std::string bg;
  if (r.get("background", bg)) {
    require(bg == "channel_mean" || bg == "constant", ErrorCode::Config,
            "background must be channel_mean or constant");
    s.shap.background = bg == "constant" ? BackgroundKind::Constant : BackgroundKind::ChannelMean;
  }
  r.get("background_value", s.shap.background_value);
  r.get("seed", s.shap.seed);
  std::string output;
  if (r.get("output", output)) {
    require(output == "probability" || output == "logit", ErrorCode::Config, "output must be probability or logit");
    s.shap.output = output == "logit" ? ExplainedOutput::Logit : ExplainedOutput::Probability;
  }
  r.get("threads", s.threads);
  if (const json* q = r.sub("ssim")) s.ssim = parse_ssim_config(*q);
  // nested echo form produced by ExplainSettings::to_json
  if (const json* sh = r.sub("shap")) {
    ExplainSettings inner = parse_explain_settings(*sh);
    s.shap = inner.shap;
  }
  r.finish();
  require(s.target_class >= 0, ErrorCode::Config, "target_class must be non-negative");
  require(s.shap.grid_k >= 1, ErrorCode::Config, "grid_k must be positive");
  s.shap.target_class = s.target_class;
  return s;
}

}  // namespace salaud
