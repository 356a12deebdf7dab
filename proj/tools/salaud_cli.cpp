#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "salaud/salaud.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CliError {
  int exit_code;
  std::string message;
};

void check(salaud_status st, const std::string& what) {
  if (st == SALAUD_OK) return;
  const int code = st == SALAUD_ERR_CONFIG ? kExitUsage : kExitRuntime;
  throw CliError{code, what + ": " + salaud_last_error() + " [" + salaud_status_name(st) + "]"};
}

[[noreturn]] void usage_error(const std::string& msg) { throw CliError{kExitUsage, msg}; }

// RAII wrappers over the C handles
template <typename T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  explicit Handle(T* raw) : p(raw) {}
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  Handle(Handle&& o) noexcept : p(o.p) { o.p = nullptr; }
  Handle& operator=(Handle&& o) noexcept {
    std::swap(p, o.p);
    return *this;
  }
  ~Handle() {
    if (p) Free(p);
  }
  T** out() { return &p; }
  T* get() const { return p; }
};
using Dataset = Handle<salaud_dataset, salaud_dataset_free>;
using Model = Handle<salaud_model, salaud_model_free>;
using Suite = Handle<salaud_suite, salaud_suite_free>;
using Image = Handle<salaud_image, salaud_image_free>;
using Map = Handle<salaud_map, salaud_map_free>;

std::string take(char* s) {
  std::string out = s ? s : "";
  salaud_free_string(s);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CliError{kExitRuntime, "cannot write " + path.string()};
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

void require_dir(const std::string& path, const char* what) {
  if (!fs::is_directory(path)) usage_error(std::string(what) + " '" + path + "' does not exist");
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) usage_error(std::string(what) + " '" + path + "' does not exist");
}

Dataset open_dataset(const std::string& dir) {
  require_dir(dir, "dataset directory");
  if (!fs::is_regular_file(fs::path(dir) / "manifest.json")) usage_error("no manifest.json in '" + dir + "'");
  Dataset ds;
  check(salaud_dataset_read(dir.c_str(), ds.out()), "reading dataset " + dir);
  return ds;
}

Model open_model(const std::string& path) {
  require_file(path, "model file");
  Model m;
  check(salaud_model_load(path.c_str(), m.out()), "loading model " + path);
  return m;
}

// Flags shared by explain and the audits.
struct ExplainFlags {
  std::string method = "gradcam";
  int target = 1;
  int segments = 64;
  std::string samples = "2048";
  std::string background = "channel_mean";
  std::string output = "probability";
  bool unpaired = false;

  void add(CLI::App* app) {
    app->add_option("--method", method, "gradcam or kshap")->capture_default_str();
    app->add_option("--target", target, "explained class (1 = melanoma)")->capture_default_str();
    app->add_option("--segments", segments, "Kernel SHAP grid cells (a square number)")->capture_default_str();
    app->add_option("--samples", samples, "Kernel SHAP coalition budget or 'exhaustive'")->capture_default_str();
    app->add_option("--background", background, "channel_mean or constant")->capture_default_str();
    app->add_option("--output", output, "explained quantity for Kernel SHAP: probability or logit")
        ->capture_default_str();
    app->add_flag("--unpaired", unpaired, "disable complement pairing of sampled coalitions");
  }

  json to_json(std::uint64_t seed) const {
    if (method != "gradcam" && method != "kshap" && method != "kernel_shap") {
      usage_error("unknown method '" + method + "' (gradcam, kshap)");
    }
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(std::max(segments, 0)))));
    if (segments < 1 || k * k != segments) usage_error("--segments must be a positive square number");
    json j{{"method", method == "gradcam" ? "gradcam" : "kernel_shap"},
           {"target_class", target},
           {"grid_k", k},
           {"background", background},
           {"output", output},
           {"paired", !unpaired},
           {"seed", seed}};
    if (samples == "exhaustive") {
      j["n_samples"] = "exhaustive";
    } else {
      try {
        std::size_t used = 0;
        j["n_samples"] = std::stoi(samples, &used);
        if (used != samples.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        usage_error("--samples must be an integer or 'exhaustive'");
      }
    }
    return j;
  }
};

struct ImageFlags {
  int count = 20;
  std::string split = "test";
  std::vector<std::string> ids;

  void add(CLI::App* app) {
    app->add_option("--images", count, "number of images (classes interleaved)")->capture_default_str();
    app->add_option("--split", split, "train, test or all")->capture_default_str();
    app->add_option("--image-ids", ids, "explicit image ids");
  }

  json to_json() const {
    if (!ids.empty()) return json{{"ids", ids}};
    return json{{"split", split}, {"count", count}};
  }
};

struct Options {
  std::string out;
  int threads = 1;
  std::uint64_t seed = 0;

  // generate
  std::string preset = "clean";
  std::optional<int> naevi, melanoma, test_per_class, size;
  std::optional<double> irregularity, artifact_strength, p_naevus, p_melanoma;

  // train / suite
  std::string data;
  std::string optimizer = "adam";
  std::optional<double> lr, momentum, beta1, beta2;
  std::optional<int> epochs, batch;
  std::string model_id = "model";
  std::optional<std::uint64_t> init_seed;
  int n_models = 6;
  int subsets = 0;
  int per_class = 0;
  double augment = 0.0;

  // explain / audit
  std::string model;
  std::string image_id;
  std::string image_png;
  ExplainFlags ex;
  ImageFlags img;
  int repeats = 5;
  std::string layers = "top5";
  std::string mode = "cascading";
  std::vector<std::string> models;
  std::string suite_dir;
  double tolerance = 0.02;
  std::string biased, control;
  double corner_fraction = 0.15;
  double threshold = 2.0;
  bool no_panels = false;

  // ssim
  std::string map_a, map_b;
  int window = 8;
  bool sliding = false;
  bool raw = false;

  // replay
  std::string replay_config;
};

// The echo omits --out and --threads: neither changes any output.
std::vector<std::string> echo_args(const std::vector<std::string>& args) {
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--out" || a == "--threads") {
      ++i;
      continue;
    }
    if (a.rfind("--out=", 0) == 0 || a.rfind("--threads=", 0) == 0) continue;
    kept.push_back(a);
  }
  return kept;
}

fs::path prepare_out(const Options& o, const std::string& command, const std::vector<std::string>& args) {
  std::string dir = o.out;
  if (dir.empty()) {
    const char* env = std::getenv("SALAUD_OUT_DIR");
    dir = env && *env ? std::string(env) : "salaud_out";
    dir += "/" + command;
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CliError{kExitRuntime, "cannot create output directory " + dir + ": " + ec.message()};
  json echo{{"tool", "salaud"}, {"version", salaud_version()}, {"command", echo_args(args)}};
  write_text(fs::path(dir) / "config.json", echo.dump(2));
  return dir;
}

void cmd_generate(const Options& o, const fs::path& out) {
  json cfg{{"preset", o.preset}, {"seed", o.seed}};
  if (o.naevi) cfg["n_naevus"] = *o.naevi;
  if (o.melanoma) cfg["n_melanoma"] = *o.melanoma;
  if (o.test_per_class) cfg["test_per_class"] = *o.test_per_class;
  if (o.size) {
    cfg["height"] = *o.size;
    cfg["width"] = *o.size;
  }
  if (o.irregularity) cfg["irregularity"] = *o.irregularity;
  json art = json::object();
  if (o.artifact_strength) art["strength"] = *o.artifact_strength;
  if (o.p_naevus) art["p_naevus"] = *o.p_naevus;
  if (o.p_melanoma) art["p_melanoma"] = *o.p_melanoma;
  if (!art.empty()) {
    art["kind"] = "dark_corners";
    cfg["artifact"] = art;
  }
  Dataset ds;
  check(salaud_dataset_generate(cfg.dump().c_str(), ds.out()), "generate");
  check(salaud_dataset_write(ds.get(), out.string().c_str()), "writing dataset");
  std::size_t n = 0;
  check(salaud_dataset_size(ds.get(), &n), "dataset size");
  std::printf("wrote %zu images to %s\n", n, out.string().c_str());
}

json train_json(const Options& o) {
  json t{{"optimizer", o.optimizer}, {"seed", o.seed}};
  if (o.lr) t["learning_rate"] = *o.lr;
  if (o.momentum) t["momentum"] = *o.momentum;
  if (o.beta1) t["beta1"] = *o.beta1;
  if (o.beta2) t["beta2"] = *o.beta2;
  if (o.epochs) t["epochs"] = *o.epochs;
  if (o.batch) t["batch_size"] = *o.batch;
  return t;
}

void cmd_train(const Options& o, const fs::path& out) {
  Dataset ds = open_dataset(o.data);
  const json t = train_json(o);
  json manifest = json::parse(take([&] {
    char* s = nullptr;
    check(salaud_dataset_manifest(ds.get(), &s), "manifest");
    return s;
  }()));
  const int h = manifest.at("config").at("height").get<int>();
  const int w = manifest.at("config").at("width").get<int>();
  Model init;
  check(salaud_model_init(o.model_id.c_str(), nullptr, h, w, o.init_seed.value_or(o.seed), init.out()), "init");
  Model trained;
  char* history = nullptr;
  check(salaud_model_train(ds.get(), init.get(), o.model_id.c_str(), t.dump().c_str(), trained.out(), &history),
        "train");
  write_text(out / "history.json", take(history));
  check(salaud_model_save(trained.get(), (out / "model.salaud").string().c_str()), "saving model");
  char* info = nullptr;
  check(salaud_model_info(trained.get(), &info), "model info");
  const json j = json::parse(take(info));
  write_text(out / "metrics.json", j.at("metrics").dump(2));
  const json& m = j.at("metrics");
  std::printf("test auc %.4f recall %.4f accuracy %.4f\n", m.at("auc").get<double>(), m.at("recall").get<double>(),
              m.at("accuracy").get<double>());
}

void cmd_suite(const Options& o, const fs::path& out) {
  Dataset ds = open_dataset(o.data);
  json cfg{{"n_models", o.n_models},
           {"n_subsets", o.subsets},
           {"n_per_class", o.per_class},
           {"augment_factor", o.augment},
           {"master_seed", o.seed}};
  Suite suite;
  check(salaud_suite_train(ds.get(), cfg.dump().c_str(), suite.out()), "suite");
  std::size_t n = 0;
  check(salaud_suite_size(suite.get(), &n), "suite size");
  fs::create_directories(out / "models");
  for (std::size_t i = 0; i < n; ++i) {
    Model m;
    check(salaud_suite_model(suite.get(), i, m.out()), "suite member");
    char* info = nullptr;
    check(salaud_model_info(m.get(), &info), "model info");
    const std::string id = json::parse(take(info)).at("model_id").get<std::string>();
    check(salaud_model_save(m.get(), (out / "models" / (id + ".salaud")).string().c_str()), "saving model");
  }
  char* js = nullptr;
  char* csv = nullptr;
  check(salaud_suite_summary(suite.get(), &js, &csv), "summary");
  const std::string summary = take(js);
  write_text(out / "summary.json", summary);
  write_text(out / "summary.csv", take(csv));
  const json s = json::parse(summary);
  std::printf("%zu models, mean auc %.4f (sd %.4f), mean recall %.4f\n", n, s.at("mean_auc").get<double>(),
              s.at("auc_stddev").get<double>(), s.at("mean_recall").get<double>());
}

void cmd_explain(const Options& o, const fs::path& out) {
  const json ex = o.ex.to_json(o.seed);
  Model model = open_model(o.model);
  Image image;
  if (!o.image_png.empty()) {
    require_file(o.image_png, "image");
    check(salaud_image_read_png(o.image_png.c_str(), image.out()), "reading image");
  } else {
    if (o.image_id.empty()) usage_error("explain needs --image PNG or --data DIR with --image-id ID");
    Dataset ds = open_dataset(o.data);
    check(salaud_dataset_image(ds.get(), o.image_id.c_str(), image.out()), "image lookup");
  }
  Map map;
  char* details = nullptr;
  check(salaud_explain(model.get(), image.get(), ex.dump().c_str(), map.out(), &details), "explain");
  json report = json::parse(take(details));
  report["config"] = ex;
  report["image"] = o.image_png.empty() ? o.image_id : o.image_png;
  write_text(out / "explanation.json", report.dump(2));
  char* mj = nullptr;
  check(salaud_map_to_json(map.get(), &mj), "map json");
  write_text(out / "map.json", take(mj));
  check(salaud_map_write_csv(map.get(), (out / "map.csv").string().c_str()), "map csv");
  check(salaud_map_render_overlay(map.get(), image.get(), (out / "overlay.png").string().c_str()), "overlay");
  check(salaud_image_write_png(image.get(), (out / "image.png").string().c_str()), "image");
  std::printf("wrote %s\n", (out / "explanation.json").string().c_str());
}

std::string panels(const Options& o, const fs::path& out) { return o.no_panels ? "" : (out / "panels").string(); }

void print_report_line(const json& r) {
  std::printf("%s/%s: mean SSIM %.4f (sd %.4f, n=%d)\n", r.at("check").get<std::string>().c_str(),
              r.at("method").get<std::string>().c_str(), r.at("ssim").at("mean").get<double>(),
              r.at("ssim").at("stddev").get<double>(), r.at("ssim").at("count").get<int>());
}

void cmd_audit_repro(const Options& o, const fs::path& out) {
  const json ex = o.ex.to_json(o.seed);
  Model model = open_model(o.model);
  Dataset ds = open_dataset(o.data);
  char* rep = nullptr;
  check(salaud_audit_reproducibility(model.get(), ds.get(), o.img.to_json().dump().c_str(), ex.dump().c_str(),
                                     o.repeats, panels(o, out).c_str(), &rep),
        "reproducibility audit");
  const std::string text = take(rep);
  write_text(out / "report.json", text);
  print_report_line(json::parse(text));
}

void cmd_audit_randomize(const Options& o, const fs::path& out) {
  const json ex = o.ex.to_json(o.seed);
  Model model = open_model(o.model);
  Dataset ds = open_dataset(o.data);
  char* rep = nullptr;
  check(salaud_audit_model_dependence(model.get(), ds.get(), o.img.to_json().dump().c_str(), ex.dump().c_str(),
                                      o.layers.c_str(), o.seed, o.mode.c_str(), panels(o, out).c_str(), &rep),
        "randomization audit");
  const std::string text = take(rep);
  write_text(out / "report.json", text);
  const json r = json::parse(text);
  std::printf("degradation %%:");
  for (double d : r.at("degradation_pct")) std::printf(" %.1f", d);
  std::printf("  (monotone in %.0f%% of images)\n", 100.0 * r.at("monotone_fraction").get<double>());
}

void cmd_audit_sensitivity(const Options& o, const fs::path& out) {
  const json ex = o.ex.to_json(o.seed);
  std::vector<std::string> paths = o.models;
  if (!o.suite_dir.empty()) {
    const fs::path dir = fs::path(o.suite_dir) / "models";
    require_dir(dir.string(), "suite model directory");
    std::vector<std::string> found;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".salaud") found.push_back(e.path().string());
    }
    std::sort(found.begin(), found.end());
    paths.insert(paths.end(), found.begin(), found.end());
  }
  if (paths.size() < 2) usage_error("sensitivity needs at least two models (--models or --suite)");
  std::vector<Model> models;
  std::vector<const salaud_model*> raw;
  for (const auto& p : paths) {
    models.push_back(open_model(p));
    raw.push_back(models.back().get());
  }
  Dataset ds = open_dataset(o.data);
  char* rep = nullptr;
  check(salaud_audit_sensitivity(raw.data(), raw.size(), o.tolerance, ds.get(), o.img.to_json().dump().c_str(),
                                 ex.dump().c_str(), panels(o, out).c_str(), &rep),
        "sensitivity audit");
  const std::string text = take(rep);
  write_text(out / "report.json", text);
  const json r = json::parse(text);
  print_report_line(r);
  std::printf("variation %.4f across %zu models\n", r.at("variation_of_mean").get<double>(),
              r.at("model_ids").size());
}

void cmd_audit_spurious(const Options& o, const fs::path& out) {
  const json ex = o.ex.to_json(o.seed);
  Model biased = open_model(o.biased);
  Model control;
  if (!o.control.empty()) control = open_model(o.control);
  Dataset ds = open_dataset(o.data);
  char* rep = nullptr;
  check(salaud_audit_spurious(biased.get(), control.get(), ds.get(), o.img.to_json().dump().c_str(),
                              ex.dump().c_str(), o.corner_fraction, o.threshold, panels(o, out).c_str(), &rep),
        "spurious-correlation audit");
  const std::string text = take(rep);
  write_text(out / "report.json", text);
  const json r = json::parse(text);
  std::printf("corner mass: biased %.4f", r.at("biased_mean").get<double>());
  if (r.contains("control_mean")) {
    std::printf(", control %.4f, verdict %s", r.at("control_mean").get<double>(),
                r.at("verdict").get<bool>() ? "shortcut" : "no shortcut");
  }
  std::printf("\n");
}

void cmd_ssim(const Options& o, const fs::path& out) {
  require_file(o.map_a, "map");
  require_file(o.map_b, "map");
  Map a, b;
  check(salaud_map_read_csv(o.map_a.c_str(), a.out()), "reading " + o.map_a);
  check(salaud_map_read_csv(o.map_b.c_str(), b.out()), "reading " + o.map_b);
  const json cfg{{"window", o.window}, {"sliding", o.sliding}};
  double v = 0.0;
  check(salaud_ssim(a.get(), b.get(), cfg.dump().c_str(), o.raw ? 0 : 1, &v), "ssim");
  write_text(out / "ssim.json", json{{"ssim", v}, {"normalized", !o.raw}, {"config", cfg}}.dump(2));
  std::printf("%.17g\n", v);
}

int run(std::vector<std::string> args);

int cmd_replay(const Options& o) {
  require_file(o.replay_config, "config echo");
  json echo;
  try {
    std::ifstream in(o.replay_config);
    in >> echo;
  } catch (const std::exception& e) {
    usage_error("cannot parse " + o.replay_config + ": " + e.what());
  }
  if (!echo.contains("command") || !echo.at("command").is_array()) usage_error("config echo has no command");
  std::vector<std::string> args = echo.at("command").get<std::vector<std::string>>();
  if (!args.empty() && args.front() == "replay") usage_error("refusing to replay a replay");
  if (!o.out.empty()) {
    args.push_back("--out");
    args.push_back(o.out);
  }
  args.push_back("--threads");
  args.push_back(std::to_string(o.threads));
  return run(args);
}

int run(std::vector<std::string> args) {
  CLI::App app{"salaud: saliency-map audits for skin-lesion classifiers on synthetic data"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", o.out, "output directory (default $SALAUD_OUT_DIR/<command>)");
    sub->add_option("--threads", o.threads, "worker cap; outputs do not depend on it")
        ->check(CLI::Range(1, 256))
        ->capture_default_str();
    sub->add_option("--seed", o.seed, "master seed")->capture_default_str();
  };

  auto* gen = app.add_subcommand("generate", "generate a synthetic dermoscopy dataset");
  add_common(gen);
  gen->add_option("--preset", o.preset, "clean, biased or imbalanced")->capture_default_str();
  gen->add_option("--naevi", o.naevi, "number of naevus images");
  gen->add_option("--melanoma", o.melanoma, "number of melanoma images");
  gen->add_option("--test-per-class", o.test_per_class, "held-out test images per class");
  gen->add_option("--size", o.size, "image side in pixels");
  gen->add_option("--irregularity", o.irregularity, "melanoma border irregularity");
  gen->add_option("--artifact-strength", o.artifact_strength, "dark-corner strength");
  gen->add_option("--p-naevus", o.p_naevus, "dark-corner probability for naevi");
  gen->add_option("--p-melanoma", o.p_melanoma, "dark-corner probability for melanoma");

  auto add_training = [&](CLI::App* sub) {
    sub->add_option("--data", o.data, "dataset directory")->required();
    sub->add_option("--optimizer", o.optimizer, "adam or sgd")->capture_default_str();
    sub->add_option("--lr", o.lr, "learning rate");
    sub->add_option("--momentum", o.momentum, "SGD momentum");
    sub->add_option("--beta1", o.beta1, "Adam beta1");
    sub->add_option("--beta2", o.beta2, "Adam beta2");
    sub->add_option("--epochs", o.epochs, "epochs");
    sub->add_option("--batch", o.batch, "batch size");
  };
  auto* tr = app.add_subcommand("train", "train one model on the train split");
  add_common(tr);
  add_training(tr);
  tr->add_option("--model-id", o.model_id, "model id")->capture_default_str();
  tr->add_option("--init-seed", o.init_seed, "initialization seed (default: --seed)");

  auto* su = app.add_subcommand("suite", "train a suite of models on random subsamples and hyperparameters");
  add_common(su);
  su->add_option("--data", o.data, "dataset directory")->required();
  su->add_option("--models", o.n_models, "number of models")->capture_default_str();
  su->add_option("--subsets", o.subsets, "number of balanced subsets (0 = one per model)")->capture_default_str();
  su->add_option("--per-class", o.per_class, "images per class in each subset (0 = auto)")->capture_default_str();
  su->add_option("--augment", o.augment, "minority augmentation factor (0 = match majority)")->capture_default_str();

  auto* exp = app.add_subcommand("explain", "explain one image with Grad-CAM or Kernel SHAP");
  add_common(exp);
  exp->add_option("--model", o.model, "model file")->required();
  exp->add_option("--data", o.data, "dataset directory");
  exp->add_option("--image-id", o.image_id, "image id within --data");
  exp->add_option("--image", o.image_png, "PNG image");
  o.ex.add(exp);

  auto* audit = app.add_subcommand("audit", "sanity checks and the spurious-correlation screen");
  audit->require_subcommand(1);
  auto add_audit = [&](CLI::App* sub, bool single_model) {
    add_common(sub);
    if (single_model) sub->add_option("--model", o.model, "model file")->required();
    sub->add_option("--data", o.data, "dataset directory")->required();
    sub->add_flag("--no-panels", o.no_panels, "skip PNG panels");
    o.ex.add(sub);
    o.img.add(sub);
  };
  auto* repro = audit->add_subcommand("repro", "recompute maps and compare them");
  add_audit(repro, true);
  repro->add_option("--repeats", o.repeats, "maps per image")->capture_default_str();
  auto* rnd = audit->add_subcommand("randomize", "progressive layer randomization");
  add_audit(rnd, true);
  rnd->add_option("--layers", o.layers, "top<N>, all, or comma separated layer ids")->capture_default_str();
  rnd->add_option("--mode", o.mode, "cascading or independent")->capture_default_str();
  auto* sens = audit->add_subcommand("sensitivity", "compare maps of equal-AUC models");
  add_audit(sens, false);
  sens->add_option("--models", o.models, "model files");
  sens->add_option("--suite", o.suite_dir, "suite output directory");
  sens->add_option("--tolerance", o.tolerance, "AUC tolerance")->capture_default_str();
  auto* spur = audit->add_subcommand("spurious", "dark-corner shortcut screen");
  add_audit(spur, false);
  spur->add_option("--biased", o.biased, "audited model file")->required();
  spur->add_option("--control", o.control, "control model file");
  spur->add_option("--corner-fraction", o.corner_fraction, "corner square side / min(H, W)")->capture_default_str();
  spur->add_option("--threshold", o.threshold, "verdict ratio")->capture_default_str();

  auto* ss = app.add_subcommand("ssim", "SSIM between two CSV maps");
  add_common(ss);
  ss->add_option("--a", o.map_a, "first map CSV")->required();
  ss->add_option("--b", o.map_b, "second map CSV")->required();
  ss->add_option("--window", o.window, "window side")->capture_default_str();
  ss->add_flag("--sliding", o.sliding, "stride-1 windows");
  ss->add_flag("--raw", o.raw, "skip min-max normalization");

  auto* rp = app.add_subcommand("replay", "re-run a command from its config.json echo");
  rp->add_option("config", o.replay_config, "config.json written by an earlier run")->required();
  rp->add_option("--out", o.out, "output directory");
  rp->add_option("--threads", o.threads, "worker cap")->check(CLI::Range(1, 256));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    check(salaud_set_threads(o.threads), "threads");
    if (*rp) return cmd_replay(o);
    if (*gen) {
      cmd_generate(o, prepare_out(o, "generate", args));
    } else if (*tr) {
      cmd_train(o, prepare_out(o, "train", args));
    } else if (*su) {
      cmd_suite(o, prepare_out(o, "suite", args));
    } else if (*exp) {
      cmd_explain(o, prepare_out(o, "explain", args));
    } else if (*repro) {
      cmd_audit_repro(o, prepare_out(o, "audit_repro", args));
    } else if (*rnd) {
      cmd_audit_randomize(o, prepare_out(o, "audit_randomize", args));
    } else if (*sens) {
      cmd_audit_sensitivity(o, prepare_out(o, "audit_sensitivity", args));
    } else if (*spur) {
      cmd_audit_spurious(o, prepare_out(o, "audit_spurious", args));
    } else if (*ss) {
      cmd_ssim(o, prepare_out(o, "ssim", args));
    }
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args);
}
