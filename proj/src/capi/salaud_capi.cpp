#include "salaud/salaud.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include "salaud/auditor.hpp"
#include "salaud/config.hpp"
#include "salaud/parallel.hpp"
#include "salaud/trainer.hpp"

using nlohmann::json;
using namespace salaud;

struct salaud_dataset {
  Dataset data;
};
struct salaud_model {
  ModelBundle bundle;
};
struct salaud_suite {
  std::vector<SuiteMember> members;
  SuiteSummary summary;
};
struct salaud_image {
  Tensor tensor;
};
struct salaud_map {
  SaliencyMap map;
};

namespace {

thread_local std::string g_last_error;

salaud_status status_of(ErrorCode c) { return static_cast<salaud_status>(static_cast<int>(c) + 1); }

template <typename Fn>
salaud_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return SALAUD_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception& e) {
    g_last_error = std::string("malformed JSON: ") + e.what();
    return SALAUD_ERR_FORMAT;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return SALAUD_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SALAUD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SALAUD_ERR_INTERNAL;
  }
}

template <typename T>
void need(const T* p, const char* name) {
  require(p != nullptr, ErrorCode::InvalidArgument, std::string(name) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put_json(char** out, const json& j) {
  if (out) *out = dup_string(j.dump(2));
}

std::vector<const LabeledImage*> select_images(const Dataset& ds, const char* selection_json) {
  const json sel = parse_json_text(selection_json, "image selection");
  require(sel.is_object(), ErrorCode::Config, "image selection must be a JSON object");
  for (const auto& [k, v] : sel.items()) {
    require(k == "split" || k == "label" || k == "ids" || k == "count" || k == "artifact", ErrorCode::Config,
            "unknown key '" + k + "' in image selection");
  }
  if (sel.contains("ids")) {
    std::vector<const LabeledImage*> out;
    for (const auto& id : sel.at("ids").get<std::vector<std::string>>()) {
      const LabeledImage* hit = nullptr;
      for (const auto& im : ds.images) {
        if (im.id == id) {
          hit = &im;
          break;
        }
      }
      require(hit != nullptr, ErrorCode::Index, "image '" + id + "' is not in the dataset");
      out.push_back(hit);
    }
    require(!out.empty(), ErrorCode::Config, "empty image id list");
    return out;
  }
  const std::string split = sel.value("split", std::string("test"));
  require(split == "test" || split == "train" || split == "all", ErrorCode::Config,
          "split must be train, test or all");
  const int label = sel.value("label", -1);
  require(label >= -1 && label <= 1, ErrorCode::Config, "label must be 0 or 1");
  std::vector<const LabeledImage*> by_class[2];
  for (const auto& im : ds.images) {
    if (split != "all" && (im.split == Split::Test) != (split == "test")) continue;
    if (label >= 0 && im.label != label) continue;
    if (sel.contains("artifact") && im.artifact != sel.at("artifact").get<bool>()) continue;
    by_class[im.label == kMelanoma ? 1 : 0].push_back(&im);
  }
  const std::size_t available = by_class[0].size() + by_class[1].size();
  std::size_t count = available;
  if (sel.contains("count")) {
    const int c = sel.at("count").get<int>();
    require(c >= 1, ErrorCode::Config, "count must be positive");
    require(static_cast<std::size_t>(c) <= available, ErrorCode::Size,
            "selection asks for " + std::to_string(c) + " images but only " + std::to_string(available) + " match");
    count = static_cast<std::size_t>(c);
  }
  // alternate classes so small selections cover both
  std::vector<const LabeledImage*> out;
  std::size_t i0 = 0, i1 = 0;
  while (out.size() < count) {
    if (i0 < by_class[0].size() && (out.size() % 2 == 0 || i1 >= by_class[1].size())) {
      out.push_back(by_class[0][i0++]);
    } else {
      out.push_back(by_class[1][i1++]);
    }
  }
  require(!out.empty(), ErrorCode::Size, "image selection matched no images");
  return out;
}

void write_panels(const char* panel_dir, const std::vector<const LabeledImage*>& images,
                  const std::vector<std::vector<SaliencyMap>>& maps) {
  if (panel_dir == nullptr || *panel_dir == '\0') return;
  const std::filesystem::path dir(panel_dir);
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < images.size(); ++i) {
    write_png(dir / (images[i]->id + ".png"), render_panel(images[i]->image, maps[i]));
  }
}

json history_json(const TrainHistory& h) { return json{{"epoch_loss", h.epoch_loss}}; }

}  // namespace

extern "C" {

const char* salaud_version(void) { return "1.0.0"; }

const char* salaud_status_name(salaud_status s) {
  switch (s) {
    case SALAUD_OK: return "ok";
    case SALAUD_ERR_INTERNAL: return "internal";
    default:
      if (s >= SALAUD_ERR_INVALID_ARGUMENT && s <= SALAUD_ERR_IO) return to_string(static_cast<ErrorCode>(s - 1));
      return "unknown";
  }
}

const char* salaud_last_error(void) { return g_last_error.c_str(); }

void salaud_free_string(char* s) { std::free(s); }

salaud_status salaud_set_threads(int threads) {
  return guarded([&] {
    require(threads >= 0, ErrorCode::InvalidArgument, "thread count must be non-negative");
    set_default_threads(threads == 0 ? 1 : threads);
  });
}

salaud_status salaud_default_config(const char* kind, char** json_out) {
  return guarded([&] {
    need(kind, "kind");
    need(json_out, "json_out");
    const std::string k = kind;
    json j;
    if (k == "generate") {
      j = GenConfig{};
    } else if (k == "train") {
      j = TrainConfig{}.to_json();
    } else if (k == "suite") {
      SuiteConfig c;
      j = suite_config_to_json(c);
    } else if (k == "explain") {
      ExplainSettings s;
      s.method = Method::KernelShap;
      j = s.to_json();
    } else if (k == "ssim") {
      j = SsimConfig{}.to_json();
    } else {
      fail(ErrorCode::Config, "unknown config kind '" + k + "'");
    }
    put_json(json_out, j);
  });
}

salaud_status salaud_dataset_generate(const char* config_json, salaud_dataset** out) {
  return guarded([&] {
    need(out, "out");
    const GenConfig cfg = parse_gen_config(parse_json_text(config_json, "generate config"));
    *out = new salaud_dataset{generate_dataset(cfg)};
  });
}

salaud_status salaud_dataset_write(const salaud_dataset* ds, const char* dir) {
  return guarded([&] {
    need(ds, "dataset");
    need(dir, "dir");
    write_dataset(ds->data, dir);
  });
}

salaud_status salaud_dataset_read(const char* dir, salaud_dataset** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    *out = new salaud_dataset{read_dataset(dir)};
  });
}

salaud_status salaud_dataset_size(const salaud_dataset* ds, size_t* count) {
  return guarded([&] {
    need(ds, "dataset");
    need(count, "count");
    *count = ds->data.images.size();
  });
}

salaud_status salaud_dataset_manifest(const salaud_dataset* ds, char** json_out) {
  return guarded([&] {
    need(ds, "dataset");
    need(json_out, "json_out");
    put_json(json_out, ds->data.manifest());
  });
}

salaud_status salaud_dataset_select(const salaud_dataset* ds, const char* selection_json, char** ids_json) {
  return guarded([&] {
    need(ds, "dataset");
    need(ids_json, "ids_json");
    json ids = json::array();
    for (const auto* im : select_images(ds->data, selection_json)) ids.push_back(im->id);
    put_json(ids_json, ids);
  });
}

salaud_status salaud_dataset_image(const salaud_dataset* ds, const char* image_id, salaud_image** out) {
  return guarded([&] {
    need(ds, "dataset");
    need(image_id, "image_id");
    need(out, "out");
    for (const auto& im : ds->data.images) {
      if (im.id == image_id) {
        *out = new salaud_image{im.image};
        return;
      }
    }
    fail(ErrorCode::Index, std::string("image '") + image_id + "' is not in the dataset");
  });
}

void salaud_dataset_free(salaud_dataset* ds) { delete ds; }

salaud_status salaud_image_read_png(const char* path, salaud_image** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new salaud_image{from_rgb(read_png(path))};
  });
}

salaud_status salaud_image_write_png(const salaud_image* image, const char* path) {
  return guarded([&] {
    need(image, "image");
    need(path, "path");
    write_png(path, to_rgb(image->tensor));
  });
}

salaud_status salaud_image_size(const salaud_image* image, int* height, int* width) {
  return guarded([&] {
    need(image, "image");
    if (height) *height = image->tensor.height();
    if (width) *width = image->tensor.width();
  });
}

void salaud_image_free(salaud_image* image) { delete image; }

salaud_status salaud_model_init(const char* model_id, const char* network_json, int height, int width,
                                uint64_t init_seed, salaud_model** out) {
  return guarded([&] {
    need(model_id, "model_id");
    need(out, "out");
    NetworkSpec spec;
    if (network_json != nullptr && *network_json != '\0') {
      spec = parse_json_text(network_json, "network spec").get<NetworkSpec>();
    } else {
      spec = NetworkSpec::toy(height, width);
    }
    spec.init_seed = init_seed;
    *out = new salaud_model{make_bundle(model_id, spec)};
  });
}

salaud_status salaud_model_train(const salaud_dataset* ds, const salaud_model* initial, const char* model_id,
                                 const char* train_json, salaud_model** out, char** history_out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    const TrainConfig cfg = parse_train_config(parse_json_text(train_json, "train config"));
    ModelBundle start;
    if (initial) {
      start = initial->bundle;
    } else {
      start = make_bundle("model", NetworkSpec::toy(ds->data.config.height, ds->data.config.width, cfg.seed));
    }
    if (model_id) start.model_id = model_id;
    TrainHistory h;
    ModelBundle trained = train(start, ds->data, cfg, &h);
    put_json(history_out, history_json(h));
    *out = new salaud_model{std::move(trained)};
  });
}

salaud_status salaud_model_save(const salaud_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    save_model(model->bundle, path);
  });
}

salaud_status salaud_model_load(const char* path, salaud_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new salaud_model{load_model(path)};
  });
}

salaud_status salaud_model_info(const salaud_model* model, char** json_out) {
  return guarded([&] {
    need(model, "model");
    need(json_out, "json_out");
    const ModelBundle& b = model->bundle;
    json layers = json::array();
    for (const Layer& l : b.network.layers()) {
      layers.push_back(json{{"id", l.layer_id},
                            {"kind", to_string(l.kind)},
                            {"input_shape", l.input_shape},
                            {"output_shape", l.output_shape},
                            {"parameters", l.has_parameters()}});
    }
    json j{{"model_id", b.model_id},
           {"spec", b.spec},
           {"layers", layers},
           {"weighted_layers_top_down", weighted_layers_top_down(b.network)},
           {"parameter_count", b.network.parameter_count()},
           {"train_seed", b.provenance.train_seed},
           {"subsample_id", b.provenance.subsample_id},
           {"hyperparameters", b.provenance.hyperparameters},
           {"dataset", b.provenance.dataset}};
    j["metrics"] = b.provenance.metrics ? json(*b.provenance.metrics) : json(nullptr);
    put_json(json_out, j);
  });
}

salaud_status salaud_model_evaluate(const salaud_model* model, const salaud_dataset* ds, char** metrics_json) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(metrics_json, "metrics_json");
    put_json(metrics_json, json(evaluate(model->bundle.network, ds->data.split(Split::Test))));
  });
}

salaud_status salaud_model_randomize_layer(const salaud_model* model, int layer_id, uint64_t seed, salaud_model** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    ModelBundle b = model->bundle;
    b.network = randomize_layer(b.network, layer_id, seed);
    b.provenance.metrics.reset();
    *out = new salaud_model{std::move(b)};
  });
}

salaud_status salaud_model_predict(const salaud_model* model, const salaud_image* image, double* p) {
  return guarded([&] {
    need(model, "model");
    need(image, "image");
    need(p, "melanoma_probability");
    const ActivationTrace t = forward_pass(model->bundle.network, image->tensor);
    *p = t.probabilities()[static_cast<std::size_t>(kMelanoma)];
  });
}

salaud_status salaud_model_equal(const salaud_model* a, const salaud_model* b, int* equal) {
  return guarded([&] {
    need(a, "a");
    need(b, "b");
    need(equal, "equal");
    *equal = a->bundle.network == b->bundle.network ? 1 : 0;
  });
}

void salaud_model_free(salaud_model* model) { delete model; }

salaud_status salaud_suite_train(const salaud_dataset* ds, const char* suite_json, salaud_suite** out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    const SuiteConfig cfg = parse_suite_config(parse_json_text(suite_json, "suite config"), ds->data.config.height,
                                               ds->data.config.width);
    auto* s = new salaud_suite{train_suite(ds->data, cfg), {}};
    try {
      s->summary = summarize_suite(s->members);
    } catch (...) {
      delete s;
      throw;
    }
    *out = s;
  });
}

salaud_status salaud_suite_size(const salaud_suite* suite, size_t* count) {
  return guarded([&] {
    need(suite, "suite");
    need(count, "count");
    *count = suite->members.size();
  });
}

salaud_status salaud_suite_model(const salaud_suite* suite, size_t index, salaud_model** out) {
  return guarded([&] {
    need(suite, "suite");
    need(out, "out");
    require(index < suite->members.size(), ErrorCode::Index,
            "suite member " + std::to_string(index) + " out of range (" + std::to_string(suite->members.size()) + ")");
    *out = new salaud_model{suite->members[index].bundle};
  });
}

salaud_status salaud_suite_summary(const salaud_suite* suite, char** json_out, char** csv_out) {
  return guarded([&] {
    need(suite, "suite");
    json j = suite->summary.to_json();
    json members = json::array();
    for (const auto& m : suite->members) {
      members.push_back(json{{"model_id", m.bundle.model_id},
                             {"subsample_id", m.bundle.provenance.subsample_id},
                             {"hyperparameters", m.config.to_json()},
                             {"init_seed", m.bundle.spec.init_seed}});
    }
    j["members"] = members;
    put_json(json_out, j);
    if (csv_out) *csv_out = dup_string(suite->summary.to_csv());
  });
}

void salaud_suite_free(salaud_suite* suite) { delete suite; }

salaud_status salaud_explain(const salaud_model* model, const salaud_image* image, const char* explain_json,
                             salaud_map** out, char** details_json) {
  return guarded([&] {
    need(model, "model");
    need(image, "image");
    need(out, "out");
    const ExplainSettings s = parse_explain_settings(parse_json_text(explain_json, "explain config"));
    const Network& net = model->bundle.network;
    json details;
    SaliencyMap map;
    if (s.method == Method::GradCam) {
      GradCamResult g = gradcam(net, image->tensor, s.target_class);
      details = json{{"method", "gradcam"},
                     {"target_class", s.target_class},
                     {"alphas", g.alphas},
                     {"feature_activation", g.feature_activation},
                     {"feature_height", g.feature_height},
                     {"feature_width", g.feature_width},
                     {"raw", g.raw}};
      map = std::move(g.map);
    } else {
      ShapConfig cfg = s.shap;
      if (cfg.threads == 0) cfg.threads = s.threads;
      const Segmentation seg = grid_segmentation(image->tensor, cfg.grid_k);
      const Attribution a = kernel_shap(net, image->tensor, seg, cfg);
      details = json{{"method", "kernel_shap"}, {"config", cfg.to_json()}, {"segments", seg.count},
                     {"attribution", a.to_json()}};
      map = attribution_to_map(a, seg);
    }
    map.model_id = model->bundle.model_id;
    map.target_class = s.target_class;
    if (details_json) put_json(details_json, details);
    *out = new salaud_map{std::move(map)};
  });
}

salaud_status salaud_map_create(int height, int width, const double* values, salaud_map** out) {
  return guarded([&] {
    need(out, "out");
    require(height > 0 && width > 0, ErrorCode::InputShape, "map dimensions must be positive");
    SaliencyMap m(height, width);
    if (values) std::copy(values, values + m.values.size(), m.values.begin());
    *out = new salaud_map{std::move(m)};
  });
}

salaud_status salaud_map_size(const salaud_map* map, int* height, int* width) {
  return guarded([&] {
    need(map, "map");
    if (height) *height = map->map.height;
    if (width) *width = map->map.width;
  });
}

salaud_status salaud_map_values(const salaud_map* map, const double** values) {
  return guarded([&] {
    need(map, "map");
    need(values, "values");
    *values = map->map.values.data();
  });
}

salaud_status salaud_map_to_json(const salaud_map* map, char** json_out) {
  return guarded([&] {
    need(map, "map");
    need(json_out, "json_out");
    put_json(json_out, map_to_json(map->map));
  });
}

salaud_status salaud_map_write_csv(const salaud_map* map, const char* path) {
  return guarded([&] {
    need(map, "map");
    need(path, "path");
    write_map_csv(map->map, path);
  });
}

salaud_status salaud_map_read_csv(const char* path, salaud_map** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new salaud_map{read_map_csv(path)};
  });
}

salaud_status salaud_map_render_overlay(const salaud_map* map, const salaud_image* image, const char* path) {
  return guarded([&] {
    need(map, "map");
    need(image, "image");
    need(path, "path");
    render_overlay(image->tensor, map->map, path);
  });
}

salaud_status salaud_ssim(const salaud_map* a, const salaud_map* b, const char* ssim_json, int normalize,
                          double* out) {
  return guarded([&] {
    need(a, "a");
    need(b, "b");
    need(out, "out");
    const SsimConfig cfg = parse_ssim_config(parse_json_text(ssim_json, "ssim config"));
    *out = normalize ? map_similarity(a->map, b->map, cfg) : ssim(a->map, b->map, cfg);
  });
}

salaud_status salaud_corner_mass_score(const salaud_map* map, double corner_fraction, double* out) {
  return guarded([&] {
    need(map, "map");
    need(out, "out");
    *out = corner_mass_score(map->map, corner_fraction);
  });
}

void salaud_map_free(salaud_map* map) { delete map; }

salaud_status salaud_audit_reproducibility(const salaud_model* model, const salaud_dataset* ds,
                                           const char* images_json, const char* explain_json, int n_repeats,
                                           const char* panel_dir, char** report_json) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(report_json, "report_json");
    const ExplainSettings s = parse_explain_settings(parse_json_text(explain_json, "explain config"));
    const auto images = select_images(ds->data, images_json);
    const SanityReport r = check_reproducibility(model->bundle.network, model->bundle.model_id, images, s, n_repeats);
    write_panels(panel_dir, images, r.maps);
    put_json(report_json, r.to_json());
  });
}

salaud_status salaud_audit_model_dependence(const salaud_model* model, const salaud_dataset* ds,
                                            const char* images_json, const char* explain_json, const char* layers,
                                            uint64_t seed, const char* mode, const char* panel_dir,
                                            char** report_json) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(report_json, "report_json");
    const ExplainSettings s = parse_explain_settings(parse_json_text(explain_json, "explain config"));
    const std::string m = mode ? mode : "cascading";
    require(m == "cascading" || m == "independent", ErrorCode::Config,
            "randomization mode must be cascading or independent");
    const auto ids = resolve_layer_selection(model->bundle.network, layers ? layers : "top5");
    const auto images = select_images(ds->data, images_json);
    const SanityReport r =
        check_model_dependence(model->bundle.network, model->bundle.model_id, images, s, ids, seed,
                               m == "cascading" ? RandomizationMode::Cascading : RandomizationMode::Independent);
    write_panels(panel_dir, images, r.maps);
    put_json(report_json, r.to_json());
  });
}

salaud_status salaud_audit_sensitivity(const salaud_model* const* models, size_t n_models, double auc_tolerance,
                                       const salaud_dataset* ds, const char* images_json, const char* explain_json,
                                       const char* panel_dir, char** report_json) {
  return guarded([&] {
    need(models, "models");
    need(ds, "dataset");
    need(report_json, "report_json");
    std::vector<const ModelBundle*> bundles;
    for (size_t i = 0; i < n_models; ++i) {
      need(models[i], "model");
      bundles.push_back(&models[i]->bundle);
    }
    const ExplainSettings s = parse_explain_settings(parse_json_text(explain_json, "explain config"));
    const auto images = select_images(ds->data, images_json);
    const SanityReport r = check_sensitivity(bundles, auc_tolerance, images, s);
    write_panels(panel_dir, images, r.maps);
    put_json(report_json, r.to_json());
  });
}

salaud_status salaud_audit_spurious(const salaud_model* biased, const salaud_model* control, const salaud_dataset* ds,
                                    const char* images_json, const char* explain_json, double corner_fraction,
                                    double threshold, const char* panel_dir, char** report_json) {
  return guarded([&] {
    need(biased, "biased");
    need(ds, "dataset");
    need(report_json, "report_json");
    const ExplainSettings s = parse_explain_settings(parse_json_text(explain_json, "explain config"));
    const auto images = select_images(ds->data, images_json);
    const SpuriousReport r =
        audit_spurious(biased->bundle, control ? &control->bundle : nullptr, images, s, corner_fraction, threshold);
    write_panels(panel_dir, images, r.maps);
    put_json(report_json, r.to_json());
  });
}

}  // extern "C"
