#include "salaud/auditor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "salaud/parallel.hpp"
#include "salaud/rng.hpp"

namespace salaud {

using nlohmann::json;

const char* to_string(Method m) { return m == Method::GradCam ? "gradcam" : "kernel_shap"; }

Method method_from_string(const std::string& name) {
  if (name == "gradcam" || name == "grad_cam" || name == "grad-cam") return Method::GradCam;
  if (name == "kernel_shap" || name == "kshap" || name == "shap") return Method::KernelShap;
  fail(ErrorCode::Config, "unknown explanation method '" + name + "' (expected gradcam or kshap)");
}

json ExplainSettings::to_json() const {
  json j{{"method", to_string(method)}, {"target_class", target_class}, {"ssim", ssim.to_json()}};
  if (method == Method::KernelShap) {
    ShapConfig s = shap;
    s.target_class = target_class;
    j["shap"] = s.to_json();
  }
  return j;
}

SaliencyMap explain_image(const Network& network, const Tensor& image, const ExplainSettings& settings) {
  if (settings.method == Method::GradCam) {
    SaliencyMap m = gradcam(network, image, settings.target_class).map;
    m.target_class = settings.target_class;
    return m;
  }
  ShapConfig cfg = settings.shap;
  cfg.target_class = settings.target_class;
  if (cfg.threads == 0) cfg.threads = settings.threads;
  const Segmentation seg = grid_segmentation(image, cfg.grid_k);
  SaliencyMap m = attribution_to_map(kernel_shap(network, image, seg, cfg), seg);
  m.target_class = settings.target_class;
  return m;
}

Stats describe(const std::vector<double>& values) {
  Stats s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

namespace {

json stats_json(const Stats& s) { return json{{"mean", s.mean}, {"stddev", s.stddev}, {"count", s.count}}; }

std::vector<std::string> ids_of(const std::vector<const LabeledImage*>& images) {
  std::vector<std::string> ids;
  ids.reserve(images.size());
  for (const auto* im : images) ids.push_back(im->id);
  return ids;
}

void require_images(const std::vector<const LabeledImage*>& images) {
  require(!images.empty(), ErrorCode::InvalidArgument, "audit needs at least one image");
  for (const auto* im : images) require(im != nullptr, ErrorCode::InvalidArgument, "null image in audit list");
}

// Runs fn(i) for every image, annotating failures with the image id. Kernel
// SHAP parallelizes internally, so images run one after another for it.
template <typename Fn>
void for_each_image(const std::vector<const LabeledImage*>& images, const ExplainSettings& settings, Fn&& fn) {
  const int threads = settings.method == Method::GradCam ? settings.threads : 1;
  parallel_for(
      images.size(),
      [&](std::size_t i) {
        try {
          fn(i);
        } catch (const Error& e) {
          throw Error(e.code(), "image " + images[i]->id + ": " + e.what());
        }
      },
      threads);
}

std::vector<double> flatten(const std::vector<std::vector<double>>& rows) {
  std::vector<double> all;
  for (const auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  return all;
}

}  // namespace

json SanityReport::to_json() const {
  json images = json::array();
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    json e{{"image_id", image_ids[i]}, {"ssim", per_image[i]}, {"stats", stats_json(describe(per_image[i]))}};
    if (check == "model_dependence") e["monotone"] = static_cast<bool>(monotone[i]);
    images.push_back(std::move(e));
  }
  json j{{"check", check}, {"method", to_string(method)}, {"ssim", stats_json(ssim)}, {"images", images},
         {"config", config}};
  if (check == "model_dependence") {
    j["mode"] = cascading ? "cascading" : "independent";
    j["layer_order"] = layer_order;
    j["stage_mean_ssim"] = stage_mean_ssim;
    j["degradation_pct"] = degradation_pct;
    j["incremental_pct"] = incremental_pct;
    j["monotone_fraction"] = monotone_fraction;
  }
  if (check == "sensitivity") {
    j["model_ids"] = model_ids;
    j["model_aucs"] = model_aucs;
    j["variation_of_mean"] = variation_of_mean;
    j["mean_per_image_variation"] = mean_per_image_variation;
    j["mean_worst_pair_variation"] = mean_worst_pair_variation;
  }
  return j;
}

SanityReport check_reproducibility(const Network& network, const std::string& model_id,
                                   const std::vector<const LabeledImage*>& images, const ExplainSettings& settings,
                                   int n_repeats, std::vector<std::uint64_t> seeds) {
  require(n_repeats >= 2, ErrorCode::Config, "reproducibility needs at least two repeats");
  require_images(images);
  if (seeds.empty()) {
    for (int r = 0; r < n_repeats; ++r) seeds.push_back(derive_seed(settings.shap.seed, static_cast<std::uint64_t>(r)));
  }
  require(static_cast<int>(seeds.size()) == n_repeats, ErrorCode::Config,
          "got " + std::to_string(seeds.size()) + " seeds for " + std::to_string(n_repeats) + " repeats");

  SanityReport rep;
  rep.check = "reproducibility";
  rep.method = settings.method;
  rep.image_ids = ids_of(images);
  rep.per_image.resize(images.size());
  rep.maps.resize(images.size());
  for_each_image(images, settings, [&](std::size_t i) {
    std::vector<SaliencyMap> maps;
    for (int r = 0; r < n_repeats; ++r) {
      ExplainSettings s = settings;
      s.shap.seed = seeds[static_cast<std::size_t>(r)];
      maps.push_back(explain_image(network, images[i]->image, s));
      maps.back().model_id = model_id;
    }
    for (int a = 0; a < n_repeats; ++a) {
      for (int b = a + 1; b < n_repeats; ++b) {
        rep.per_image[i].push_back(map_similarity(maps[static_cast<std::size_t>(a)],
                                                  maps[static_cast<std::size_t>(b)], settings.ssim));
      }
    }
    rep.maps[i] = std::move(maps);
  });
  rep.ssim = describe(flatten(rep.per_image));
  json seeds_json = json::array();
  for (auto s : seeds) seeds_json.push_back(s);
  rep.config = {{"model_id", model_id}, {"explain", settings.to_json()}, {"n_repeats", n_repeats},
                {"seeds", settings.method == Method::KernelShap ? seeds_json : json::array()},
                {"image_ids", rep.image_ids}};
  return rep;
}

std::vector<int> resolve_layer_selection(const Network& network, const std::string& selection) {
  const std::vector<int> weighted = weighted_layers_top_down(network);
  if (selection == "all") return weighted;
  if (selection.rfind("top", 0) == 0) {
    int n = 0;
    try {
      std::size_t used = 0;
      n = std::stoi(selection.substr(3), &used);
      require(used == selection.size() - 3, ErrorCode::Config, "");
    } catch (const std::exception&) {
      fail(ErrorCode::Config, "bad layer selection '" + selection + "'");
    }
    require(n >= 1 && n <= static_cast<int>(weighted.size()), ErrorCode::Config,
            "'" + selection + "' asks for " + std::to_string(n) + " layers but the network has " +
                std::to_string(weighted.size()) + " parameterized layers");
    return {weighted.begin(), weighted.begin() + n};
  }
  std::vector<int> ids;
  std::stringstream ss(selection);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      ids.push_back(std::stoi(item, &used));
      require(used == item.size(), ErrorCode::Config, "");
    } catch (const std::exception&) {
      fail(ErrorCode::Config, "bad layer id '" + item + "' in selection '" + selection + "'");
    }
  }
  require(!ids.empty(), ErrorCode::Config, "empty layer selection");
  return ids;
}

SanityReport check_model_dependence(const Network& network, const std::string& model_id,
                                    const std::vector<const LabeledImage*>& images, const ExplainSettings& settings,
                                    const std::vector<int>& layer_ids, std::uint64_t seed, RandomizationMode mode) {
  require(!layer_ids.empty(), ErrorCode::Config, "no layers to randomize");
  for (int id : layer_ids) {
    require(id >= 0 && id < network.layer_count(), ErrorCode::Index,
            "layer " + std::to_string(id) + " does not exist (network has " + std::to_string(network.layer_count()) +
                " layers)");
    require(network.layer(id).has_parameters(), ErrorCode::InvalidArgument,
            "layer " + std::to_string(id) + " (" + to_string(network.layer(id).kind) + ") has no parameters");
  }
  require_images(images);

  // stage 0 is the intact network
  std::vector<Network> stages{network};
  Network current = network;
  for (int id : layer_ids) {
    if (mode == RandomizationMode::Cascading) {
      current = randomize_layer(current, id, seed);
      stages.push_back(current);
    } else {
      stages.push_back(randomize_layer(network, id, seed));
    }
  }

  SanityReport rep;
  rep.check = "model_dependence";
  rep.method = settings.method;
  rep.cascading = mode == RandomizationMode::Cascading;
  rep.layer_order = layer_ids;
  rep.image_ids = ids_of(images);
  rep.per_image.resize(images.size());
  rep.maps.resize(images.size());
  rep.monotone.resize(images.size());
  for_each_image(images, settings, [&](std::size_t i) {
    std::vector<SaliencyMap> maps;
    for (const Network& net : stages) {
      maps.push_back(explain_image(net, images[i]->image, settings));
      maps.back().model_id = model_id;
    }
    for (const auto& m : maps) rep.per_image[i].push_back(map_similarity(maps.front(), m, settings.ssim));
    bool mono = true;
    for (std::size_t k = 1; k < rep.per_image[i].size(); ++k) {
      if (rep.per_image[i][k] > rep.per_image[i][k - 1] + 1e-12) mono = false;
    }
    rep.monotone[i] = mono;
    rep.maps[i] = std::move(maps);
  });

  const std::size_t n_stages = stages.size();
  rep.stage_mean_ssim.assign(n_stages, 0.0);
  for (std::size_t k = 0; k < n_stages; ++k) {
    double sum = 0.0;
    for (const auto& row : rep.per_image) sum += row[k];
    rep.stage_mean_ssim[k] = sum / static_cast<double>(images.size());
  }
  for (std::size_t k = 1; k < n_stages; ++k) {
    rep.degradation_pct.push_back(100.0 * (1.0 - rep.stage_mean_ssim[k]));
    rep.incremental_pct.push_back(100.0 * (rep.stage_mean_ssim[k - 1] - rep.stage_mean_ssim[k]));
  }
  std::vector<double> randomized;
  for (const auto& row : rep.per_image) randomized.insert(randomized.end(), row.begin() + 1, row.end());
  rep.ssim = describe(randomized);
  rep.monotone_fraction =
      static_cast<double>(std::count(rep.monotone.begin(), rep.monotone.end(), std::uint8_t{1})) /
      static_cast<double>(images.size());
  rep.config = {{"model_id", model_id},        {"explain", settings.to_json()},
                {"layer_order", layer_ids},    {"randomization_seed", seed},
                {"mode", rep.cascading ? "cascading" : "independent"},
                {"image_ids", rep.image_ids}};
  return rep;
}

std::vector<std::size_t> select_equal_auc(const std::vector<const ModelBundle*>& models, double auc_tolerance) {
  require(auc_tolerance >= 0.0, ErrorCode::Config, "AUC tolerance must be non-negative");
  std::vector<std::size_t> order;
  std::vector<double> auc(models.size());
  std::string listing;
  for (std::size_t i = 0; i < models.size(); ++i) {
    require(models[i] != nullptr, ErrorCode::InvalidArgument, "null model in sensitivity list");
    const auto& m = models[i]->provenance.metrics;
    require(m.has_value(), ErrorCode::Selection, "model " + models[i]->model_id + " has no recorded test metrics");
    auc[i] = m->auc;
    order.push_back(i);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%s=%.4f", listing.empty() ? "" : ", ", models[i]->model_id.c_str(), auc[i]);
    listing += buf;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return auc[a] < auc[b]; });
  std::size_t best_lo = 0, best_len = 0;
  double best_spread = 0.0;
  for (std::size_t lo = 0, hi = 0; lo < order.size(); ++lo) {
    if (hi < lo) hi = lo;
    while (hi + 1 < order.size() && auc[order[hi + 1]] - auc[order[lo]] <= auc_tolerance + 1e-12) ++hi;
    const std::size_t len = hi - lo + 1;
    const double spread = auc[order[hi]] - auc[order[lo]];
    if (len > best_len || (len == best_len && spread < best_spread)) {
      best_lo = lo;
      best_len = len;
      best_spread = spread;
    }
  }
  if (best_len < 2) {
    fail(ErrorCode::Selection, "no two models have test AUCs within " + std::to_string(auc_tolerance) +
                                   " of each other; available: " + (listing.empty() ? "none" : listing));
  }
  std::vector<std::size_t> group(order.begin() + static_cast<std::ptrdiff_t>(best_lo),
                                 order.begin() + static_cast<std::ptrdiff_t>(best_lo + best_len));
  std::sort(group.begin(), group.end());
  return group;
}

SanityReport check_sensitivity(const std::vector<const ModelBundle*>& models, double auc_tolerance,
                               const std::vector<const LabeledImage*>& images, const ExplainSettings& settings) {
  const std::vector<std::size_t> group = select_equal_auc(models, auc_tolerance);
  require_images(images);
  SanityReport rep;
  rep.check = "sensitivity";
  rep.method = settings.method;
  rep.image_ids = ids_of(images);
  for (std::size_t g : group) {
    rep.model_ids.push_back(models[g]->model_id);
    rep.model_aucs.push_back(models[g]->provenance.metrics->auc);
  }
  rep.per_image.resize(images.size());
  rep.maps.resize(images.size());
  for_each_image(images, settings, [&](std::size_t i) {
    std::vector<SaliencyMap> maps;
    for (std::size_t g : group) {
      maps.push_back(explain_image(models[g]->network, images[i]->image, settings));
      maps.back().model_id = models[g]->model_id;
    }
    for (std::size_t a = 0; a < maps.size(); ++a) {
      for (std::size_t b = a + 1; b < maps.size(); ++b) {
        rep.per_image[i].push_back(map_similarity(maps[a], maps[b], settings.ssim));
      }
    }
    rep.maps[i] = std::move(maps);
  });
  rep.ssim = describe(flatten(rep.per_image));
  rep.variation_of_mean = 1.0 - rep.ssim.mean;
  double per_image = 0.0, worst = 0.0;
  for (const auto& row : rep.per_image) {
    per_image += 1.0 - describe(row).mean;
    worst += 1.0 - *std::min_element(row.begin(), row.end());
  }
  rep.mean_per_image_variation = per_image / static_cast<double>(images.size());
  rep.mean_worst_pair_variation = worst / static_cast<double>(images.size());
  rep.config = {{"model_ids", rep.model_ids},
                {"model_aucs", rep.model_aucs},
                {"auc_tolerance", auc_tolerance},
                {"explain", settings.to_json()},
                {"image_ids", rep.image_ids}};
  return rep;
}

double corner_mass_score(const SaliencyMap& map, double corner_fraction) {
  require(corner_fraction > 0.0 && corner_fraction < 0.5, ErrorCode::Config, "corner fraction must lie in (0, 0.5)");
  require(map.height > 0 && map.width > 0 && map.values.size() == static_cast<std::size_t>(map.height) * map.width,
          ErrorCode::InputShape, "malformed saliency map");
  const int side = std::max(1, static_cast<int>(std::floor(corner_fraction * std::min(map.height, map.width))));
  double total = 0.0, corners = 0.0;
  for (int y = 0; y < map.height; ++y) {
    const bool edge_y = y < side || y >= map.height - side;
    for (int x = 0; x < map.width; ++x) {
      const double v = map.at(y, x);
      if (!(v > 0.0)) continue;
      total += v;
      if (edge_y && (x < side || x >= map.width - side)) corners += v;
    }
  }
  return total > 0.0 ? corners / total : 0.0;
}

json SpuriousReport::to_json() const {
  json images = json::array();
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    json e{{"image_id", image_ids[i]}, {"biased", biased_scores[i]}};
    if (has_control) e["control"] = control_scores[i];
    images.push_back(std::move(e));
  }
  json j{{"check", "spurious"},
         {"method", to_string(method)},
         {"corner_fraction", corner_fraction},
         {"threshold", threshold},
         {"biased_model", biased_model_id},
         {"biased_mean", biased_mean},
         {"images", images},
         {"config", config}};
  if (has_control) {
    j["control_model"] = control_model_id;
    j["control_mean"] = control_mean;
    j["verdict"] = verdict;
  } else {
    j["verdict"] = nullptr;
  }
  return j;
}

SpuriousReport audit_spurious(const ModelBundle& biased, const ModelBundle* control,
                              const std::vector<const LabeledImage*>& images, const ExplainSettings& settings,
                              double corner_fraction, double threshold) {
  require_images(images);
  require(threshold > 0.0, ErrorCode::Config, "verdict threshold must be positive");
  require(corner_fraction > 0.0 && corner_fraction < 0.5, ErrorCode::Config, "corner fraction must lie in (0, 0.5)");
  SpuriousReport rep;
  rep.method = settings.method;
  rep.corner_fraction = corner_fraction;
  rep.threshold = threshold;
  rep.image_ids = ids_of(images);
  rep.biased_model_id = biased.model_id;
  rep.has_control = control != nullptr;
  if (control) rep.control_model_id = control->model_id;
  rep.biased_scores.assign(images.size(), 0.0);
  if (control) rep.control_scores.assign(images.size(), 0.0);
  rep.maps.resize(images.size());
  for_each_image(images, settings, [&](std::size_t i) {
    SaliencyMap mb = explain_image(biased.network, images[i]->image, settings);
    mb.model_id = biased.model_id;
    rep.biased_scores[i] = corner_mass_score(mb, corner_fraction);
    rep.maps[i].push_back(std::move(mb));
    if (control) {
      SaliencyMap mc = explain_image(control->network, images[i]->image, settings);
      mc.model_id = control->model_id;
      rep.control_scores[i] = corner_mass_score(mc, corner_fraction);
      rep.maps[i].push_back(std::move(mc));
    }
  });
  rep.biased_mean = describe(rep.biased_scores).mean;
  if (control) {
    rep.control_mean = describe(rep.control_scores).mean;
    rep.verdict = rep.biased_mean > 0.0 && rep.biased_mean >= threshold * rep.control_mean;
  }
  rep.config = {{"biased_model", biased.model_id},
                {"control_model", control ? json(control->model_id) : json(nullptr)},
                {"explain", settings.to_json()},
                {"corner_fraction", corner_fraction},
                {"threshold", threshold},
                {"image_ids", rep.image_ids}};
  return rep;
}

RgbImage render_panel(const Tensor& image, const std::vector<SaliencyMap>& maps) {
  std::vector<RgbImage> tiles{to_rgb(image)};
  for (const auto& m : maps) tiles.push_back(overlay(image, m));
  return hconcat(tiles);
}

}  // namespace salaud
