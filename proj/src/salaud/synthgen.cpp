#include "salaud/synthgen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "salaud/png_io.hpp"
#include "salaud/rng.hpp"

namespace salaud {

using nlohmann::json;

namespace {

constexpr double kPi = 3.141592653589793;
constexpr double kVignetteStart = 0.7;

using Rgb = std::array<double, 3>;

// Melanoma palette: dark brown, light brown, blue-grey, near black.
constexpr std::array<Rgb, 4> kMelanomaTones{{
    {0.34, 0.20, 0.14},
    {0.62, 0.43, 0.31},
    {0.36, 0.34, 0.44},
    {0.17, 0.13, 0.13},
}};

const char* class_dir(int label) { return label == kMelanoma ? "melanoma" : "naevus"; }
const char* split_name(Split s) { return s == Split::Test ? "test" : "train"; }

std::string image_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "img%05d", index);
  return buf;
}

}  // namespace

GenConfig GenConfig::preset(std::string_view name) {
  GenConfig c;
  if (name == "clean") return c;
  if (name == "biased") {
    c.artifact = ArtifactSpec{ArtifactKind::DarkCorners, 0.7, 0.1, 0.9};
    return c;
  }
  if (name == "imbalanced") {
    c.n_naevus = 540;
    c.n_melanoma = 61;
    c.test_per_class = 20;
    return c;
  }
  fail(ErrorCode::Config, "unknown dataset preset '" + std::string(name) + "' (clean, biased, imbalanced)");
}

void GenConfig::validate() const {
  require(height >= 8 && width >= 8, ErrorCode::Config, "image size must be at least 8x8");
  require(n_naevus >= 0 && n_melanoma >= 0, ErrorCode::Config, "class counts must be non-negative");
  require(n_naevus + n_melanoma > 0, ErrorCode::Config, "dataset would be empty");
  require(test_per_class >= 0, ErrorCode::Config, "test_per_class must be non-negative");
  if (test_per_class > 0) {
    require(n_naevus > test_per_class && n_melanoma > test_per_class, ErrorCode::Config,
            "balanced test split of " + std::to_string(test_per_class) +
                " per class needs more images of each class (naevi " + std::to_string(n_naevus) + ", melanoma " +
                std::to_string(n_melanoma) + ")");
  }
  require(radius_min > 0.0 && radius_min <= radius_max && radius_max < 0.5, ErrorCode::Config,
          "lesion radius range must satisfy 0 < min <= max < 0.5");
  require(irregularity >= 0.0 && irregularity < 1.0, ErrorCode::Config, "irregularity must be in [0,1)");
  require(melanoma_tones_min >= 1 && melanoma_tones_min <= melanoma_tones_max &&
              melanoma_tones_max <= static_cast<int>(kMelanomaTones.size()),
          ErrorCode::Config, "melanoma tone count range must lie in [1,4]");
  const auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  require(prob(artifact.strength) && prob(artifact.p_naevus) && prob(artifact.p_melanoma), ErrorCode::Config,
          "artifact strength and probabilities must lie in [0,1]");
}

void to_json(json& j, const GenConfig& c) {
  j = json{{"height", c.height},
           {"width", c.width},
           {"n_naevus", c.n_naevus},
           {"n_melanoma", c.n_melanoma},
           {"test_per_class", c.test_per_class},
           {"radius_min", c.radius_min},
           {"radius_max", c.radius_max},
           {"irregularity", c.irregularity},
           {"melanoma_tones_min", c.melanoma_tones_min},
           {"melanoma_tones_max", c.melanoma_tones_max},
           {"artifact",
            {{"kind", c.artifact.kind == ArtifactKind::DarkCorners ? "dark_corners" : "none"},
             {"strength", c.artifact.strength},
             {"p_naevus", c.artifact.p_naevus},
             {"p_melanoma", c.artifact.p_melanoma}}},
           {"seed", c.seed}};
}

void from_json(const json& j, GenConfig& c) {
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.n_naevus = j.at("n_naevus").get<int>();
  c.n_melanoma = j.at("n_melanoma").get<int>();
  c.test_per_class = j.at("test_per_class").get<int>();
  c.radius_min = j.at("radius_min").get<double>();
  c.radius_max = j.at("radius_max").get<double>();
  c.irregularity = j.at("irregularity").get<double>();
  c.melanoma_tones_min = j.at("melanoma_tones_min").get<int>();
  c.melanoma_tones_max = j.at("melanoma_tones_max").get<int>();
  const json& a = j.at("artifact");
  c.artifact.kind = a.at("kind").get<std::string>() == "dark_corners" ? ArtifactKind::DarkCorners : ArtifactKind::None;
  c.artifact.strength = a.at("strength").get<double>();
  c.artifact.p_naevus = a.at("p_naevus").get<double>();
  c.artifact.p_melanoma = a.at("p_melanoma").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

void apply_dark_corners(Tensor& image, double strength) {
  const int h = image.height(), w = image.width();
  const double cy = h / 2.0, cx = w / 2.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dy = (y + 0.5 - cy) / cy;
      const double dx = (x + 0.5 - cx) / cx;
      const double r = std::sqrt(dx * dx + dy * dy) / std::sqrt(2.0);
      const double factor = 1.0 - strength * std::max(0.0, r - kVignetteStart) / (1.0 - kVignetteStart);
      for (int c = 0; c < image.channels(); ++c) {
        image.at(c, y, x) = static_cast<float>(image.at(c, y, x) * factor);
      }
    }
  }
}

LabeledImage render_image(const GenConfig& cfg, int index, int label) {
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(index)));
  const int h = cfg.height, w = cfg.width;
  const double side = std::min(h, w);

  Rgb skin{0.86, 0.66, 0.56};
  const double shade = rng.uniform(-0.06, 0.06);
  for (double& s : skin) s = std::clamp(s + shade + rng.uniform(-0.03, 0.03), 0.0, 1.0);

  const double cy = h / 2.0 + rng.uniform(-0.08, 0.08) * side;
  const double cx = w / 2.0 + rng.uniform(-0.08, 0.08) * side;
  const double ra = rng.uniform(cfg.radius_min, cfg.radius_max) * side;
  const double rb = rng.uniform(cfg.radius_min, cfg.radius_max) * side;
  const double tilt = rng.uniform(0.0, kPi);

  double amp = 0.0;
  std::array<double, 3> phase{};
  if (label == kMelanoma) amp = cfg.irregularity * rng.uniform(0.6, 1.0);
  for (double& p : phase) p = rng.uniform(0.0, 2.0 * kPi);

  // Tone patches: Voronoi cells around seed points inside the lesion.
  std::vector<Rgb> tones;
  std::vector<std::array<double, 2>> centres;
  const double darkness = rng.uniform(0.85, 1.1);
  if (label == kMelanoma) {
    std::array<int, 4> order{0, 1, 2, 3};
    for (int i = 3; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[rng.below(static_cast<std::uint64_t>(i) + 1)]);
    const int n = rng.range(cfg.melanoma_tones_min, cfg.melanoma_tones_max);
    for (int t = 0; t < n; ++t) {
      Rgb tone = kMelanomaTones[static_cast<std::size_t>(order[static_cast<std::size_t>(t)])];
      for (double& v : tone) v *= darkness;
      tones.push_back(tone);
      const double a = rng.uniform(0.0, 2.0 * kPi);
      const double rr = rng.uniform(0.0, 0.6);
      centres.push_back({cy + rr * ra * std::sin(a), cx + rr * rb * std::cos(a)});
    }
  } else {
    Rgb tone{0.52, 0.33, 0.22};
    for (double& v : tone) v *= darkness;
    tones.push_back(tone);
    centres.push_back({cy, cx});
  }

  Tensor img({3, h, w});
  const double ct = std::cos(tilt), st = std::sin(tilt);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double py = y + 0.5 - cy, px = x + 0.5 - cx;
      const double u = px * ct + py * st;
      const double v = -px * st + py * ct;
      const double phi = std::atan2(v, u);
      const double ellipse = std::hypot(u / rb, v / ra);  // 1 on the unperturbed boundary
      const double bump = 1.0 + amp * (0.5 * std::sin(3.0 * phi + phase[0]) + 0.3 * std::sin(5.0 * phi + phase[1]) +
                                       0.2 * std::sin(8.0 * phi + phase[2]));
      const double mean_r = 0.5 * (ra + rb);
      const double alpha = std::clamp((bump - ellipse) * mean_r + 0.5, 0.0, 1.0);

      std::size_t nearest = 0;
      double best = 1e300;
      for (std::size_t t = 0; t < centres.size(); ++t) {
        const double d = std::hypot(y + 0.5 - centres[t][0], x + 0.5 - centres[t][1]);
        if (d < best) {
          best = d;
          nearest = t;
        }
      }
      for (int c = 0; c < 3; ++c) {
        const double noise = rng.uniform(-0.015, 0.015);
        const double value = (1.0 - alpha) * skin[static_cast<std::size_t>(c)] +
                             alpha * tones[nearest][static_cast<std::size_t>(c)] + noise;
        img.at(c, y, x) = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }

  bool artifact = false;
  if (cfg.artifact.kind == ArtifactKind::DarkCorners) {
    const double p = label == kMelanoma ? cfg.artifact.p_melanoma : cfg.artifact.p_naevus;
    artifact = rng.bernoulli(p);
    if (artifact) apply_dark_corners(img, cfg.artifact.strength);
  }
  quantize_8bit(img);
  return LabeledImage{image_id(index), std::move(img), label, artifact, Split::Train, ""};
}

Dataset generate_dataset(const GenConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  const int total = config.n_naevus + config.n_melanoma;
  ds.images.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    const int label = i < config.n_naevus ? kNaevus : kMelanoma;
    LabeledImage img = render_image(config, i, label);
    const int rank_in_class = label == kNaevus ? i : i - config.n_naevus;
    img.split = rank_in_class < config.test_per_class ? Split::Test : Split::Train;
    ds.images.push_back(std::move(img));
  }
  return ds;
}

std::vector<const LabeledImage*> Dataset::split(Split s) const {
  std::vector<const LabeledImage*> out;
  for (const auto& img : images) {
    if (img.split == s) out.push_back(&img);
  }
  return out;
}

std::vector<const LabeledImage*> Dataset::split(Split s, int label) const {
  std::vector<const LabeledImage*> out;
  for (const auto& img : images) {
    if (img.split == s && img.label == label) out.push_back(&img);
  }
  return out;
}

json Dataset::manifest() const {
  json records = json::array();
  for (const auto& img : images) {
    records.push_back(json{{"id", img.id},
                           {"label", img.label},
                           {"artifact_flag", img.artifact},
                           {"split", split_name(img.split)},
                           {"lineage", img.lineage},
                           {"path", std::string("data/") + split_name(img.split) + "/" + class_dir(img.label) + "/" +
                                        img.id + ".png"}});
  }
  return json{{"config", config}, {"images", records}};
}

const char* to_string(Dihedral t) {
  switch (t) {
    case Dihedral::Identity: return "id";
    case Dihedral::Rot90: return "r90";
    case Dihedral::Rot180: return "r180";
    case Dihedral::Rot270: return "r270";
    case Dihedral::FlipH: return "fh";
    case Dihedral::FlipV: return "fv";
    case Dihedral::Transpose: return "tr";
    case Dihedral::AntiTranspose: return "atr";
  }
  return "?";
}

Tensor apply_transform(const Tensor& image, Dihedral t) {
  const int c = image.channels(), h = image.height(), w = image.width();
  const bool swaps = t == Dihedral::Rot90 || t == Dihedral::Rot270 || t == Dihedral::Transpose ||
                     t == Dihedral::AntiTranspose;
  require(!swaps || h == w, ErrorCode::InputShape, "rotations by 90 degrees need square images");
  Tensor out(image.shape());
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int sy = y, sx = x;  // output (y,x) reads source (sy,sx)
        switch (t) {
          case Dihedral::Identity: break;
          case Dihedral::Rot90: sy = w - 1 - x; sx = y; break;
          case Dihedral::Rot180: sy = h - 1 - y; sx = w - 1 - x; break;
          case Dihedral::Rot270: sy = x; sx = h - 1 - y; break;
          case Dihedral::FlipH: sx = w - 1 - x; break;
          case Dihedral::FlipV: sy = h - 1 - y; break;
          case Dihedral::Transpose: sy = x; sx = y; break;
          case Dihedral::AntiTranspose: sy = w - 1 - x; sx = h - 1 - y; break;
        }
        out.at(ch, y, x) = image.at(ch, sy, sx);
      }
    }
  }
  return out;
}

std::vector<LabeledImage> augment(const LabeledImage& image, std::uint64_t seed, int count) {
  require(image.image.rank() == 3 && (image.label == kNaevus || image.label == kMelanoma), ErrorCode::InvalidArgument,
          "augment needs a labeled CxHxW image");
  std::vector<Dihedral> ops{Dihedral::FlipH, Dihedral::FlipV, Dihedral::Rot180};
  if (image.image.height() == image.image.width()) {
    ops.insert(ops.end(), {Dihedral::Rot90, Dihedral::Rot270, Dihedral::Transpose, Dihedral::AntiTranspose});
  }
  Rng rng(seed);
  rng.shuffle(ops);
  const std::size_t n = std::min(ops.size(), static_cast<std::size_t>(std::max(0, count)));
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledImage aug = image;
    aug.image = apply_transform(image.image, ops[i]);
    aug.id = image.id + "_" + to_string(ops[i]);
    aug.lineage = (image.lineage.empty() ? image.id : image.lineage) + ":" + to_string(ops[i]);
    out.push_back(std::move(aug));
  }
  return out;
}

Dataset augment_minority(const Dataset& dataset, double factor, std::uint64_t seed) {
  require(factor >= 1.0 && factor <= 8.0, ErrorCode::Config, "augmentation factor must lie in [1, 8]");
  const auto naevi = dataset.split(Split::Train, kNaevus);
  const auto melanoma = dataset.split(Split::Train, kMelanoma);
  const int minority = melanoma.size() <= naevi.size() ? kMelanoma : kNaevus;
  const auto& sources = minority == kMelanoma ? melanoma : naevi;
  require(!sources.empty(), ErrorCode::Size, "minority class has no training images to augment");
  const std::size_t target = static_cast<std::size_t>(std::lround(factor * static_cast<double>(sources.size())));

  Dataset out = dataset;
  std::size_t have = sources.size();
  // Round-robin over sources, one new transform each pass.
  std::vector<std::vector<LabeledImage>> pending(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) pending[i] = augment(*sources[i], derive_seed(seed, i));
  for (std::size_t pass = 0; have < target; ++pass) {
    bool any = false;
    for (std::size_t i = 0; i < sources.size() && have < target; ++i) {
      if (pass < pending[i].size()) {
        out.images.push_back(pending[i][pass]);
        ++have;
        any = true;
      }
    }
    if (!any) break;
  }
  return out;
}

Dataset subsample_balanced(const Dataset& dataset, int n_per_class, std::uint64_t seed) {
  require(n_per_class >= 1, ErrorCode::Size, "n_per_class must be positive");
  Dataset out;
  out.config = dataset.config;
  for (const auto& img : dataset.images) {
    if (img.split == Split::Test) out.images.push_back(img);
  }
  for (int label : {kNaevus, kMelanoma}) {
    auto pool = dataset.split(Split::Train, label);
    require(pool.size() >= static_cast<std::size_t>(n_per_class), ErrorCode::Size,
            std::string("class ") + class_dir(label) + " has " + std::to_string(pool.size()) +
                " training images, fewer than the requested " + std::to_string(n_per_class));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
    // Partial Fisher-Yates, then restore dataset order for the chosen subset.
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < static_cast<std::size_t>(n_per_class); ++i) {
      std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    }
    idx.resize(static_cast<std::size_t>(n_per_class));
    std::sort(idx.begin(), idx.end());
    for (std::size_t i : idx) out.images.push_back(*pool[i]);
  }
  return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* s : {"train", "test"}) {
    for (const char* c : {"naevus", "melanoma"}) {
      fs::create_directories(root / "data" / s / c, ec);
      require(!ec, ErrorCode::Io, "cannot create " + (root / "data" / s / c).string() + ": " + ec.message());
    }
  }
  for (const auto& img : dataset.images) {
    write_png(root / "data" / split_name(img.split) / class_dir(img.label) / (img.id + ".png"), to_rgb(img.image));
  }
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + (root / "manifest.json").string());
  out << dataset.manifest().dump(2) << "\n";
}

Dataset read_dataset(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  require(static_cast<bool>(in), ErrorCode::Io, "no dataset manifest at " + (root / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
    Dataset ds;
    ds.config = manifest.at("config").get<GenConfig>();
    for (const json& r : manifest.at("images")) {
      LabeledImage img;
      img.id = r.at("id").get<std::string>();
      img.label = r.at("label").get<int>();
      img.artifact = r.at("artifact_flag").get<bool>();
      img.split = r.at("split").get<std::string>() == "test" ? Split::Test : Split::Train;
      img.lineage = r.at("lineage").get<std::string>();
      img.image = from_rgb(read_png(root / r.at("path").get<std::string>()));
      ds.images.push_back(std::move(img));
    }
    return ds;
  } catch (const json::exception& e) {
    fail(ErrorCode::Format, "malformed dataset manifest " + (root / "manifest.json").string() + ": " + e.what());
  }
}

}  // namespace salaud
