#include "bl/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bl/error.hpp"
#include "bl/pgm.hpp"
#include "bl/rng.hpp"
#include "bl/tensor_io.hpp"

namespace bl {

namespace fs = std::filesystem;

Tensor SegmentationSample::mask() const { return one_hot_mask(labels, categories); }

std::vector<std::string> Dataset::categories() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& s : samples)
    for (const auto& c : s.categories)
      if (seen.insert(c).second) out.push_back(c);
  return out;
}

const std::vector<std::string>& pascal_universe() {
  static const std::vector<std::string> names = {
      "aeroplane",   "bicycle", "bird",  "boat",       "bottle",     //
      "bus",         "car",     "cat",   "chair",      "cow",        //
      "diningtable", "dog",     "horse", "motor-bike", "person",     //
      "potted plant", "sheep",  "sofa",  "train",      "tv/monitor",
  };
  return names;
}

namespace {

constexpr std::array<const char*, 5> kHues = {"red", "green", "blue", "yellow", "purple"};
constexpr std::array<std::array<double, 3>, 5> kHueRgb = {{
    {0.85, 0.15, 0.15},
    {0.15, 0.70, 0.20},
    {0.15, 0.25, 0.85},
    {0.85, 0.80, 0.15},
    {0.60, 0.15, 0.75},
}};
constexpr std::array<const char*, 4> kModifiers = {"pale", "dark", "vivid", "dusty"};

std::size_t modifier_of(std::size_t index) { return (index / 5 + index % 5) % 4; }

}  // namespace

std::vector<std::string> synthetic_universe(std::size_t size) {
  if (size == 0 || size > 20) throw Error(ErrorCode::BadConfig, "synthetic universe size must be in [1, 20]");
  std::vector<std::string> names;
  for (std::size_t k = 0; k < size; ++k) {
    names.push_back(std::string(kModifiers[modifier_of(k)]) + " " + kHues[k % 5]);
  }
  return names;
}

std::vector<double> synthetic_colour(std::size_t category_index) {
  if (category_index >= 20) throw Error(ErrorCode::BadConfig, "synthetic category index out of range");
  const auto& c = kHueRgb[category_index % 5];
  std::vector<double> out(c.begin(), c.end());
  const double mean = (c[0] + c[1] + c[2]) / 3.0;
  for (double& v : out) {
    switch (modifier_of(category_index)) {
      case 0: v = 0.45 * v + 0.55; break;
      case 1: v = 0.45 * v; break;
      case 2: v = std::clamp(1.25 * (v - mean) + mean, 0.0, 1.0); break;
      default: v = 0.55 * v + 0.225; break;
    }
  }
  return out;
}

std::size_t synthetic_shape_family(std::size_t category_index) { return category_index % 4; }

bool FoldSpec::is_test(const std::string& category) const {
  return std::find(test_categories.begin(), test_categories.end(), category) != test_categories.end();
}

bool FoldSpec::is_train(const std::string& category) const {
  return std::find(train_categories.begin(), train_categories.end(), category) != train_categories.end();
}

FoldSpec make_fold(std::size_t i, const std::vector<std::string>& universe) {
  if (i >= 4) throw Error(ErrorCode::BadFoldIndex, "fold index " + std::to_string(i) + " not in 0..3");
  if (universe.size() != 20) {
    throw Error(ErrorCode::BadUniverse, "universe needs 20 categories, got " + std::to_string(universe.size()));
  }
  std::set<std::string> distinct(universe.begin(), universe.end());
  if (distinct.size() != 20 || distinct.count("")) throw Error(ErrorCode::BadUniverse, "universe names must be distinct and non-empty");
  FoldSpec fold;
  fold.index = i;
  for (std::size_t k = 0; k < 20; ++k) {
    (k / 5 == i ? fold.test_categories : fold.train_categories).push_back(universe[k]);
  }
  return fold;
}

std::string folds_json(const std::vector<std::string>& universe) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < 4; ++i) {
    const FoldSpec f = make_fold(i, universe);
    out.push_back({{"fold", i}, {"test", f.test_categories}, {"train", f.train_categories}});
  }
  return out.dump(2);
}

Tensor one_hot_mask(const LabelMap& labels, const std::vector<std::string>& categories) {
  const std::size_t c = categories.size();
  if (c == 0) throw Error(ErrorCode::EmptyCategory, "one_hot_mask needs at least one category");
  std::vector<double> out(labels.size() * c, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::int32_t l = labels.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) > c) {
      throw Error(ErrorCode::UnknownLabel, "label " + std::to_string(l) + " with " + std::to_string(c) + " categories");
    }
    if (l > 0) out[i * c + static_cast<std::size_t>(l - 1)] = 1.0;
  }
  return Tensor::create({labels.h, labels.w, c}, std::move(out));
}

void SyntheticConfig::validate() const {
  if (num_images == 0 || height == 0 || width == 0 || universe_size == 0 || shapes_per_image == 0) {
    throw Error(ErrorCode::BadConfig, "synthetic: counts and sizes must be positive");
  }
  if (universe_size > 20) throw Error(ErrorCode::BadConfig, "synthetic: at most 20 distinct categories");
  if (height < 8 || width < 8) throw Error(ErrorCode::BadConfig, "synthetic: images must be at least 8x8");
  if (!(noise >= 0) || !(colour_cast >= 0) || !(centre_spread >= 0)) {
    throw Error(ErrorCode::BadConfig, "synthetic: noise, cast and spread must be non-negative");
  }
  if (!(radius_min > 0) || !(radius_max >= radius_min)) throw Error(ErrorCode::BadConfig, "synthetic: bad radius range");
  for (std::size_t k : allowed) {
    if (k >= universe_size) throw Error(ErrorCode::BadConfig, "synthetic: allowed index outside the universe");
  }
}

Dataset gen_synthetic(std::uint64_t seed, const SyntheticConfig& cfg) {
  cfg.validate();
  const auto names = synthetic_universe(cfg.universe_size);
  std::vector<std::size_t> pool = cfg.allowed;
  if (pool.empty()) {
    for (std::size_t k = 0; k < cfg.universe_size; ++k) pool.push_back(k);
  }
  std::sort(pool.begin(), pool.end());
  pool.erase(std::unique(pool.begin(), pool.end()), pool.end());

  Rng rng(mix_seed(seed, 0x5e9));
  const std::size_t H = cfg.height, W = cfg.width;
  const double margin_y = std::round(H / 8.0), margin_x = std::round(W / 8.0);
  Dataset data;
  std::ostringstream meta;
  meta << "seed=" << seed << "\nnum_images=" << cfg.num_images << "\nheight=" << H << "\nwidth=" << W
       << "\nuniverse_size=" << cfg.universe_size << "\nshapes_per_image=" << cfg.shapes_per_image << "\n";
  data.meta = meta.str();

  for (std::size_t n = 0; n < cfg.num_images; ++n) {
    std::vector<double> img(H * W * 3);
    std::vector<std::int32_t> global(H * W, 0);
    const double bg = rng.uniform(0.3, 0.6);
    std::array<double, 3> bg_rgb{};
    for (double& v : bg_rgb) v = bg + rng.uniform(-0.05, 0.05);
    for (std::size_t i = 0; i < H * W; ++i)
      for (std::size_t ch = 0; ch < 3; ++ch) img[i * 3 + ch] = bg_rgb[ch] + rng.normal(0.0, cfg.noise);

    const auto picks = rng.choose(pool.size(), std::min(cfg.shapes_per_image, pool.size()));
    for (std::size_t pick : picks) {
      const std::size_t cat = pool[pick];
      const auto colour = synthetic_colour(cat);
      const double cy = std::clamp(rng.normal(H / 2.0, cfg.centre_spread * H), margin_y, H - 1 - margin_y);
      const double cx = std::clamp(rng.normal(W / 2.0, cfg.centre_spread * W), margin_x, W - 1 - margin_x);
      const double ry = rng.uniform(cfg.radius_min, cfg.radius_max) * H;
      const double rx = rng.uniform(cfg.radius_min, cfg.radius_max) * W;
      const std::size_t family = synthetic_shape_family(cat);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
          bool inside = false;
          switch (family) {
            case 0: inside = std::abs(dy) <= 1 && std::abs(dx) <= 1; break;
            case 1: inside = dy * dy + dx * dx <= 1; break;
            case 2: inside = std::abs(dy) + std::abs(dx) <= 1; break;
            default: inside = std::abs(dy) <= 1 && std::abs(dx) <= 1 && ((x + y) / 3) % 2 == 0; break;
          }
          if (!inside) continue;
          global[y * W + x] = static_cast<std::int32_t>(cat + 1);
          for (std::size_t ch = 0; ch < 3; ++ch) img[(y * W + x) * 3 + ch] = colour[ch] + rng.normal(0.0, cfg.noise);
        }
    }
    std::array<double, 3> cast{};
    for (double& v : cast) v = rng.uniform(-cfg.colour_cast, cfg.colour_cast);
    for (std::size_t i = 0; i < H * W; ++i)
      for (std::size_t ch = 0; ch < 3; ++ch) img[i * 3 + ch] = static_cast<float>(img[i * 3 + ch] + cast[ch]);

    std::set<std::int32_t> visible(global.begin(), global.end());
    visible.erase(0);
    SegmentationSample s;
    char id[32];
    std::snprintf(id, sizeof id, "s%05zu", n);
    s.id = id;
    std::vector<std::int32_t> remap(cfg.universe_size + 1, 0);
    for (std::int32_t g : visible) {
      s.categories.push_back(names[static_cast<std::size_t>(g - 1)]);
      remap[static_cast<std::size_t>(g)] = static_cast<std::int32_t>(s.categories.size());
    }
    s.labels = LabelMap(H, W);
    for (std::size_t i = 0; i < H * W; ++i) s.labels.labels[i] = remap[static_cast<std::size_t>(global[i])];
    s.image = Tensor::create({H, W, 3}, std::move(img));
    data.samples.push_back(std::move(s));
  }
  return data;
}

FoldData make_synthetic_fold(std::uint64_t seed, std::size_t fold_index, const SyntheticConfig& cfg,
                             std::size_t num_train, std::size_t num_test) {
  SyntheticConfig base = cfg;
  base.universe_size = 20;
  FoldData out;
  out.fold = make_fold(fold_index, synthetic_universe(20));
  SyntheticConfig tr = base, te = base;
  tr.num_images = num_train;
  te.num_images = num_test;
  tr.allowed.clear();
  te.allowed.clear();
  for (std::size_t k = 0; k < 20; ++k) (k / 5 == fold_index ? te.allowed : tr.allowed).push_back(k);
  out.train = gen_synthetic(mix_seed(seed, 2 * fold_index), tr);
  out.test = gen_synthetic(mix_seed(seed, 2 * fold_index + 1), te);
  for (auto& s : out.train.samples) s.id = "train_" + s.id;
  for (auto& s : out.test.samples) s.id = "test_" + s.id;
  return out;
}

void save_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir);
  for (const auto& s : data.samples) {
    const fs::path sd = dir / s.id;
    fs::create_directories(sd);
    save_tensor(sd / "image.blt0", s.image);
    GrayImage g{s.labels.h, s.labels.w, {}};
    g.pixels.reserve(s.labels.size());
    for (std::int32_t l : s.labels.labels) {
      if (l < 0 || l > 255) throw Error(ErrorCode::UnknownLabel, "label " + std::to_string(l) + " does not fit a PGM");
      g.pixels.push_back(static_cast<std::uint8_t>(l));
    }
    write_pgm(sd / "labels.pgm", g);
    std::string cats;
    for (const auto& c : s.categories) cats += c + "\n";
    write_file_atomic(sd / "categories.txt", cats);
  }
  write_file_atomic(dir / "meta.txt", data.meta);
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "no dataset at " + dir.string());
  Dataset data;
  if (fs::exists(dir / "meta.txt")) data.meta = read_file(dir / "meta.txt");
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& sd : dirs) {
    SegmentationSample s;
    s.id = sd.filename().string();
    s.image = load_tensor(sd / "image.blt0");
    const GrayImage g = read_pgm(sd / "labels.pgm");
    s.labels = LabelMap(g.h, g.w);
    for (std::size_t i = 0; i < g.pixels.size(); ++i) s.labels.labels[i] = g.pixels[i];
    std::istringstream cats(read_file(sd / "categories.txt"));
    std::string line;
    while (std::getline(cats, line))
      if (!line.empty()) s.categories.push_back(line);
    if (s.image.rank() != 3 || s.image.dim(0) != g.h || s.image.dim(1) != g.w) {
      throw Error(ErrorCode::ShapeMismatch, s.id + ": image and label map sizes differ");
    }
    for (std::int32_t l : s.labels.labels) {
      if (static_cast<std::size_t>(l) > s.categories.size()) {
        throw Error(ErrorCode::UnknownLabel, s.id + ": label " + std::to_string(l) + " beyond categories.txt");
      }
    }
    data.samples.push_back(std::move(s));
  }
  if (data.samples.empty()) throw Error(ErrorCode::EmptyDataset, "no samples under " + dir.string());
  return data;
}

}  // namespace bl
