#include "bl/encoders.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "bl/error.hpp"
#include "bl/ops.hpp"
#include "bl/tensor_io.hpp"

namespace bl {

namespace fs = std::filesystem;

Tensor patchify(const Tensor& image, std::size_t p) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw Error(ErrorCode::ShapeMismatch, "patchify expects [H,W,3], got " + shape_str(image.shape()));
  }
  const PatchGrid grid = PatchGrid::for_image(image.dim(0), image.dim(1), p);
  const std::size_t width = image.dim(1), len = 3 * p * p;
  const auto src = image.data();
  std::vector<double> out(grid.tokens() * len);
  for (std::size_t gy = 0; gy < grid.h; ++gy)
    for (std::size_t gx = 0; gx < grid.w; ++gx) {
      double* dst = out.data() + (gy * grid.w + gx) * len;
      for (std::size_t py = 0; py < p; ++py) {
        const double* row = src.data() + ((gy * p + py) * width + gx * p) * 3;
        std::copy(row, row + 3 * p, dst + py * 3 * p);
      }
    }
  return Tensor::create({grid.tokens(), len}, std::move(out));
}

const std::array<std::string, 12>& prompt_templates() {
  static const std::array<std::string, 12> templates = {
      "An image of a {category}.",
      "This is an image of a {category}.",
      "An image of a small {category}.",
      "An image of a medium {category}.",
      "An image of a large {category}.",
      "An image of a {category} within the context.",
      "An image of the {category} within the context.",
      "An image of the {category} within the context.",
      "A resized image of a{category} within the context.",
      "This falls under a {category} within the context.",
      "This falls under the {category} within the context.",
      "This falls under one {category} within the context.",
  };
  return templates;
}

std::vector<std::string> expand_templates(const std::string& category) {
  if (category.empty()) throw Error(ErrorCode::EmptyCategory, "category name is empty");
  std::vector<std::string> prompts;
  prompts.reserve(prompt_templates().size());
  for (const std::string& t : prompt_templates()) {
    std::string s = t;
    s.replace(s.find(kCategoryPlaceholder), kCategoryPlaceholder.size(), category);
    prompts.push_back(std::move(s));
  }
  return prompts;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// ---- stub visual ----

StubVisualEncoder::StubVisualEncoder(const StubEncoderConfig& cfg) : patch_(cfg.patch) {
  Rng rng(mix_seed(cfg.seed, 1));
  const std::size_t in = 3 * cfg.patch * cfg.patch;
  projection_ = Linear::init(rng, in, cfg.d_v, 1.0 / std::sqrt(static_cast<double>(in)), false);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    layers_.push_back(TransformerLayer::init(rng, cfg.d_v, cfg.heads, cfg.mlp_ratio, 0.0, false));
  }
}

Tensor StubVisualEncoder::embed_patches(const Tensor& image) const { return projection_(patchify(image, patch_)); }

Tensor StubVisualEncoder::run_layers(const Tensor& tokens) const {
  Tensor x = tokens;
  for (const auto& layer : layers_) x = layer(x);
  return x;
}

void StubVisualEncoder::collect(NamedTensors& out) const {
  projection_.collect("visual.proj", out);
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("visual.layer." + std::to_string(i), out);
}

// ---- stub text ----

StubTextEncoder::StubTextEncoder(const StubEncoderConfig& cfg) : seed_(cfg.seed), d_(cfg.d_t) {
  Rng rng(mix_seed(cfg.seed, 2));
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    layers_.push_back(TransformerLayer::init(rng, cfg.d_t, cfg.heads, cfg.mlp_ratio, 0.0, false));
  }
}

std::vector<double> StubTextEncoder::word_vector(const std::string& word) const {
  Rng rng(mix_seed(seed_, fnv1a64(word)));
  return rng.normal_vector(d_, 1.0);
}

std::vector<double> StubTextEncoder::encode_prompt(const std::string& prompt) const {
  const auto tokens = tokenize(prompt);
  if (tokens.empty()) throw Error(ErrorCode::EmptyCategory, "prompt '" + prompt + "' has no tokens");
  std::vector<double> rows;
  rows.reserve(tokens.size() * d_);
  for (const auto& tok : tokens) {
    const auto v = word_vector(tok);
    rows.insert(rows.end(), v.begin(), v.end());
  }
  NoGradGuard guard;
  Tensor x = Tensor::create({tokens.size(), d_}, std::move(rows));
  for (const auto& layer : layers_) x = layer(x);
  std::vector<double> pooled(d_, 0.0);
  const auto data = x.data();
  for (std::size_t r = 0; r < tokens.size(); ++r)
    for (std::size_t j = 0; j < d_; ++j) pooled[j] += data[r * d_ + j];
  for (double& v : pooled) v /= static_cast<double>(tokens.size());
  return pooled;
}

std::vector<double> StubTextEncoder::encode_category(const std::string& category) const {
  const auto prompts = expand_templates(category);
  std::vector<double> mean(d_, 0.0);
  for (const auto& prompt : prompts) {
    const auto e = encode_prompt(prompt);
    for (std::size_t j = 0; j < d_; ++j) mean[j] += e[j];
  }
  for (double& v : mean) v /= static_cast<double>(prompts.size());
  return mean;
}

void StubTextEncoder::collect(NamedTensors& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("text.layer." + std::to_string(i), out);
}

// ---- precomputed ----

PrecomputedStore PrecomputedStore::load(const fs::path& manifest) {
  if (!fs::is_regular_file(manifest)) throw Error(ErrorCode::ManifestMissing, manifest.string());
  std::istringstream lines(read_file(manifest));
  const fs::path base = manifest.parent_path();
  PrecomputedStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw Error(ErrorCode::CorruptTensorFile, manifest.string() + ":" + std::to_string(lineno) + ": malformed line");
    }
    const std::string kind = line.substr(0, t1);
    const std::string key = line.substr(t1 + 1, t2 - t1 - 1);
    Tensor t = load_tensor(base / line.substr(t2 + 1));
    if (kind == "image") {
      if (t.rank() == 2) {
        const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(t.dim(0)))));
        if (side * side != t.dim(0)) {
          throw Error(ErrorCode::DimensionMismatch, "image '" + key + "': " + shape_str(t.shape()) +
                                                        " is not a square token grid");
        }
        t = Tensor::create({side, side, t.dim(1)}, std::vector<double>(t.data().begin(), t.data().end()));
      }
      if (t.rank() != 3) throw Error(ErrorCode::DimensionMismatch, "image '" + key + "': " + shape_str(t.shape()));
      if (store.d_v_ == 0) store.d_v_ = t.dim(2);
      if (t.dim(2) != store.d_v_) {
        throw Error(ErrorCode::DimensionMismatch, "image '" + key + "' width " + std::to_string(t.dim(2)) +
                                                      " vs " + std::to_string(store.d_v_));
      }
      store.images_[key] = std::move(t);
    } else if (kind == "text") {
      if (!(t.rank() == 1 || (t.rank() == 2 && t.dim(0) == 1))) {
        throw Error(ErrorCode::DimensionMismatch, "text '" + key + "': " + shape_str(t.shape()));
      }
      const std::size_t d = t.shape().back();
      if (store.d_t_ == 0) store.d_t_ = d;
      if (d != store.d_t_) {
        throw Error(ErrorCode::DimensionMismatch, "text '" + key + "' width " + std::to_string(d) + " vs " +
                                                      std::to_string(store.d_t_));
      }
      store.texts_[key] = Tensor::create({d}, std::vector<double>(t.data().begin(), t.data().end()));
    } else {
      throw Error(ErrorCode::CorruptTensorFile, manifest.string() + ":" + std::to_string(lineno) +
                                                    ": unknown kind '" + kind + "'");
    }
  }
  return store;
}

const Tensor& PrecomputedStore::image(const std::string& id) const {
  auto it = images_.find(id);
  if (it == images_.end()) throw Error(ErrorCode::UnknownKey, "no stored features for image '" + id + "'");
  return it->second;
}

const Tensor& PrecomputedStore::text(const std::string& category) const {
  auto it = texts_.find(category);
  if (it == texts_.end()) throw Error(ErrorCode::UnknownKey, "no stored features for category '" + category + "'");
  return it->second;
}

void PrecomputedStore::collect(NamedTensors& out) const {
  for (const auto& [k, t] : images_) out.emplace_back("image." + k, t);
  for (const auto& [k, t] : texts_) out.emplace_back("text." + k, t);
}

void write_precomputed(const fs::path& dir, const std::map<std::string, Tensor>& images,
                       const std::map<std::string, Tensor>& texts) {
  fs::create_directories(dir);
  std::string manifest;
  std::size_t i = 0;
  for (const auto& [key, t] : images) {
    const std::string file = "image_" + std::to_string(i++) + ".blt0";
    save_tensor(dir / file, t);
    manifest += "image\t" + key + "\t" + file + "\n";
  }
  i = 0;
  for (const auto& [key, t] : texts) {
    const std::string file = "text_" + std::to_string(i++) + ".blt0";
    save_tensor(dir / file, t);
    manifest += "text\t" + key + "\t" + file + "\n";
  }
  write_file_atomic(dir / "manifest.txt", manifest);
}

// ---- facade ----

FrozenEncoders FrozenEncoders::stub(const StubEncoderConfig& cfg) {
  FrozenEncoders enc;
  enc.kind_ = EncoderKind::Stub;
  enc.patch_ = cfg.patch;
  enc.visual_ = std::make_shared<const StubVisualEncoder>(cfg);
  enc.text_ = std::make_shared<const StubTextEncoder>(cfg);
  enc.d_v_ = cfg.d_v;
  enc.d_t_ = cfg.d_t;
  return enc;
}

FrozenEncoders FrozenEncoders::load_precomputed(const fs::path& manifest, std::size_t patch) {
  FrozenEncoders enc;
  enc.kind_ = EncoderKind::Precomputed;
  enc.patch_ = patch;
  auto store = std::make_shared<const PrecomputedStore>(PrecomputedStore::load(manifest));
  enc.d_v_ = store->d_v();
  enc.d_t_ = store->d_t();
  enc.store_ = std::move(store);
  return enc;
}

std::size_t FrozenEncoders::d_v() const { return d_v_; }
std::size_t FrozenEncoders::d_t() const { return d_t_; }

VisualFeatures FrozenEncoders::patch_embeddings(const Tensor& image, const std::string& image_id) const {
  if (kind_ == EncoderKind::Stub) {
    const PatchGrid grid = PatchGrid::for_image(image.dim(0), image.dim(1), patch_);
    NoGradGuard guard;
    return VisualFeatures{visual_->embed_patches(image), grid};
  }
  const Tensor& stored = store_->image(image_id);
  const PatchGrid grid{stored.dim(0), stored.dim(1), patch_};
  return VisualFeatures{Tensor::create({grid.tokens(), stored.dim(2)},
                                       std::vector<double>(stored.data().begin(), stored.data().end())),
                        grid};
}

Tensor FrozenEncoders::encode_tokens(const Tensor& tokens) const {
  if (kind_ == EncoderKind::Stub) return visual_->run_layers(tokens);
  return tokens;
}

VisualFeatures FrozenEncoders::encode_image(const Tensor& image, const std::string& image_id,
                                            const FourierConfig& cfg) const {
  VisualFeatures patches = patch_embeddings(image, image_id);
  NoGradGuard guard;
  Tensor x = apply_positional(patches.tokens, patches.grid, cfg);
  return VisualFeatures{encode_tokens(x), patches.grid};
}

TextFeatures FrozenEncoders::encode_text(const std::vector<std::string>& categories) const {
  if (categories.empty()) throw Error(ErrorCode::EmptyCategory, "no categories to encode");
  std::set<std::string> seen;
  std::vector<double> rows;
  rows.reserve(categories.size() * d_t_);
  for (const auto& name : categories) {
    if (name.empty()) throw Error(ErrorCode::EmptyCategory, "category name is empty");
    if (!seen.insert(name).second) throw Error(ErrorCode::DuplicateCategory, "'" + name + "' listed twice");
    if (kind_ == EncoderKind::Stub) {
      const auto row = text_->encode_category(name);
      rows.insert(rows.end(), row.begin(), row.end());
    } else {
      const auto row = store_->text(name).data();
      rows.insert(rows.end(), row.begin(), row.end());
    }
  }
  return TextFeatures{Tensor::create({categories.size(), d_t_}, std::move(rows)), categories};
}

NamedTensors FrozenEncoders::weights() const {
  NamedTensors out;
  if (visual_) visual_->collect(out);
  if (text_) text_->collect(out);
  if (store_) store_->collect(out);
  return out;
}

std::uint64_t FrozenEncoders::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : weights()) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.data().data(), t.numel() * sizeof(double), h);
  }
  return h;
}

}  // namespace bl
