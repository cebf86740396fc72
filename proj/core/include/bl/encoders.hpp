#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "bl/fourier.hpp"
#include "bl/nn.hpp"
#include "bl/tensor.hpp"

namespace bl {

struct VisualFeatures {
  Tensor tokens;  // [grid.h * grid.w, d_v]
  PatchGrid grid;
};

struct TextFeatures {
  Tensor embeddings;  // [|W|, d_t]
  std::vector<std::string> categories;
};

/// [H,W,3] -> [(H/p)*(W/p), 3p^2]; each patch flattened as (row, col, channel).
Tensor patchify(const Tensor& image, std::size_t p);

inline constexpr std::string_view kCategoryPlaceholder = "{category}";

/// The twelve prompt templates, verbatim (repeats included).
const std::array<std::string, 12>& prompt_templates();

std::vector<std::string> expand_templates(const std::string& category);

/// Lower-cased alphanumeric runs.
std::vector<std::string> tokenize(std::string_view text);

enum class EncoderKind { Stub, Precomputed };

struct StubEncoderConfig {
  std::uint64_t seed = 1234;
  std::size_t patch = 8;
  std::size_t d_v = 64;
  std::size_t d_t = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
};

class StubVisualEncoder {
 public:
  StubVisualEncoder(const StubEncoderConfig& cfg);

  [[nodiscard]] Tensor embed_patches(const Tensor& image) const;  // [N, d_v], before positions
  [[nodiscard]] Tensor run_layers(const Tensor& tokens) const;
  void collect(NamedTensors& out) const;

 private:
  std::size_t patch_;
  Linear projection_;
  std::vector<TransformerLayer> layers_;
};

class StubTextEncoder {
 public:
  StubTextEncoder(const StubEncoderConfig& cfg);

  [[nodiscard]] std::vector<double> word_vector(const std::string& word) const;
  /// Frozen layers over the prompt's word vectors, mean pooled -> [d_t].
  [[nodiscard]] std::vector<double> encode_prompt(const std::string& prompt) const;
  /// Mean over the expanded templates -> [d_t].
  [[nodiscard]] std::vector<double> encode_category(const std::string& category) const;
  void collect(NamedTensors& out) const;

 private:
  std::uint64_t seed_;
  std::size_t d_;
  std::vector<TransformerLayer> layers_;
};

/// Stored features behind a "kind<TAB>key<TAB>filename" manifest.
/// Image entries are [h, w, d_v] patch features before positions; text entries are [d_t] or [1, d_t].
class PrecomputedStore {
 public:
  static PrecomputedStore load(const std::filesystem::path& manifest);

  [[nodiscard]] const Tensor& image(const std::string& id) const;
  [[nodiscard]] const Tensor& text(const std::string& category) const;
  [[nodiscard]] bool has_image(const std::string& id) const { return images_.count(id) != 0; }
  [[nodiscard]] bool has_text(const std::string& category) const { return texts_.count(category) != 0; }
  [[nodiscard]] std::size_t d_v() const { return d_v_; }
  [[nodiscard]] std::size_t d_t() const { return d_t_; }
  [[nodiscard]] std::size_t image_count() const { return images_.size(); }
  [[nodiscard]] std::size_t text_count() const { return texts_.size(); }
  void collect(NamedTensors& out) const;

 private:
  std::map<std::string, Tensor> images_;
  std::map<std::string, Tensor> texts_;
  std::size_t d_v_ = 0;
  std::size_t d_t_ = 0;
};

/// Writes a manifest plus BLT0 files; image tensors are stored as [h, w, d].
void write_precomputed(const std::filesystem::path& dir, const std::map<std::string, Tensor>& images,
                       const std::map<std::string, Tensor>& texts);

/// Facade over the two interchangeable backends. Immutable once built.
class FrozenEncoders {
 public:
  static FrozenEncoders stub(const StubEncoderConfig& cfg);
  /// `patch` is the pixel side each stored token covers.
  static FrozenEncoders load_precomputed(const std::filesystem::path& manifest, std::size_t patch);

  [[nodiscard]] EncoderKind kind() const { return kind_; }
  [[nodiscard]] std::size_t d_v() const;
  [[nodiscard]] std::size_t d_t() const;
  [[nodiscard]] std::size_t patch() const { return patch_; }

  /// Patch tokens before positional information. The stub reads pixels, the
  /// precomputed backend looks up `image_id`.
  [[nodiscard]] VisualFeatures patch_embeddings(const Tensor& image, const std::string& image_id) const;
  /// The frozen layers after positions are added (identity for stored features).
  [[nodiscard]] Tensor encode_tokens(const Tensor& tokens) const;
  /// patch_embeddings -> apply_positional -> encode_tokens.
  [[nodiscard]] VisualFeatures encode_image(const Tensor& image, const std::string& image_id,
                                            const FourierConfig& cfg) const;
  [[nodiscard]] TextFeatures encode_text(const std::vector<std::string>& categories) const;

  /// FNV-1a over every frozen weight's bytes.
  [[nodiscard]] std::uint64_t checksum() const;
  [[nodiscard]] NamedTensors weights() const;

 private:
  EncoderKind kind_ = EncoderKind::Stub;
  std::size_t patch_ = 8;
  std::shared_ptr<const StubVisualEncoder> visual_;
  std::shared_ptr<const StubTextEncoder> text_;
  std::shared_ptr<const PrecomputedStore> store_;
  std::size_t d_v_ = 0, d_t_ = 0;
};

}  // namespace bl
