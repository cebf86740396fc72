#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bl/data.hpp"
#include "bl/encoders.hpp"
#include "bl/fourier.hpp"
#include "bl/fusion.hpp"
#include "bl/optim.hpp"
#include "bl/seg_head.hpp"

namespace bl {

/// Flat "dotted.key = value" pairs; '#' starts a comment.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::filesystem::path& path);

  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }
  [[nodiscard]] const std::string& get(const std::string& key) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }
  [[nodiscard]] std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

enum class AblationVariant { B_L_0, B_L_1, B_L_2 };

struct VariantFlags {
  bool use_fourier;
  bool use_fusion;
  bool use_decoder;
};

VariantFlags flags_of(AblationVariant v) noexcept;
std::string to_string(AblationVariant v);
/// Accepts B_L_0 / B_L_1 / B_L_2; BadConfig otherwise.
AblationVariant parse_variant(const std::string& text);

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t height = 32;
  std::size_t width = 32;
  StubEncoderConfig encoder;  // patch, d_v, d_t and the frozen stub's shape
  FourierConfig fourier;      // d is tied to encoder.d_v
  FusionConfig fusion;
  DecoderConfig decoder;
  AdamConfig optimizer;
  std::size_t epochs = 8;
  std::size_t batch_size = 1;
  std::size_t fold = 0;
  AblationVariant variant = AblationVariant::B_L_2;
  std::size_t candidates = 5;         // text categories scored per training image
  std::size_t train_eval_images = 50;  // per-epoch train mIoU sample (0 disables)
  double learned_position_std = 0.02;
  SyntheticConfig data;
  std::size_t num_train = 200;
  std::size_t num_test = 50;

  /// Every key with its current value.
  [[nodiscard]] KeyValues to_key_values() const;
  /// Overrides defaults; unknown keys and unparsable values raise BadConfig.
  static ExperimentConfig from_key_values(const KeyValues& kv);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Throws BadConfig (or the component's own error) on inconsistent values.
  void validate() const;
};

}  // namespace bl
