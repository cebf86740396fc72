#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bl/config.hpp"
#include "bl/data.hpp"
#include "bl/encoders.hpp"
#include "bl/metrics.hpp"
#include "bl/model.hpp"

namespace bl {

struct TrainLog {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_train_miou;  // empty when train.eval_images = 0
  double seconds = 0.0;
  std::string checkpoint;
  std::uint64_t encoder_checksum_before = 0;
  std::uint64_t encoder_checksum_after = 0;
  std::vector<std::string> embedded_categories;   // every name sent through the text encoder
  std::vector<std::string> optimized_parameters;  // names handed to the optimizer

  /// One "epoch loss miou" line per epoch followed by "step <i> <loss>" lines, full precision.
  [[nodiscard]] std::string to_text() const;
};

struct TrainResult {
  SegModel model;
  TrainLog log;
};

/// Throws LeakedTestCategory if any sample carries a fold test category and
/// CategoryMismatch for names outside the fold.
void audit_training_stream(const Dataset& data, const FoldSpec& fold);

/// The parameter names a variant must optimize.
std::vector<std::string> expected_parameter_names(const SegModel& model);

using ProgressFn = std::function<void(const std::string&)>;

/// Optimizes theta, fusion, decoder (and the B_L_0 table) with BCE on
/// logits / tau. Writes a checkpoint when `checkpoint_dir` is non-empty.
TrainResult train(const ExperimentConfig& cfg, const FrozenEncoders& enc, const Dataset& data, const FoldSpec& fold,
                  const std::filesystem::path& checkpoint_dir = {}, const ProgressFn& progress = {});

struct EvalOptions {
  std::filesystem::path metrics_jsonl;  // per-image IoU records
  std::filesystem::path mask_dir;       // per-image mask PGMs
  std::size_t workers = 0;              // 0: BL_NUM_WORKERS or hardware threads
};

/// Worker count from BL_NUM_WORKERS, else hardware threads (at least 1).
std::size_t default_workers();

/// Full inference for one image against `categories`.
PredictionSet predict(const SegModel& model, const FrozenEncoders& enc, const Tensor& image,
                      const std::string& image_id, const std::vector<std::string>& categories);

/// Zero-shot evaluation on the fold's test categories. CategoryMismatch if a
/// sample carries any other category.
FoldReport evaluate(const SegModel& model, const FrozenEncoders& enc, const FoldSpec& fold, const Dataset& data,
                    const EvalOptions& options = {});

/// Writes one binary PGM per category plus labels.pgm (category index + 1).
void write_prediction_pgms(const std::filesystem::path& dir, const PredictionSet& prediction);

struct AblationRow {
  AblationVariant variant = AblationVariant::B_L_2;
  std::array<double, 4> fold_miou{};
  double miou = 0.0;
};

struct AblationTable {
  std::uint64_t seed = 0;
  std::vector<AblationRow> rows;

  [[nodiscard]] const AblationRow& row(AblationVariant v) const;
  /// Columns: variant, F_Emb, Fusion, Visual_Decoder, 5^0..5^3, mIoU.
  [[nodiscard]] std::string to_text() const;
};

/// Trains and evaluates B_L_0, B_L_1 and B_L_2 on the same four synthetic folds.
AblationTable run_ablation(const ExperimentConfig& base, const FrozenEncoders& enc, const ProgressFn& progress = {});

}  // namespace bl
