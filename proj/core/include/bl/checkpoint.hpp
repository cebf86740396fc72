#pragma once

#include <filesystem>

#include "bl/config.hpp"
#include "bl/model.hpp"
#include "bl/tensor_io.hpp"

namespace bl {

struct Checkpoint {
  ExperimentConfig config;
  NamedTensors parameters;
};

/// Archive of BLT0 parameters (manifest.txt) plus config.txt.
void save_checkpoint(const std::filesystem::path& dir, const SegModel& model);
/// ManifestMissing / CorruptTensorFile on damaged directories.
Checkpoint load_checkpoint(const std::filesystem::path& dir);
/// Copies a checkpoint into an existing model; ConfigMismatch on incompatible shapes.
void load_checkpoint_into(const std::filesystem::path& dir, SegModel& model);
/// Rebuilds the model from the stored config and loads its parameters.
SegModel restore_model(const std::filesystem::path& dir, std::size_t d_v, std::size_t d_t);

}  // namespace bl
