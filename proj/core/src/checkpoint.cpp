#include "bl/checkpoint.hpp"

#include "bl/error.hpp"

namespace bl {

namespace fs = std::filesystem;

void save_checkpoint(const fs::path& dir, const SegModel& model) {
  save_archive(dir, model.parameters());
  write_file_atomic(dir / "config.txt", model.config().to_key_values().to_string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  Checkpoint ck;
  ck.parameters = load_archive(dir);
  if (!fs::exists(dir / "config.txt")) throw Error(ErrorCode::ManifestMissing, (dir / "config.txt").string());
  ck.config = ExperimentConfig::load(dir / "config.txt");
  return ck;
}

void load_checkpoint_into(const fs::path& dir, SegModel& model) { model.load_parameters(load_archive(dir)); }

SegModel restore_model(const fs::path& dir, std::size_t d_v, std::size_t d_t) {
  Checkpoint ck = load_checkpoint(dir);
  SegModel model = SegModel::init(ck.config, d_v, d_t);
  model.load_parameters(ck.parameters);
  return model;
}

}  // namespace bl
