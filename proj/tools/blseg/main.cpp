// blseg: data generation, training, evaluation and ablation front end.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "bl/checkpoint.hpp"
#include "bl/config.hpp"
#include "bl/data.hpp"
#include "bl/error.hpp"
#include "bl/tensor_io.hpp"
#include "bl/trainer.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kDiverged = 4 };

int exit_code_for(bl::ErrorCode code) {
  using bl::ErrorCode;
  switch (code) {
    case ErrorCode::BadConfig:
    case ErrorCode::ConfigMismatch:
    case ErrorCode::BadFoldIndex:
    case ErrorCode::BadUniverse:
    case ErrorCode::NonPositiveTau:
    case ErrorCode::StageMismatch:
    case ErrorCode::IndivisibleResolution:
      return kConfig;
    case ErrorCode::DivergedLoss:
    case ErrorCode::NonFinite:
      return kDiverged;
    default:
      return kData;
  }
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> fold;
  std::optional<std::string> variant;
  std::string precomputed;
  std::string out;
  bool quiet = false;
};

bl::ExperimentConfig resolve_config(const Common& c) {
  bl::KeyValues kv = c.config.empty() ? bl::KeyValues{} : bl::KeyValues::load(c.config);
  if (c.seed) kv.set("seed", std::to_string(*c.seed));
  if (c.fold) kv.set("fold", std::to_string(*c.fold));
  if (c.variant) kv.set("variant", *c.variant);
  bl::ExperimentConfig cfg = bl::ExperimentConfig::from_key_values(kv);
  cfg.validate();
  return cfg;
}

bl::FrozenEncoders make_encoders(const Common& c, const bl::ExperimentConfig& cfg) {
  if (!c.precomputed.empty()) return bl::FrozenEncoders::load_precomputed(c.precomputed, cfg.encoder.patch);
  return bl::FrozenEncoders::stub(cfg.encoder);
}

bl::ProgressFn progress_for(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

void require_out(const Common& c) {
  if (c.out.empty()) throw bl::Error(bl::ErrorCode::BadConfig, "--out is required");
}

std::string report_json(const bl::FoldReport& r, std::size_t fold) {
  std::ostringstream o;
  o.precision(17);
  o << "{\"fold\":" << fold << ",\"miou\":" << r.miou << ",\"per_class\":{";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& c = r.per_class[k];
    o << (k ? "," : "") << '"' << c.name << "\":{\"iou\":" << c.iou << ",\"tp\":" << c.tp << ",\"fp\":" << c.fp
      << ",\"fn\":" << c.fn << ",\"absent\":" << (c.absent ? "true" : "false") << "}";
  }
  o << "}}\n";
  return o.str();
}

void print_report(const bl::FoldReport& r) {
  for (const auto& c : r.per_class) {
    std::printf("%-16s %.4f%s\n", c.name.c_str(), c.iou, c.absent ? "  (absent)" : "");
  }
  std::printf("mIoU %.4f\n", r.miou);
}

void add_common(CLI::App* app, Common& c, bool with_variant) {
  app->add_option("--config", c.config, "key=value experiment config (with --checkpoint: evaluation data only)");
  app->add_option("--seed", c.seed, "overrides seed");
  app->add_option("--fold", c.fold, "overrides fold (0..3)");
  if (with_variant) app->add_option("--variant", c.variant, "B_L_0, B_L_1 or B_L_2");
  app->add_option("--precomputed", c.precomputed, "feature manifest instead of the stub encoders");
  app->add_option("--out", c.out, "output path");
  app->add_flag("--quiet", c.quiet, "no progress on stderr");
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Keep tensor buffers off mmap; per-step alloc/free otherwise dominates.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  CLI::App app{"Open-vocabulary segmentation: frozen encoders, Fourier positions, fusion and a cosine head"};
  app.require_subcommand(1);
  Common c;
  std::string data_dir, checkpoint, image_path, categories_csv, universe = "synthetic";

  auto* gen = app.add_subcommand("gen-data", "write a fold's synthetic train/ and test/ datasets");
  add_common(gen, c, false);

  auto* train = app.add_subcommand("train", "train one variant on a fold and write a checkpoint");
  add_common(train, c, true);
  train->add_option("--data", data_dir, "training dataset directory (default: synthetic fold data)");

  auto* eval = app.add_subcommand("eval", "zero-shot evaluation of a checkpoint on a fold's test categories");
  add_common(eval, c, false);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data_dir, "test dataset directory (default: synthetic fold data)");

  auto* predict = app.add_subcommand("predict", "masks for one BLT0 image against named categories");
  add_common(predict, c, false);
  predict->add_option("--checkpoint", checkpoint)->required();
  predict->add_option("--image", image_path, "[H,W,3] BLT0 image")->required();
  predict->add_option("--categories", categories_csv, "comma-separated category names")->required();

  auto* ablate = app.add_subcommand("ablate", "train and evaluate B_L_0/B_L_1/B_L_2 on all four folds");
  add_common(ablate, c, false);

  auto* folds = app.add_subcommand("folds", "print fold definitions as JSON");
  folds->add_option("--universe", universe, "pascal or synthetic")->check(CLI::IsMember({"pascal", "synthetic"}));
  folds->add_option("--out", c.out, "write to a file instead of stdout");

  auto* masks = app.add_subcommand("export-masks", "write per-image mask PGMs for a dataset");
  add_common(masks, c, false);
  masks->add_option("--checkpoint", checkpoint)->required();
  masks->add_option("--data", data_dir, "test dataset directory (default: synthetic fold data)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*folds) {
      const auto names = universe == "pascal" ? bl::pascal_universe() : bl::synthetic_universe(20);
      const std::string json = bl::folds_json(names) + "\n";
      if (c.out.empty()) {
        std::cout << json;
      } else {
        bl::write_file_atomic(c.out, json);
      }
      return kOk;
    }

    // Checkpoint commands rebuild the encoders the model was trained against.
    const bool from_checkpoint = *eval || *predict || *masks;
    const bl::ExperimentConfig cfg = from_checkpoint ? bl::load_checkpoint(checkpoint).config : resolve_config(c);
    auto fold_data = [&] { return bl::make_synthetic_fold(cfg.seed, cfg.fold, cfg.data, cfg.num_train, cfg.num_test); };

    if (*gen) {
      require_out(c);
      const bl::FoldData fd = fold_data();
      bl::save_dataset(fs::path(c.out) / "train", fd.train);
      bl::save_dataset(fs::path(c.out) / "test", fd.test);
      bl::write_file_atomic(fs::path(c.out) / "config.txt", cfg.to_key_values().to_string());
      std::printf("fold %zu: %zu train, %zu test images under %s\n", cfg.fold, fd.train.samples.size(),
                  fd.test.samples.size(), c.out.c_str());
      return kOk;
    }

    const bl::FrozenEncoders enc = make_encoders(c, cfg);

    if (*train) {
      require_out(c);
      const bl::FoldSpec fold = bl::make_fold(cfg.fold, bl::synthetic_universe(20));
      const bl::Dataset data = data_dir.empty() ? fold_data().train : bl::load_dataset(data_dir);
      const bl::TrainResult r = bl::train(cfg, enc, data, fold, c.out, progress_for(c));
      std::printf("trained %s on fold %zu: final loss %.6f, %zu parameters, %.1fs -> %s\n",
                  bl::to_string(cfg.variant).c_str(), cfg.fold, r.log.epoch_loss.back(), r.model.parameter_count(),
                  r.log.seconds, c.out.c_str());
      return kOk;
    }

    if (*ablate) {
      const bl::AblationTable table = bl::run_ablation(cfg, enc, progress_for(c));
      const std::string text = table.to_text();
      std::cout << text;
      if (!c.out.empty()) {
        fs::create_directories(c.out);
        bl::write_file_atomic(fs::path(c.out) / "ablation.txt", text);
      }
      return kOk;
    }

    const bl::SegModel model = bl::restore_model(checkpoint, enc.d_v(), enc.d_t());
    const std::size_t fold_index = c.fold ? *c.fold : model.config().fold;
    const bl::FoldSpec fold = bl::make_fold(fold_index, bl::synthetic_universe(20));

    if (*eval || *masks) {
      bl::ExperimentConfig data_cfg = model.config();
      if (!c.config.empty()) {
        const bl::ExperimentConfig given = resolve_config(c);
        data_cfg.seed = given.seed;
        data_cfg.data = given.data;
        data_cfg.num_train = given.num_train;
        data_cfg.num_test = given.num_test;
      }
      data_cfg.fold = fold_index;
      if (c.seed) data_cfg.seed = *c.seed;
      const bl::Dataset data = data_dir.empty()
                                   ? bl::make_synthetic_fold(data_cfg.seed, fold_index, data_cfg.data, data_cfg.num_train,
                                                             data_cfg.num_test)
                                         .test
                                   : bl::load_dataset(data_dir);
      bl::EvalOptions opts;
      if (!c.out.empty()) {
        if (*eval) opts.metrics_jsonl = fs::path(c.out) / "metrics.jsonl";
        if (*masks) opts.mask_dir = c.out;
      } else if (*masks) {
        require_out(c);
      }
      const bl::FoldReport report = bl::evaluate(model, enc, fold, data, opts);
      if (*eval && !c.out.empty()) bl::write_file_atomic(fs::path(c.out) / "report.json", report_json(report, fold_index));
      print_report(report);
      return kOk;
    }

    if (*predict) {
      require_out(c);
      std::vector<std::string> cats;
      std::stringstream ss(categories_csv);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) cats.push_back(item);
      const bl::Tensor image = bl::load_tensor(image_path);
      const bl::PredictionSet ps = bl::predict(model, enc, image, fs::path(image_path).stem().string(), cats);
      bl::write_prediction_pgms(c.out, ps);
      std::printf("wrote %zu masks and labels.pgm to %s\n", cats.size(), c.out.c_str());
      return kOk;
    }
  } catch (const bl::Error& e) {
    std::fprintf(stderr, "blseg: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "blseg: %s\n", e.what());
    return kInternal;
  }
  return kInternal;
}
