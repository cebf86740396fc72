#include "bl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "bl/checkpoint.hpp"
#include "bl/error.hpp"
#include "bl/ops.hpp"
#include "bl/optim.hpp"
#include "bl/pgm.hpp"
#include "bl/tensor_io.hpp"

namespace bl {

namespace fs = std::filesystem;

namespace {

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& rows) {
  const std::size_t d = table.dim(1);
  std::vector<double> out;
  out.reserve(rows.size() * d);
  const auto src = table.data();
  for (std::size_t r : rows) out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(r * d),
                                        src.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
  return Tensor::create({rows.size(), d}, std::move(out));
}

std::size_t index_in(const std::vector<std::string>& names, const std::string& name) {
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? names.size() : static_cast<std::size_t>(it - names.begin());
}

// Sample labels re-expressed as indices into `classes` (0 stays background).
LabelMap remap_labels(const SegmentationSample& s, const std::vector<std::string>& classes) {
  std::vector<std::int32_t> to_class(s.categories.size() + 1, 0);
  for (std::size_t c = 0; c < s.categories.size(); ++c) {
    const std::size_t k = index_in(classes, s.categories[c]);
    if (k == classes.size()) throw Error(ErrorCode::CategoryMismatch, s.id + ": '" + s.categories[c] + "' not scored");
    to_class[c + 1] = static_cast<std::int32_t>(k + 1);
  }
  LabelMap out(s.labels.h, s.labels.w);
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    const std::int32_t l = s.labels.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) > s.categories.size()) {
      throw Error(ErrorCode::UnknownLabel, s.id + ": label " + std::to_string(l));
    }
    out.labels[i] = to_class[static_cast<std::size_t>(l)];
  }
  return out;
}

// Label maps for a batch of images scored against one category list.
std::vector<LabelMap> predict_labels(const SegModel& model, const FrozenEncoders& enc,
                                     const std::vector<const SegmentationSample*>& samples, const Tensor& text,
                                     const std::vector<std::string>& categories,
                                     std::vector<std::optional<VisualFeatures>>* cache, std::size_t workers) {
  std::vector<LabelMap> out(samples.size());
  auto work = [&](std::size_t begin, std::size_t stride) {
    NoGradGuard guard;
    for (std::size_t i = begin; i < samples.size(); i += stride) {
      const SegmentationSample& s = *samples[i];
      VisualFeatures vf = cache && (*cache)[i] ? *(*cache)[i] : model.encode_image(enc, s.image, s.id);
      out[i] = predict_masks(model.logits(vf, text), model.config().decoder, categories).labels;
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, samples.size()));
  if (workers == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        work(w, workers);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::string json_number_or_null(const ClassIou& c) {
  if (c.absent) return "null";
  std::ostringstream o;
  o.precision(17);
  o << c.iou;
  return o.str();
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char ch : name) out.push_back(std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_');
  return out;
}

}  // namespace

std::string TrainLog::to_text() const {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t e = 0; e < epoch_loss.size(); ++e) {
    out << "epoch " << e << " loss " << epoch_loss[e];
    if (e < epoch_train_miou.size()) out << " train_miou " << epoch_train_miou[e];
    out << "\n";
  }
  for (std::size_t i = 0; i < step_loss.size(); ++i) out << "step " << i << " " << step_loss[i] << "\n";
  return out.str();
}

void audit_training_stream(const Dataset& data, const FoldSpec& fold) {
  for (const auto& s : data.samples) {
    for (const auto& c : s.categories) {
      if (fold.is_test(c)) {
        throw Error(ErrorCode::LeakedTestCategory, "sample " + s.id + " carries test category '" + c + "' of fold " +
                                                       std::to_string(fold.index));
      }
      if (!fold.is_train(c)) {
        throw Error(ErrorCode::CategoryMismatch, "sample " + s.id + " carries '" + c + "', not a fold category");
      }
    }
  }
}

std::vector<std::string> expected_parameter_names(const SegModel& model) {
  std::vector<std::string> names;
  for (const auto& [n, t] : model.fusion().parameters()) names.push_back(n);
  for (const auto& [n, t] : model.decoder().parameters()) names.push_back(n);
  if (!flags_of(model.variant()).use_fourier) names.push_back("position_table");
  return names;
}

TrainResult train(const ExperimentConfig& cfg, const FrozenEncoders& enc, const Dataset& data, const FoldSpec& fold,
                  const fs::path& checkpoint_dir, const ProgressFn& progress) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  if (data.samples.empty()) throw Error(ErrorCode::EmptyDataset, "training set is empty");
  audit_training_stream(data, fold);

  TrainResult result;
  TrainLog& log = result.log;
  log.encoder_checksum_before = enc.checksum();

  const std::vector<std::string>& classes = fold.train_categories;
  log.embedded_categories = classes;
  for (const auto& c : log.embedded_categories) {
    if (fold.is_test(c)) throw Error(ErrorCode::LeakedTestCategory, "test category '" + c + "' reached the text encoder");
  }
  const Tensor text_table = enc.encode_text(classes).embeddings;

  result.model = SegModel::init(cfg, enc.d_v(), enc.d_t());
  SegModel& model = result.model;
  NamedTensors params = model.parameters();
  {
    std::vector<std::string> got, want = expected_parameter_names(model);
    for (const auto& [n, t] : params) got.push_back(n);
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    if (got != want) throw Error(ErrorCode::ConfigMismatch, "optimizer parameter set differs from the variant's");
    log.optimized_parameters = got;
  }
  Adam opt(params, cfg.optimizer);

  const std::size_t n = data.samples.size();
  std::vector<std::vector<std::size_t>> present(n);
  std::vector<std::vector<std::int32_t>> to_class(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = data.samples[i];
    to_class[i].assign(s.categories.size() + 1, -1);
    for (std::size_t c = 0; c < s.categories.size(); ++c) {
      const std::size_t k = index_in(classes, s.categories[c]);
      present[i].push_back(k);
      to_class[i][c + 1] = static_cast<std::int32_t>(k);
    }
    std::sort(present[i].begin(), present[i].end());
  }

  std::vector<std::optional<VisualFeatures>> cache(n);
  const bool cacheable = model.visual_features_frozen();
  auto features = [&](std::size_t i) -> VisualFeatures {
    const auto& s = data.samples[i];
    if (!cacheable) return model.encode_image(enc, s.image, s.id);
    if (!cache[i]) {
      NoGradGuard guard;
      cache[i] = model.encode_image(enc, s.image, s.id);
    }
    return *cache[i];
  };

  const std::size_t eval_n = std::min(cfg.train_eval_images, n);
  std::vector<const SegmentationSample*> eval_samples;
  std::vector<LabelMap> eval_truth;
  for (std::size_t i = 0; i < eval_n; ++i) {
    eval_samples.push_back(&data.samples[i]);
    eval_truth.push_back(remap_labels(data.samples[i], classes));
  }

  Rng rng(mix_seed(cfg.seed, 0x7a1));
  const double inv_tau = 1.0 / cfg.decoder.tau;
  const std::size_t hw = cfg.height * cfg.width;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    double total = 0.0;
    std::size_t pending = 0;
    for (std::size_t i : order) {
      std::vector<std::size_t> cands = present[i];
      if (cands.size() < cfg.candidates) {
        std::vector<std::size_t> absent;
        for (std::size_t k = 0; k < classes.size(); ++k)
          if (!std::binary_search(present[i].begin(), present[i].end(), k)) absent.push_back(k);
        for (std::size_t pick : rng.choose(absent.size(), cfg.candidates - cands.size())) cands.push_back(absent[pick]);
      }
      rng.shuffle(cands);

      const auto& labels = data.samples[i].labels.labels;
      if (labels.size() != hw) throw Error(ErrorCode::ShapeMismatch, data.samples[i].id + ": image size differs from config");
      std::vector<double> target(cands.size() * hw, 0.0);
      for (std::size_t k = 0; k < cands.size(); ++k)
        for (std::size_t p = 0; p < hw; ++p) {
          const std::int32_t l = labels[p];
          if (l > 0 && static_cast<std::size_t>(to_class[i][static_cast<std::size_t>(l)]) == cands[k]) target[k * hw + p] = 1.0;
        }

      double value = 0.0;
      try {
        Tensor logits = model.logits(features(i), gather_rows(text_table, cands));
        Tensor targets = Tensor::create(logits.shape(), std::move(target));
        Tensor loss = bce_with_logits(scale(logits, inv_tau), targets);
        value = loss.item();
        if (!std::isfinite(value)) throw Error(ErrorCode::DivergedLoss, "loss is not finite");
        if (cfg.batch_size > 1) loss = scale(loss, 1.0 / static_cast<double>(cfg.batch_size));
        backward(loss);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFinite || e.code() == ErrorCode::DivergedLoss) {
          throw Error(ErrorCode::DivergedLoss, "epoch " + std::to_string(epoch) + ", step " +
                                                   std::to_string(log.step_loss.size()) + ": " + e.what());
        }
        throw;
      }
      log.step_loss.push_back(value);
      total += value;
      if (++pending == cfg.batch_size) {
        opt.step();
        opt.zero_grad();
        pending = 0;
      }
    }
    if (pending > 0) {
      opt.step();
      opt.zero_grad();
    }
    log.epoch_loss.push_back(total / static_cast<double>(n));
    if (eval_n > 0) {
      std::vector<std::optional<VisualFeatures>> eval_cache;
      if (cacheable) {
        for (std::size_t i = 0; i < eval_n; ++i) eval_cache.push_back(features(i));
      }
      const auto preds = predict_labels(model, enc, eval_samples, text_table, classes, cacheable ? &eval_cache : nullptr, 1);
      log.epoch_train_miou.push_back(miou(preds, eval_truth, classes).miou);
    }
    if (progress) {
      std::ostringstream msg;
      msg << to_string(cfg.variant) << " fold " << fold.index << " epoch " << epoch << " loss " << log.epoch_loss.back();
      if (!log.epoch_train_miou.empty()) msg << " train_miou " << log.epoch_train_miou.back();
      progress(msg.str());
    }
  }

  log.encoder_checksum_after = enc.checksum();
  if (log.encoder_checksum_after != log.encoder_checksum_before) {
    throw Error(ErrorCode::ConfigMismatch, "frozen encoder weights changed during training");
  }
  if (!checkpoint_dir.empty()) {
    save_checkpoint(checkpoint_dir, model);
    write_file_atomic(checkpoint_dir / "train_log.txt", log.to_text());
    log.checkpoint = checkpoint_dir.string();
  }
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::size_t default_workers() {
  if (const char* env = std::getenv("BL_NUM_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

PredictionSet predict(const SegModel& model, const FrozenEncoders& enc, const Tensor& image,
                      const std::string& image_id, const std::vector<std::string>& categories) {
  NoGradGuard guard;
  const Tensor text = enc.encode_text(categories).embeddings;
  const VisualFeatures vf = model.encode_image(enc, image, image_id);
  return predict_masks(model.logits(vf, text), model.config().decoder, categories);
}

FoldReport evaluate(const SegModel& model, const FrozenEncoders& enc, const FoldSpec& fold, const Dataset& data,
                    const EvalOptions& options) {
  if (data.samples.empty()) throw Error(ErrorCode::EmptyEvaluation, "evaluation set is empty");
  const std::vector<std::string>& classes = fold.test_categories;
  for (const auto& s : data.samples)
    for (const auto& c : s.categories)
      if (!fold.is_test(c)) {
        throw Error(ErrorCode::CategoryMismatch, "sample " + s.id + " carries '" + c + "', not a test category of fold " +
                                                     std::to_string(fold.index));
      }

  Tensor text;
  {
    NoGradGuard guard;
    text = enc.encode_text(classes).embeddings;
  }
  std::vector<const SegmentationSample*> samples;
  std::vector<LabelMap> truth;
  for (const auto& s : data.samples) {
    samples.push_back(&s);
    truth.push_back(remap_labels(s, classes));
  }
  const std::size_t workers = options.workers ? options.workers : default_workers();

  std::vector<LabelMap> preds;
  if (options.mask_dir.empty()) {
    preds = predict_labels(model, enc, samples, text, classes, nullptr, workers);
  } else {
    for (const auto* s : samples) {
      NoGradGuard guard;
      PredictionSet ps = predict_masks(model.logits(model.encode_image(enc, s->image, s->id), text),
                                       model.config().decoder, classes);
      write_prediction_pgms(options.mask_dir / s->id, ps);
      preds.push_back(std::move(ps.labels));
    }
  }

  IouAccumulator acc(classes);
  std::string jsonl;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    acc.add(preds[i], truth[i]);
    if (!options.metrics_jsonl.empty()) {
      IouAccumulator one(classes);
      one.add(preds[i], truth[i]);
      const FoldReport r = one.report();
      std::string line = "{\"id\":" + nlohmann::json(samples[i]->id).dump() + ",\"iou\":{";
      for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        line += (k ? "," : "") + nlohmann::json(r.per_class[k].name).dump() + ":" + json_number_or_null(r.per_class[k]);
      }
      jsonl += line + "}}\n";
    }
  }
  if (!options.metrics_jsonl.empty()) write_file_atomic(options.metrics_jsonl, jsonl);
  return acc.report();
}

void write_prediction_pgms(const fs::path& dir, const PredictionSet& prediction) {
  const std::size_t h = prediction.labels.h, w = prediction.labels.w, n = h * w;
  const auto m = prediction.masks.data();
  for (std::size_t k = 0; k < prediction.categories.size(); ++k) {
    GrayImage g{h, w, std::vector<std::uint8_t>(n)};
    for (std::size_t i = 0; i < n; ++i) g.pixels[i] = m[k * n + i] > 0.5 ? 255 : 0;
    write_pgm(dir / ("mask_" + std::to_string(k) + "_" + sanitize(prediction.categories[k]) + ".pgm"), g);
  }
  GrayImage g{h, w, std::vector<std::uint8_t>(n)};
  for (std::size_t i = 0; i < n; ++i) g.pixels[i] = static_cast<std::uint8_t>(std::min<std::int32_t>(255, prediction.labels.labels[i]));
  write_pgm(dir / "labels.pgm", g);
}

const AblationRow& AblationTable::row(AblationVariant v) const {
  for (const auto& r : rows)
    if (r.variant == v) return r;
  throw Error(ErrorCode::UnknownKey, "no ablation row for " + to_string(v));
}

std::string AblationTable::to_text() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "variant  F_Emb  Fusion  Visual_Decoder  5^0     5^1     5^2     5^3     mIoU\n";
  for (const auto& r : rows) {
    const VariantFlags f = flags_of(r.variant);
    out << to_string(r.variant) << "    " << (f.use_fourier ? "yes" : "no ") << "    " << (f.use_fusion ? "yes" : "no ")
        << "     " << (f.use_decoder ? "yes" : "no ") << "             ";
    for (double v : r.fold_miou) out << v << "  ";
    out << r.miou << "\n";
  }
  return out.str();
}

AblationTable run_ablation(const ExperimentConfig& base, const FrozenEncoders& enc, const ProgressFn& progress) {
  base.validate();
  AblationTable table;
  table.seed = base.seed;
  const std::array<AblationVariant, 3> variants = {AblationVariant::B_L_0, AblationVariant::B_L_1, AblationVariant::B_L_2};
  for (AblationVariant v : variants) table.rows.push_back(AblationRow{v, {}, 0.0});
  for (std::size_t f = 0; f < 4; ++f) {
    const FoldData fd = make_synthetic_fold(base.seed, f, base.data, base.num_train, base.num_test);
    for (std::size_t r = 0; r < variants.size(); ++r) {
      ExperimentConfig cfg = base;
      cfg.variant = variants[r];
      cfg.fold = f;
      const TrainResult tr = train(cfg, enc, fd.train, fd.fold, {}, progress);
      const FoldReport rep = evaluate(tr.model, enc, fd.fold, fd.test);
      table.rows[r].fold_miou[f] = rep.miou;
      if (progress) progress(to_string(variants[r]) + " fold " + std::to_string(f) + " test mIoU " + std::to_string(rep.miou));
    }
  }
  for (auto& r : table.rows) r.miou = (r.fold_miou[0] + r.fold_miou[1] + r.fold_miou[2] + r.fold_miou[3]) / 4.0;
  return table;
}

}  // namespace bl
