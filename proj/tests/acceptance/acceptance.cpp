// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "bl/checkpoint.hpp"
#include "bl/data.hpp"
#include "bl/error.hpp"
#include "bl/fourier.hpp"
#include "bl/fusion.hpp"
#include "bl/metrics.hpp"
#include "bl/nn.hpp"
#include "bl/ops.hpp"
#include "bl/rng.hpp"
#include "bl/seg_head.hpp"
#include "bl/tensor_io.hpp"
#include "bl/trainer.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace bl;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1e", v);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

Tensor rand_tensor(Rng& rng, Shape s, double lo = -2, double hi = 2, bool grad = true) {
  return bltest::random_tensor(rng, std::move(s), lo, hi, grad);
}

// 1. Finite-difference gradients for every trainable component.
Outcome gradients() {
  Outcome o;
  const double start = cpu_seconds();
  double worst = 0.0;
  std::string worst_what;
  auto record = [&](const bltest::GradCheck& g, const std::string& what) {
    if (g.worst() > worst) {
      worst = g.worst();
      worst_what = what + ":" + g.worst_name();
    }
  };
  Rng rng(101);
  for (int inst = 0; inst < 20; ++inst) {
    // theta MLP
    {
      const std::size_t in = 2 + rng.index(5), out = 2 + rng.index(5), n = 1 + rng.index(4);
      Rng init(inst);
      const Mlp2 mlp = Mlp2::init(init, in, out, true);
      Tensor x = rand_tensor(rng, {n, in});
      NamedTensors p;
      mlp.collect("theta", p);
      p.emplace_back("x", x);
      record(bltest::gradcheck([&] { return bltest::weighted_sum(mlp(x), 1); }, p), "theta");
    }
    // fusion layers
    {
      FusionConfig cfg;
      cfg.num_heads = 1 + rng.index(2);
      cfg.d_fuse = cfg.num_heads * (2 + rng.index(3));
      cfg.num_layers = 1;
      cfg.mlp_ratio = 2;
      cfg.init_std = 0.3;
      const std::size_t dv = 2 + rng.index(4), dt = 2 + rng.index(4), nv = 2 + rng.index(3), nt = 1 + rng.index(2);
      Rng init(1000 + inst);
      const auto f = FusionModule::init(cfg, dv, dt, init, true);
      Tensor v = rand_tensor(rng, {nv, dv}), t = rand_tensor(rng, {nt, dt});
      NamedTensors p = f.parameters();
      p.emplace_back("visual", v);
      p.emplace_back("text", t);
      record(bltest::gradcheck(
                 [&] {
                   const auto fused = f.fuse(v, t);
                   return add(bltest::weighted_sum(fused.visual, 2), bltest::weighted_sum(fused.text, 3));
                 },
                 p),
             "fusion");
    }
    // decoder convolutions
    {
      DecoderConfig cfg;
      cfg.stages = 1 + rng.index(2);
      cfg.channels.clear();
      std::size_t c = 2 + rng.index(3);
      for (std::size_t s = 0; s < cfg.stages; ++s) {
        cfg.channels.push_back(c);
        c = std::max<std::size_t>(1, c - rng.index(2));
      }
      cfg.projection_scale = 1.0;
      const std::size_t d = 2 + rng.index(3);
      Rng init(2000 + inst);
      const Decoder dec = Decoder::init(cfg, d, init);
      const PatchGrid grid{1 + rng.index(2), 1 + rng.index(2), std::size_t{1} << cfg.stages};
      Tensor tokens = rand_tensor(rng, {grid.tokens(), d});
      NamedTensors p = dec.parameters();
      p.emplace_back("tokens", tokens);
      record(bltest::gradcheck([&] { return bltest::weighted_sum(dec.decode(tokens, grid), 4); }, p), "decoder");
    }
    // learned-position baseline, through the frozen encoder and the cosine head
    {
      ExperimentConfig cfg = ExperimentConfig::from_key_values(KeyValues::parse(
          "image.height = 8\nimage.width = 8\npatch = 4\nencoder.d_v = 8\nencoder.d_t = 8\nencoder.heads = 2\n"
          "fusion.d_fuse = 8\nfusion.num_heads = 2\ndecoder.stages = 2\ndecoder.channels = 3,2\n"
          "variant = B_L_0\nlearned_position.std = 0.5\n"));
      cfg.seed = static_cast<std::uint64_t>(inst);
      cfg.encoder.seed = 7 + static_cast<std::uint64_t>(inst);
      const auto enc = FrozenEncoders::stub(cfg.encoder);
      const SegModel model = SegModel::init(cfg, 8, 8);
      const Tensor image = rand_tensor(rng, {8, 8, 3}, 0, 1, false);
      const Tensor text = rand_tensor(rng, {2, 8}, -1, 1, false);
      NamedTensors p{{"position_table", model.position_table()}};
      record(bltest::gradcheck(
                 [&] { return bltest::weighted_sum(model.logits(model.encode_image(enc, image, "x"), text), 5); }, p),
             "position_table");
    }
  }
  const double secs = cpu_seconds() - start;
  o.require(worst <= 1e-4, "max relative error " + std::to_string(worst) + " at " + worst_what);
  o.require(secs < 120.0, "took " + std::to_string(secs) + " s CPU");
  char buf[160];
  std::snprintf(buf, sizeof buf, "80 instances, max rel err %.2e, %.1f s CPU", worst, secs);
  if (o.pass) o.detail = buf;
  return o;
}

// 2. miou() against a confusion-count oracle.
Outcome miou_oracle() {
  Outcome o;
  Rng rng(202);
  double worst = 0.0;
  std::size_t absent_cases = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t labels = trial % 5 == 0 ? 3 : 4;  // every fifth case never uses class c
    LabelMap p(8, 8), g(8, 8);
    for (auto& l : p.labels) l = static_cast<std::int32_t>(rng.index(labels));
    for (auto& l : g.labels) l = static_cast<std::int32_t>(rng.index(labels));
    std::size_t inter[4] = {}, pred_n[4] = {}, gt_n[4] = {};
    for (std::size_t i = 0; i < 64; ++i) {
      ++pred_n[p.labels[i]];
      ++gt_n[g.labels[i]];
      if (p.labels[i] == g.labels[i]) ++inter[p.labels[i]];
    }
    const FoldReport r = miou({p}, {g}, {"a", "b", "c"});
    double mean = 0.0;
    for (std::size_t c = 1; c <= 3; ++c) {
      const std::size_t uni = pred_n[c] + gt_n[c] - inter[c];
      const double iou = uni == 0 ? 1.0 : static_cast<double>(inter[c]) / static_cast<double>(uni);
      absent_cases += uni == 0;
      mean += iou / 3.0;
      worst = std::max(worst, std::abs(iou - r.per_class[c - 1].iou));
      o.require(r.per_class[c - 1].absent == (uni == 0), "absent flag");
    }
    worst = std::max(worst, std::abs(mean - r.miou));
  }
  o.require(worst <= 1e-12, "max deviation " + sci(worst));
  o.require(absent_cases > 0, "no absent-class case exercised");
  if (o.pass) o.detail = "1000 cases, " + std::to_string(absent_cases) + " absent-class scores, max deviation " + sci(worst);
  return o;
}

double cosine(const double* a, const double* b, std::size_t d) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < d; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// 3. Fourier position properties.
Outcome fourier_properties() {
  Outcome o;
  const FourierConfig cfg;
  // determinism and additivity
  Rng rng(303);
  const PatchGrid g4{4, 4, 8};
  const Tensor x = rand_tensor(rng, {16, 64}, -2, 2, false);
  const Tensor y1 = apply_positional(x, g4, cfg), y2 = apply_positional(x, g4, cfg);
  const Tensor field = positional_field(g4, cfg);
  bool same = true, additive = true;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    same &= y1[i] == y2[i];
    additive &= y1[i] - x[i] == field[i] || y1[i] == x[i] + field[i];
  }
  o.require(same, "not deterministic");
  o.require(additive, "not additive");
  // injectivity
  for (std::size_t h = 1; h <= 16; ++h)
    for (std::size_t w = 1; w <= 16; ++w) {
      const Tensor f = positional_field({h, w, 8}, cfg);
      std::set<std::vector<double>> seen;
      for (std::size_t t = 0; t < h * w; ++t) seen.emplace(f.data().begin() + t * 64, f.data().begin() + (t + 1) * 64);
      if (seen.size() != h * w) o.require(false, "collision on " + std::to_string(h) + "x" + std::to_string(w));
    }
  // smoothness
  for (std::size_t h = 4; h <= 16; ++h)
    for (std::size_t w = 4; w <= 16; ++w) {
      const Tensor f = positional_field({h, w, 8}, cfg);
      const double* d = f.data().data();
      double min_adj = 2.0, max_far = -2.0;
      for (std::size_t a = 0; a < h * w; ++a)
        for (std::size_t b = a + 1; b < h * w; ++b) {
          const long dy = std::labs(static_cast<long>(a / w) - static_cast<long>(b / w));
          const long dx = std::labs(static_cast<long>(a % w) - static_cast<long>(b % w));
          const double c = cosine(d + a * 64, d + b * 64, 64);
          if (dx + dy == 1) min_adj = std::min(min_adj, c);
          if (2 * dx >= static_cast<long>(w) || 2 * dy >= static_cast<long>(h)) max_far = std::max(max_far, c);
        }
      if (!(min_adj > max_far)) o.require(false, "smoothness fails on " + std::to_string(h) + "x" + std::to_string(w));
    }
  // 2x the training grid through a full model
  try {
    ExperimentConfig ec;
    const auto enc = FrozenEncoders::stub(ec.encoder);
    const SegModel m = SegModel::init(ec, enc.d_v(), enc.d_t());
    const Tensor big = rand_tensor(rng, {2 * ec.height, 2 * ec.width, 3}, 0, 1, false);
    const PredictionSet ps = predict(m, enc, big, "big", {"pale red", "dark green"});
    bool finite = ps.probs.shape() == Shape{2, 2 * ec.height, 2 * ec.width};
    for (double v : ps.probs.data()) finite &= std::isfinite(v);
    o.require(finite, "non-finite or misshaped output at 2x resolution");
  } catch (const std::exception& e) {
    o.require(false, std::string("2x resolution raised: ") + e.what());
  }
  if (o.pass) o.detail = "injective 1..16 squared, smooth 4..16 squared, 8x8 grid evaluates";
  return o;
}

// 4. fuse() shape contract and cross-modal flow.
Outcome fusion_contract() {
  Outcome o;
  Rng rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    FusionConfig cfg;
    cfg.num_heads = 1 + rng.index(4);
    cfg.d_fuse = cfg.num_heads * (2 + rng.index(8));
    cfg.num_layers = 1 + rng.index(3);
    cfg.mlp_ratio = 1 + rng.index(4);
    const std::size_t dv = 2 + rng.index(30), dt = 2 + rng.index(30), nv = 1 + rng.index(40), nt = 1 + rng.index(8);
    Rng init(trial);
    const auto f = FusionModule::init(cfg, dv, dt, init, true);
    const auto out = f.fuse(rand_tensor(rng, {nv, dv}, -1, 1, false), rand_tensor(rng, {nt, dt}, -1, 1, false));
    o.require(out.visual.shape() == Shape{nv, cfg.d_fuse} && out.text.shape() == Shape{nt, cfg.d_fuse},
              "shape changed in trial " + std::to_string(trial));
  }
  int flowed = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng r(5000 + seed), init(6000 + seed);
    const auto f = FusionModule::init(FusionConfig{}, 64, 64, init, true);
    const Tensor v = rand_tensor(r, {16, 64}, -1, 1, false);
    const Tensor t = rand_tensor(r, {5, 64}, -1, 1, false);
    Tensor t2 = t.clone();
    for (double& x : t2.mutable_data()) x += r.normal(0.0, 0.1);
    const Tensor a = f.fuse(v, t).visual, b = f.fuse(v, t2).visual;
    double diff = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    flowed += diff > 1e-9;
  }
  o.require(flowed >= 9, "text perturbation reached visual tokens on only " + std::to_string(flowed) + "/10 seeds");
  if (o.pass) o.detail = "20/20 shape trials, cross-modal flow on " + std::to_string(flowed) + "/10 seeds";
  return o;
}

// 5. Zero-shot protocol integrity.
Outcome protocol_integrity() {
  Outcome o;
  ExperimentConfig cfg;
  cfg.epochs = 1;
  const auto enc = FrozenEncoders::stub(cfg.encoder);
  for (std::size_t f = 0; f < 4; ++f) {
    const FoldData fd = make_synthetic_fold(cfg.seed, f, cfg.data, cfg.num_train, cfg.num_test);
    try {
      audit_training_stream(fd.train, fd.fold);
    } catch (const Error& e) {
      o.require(false, "fold " + std::to_string(f) + " audit: " + e.what());
    }
    for (const auto& s : fd.train.samples)
      for (const auto& c : s.categories)
        if (fd.fold.is_test(c)) o.require(false, "fold " + std::to_string(f) + " stream carries " + c);
    Dataset leaked = fd.train;
    leaked.samples.insert(leaked.samples.begin() + static_cast<long>(leaked.samples.size() / 2), fd.test.samples[0]);
    cfg.fold = f;
    o.require(code_of([&] { (void)train(cfg, enc, leaked, fd.fold); }) == ErrorCode::LeakedTestCategory,
              "injected leak not caught on fold " + std::to_string(f));
  }
  const std::vector<std::vector<std::string>> table{
      {"aeroplane", "bicycle", "bird", "boat", "bottle"},
      {"bus", "car", "cat", "chair", "cow"},
      {"diningtable", "dog", "horse", "motor-bike", "person"},
      {"potted plant", "sheep", "sofa", "train", "tv/monitor"},
  };
  for (std::size_t f = 0; f < 4; ++f)
    o.require(make_fold(f, pascal_universe()).test_categories == table[f], "PASCAL fold " + std::to_string(f));
  if (o.pass) o.detail = "4 synthetic folds audited, leaks caught, PASCAL folds verbatim";
  return o;
}

// 6. Desk-scale ablation ordering.
Outcome ablation_ordering() {
  Outcome o;
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  int b2_over_b0 = 0, full = 0;
  double worst_variant_cpu = 0.0;
  std::string rows;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig base;
    base.seed = seed;
    const auto enc = FrozenEncoders::stub(base.encoder);
    std::array<double, 3> m{};
    for (std::size_t vi = 0; vi < 3; ++vi) {
      const double start = cpu_seconds();
      double total = 0.0;
      for (std::size_t f = 0; f < 4; ++f) {
        ExperimentConfig cfg = base;
        cfg.variant = static_cast<AblationVariant>(vi);
        cfg.fold = f;
        const FoldData fd = make_synthetic_fold(cfg.seed, f, cfg.data, cfg.num_train, cfg.num_test);
        const TrainResult r = train(cfg, enc, fd.train, fd.fold);
        total += evaluate(r.model, enc, fd.fold, fd.test).miou;
      }
      m[vi] = total / 4.0;
      worst_variant_cpu = std::max(worst_variant_cpu, cpu_seconds() - start);
    }
    b2_over_b0 += m[2] > m[0];
    full += m[2] > m[1] && m[1] > m[0];
    char buf[128];
    std::snprintf(buf, sizeof buf, "  seed %llu: B_L_0 %.4f  B_L_1 %.4f  B_L_2 %.4f\n",
                  static_cast<unsigned long long>(seed), m[0], m[1], m[2]);
    rows += buf;
    std::fputs(buf, stdout);
    std::fflush(stdout);
  }
  o.require(b2_over_b0 == 3, "B_L_2 > B_L_0 on " + std::to_string(b2_over_b0) + "/3 seeds");
  o.require(full >= 2, "full ordering on " + std::to_string(full) + "/3 seeds");
  o.require(worst_variant_cpu <= 600.0, "a variant took " + std::to_string(worst_variant_cpu) + " s CPU");
  char buf[160];
  std::snprintf(buf, sizeof buf, "B_L_2 > B_L_0 on %d/3, full ordering on %d/3, slowest variant %.0f s CPU", b2_over_b0,
                full, worst_variant_cpu);
  if (o.pass) o.detail = buf;
  return o;
}

// 7. Segmentation head contracts.
Outcome head_contracts() {
  Outcome o;
  Rng rng(707);
  for (double tau : {1e-4, 0.07, 1.0, 10.0}) {
    DecoderConfig cfg;
    cfg.tau = tau;
    const auto ps = predict_masks(Tensor::zeros({1, 2, 2}), cfg, {"a"});
    for (double p : ps.probs.data()) o.require(p == 0.5, "sigmoid(0) != 0.5 at tau " + std::to_string(tau));
  }
  double worst_scale = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 1 + rng.index(6), w = 1 + rng.index(6), d = 2 + rng.index(10), c = 1 + rng.index(5);
    const Tensor feat = rand_tensor(rng, {h, w, d}, -3, 3, false);
    const Tensor text = rand_tensor(rng, {c, d}, -3, 3, false);
    const Tensor a = similarity_logits(feat, text);
    for (double v : a.data()) o.require(v >= -1.0 && v <= 1.0, "logit outside [-1, 1]");
    Tensor scaled = feat.clone();
    auto s = scaled.mutable_data();
    for (std::size_t px = 0; px < h * w; ++px) {
      const double lambda = std::exp(rng.uniform(-6, 6));
      for (std::size_t k = 0; k < d; ++k) s[px * d + k] *= lambda;
    }
    const Tensor b = similarity_logits(scaled, text);
    for (std::size_t i = 0; i < a.numel(); ++i) worst_scale = std::max(worst_scale, std::abs(a[i] - b[i]));
    DecoderConfig cfg;
    cfg.tau = rng.uniform(0.01, 1.0);
    cfg.threshold = rng.uniform(0.1, 0.9);
    std::vector<std::string> names;
    for (std::size_t k = 0; k < c; ++k) names.push_back("c" + std::to_string(k));
    cfg.class_thresholds[names[0]] = rng.uniform(0.1, 0.9);
    const auto ps = predict_masks(a, cfg, names);
    const std::size_t n = h * w;
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < n; ++i)
        o.require(ps.masks[k * n + i] == (ps.probs[k * n + i] >= ps.thresholds[k] ? 1.0 : 0.0), "mask mismatch");
  }
  o.require(worst_scale <= 1e-12, "rescaling changed a logit by " + sci(worst_scale));
  if (o.pass) o.detail = "max rescaling deviation " + sci(worst_scale);
  return o;
}

std::string dir_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.filename().string() + "\n" + read_file(f);
  return all;
}

// 8. Bit-identical reruns and untouched encoders.
Outcome reproducibility() {
  Outcome o;
  ExperimentConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 8;
  const auto enc = FrozenEncoders::stub(cfg.encoder);
  const std::uint64_t before = enc.checksum();
  const FoldData fd = make_synthetic_fold(cfg.seed, cfg.fold, cfg.data, 60, 10);
  const fs::path root = fs::temp_directory_path() / "bl_acceptance_repro";
  fs::remove_all(root);
  const TrainResult a = train(cfg, enc, fd.train, fd.fold, root / "a");
  const TrainResult b = train(cfg, enc, fd.train, fd.fold, root / "b");
  o.require(a.log.step_loss == b.log.step_loss, "loss sequences differ");
  o.require(read_file(root / "a" / "train_log.txt") == read_file(root / "b" / "train_log.txt"), "train logs differ");
  o.require(dir_bytes(root / "a") == dir_bytes(root / "b"), "checkpoints differ");
  o.require(a.log.encoder_checksum_before == a.log.encoder_checksum_after && enc.checksum() == before,
            "encoder checksum changed");
  if (o.pass) o.detail = std::to_string(a.log.step_loss.size()) + " identical steps, checkpoints byte-equal";
  return o;
}

}  // namespace

// Optional arguments select criteria by number; none runs all of them.
int main(int argc, char** argv) {
#ifdef __GLIBC__
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 gradient correctness", gradients},
      {"2 mIoU oracle equivalence", miou_oracle},
      {"3 Fourier position properties", fourier_properties},
      {"4 fusion shape contract", fusion_contract},
      {"5 zero-shot protocol integrity", protocol_integrity},
      {"6 ablation ordering", ablation_ordering},
      {"7 segmentation head contracts", head_contracts},
      {"8 reproducibility", reproducibility},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0, ran = 0;
  for (std::size_t idx = 0; idx < criteria.size(); ++idx) {
    const auto& [name, fn] = criteria[idx];
    if (!only.empty() && only.count(static_cast<int>(idx) + 1) == 0) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
