#include "bl/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "bl/error.hpp"
#include "bl/tensor_io.hpp"

namespace bl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* what) {
  throw Error(ErrorCode::BadConfig, key + " = '" + value + "': expected " + what);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  in.imbue(std::locale::classic());
  double out = 0;
  in >> out;
  if (!in || !in.eof()) bad(key, v, "a number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, v, "true or false");
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_size(key, item));
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream out;
  out.imbue(std::locale::classic());
  out.precision(17);
  out << v;
  return out.str();
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

// One table drives both directions so the key set cannot drift.
struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)> set;
};

const std::map<std::string, Field>& fields() {
  using C = ExperimentConfig;
  using S = const std::string&;
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    auto sz = [&t](const char* key, std::size_t C::*member) {
      t[key] = {[member](const C& c) { return std::to_string(c.*member); },
                [member](C& c, S k, S v) { c.*member = to_size(k, v); }};
    };
    t["seed"] = {[](const C& c) { return std::to_string(c.seed); }, [](C& c, S k, S v) { c.seed = to_u64(k, v); }};
    sz("image.height", &C::height);
    sz("image.width", &C::width);
    sz("epochs", &C::epochs);
    sz("batch_size", &C::batch_size);
    sz("fold", &C::fold);
    sz("train.candidates", &C::candidates);
    sz("train.eval_images", &C::train_eval_images);
    sz("data.num_train", &C::num_train);
    sz("data.num_test", &C::num_test);
    t["variant"] = {[](const C& c) { return to_string(c.variant); },
                    [](C& c, S, S v) { c.variant = parse_variant(v); }};
    t["learned_position.std"] = {[](const C& c) { return fmt(c.learned_position_std); },
                                 [](C& c, S k, S v) { c.learned_position_std = to_double(k, v); }};
#define BL_SIZE(key, expr)                                                      \
  t[key] = {[](const C& c) { return std::to_string(c.expr); },                  \
            [](C& c, S k, S v) { c.expr = to_size(k, v); }}
#define BL_REAL(key, expr)                                                      \
  t[key] = {[](const C& c) { return fmt(c.expr); }, [](C& c, S k, S v) { c.expr = to_double(k, v); }}
#define BL_BOOL(key, expr)                                                      \
  t[key] = {[](const C& c) { return std::string(c.expr ? "true" : "false"); }, \
            [](C& c, S k, S v) { c.expr = to_bool(k, v); }}
    t["encoder.seed"] = {[](const C& c) { return std::to_string(c.encoder.seed); },
                         [](C& c, S k, S v) { c.encoder.seed = to_u64(k, v); }};
    BL_SIZE("patch", encoder.patch);
    BL_SIZE("encoder.d_v", encoder.d_v);
    BL_SIZE("encoder.d_t", encoder.d_t);
    BL_SIZE("encoder.layers", encoder.layers);
    BL_SIZE("encoder.heads", encoder.heads);
    BL_SIZE("encoder.mlp_ratio", encoder.mlp_ratio);
    BL_SIZE("fourier.num_bands", fourier.num_bands);
    BL_SIZE("fourier.max_resolution", fourier.max_resolution);
    BL_SIZE("fusion.d_fuse", fusion.d_fuse);
    BL_SIZE("fusion.num_layers", fusion.num_layers);
    BL_SIZE("fusion.num_heads", fusion.num_heads);
    BL_SIZE("fusion.mlp_ratio", fusion.mlp_ratio);
    BL_REAL("fusion.init_std", fusion.init_std);
    BL_SIZE("decoder.stages", decoder.stages);
    t["decoder.channels"] = {[](const C& c) { return join(c.decoder.channels); },
                             [](C& c, S k, S v) { c.decoder.channels = to_size_list(k, v); }};
    BL_REAL("decoder.tau", decoder.tau);
    BL_REAL("decoder.threshold", decoder.threshold);
    BL_BOOL("decoder.skip", decoder.skip);
    BL_REAL("decoder.projection_scale", decoder.projection_scale);
    BL_BOOL("decoder.use_fused_text", decoder.use_fused_text);
    BL_REAL("optimizer.learning_rate", optimizer.learning_rate);
    BL_REAL("optimizer.beta1", optimizer.beta1);
    BL_REAL("optimizer.beta2", optimizer.beta2);
    BL_REAL("optimizer.eps", optimizer.eps);
    BL_REAL("optimizer.weight_decay", optimizer.weight_decay);
    BL_SIZE("data.universe_size", data.universe_size);
    BL_SIZE("data.shapes_per_image", data.shapes_per_image);
    BL_REAL("data.noise", data.noise);
    BL_REAL("data.colour_cast", data.colour_cast);
    BL_REAL("data.centre_spread", data.centre_spread);
    BL_REAL("data.radius_min", data.radius_min);
    BL_REAL("data.radius_max", data.radius_max);
#undef BL_SIZE
#undef BL_REAL
#undef BL_BOOL
    return t;
  }();
  return table;
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::BadConfig, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::BadConfig, "line " + std::to_string(lineno) + ": empty key");
    kv.values_[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::BadConfig, "no config file " + path.string());
  return parse(read_file(path));
}

const std::string& KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorCode::BadConfig, "missing key " + key);
  return it->second;
}

std::string KeyValues::to_string() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

VariantFlags flags_of(AblationVariant v) noexcept {
  switch (v) {
    case AblationVariant::B_L_0: return {false, false, true};
    case AblationVariant::B_L_1: return {true, false, true};
    default: return {true, true, true};
  }
}

std::string to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::B_L_0: return "B_L_0";
    case AblationVariant::B_L_1: return "B_L_1";
    default: return "B_L_2";
  }
}

AblationVariant parse_variant(const std::string& text) {
  if (text == "B_L_0") return AblationVariant::B_L_0;
  if (text == "B_L_1") return AblationVariant::B_L_1;
  if (text == "B_L_2") return AblationVariant::B_L_2;
  throw Error(ErrorCode::BadConfig, "unknown variant '" + text + "' (expected B_L_0, B_L_1 or B_L_2)");
}

KeyValues ExperimentConfig::to_key_values() const {
  KeyValues kv;
  for (const auto& [key, field] : fields()) kv.set(key, field.get(*this));
  return kv;
}

ExperimentConfig ExperimentConfig::from_key_values(const KeyValues& kv) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : kv.values()) {
    auto it = fields().find(key);
    if (it == fields().end()) throw Error(ErrorCode::BadConfig, "unknown config key '" + key + "'");
    it->second.set(cfg, key, value);
  }
  cfg.fourier.d = cfg.encoder.d_v;
  cfg.data.height = cfg.height;
  cfg.data.width = cfg.width;
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  return from_key_values(KeyValues::load(path));
}

void ExperimentConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw Error(ErrorCode::BadConfig, std::string(name) + " must be positive");
  };
  positive(height, "image.height");
  positive(width, "image.width");
  positive(encoder.patch, "patch");
  positive(encoder.d_v, "encoder.d_v");
  positive(encoder.d_t, "encoder.d_t");
  positive(encoder.heads, "encoder.heads");
  positive(encoder.mlp_ratio, "encoder.mlp_ratio");
  positive(epochs, "epochs");
  positive(batch_size, "batch_size");
  positive(candidates, "train.candidates");
  if (encoder.d_v % encoder.heads != 0 || encoder.d_t % encoder.heads != 0) {
    throw Error(ErrorCode::BadConfig, "encoder widths must be divisible by encoder.heads");
  }
  if (fourier.d != encoder.d_v) throw Error(ErrorCode::BadConfig, "fourier width must equal encoder.d_v");
  if (fold >= 4) throw Error(ErrorCode::BadFoldIndex, "fold " + std::to_string(fold) + " not in 0..3");
  if (!(learned_position_std > 0)) throw Error(ErrorCode::BadConfig, "learned_position.std must be positive");
  if (flags_of(variant).use_fourier) {
    try {
      fourier.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::BadConfig, e.what());
    }
  }
  const PatchGrid grid = PatchGrid::for_image(height, width, encoder.patch);
  if (grid.h > fourier.max_resolution || grid.w > fourier.max_resolution) {
    throw Error(ErrorCode::BadConfig, "token grid exceeds fourier.max_resolution");
  }
  fusion.validate();
  decoder.validate();
  if ((std::size_t{1} << decoder.stages) != encoder.patch) {
    throw Error(ErrorCode::BadConfig, "decoder.stages must satisfy 2^stages == patch");
  }
  if (!(optimizer.learning_rate > 0) || !(optimizer.eps > 0) || !(optimizer.beta1 >= 0 && optimizer.beta1 < 1) ||
      !(optimizer.beta2 >= 0 && optimizer.beta2 < 1) || !(optimizer.weight_decay >= 0)) {
    throw Error(ErrorCode::BadConfig, "optimizer hyperparameters out of range");
  }
  data.validate();
}

}  // namespace bl
