#include "anerf/config.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace anerf {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string format(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + text + "' for " + key);
  return v;
}

// Binds each key to a field; used for parsing, printing and hashing alike.
struct Field {
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

template <typename T>
Field bind(const std::string& key, T& field) {
  if constexpr (std::is_same_v<T, bool>) {
    return {[&field] { return std::string(field ? "true" : "false"); },
            [&field, key](const std::string& v) {
              if (v == "true" || v == "1") field = true;
              else if (v == "false" || v == "0") field = false;
              else throw ConfigError("invalid boolean '" + v + "' for " + key);
            }};
  } else if constexpr (std::is_same_v<T, Ablation>) {
    return {[&field] { return ablation_name(field); },
            [&field, key](const std::string& v) {
              try {
                field = parse_ablation(v);
              } catch (const ContractError& e) {
                throw ConfigError(key + ": " + e.what());
              }
            }};
  } else if constexpr (std::is_floating_point_v<T>) {
    return {[&field] { return format(field); }, [&field, key](const std::string& v) { field = parse_number<T>(key, v); }};
  } else {
    return {[&field] { return std::to_string(field); },
            [&field, key](const std::string& v) { field = parse_number<T>(key, v); }};
  }
}

std::vector<std::pair<std::string, Field>> fields(RunConfig& c) {
  std::vector<std::pair<std::string, Field>> f;
  auto add = [&f](const std::string& key, auto& field) { f.emplace_back(key, bind(key, field)); };
  add("seed", c.seed);
  add("data.train_actors", c.data.train_actors);
  add("data.test_actors", c.data.test_actors);
  add("data.frames", c.data.frames);
  add("data.eval_views", c.data.eval_views);
  add("data.width", c.data.width);
  add("data.height", c.data.height);
  add("data.camera_distance", c.data.camera_distance);
  add("data.focal_factor", c.data.focal_factor);
  add("model.bones", c.model.bones);
  add("model.support_frames", c.model.support_frames);
  add("model.skinning_resolution", c.model.skinning_resolution);
  add("model.feature_resolution", c.model.feature_resolution);
  add("model.feature_channels", c.model.feature_channels);
  add("model.encoder_hidden", c.model.encoder_hidden);
  add("model.volume_channels", c.model.volume_channels);
  add("model.surface_vertices", c.model.surface_vertices);
  add("model.pe_frequencies", c.model.pe_frequencies);
  add("model.deform_width", c.model.deform_width);
  add("model.deform_depth", c.model.deform_depth);
  add("model.render_width", c.model.render_width);
  add("model.render_depth", c.model.render_depth);
  add("model.delta_max", c.model.delta_max);
  add("model.density_scale", c.model.density_scale);
  add("model.canonical_pad", c.model.canonical_pad);
  add("model.use_view_dir", c.model.use_view_dir);
  add("model.ablation", c.model.ablation);
  add("model.warp_eps", c.model.warp.eps);
  add("model.tau_empty", c.model.warp.tau_empty);
  add("train.patch_size", c.train.patch_size);
  add("train.patches_per_step", c.train.patches_per_step);
  add("train.lr", c.train.adam.lr);
  add("train.beta1", c.train.adam.beta1);
  add("train.beta2", c.train.adam.beta2);
  add("train.adam_eps", c.train.adam.eps);
  add("train.steps", c.train.steps);
  add("train.lambda_mse", c.train.weights.mse);
  add("train.lambda_perc", c.train.weights.perc);
  add("train.lambda_w", c.train.weights.w);
  add("train.w_decay_fraction", c.train.w_decay_fraction);
  add("train.samples", c.train.samples);
  add("train.checkpoint_every", c.train.checkpoint_every);
  add("finetune.shots", c.finetune.shots);
  add("finetune.steps", c.finetune.steps);
  add("finetune.lambda_mse", c.finetune.weights.mse);
  add("finetune.lambda_perc", c.finetune.weights.perc);
  add("render.samples", c.render.samples);
  add("render.chunk", c.render.chunk);
  return f;
}

}  // namespace

void apply_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (auto& [name, field] : fields(config)) {
    if (name == key) {
      field.set(value);
      config.data.seed = config.seed;
      config.data.bones = config.model.bones;
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key = value");
    apply_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig c;
  try {
    apply_config_text(c, read_file(path));
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

std::string config_text(const RunConfig& config) {
  RunConfig copy = config;
  std::string out;
  for (auto& [name, field] : fields(copy)) out += name + " = " + field.get() + "\n";
  return out;
}

std::map<std::string, std::string> config_defaults() {
  RunConfig c;
  std::map<std::string, std::string> out;
  for (auto& [name, field] : fields(c)) out[name] = field.get();
  return out;
}

const std::map<std::string, std::string>& config_presets() {
  static const std::map<std::string, std::string> presets = {
      {"ci",
       "data.width = 32\ndata.height = 32\n"
       "model.skinning_resolution = 24\nmodel.feature_resolution = 12\nmodel.surface_vertices = 512\n"
       "model.deform_width = 64\nmodel.deform_depth = 4\nmodel.render_width = 64\nmodel.render_depth = 5\n"
       "train.samples = 24\ntrain.patches_per_step = 2\ntrain.steps = 1500\n"
       "finetune.steps = 300\nrender.samples = 24\n"},
      {"full", "data.width = 64\ndata.height = 64\ntrain.steps = 5000\nfinetune.steps = 2000\n"},
  };
  return presets;
}

void apply_preset(RunConfig& config, const std::string& name) {
  const auto& presets = config_presets();
  const auto it = presets.find(name);
  if (it == presets.end()) throw ConfigError("unknown preset '" + name + "' (expected ci or full)");
  apply_config_text(config, it->second);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const RunConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config_text(config))));
  return buf;
}

}  // namespace anerf
