#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "anerf/training.hpp"

namespace anerf {

/// Invalid configuration text or value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RenderConfig {
  int samples = 64;
  int chunk = 4096;
};

/// Every tunable of a run. Text form: one `key = value` per line, `#` comments.
struct RunConfig {
  std::uint64_t seed = 0;
  DatasetManifest data{};
  ModelConfig model{};
  TrainConfig train{};
  FewShotConfig finetune{};
  RenderConfig render{};
};

/// Applies `key = value` lines; unknown keys and malformed values throw ConfigError.
void apply_config_text(RunConfig& config, const std::string& text);
void apply_config_value(RunConfig& config, const std::string& key, const std::string& value);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical text with every key, in a fixed order.
std::string config_text(const RunConfig& config);
/// All keys with their default values.
std::map<std::string, std::string> config_defaults();

/// Named override sets: "ci" (desk-scale acceptance run) and "full" (64x64
/// images, 5000 pretraining and 2000 fine-tuning steps).
const std::map<std::string, std::string>& config_presets();
void apply_preset(RunConfig& config, const std::string& name);

std::uint64_t fnv1a64(std::string_view bytes);
/// 16 hex digits of the FNV-1a hash of the canonical text.
std::string config_hash(const RunConfig& config);

}  // namespace anerf
