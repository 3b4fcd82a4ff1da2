#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "anerf/config.hpp"

namespace anerf {

inline constexpr std::array<char, 12> kCheckpointMagic = {'A', 'N', 'E', 'R', 'F', '-', 'C', 'K', 'P', 'T', '\r', '\n'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: 12-byte magic, uint32 version, uint64 index length, JSON index,
/// then little-endian float64 blobs (parameters, then Adam moments) at the
/// offsets listed in the index.
struct Checkpoint {
  RunConfig config;
  std::string stage;  // "pretrain" or "finetune"
  std::string actor;  // finetuned actor id, empty after pretraining
  TrainState state;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Throws ContractError on a bad magic, version or truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace anerf
