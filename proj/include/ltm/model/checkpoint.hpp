#pragma once

#include <filesystem>
#include <string>

#include "ltm/model/pretrain.hpp"

namespace ltm::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian):
//   "LTMCKPT\0" | u32 version | u64 header length | header JSON
//   u32 array count | per array: u32 name length, name, u32 rank,
//   u64 dims[rank], f32 payload
// The header holds the model config, optimizer step and hyper-parameters,
// and the seed. Arrays are the parameters followed by "adam.m/<name>" and
// "adam.v/<name>" moments.
std::string serialize_checkpoint(const TrainState& state);
/// With `expected`, arrays are checked against its shapes and the stored
/// config must equal it.
TrainState deserialize_checkpoint(std::string_view bytes, const ModelConfig* expected = nullptr);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
/// Throws CheckpointError on bad magic, version, or array shape mismatches.
TrainState load_checkpoint(const std::filesystem::path& path);

TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected);

}  // namespace ltm::model
