#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cl3r/autodiff/tensor.hpp"
#include "cl3r/config.hpp"
#include "cl3r/optimizer.hpp"

namespace cl3r {

constexpr std::uint32_t kCheckpointFormatVersion = 1;

// Binary layout, little-endian:
//   "CL3R" | u32 format_version | u64 step
//   u64 n | n bytes config JSON
//   u64 n | n bytes manifest JSON {entries: [{name, shape, offset, count, decay}], optimizer_step}
//   u64 n | n bytes float32 blobs in manifest order
// Optimizer moments are stored as entries "adam.m/<name>" and "adam.v/<name>".
struct Checkpoint {
  TrainConfig config;
  std::int64_t step = 0;
  ad::ParameterStore<float> params;
  AdamState<float> optimizer;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// `source` names the origin in error messages.
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source);

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace cl3r
