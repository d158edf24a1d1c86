#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vslnet/optim.hpp"

namespace vslnet {

// Binary checkpoint layout (all integers little-endian):
//
//   offset 0   8 bytes   magic "VSLCKPT\0"
//   offset 8   u32       format version (1)
//   offset 12  u32       reserved, 0
//   offset 16  u64       manifest length L in bytes
//   offset 24  L bytes   UTF-8 JSON manifest
//   offset 24+L          payload: IEEE-754 arrays, row-major, little-endian
//
// The manifest is {"metadata": {...}, "tensors": [{"path", "shape", "dtype",
// "offset", "bytes"}, ...]} where offset is relative to the payload start and
// dtype is "f32" or "f64". Optimizer moments are stored as "adam/m/<path>" and
// "adam/v/<path>", with the step counter in metadata["adam_step"].
inline constexpr char kCheckpointMagic[8] = {'V', 'S', 'L', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointContents {
  nlohmann::json metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& path) const;
};

void write_checkpoint(const std::filesystem::path& file, const ParamStore& params,
                      const AdamState* adam, const nlohmann::json& metadata);

CheckpointContents read_checkpoint(const std::filesystem::path& file);

// Copies checkpoint tensors into `params`; every parameter path must be present
// with a matching shape. Values are converted to the store's dtype.
void restore_params(const CheckpointContents& ckpt, ParamStore& params);
void restore_adam(const CheckpointContents& ckpt, const ParamStore& params, AdamState& adam);

}  // namespace vslnet
