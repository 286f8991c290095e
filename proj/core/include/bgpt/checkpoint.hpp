#pragma once

// Checkpoint layout (all integers little-endian):
//   "BGPTCKPT"            8-byte magic
//   u32 version           currently 1
//   u64 n, n bytes        model config as JSON text
//   u32 count             number of parameters
//   per parameter:
//     u32 n, n bytes      name
//     u32 rank, u64[rank] shape
//     f32[prod(shape)]    values

#include <filesystem>
#include <optional>
#include <span>

#include "bgpt/model.hpp"

namespace bgpt {

inline constexpr char kCheckpointMagic[8] = {'B', 'G', 'P', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

Bytes serialize_checkpoint(const ModelParams<float>& params);

/// Parses a checkpoint. When `expected` is given, the stored config must match
/// it exactly (classifier head aside) or nothing is loaded.
ModelParams<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                                          const std::optional<ModelConfig>& expected = {});

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params);
ModelParams<float> load_checkpoint(const std::filesystem::path& path,
                                   const std::optional<ModelConfig>& expected = {});

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace bgpt
