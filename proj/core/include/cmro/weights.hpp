#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmro/model.hpp"
#include "cmro/preprocess.hpp"

// Model weights container. All integers little-endian:
//
//   "CMRO" | version u32 | modality: u16 length + UTF-8
//   | config: u32 length + canonical JSON of PreprocConfig
//   | tensor count u32
//   | per tensor: name (u16 length + UTF-8), rank u8, extents u64 x rank,
//     payload f32 x product(extents), row-major

namespace cmro {

inline constexpr std::uint32_t kWeightsVersion = 1;

struct WeightsFile {
  ModelParams<float> params;
  PreprocConfig preprocess;
  std::string modality;
};

/// Architecture implied by a preprocessing config and tensor shapes.
Architecture architecture_for(const PreprocConfig& cfg, std::size_t hidden = 256);

std::vector<std::uint8_t> encode_weights(const ModelParams<float>& params, const PreprocConfig& cfg,
                                         std::string_view modality);
/// Rejects bad magic, unknown versions, truncated records (naming the
/// tensor) and tensor sets that do not match the inferred architecture.
WeightsFile decode_weights(std::span<const std::uint8_t> bytes);

void write_weights(const ModelParams<float>& params, const PreprocConfig& cfg,
                   std::string_view modality, const std::filesystem::path& path);
WeightsFile read_weights(const std::filesystem::path& path);

/// Throws Error(architecture_mismatch) naming the first tensor whose name or
/// shape differs from the layout of `arch`.
void check_architecture(const ModelParams<float>& params, const Architecture& arch);

}  // namespace cmro
