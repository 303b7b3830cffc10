#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cmro/orientation.hpp"

// NIfTI-1 single-file volumes (.nii and .nii.gz).
//
// Only voxel order is changed by orientation correction. The qform/sform
// orientation records are copied through unchanged, so a corrected file's
// world-space geometry describes the original storage layout.

namespace cmro {

enum class NiftiDatatype : std::int16_t {
  uint8 = 2,
  int16 = 4,
  int32 = 8,
  float32 = 16,
  float64 = 64,
  uint16 = 512,
};

inline constexpr std::size_t kNiftiHeaderSize = 348;

struct NiftiHeader {
  /// Full header, normalised to little-endian byte order.
  std::array<std::uint8_t, kNiftiHeaderSize> raw{};
  std::array<std::int16_t, 8> dim{};
  std::array<float, 8> pixdim{};
  NiftiDatatype datatype = NiftiDatatype::float32;
  std::int16_t bitpix = 32;
  float vox_offset = 352.0f;
  float scl_slope = 0.0f;
  float scl_inter = 0.0f;
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  /// Bytes between the header and the voxel data (extender + extensions).
  /// Dropped for byte-swapped sources.
  std::vector<std::uint8_t> extension;
  bool byte_swapped_source = false;

  /// Header for a volume with no source file.
  static NiftiHeader synthesize();
};

/// Reads .nii or gzip-compressed .nii.gz (detected from content). Intensities
/// are scaled by scl_slope/scl_inter when slope is non-zero. The header is
/// stored in Volume::meta.
Volume read_nifti(const std::filesystem::path& path);
Volume decode_nifti(std::span<const std::uint8_t> bytes);

/// Encodes with the header from v.meta (or a synthesized one), in-plane and
/// slice dims taken from v, slope 0. Values must be representable in
/// `datatype`; float32 is the format the tools write.
std::vector<std::uint8_t> encode_nifti(const Volume& v,
                                       NiftiDatatype datatype = NiftiDatatype::float32);

/// Writes gzip-compressed output when the path ends in ".gz".
void write_nifti(const Volume& v, const std::filesystem::path& path,
                 NiftiDatatype datatype = NiftiDatatype::float32);

/// Exchanges the in-plane voxel spacings; used after a transposing correction.
void swap_inplane_spacing(NiftiHeader& h);

}  // namespace cmro
