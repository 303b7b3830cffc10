#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmro/orientation.hpp"

// DICOM Part 10 subset: explicit VR little endian, uncompressed, single-frame
// monochrome images. Other encodings are rejected with
// Errc::unsupported_encoding.

namespace cmro {

inline constexpr std::string_view kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";

struct DicomTag {
  std::uint16_t group = 0;
  std::uint16_t element = 0;

  constexpr std::uint32_t key() const { return (std::uint32_t{group} << 16) | element; }
  friend constexpr bool operator==(DicomTag, DicomTag) = default;
};

namespace tags {
inline constexpr DicomTag kTransferSyntax{0x0002, 0x0010};
inline constexpr DicomTag kSamplesPerPixel{0x0028, 0x0002};
inline constexpr DicomTag kPhotometric{0x0028, 0x0004};
inline constexpr DicomTag kNumberOfFrames{0x0028, 0x0008};
inline constexpr DicomTag kRows{0x0028, 0x0010};
inline constexpr DicomTag kColumns{0x0028, 0x0011};
inline constexpr DicomTag kBitsAllocated{0x0028, 0x0100};
inline constexpr DicomTag kBitsStored{0x0028, 0x0101};
inline constexpr DicomTag kPixelRepresentation{0x0028, 0x0103};
inline constexpr DicomTag kPixelData{0x7FE0, 0x0010};
}  // namespace tags

struct DicomElement {
  DicomTag tag;
  std::array<char, 2> vr{};
  /// Value bytes. For undefined-length sequences this holds every byte up to
  /// and including the sequence delimitation item.
  std::vector<std::uint8_t> value;
  bool undefined_length = false;
};

/// Elements in file order, file meta group included.
struct DicomDataset {
  std::array<std::uint8_t, 128> preamble{};
  std::vector<DicomElement> elements;

  const DicomElement* find(DicomTag tag) const;
  DicomElement* find(DicomTag tag);

  std::optional<std::uint16_t> get_us(DicomTag tag) const;
  std::optional<std::string> get_string(DicomTag tag) const;

  /// Inserts or replaces an element, keeping tag order.
  void set(DicomElement element);

  /// Minimal valid dataset for a rows x cols monochrome image.
  static DicomDataset minimal(std::size_t rows, std::size_t cols, std::uint16_t bits_allocated,
                              bool is_signed);
};

struct DicomImage {
  Slice slice;
  DicomDataset dataset;
};

DicomImage read_dicom(const std::filesystem::path& path);
DicomImage decode_dicom(std::span<const std::uint8_t> bytes);

/// Copies every template element verbatim except Rows/Columns (taken from the
/// slice) and PixelData (re-encoded at the template's bit depth, values
/// rounded and clamped to the stored range).
std::vector<std::uint8_t> encode_dicom(const Slice& s, const DicomDataset& tmpl);
void write_dicom(const Slice& s, const DicomDataset& tmpl, const std::filesystem::path& path);

}  // namespace cmro
