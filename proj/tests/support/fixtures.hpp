#pragma once

// Handcrafted file images for the readers, assembled byte by byte so the
// tests do not depend on the library's own encoders.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace cmro::test {

using Bytes = std::vector<std::uint8_t>;

inline void put(Bytes& b, std::size_t at, const void* src, std::size_t n, bool big_endian = false) {
  if (b.size() < at + n) b.resize(at + n);
  const auto* p = static_cast<const std::uint8_t*>(src);
  for (std::size_t i = 0; i < n; ++i) b[at + i] = p[big_endian ? n - 1 - i : i];
}

template <typename T>
void put_value(Bytes& b, std::size_t at, T v, bool big_endian = false) {
  put(b, at, &v, sizeof v, big_endian);
}

template <typename T>
void append_value(Bytes& b, T v, bool big_endian = false) {
  put_value(b, b.size(), v, big_endian);
}

struct NiftiSpec {
  std::int16_t nx = 2, ny = 2, nz = 1;
  std::int16_t datatype = 4;  // int16
  std::int16_t bitpix = 16;
  float slope = 0.0f, inter = 0.0f;
  bool big_endian = false;
  const char* magic = "n+1";
};

/// Single-file NIfTI-1 image with a 4-byte zero extender; `payload` holds
/// the voxel bytes in the target byte order already.
inline Bytes nifti_file(const NiftiSpec& s, const Bytes& payload) {
  Bytes b(352, 0);
  const bool be = s.big_endian;
  put_value<std::int32_t>(b, 0, 348, be);
  const std::int16_t dims[8] = {static_cast<std::int16_t>(s.nz > 1 ? 3 : 2), s.nx, s.ny, s.nz, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put_value(b, 40 + 2 * i, dims[i], be);
  put_value(b, 70, s.datatype, be);
  put_value(b, 72, s.bitpix, be);
  for (int i = 0; i < 8; ++i) put_value(b, 76 + 4 * i, i == 0 ? 1.0f : 1.5f + static_cast<float>(i), be);
  put_value(b, 108, 352.0f, be);
  put_value(b, 112, s.slope, be);
  put_value(b, 116, s.inter, be);
  std::memcpy(b.data() + 344, s.magic, std::strlen(s.magic) + 1 > 4 ? 4 : std::strlen(s.magic) + 1);
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

template <typename T>
Bytes payload_of(const std::vector<T>& values, bool big_endian = false) {
  Bytes b;
  for (T v : values) append_value(b, v, big_endian);
  return b;
}

struct DicomSpec {
  std::uint16_t rows = 2, cols = 2;
  std::uint16_t bits_allocated = 8, bits_stored = 8, pixel_representation = 0;
  std::string transfer_syntax = "1.2.840.10008.1.2.1";
  std::string photometric = "MONOCHROME2";
  std::string pixel_spacing;  // omitted when empty
  bool with_preamble = true;
  bool with_sequence = false;  // an undefined-length SQ before the pixel module
};

inline void dicom_short(Bytes& b, std::uint16_t g, std::uint16_t e, const char* vr, std::string value, char pad) {
  if (value.size() % 2) value.push_back(pad);
  append_value(b, g);
  append_value(b, e);
  b.push_back(static_cast<std::uint8_t>(vr[0]));
  b.push_back(static_cast<std::uint8_t>(vr[1]));
  append_value(b, static_cast<std::uint16_t>(value.size()));
  b.insert(b.end(), value.begin(), value.end());
}

inline void dicom_us(Bytes& b, std::uint16_t g, std::uint16_t e, std::uint16_t v) {
  append_value(b, g);
  append_value(b, e);
  b.push_back('U');
  b.push_back('S');
  append_value(b, std::uint16_t{2});
  append_value(b, v);
}

inline Bytes dicom_file(const DicomSpec& s, const Bytes& pixels) {
  Bytes b(128, 0);
  if (s.with_preamble) b.insert(b.end(), {'D', 'I', 'C', 'M'});
  dicom_short(b, 0x0002, 0x0010, "UI", s.transfer_syntax, '\0');
  dicom_short(b, 0x0008, 0x0060, "CS", "MR", ' ');
  if (s.with_sequence) {
    append_value(b, std::uint16_t{0x0008});
    append_value(b, std::uint16_t{0x1140});
    b.insert(b.end(), {'S', 'Q', 0, 0});
    append_value(b, std::uint32_t{0xFFFFFFFF});
    append_value(b, std::uint16_t{0xFFFE});  // item, undefined length
    append_value(b, std::uint16_t{0xE000});
    append_value(b, std::uint32_t{0xFFFFFFFF});
    dicom_short(b, 0x0008, 0x1150, "UI", "1.2.3", '\0');
    append_value(b, std::uint16_t{0xFFFE});  // item delimiter
    append_value(b, std::uint16_t{0xE00D});
    append_value(b, std::uint32_t{0});
    append_value(b, std::uint16_t{0xFFFE});  // sequence delimiter
    append_value(b, std::uint16_t{0xE0DD});
    append_value(b, std::uint32_t{0});
  }
  dicom_us(b, 0x0028, 0x0002, 1);
  dicom_short(b, 0x0028, 0x0004, "CS", s.photometric, ' ');
  dicom_us(b, 0x0028, 0x0010, s.rows);
  dicom_us(b, 0x0028, 0x0011, s.cols);
  if (!s.pixel_spacing.empty()) dicom_short(b, 0x0028, 0x0030, "DS", s.pixel_spacing, ' ');
  dicom_us(b, 0x0028, 0x0100, s.bits_allocated);
  dicom_us(b, 0x0028, 0x0101, s.bits_stored);
  dicom_us(b, 0x0028, 0x0103, s.pixel_representation);
  append_value(b, std::uint16_t{0x7FE0});
  append_value(b, std::uint16_t{0x0010});
  b.insert(b.end(), {'O', s.bits_allocated > 8 ? std::uint8_t{'W'} : std::uint8_t{'B'}, 0, 0});
  Bytes px = pixels;
  if (px.size() % 2) px.push_back(0);
  append_value(b, static_cast<std::uint32_t>(px.size()));
  b.insert(b.end(), px.begin(), px.end());
  return b;
}

}  // namespace cmro::test
