#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cmro/error.hpp"

namespace cmro::detail {

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

bool is_gzip(std::span<const std::uint8_t> bytes);
Bytes gunzip(std::span<const std::uint8_t> bytes);
/// Deterministic output: no timestamp or file name in the gzip header.
Bytes gzip(std::span<const std::uint8_t> bytes);

template <typename T>
T byteswap_value(T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  std::memcpy(&v, b, sizeof(T));
  return v;
}

/// Reads little-endian scalars (optionally byte-swapped) with bounds checks.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ >= bytes_.size(); }
  void seek(std::size_t p) { pos_ = p; }

  /// Throws Error(truncated) naming `what` if fewer than n bytes remain.
  void require(std::size_t n, const std::string& what) const {
    if (remaining() < n)
      throw Error(Errc::truncated, "truncated " + what + ": need " + std::to_string(n) +
                                       " bytes at offset " + std::to_string(pos_) + ", have " +
                                       std::to_string(remaining()));
  }

  template <typename T>
  T read(const std::string& what) {
    require(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const std::string& what) {
    require(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  template <typename T>
  void write(T v) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void write_bytes(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  void write_string(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  Bytes& bytes() { return bytes_; }

 private:
  Bytes bytes_;
};

}  // namespace cmro::detail
