#pragma once

#include <any>
#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cmro {

/// One of the eight storage orientations of a 2D image (the dihedral group of
/// the square). Code 0 is the standard orientation.
///
/// Corner pictures of the standard grid [[1,2],[3,4]] under each class:
///   0 identity        [[1,2],[3,4]]     4 main-diagonal   [[1,3],[2,4]]
///   1 horizontal flip [[2,1],[4,3]]     5 rotate 90 cw    [[3,1],[4,2]]
///   2 vertical flip   [[3,4],[1,2]]     6 rotate 270 cw   [[2,4],[1,3]]
///   3 rotate 180      [[4,3],[2,1]]     7 anti-diagonal   [[4,2],[3,1]]
class Orientation {
 public:
  static constexpr int kCount = 8;

  constexpr Orientation() = default;

  /// Throws Error(invalid_argument) when code is outside [0, 8).
  static Orientation from_code(int code);

  static constexpr std::array<Orientation, kCount> all() {
    std::array<Orientation, kCount> out{};
    for (int i = 0; i < kCount; ++i) out[i] = Orientation(static_cast<std::uint8_t>(i));
    return out;
  }

  constexpr int code() const { return code_; }
  std::string_view label() const;

  /// Classes 4..7 exchange the row and column axes.
  constexpr bool transposes() const { return code_ >= 4; }

  friend constexpr bool operator==(Orientation, Orientation) = default;

 private:
  constexpr explicit Orientation(std::uint8_t code) : code_(code) {}
  std::uint8_t code_ = 0;
};

/// 2D intensity image, row-major: value(r, c) = data[r * cols + c].
struct Slice {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Slice() = default;
  Slice(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Slice(std::size_t r, std::size_t c, std::vector<double> values);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool empty() const { return data.empty(); }
  friend bool operator==(const Slice&, const Slice&) = default;
};

/// Stack of `depth` slices of identical in-plane size. Slice z occupies
/// data[z * rows * cols, (z + 1) * rows * cols). `meta` carries the source
/// file's header (NiftiHeader or DicomDataset) untouched.
struct Volume {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t depth = 0;
  std::vector<double> data;
  std::any meta;

  Volume() = default;
  Volume(std::size_t r, std::size_t c, std::size_t d, double fill = 0.0)
      : rows(r), cols(c), depth(d), data(r * c * d, fill) {}

  std::size_t slice_size() const { return rows * cols; }
  Slice slice(std::size_t z) const;
  void set_slice(std::size_t z, const Slice& s);

  bool same_voxels(const Volume& other) const {
    return rows == other.rows && cols == other.cols && depth == other.depth && data == other.data;
  }
};

Slice apply(Orientation o, const Slice& s);
Volume apply_volume(Orientation o, const Volume& v);

/// Returns c with apply(c, s) == apply(a, apply(b, s)): b first, then a.
Orientation compose(Orientation a, Orientation b);
Orientation inverse(Orientation o);

/// Transform that brings an image detected at `detected` to `target`.
Orientation correction(Orientation detected, Orientation target = Orientation{});

/// Source pixel feeding output pixel (r, c) for a source of size rows x cols.
struct PixelIndex {
  std::size_t row;
  std::size_t col;
};
PixelIndex source_index(Orientation o, std::size_t rows, std::size_t cols, std::size_t r,
                        std::size_t c);

}  // namespace cmro
