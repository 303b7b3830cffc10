#include "cmro/orientation.hpp"

#include <string>

#include "cmro/error.hpp"

namespace cmro {

namespace {

// Each class is a signed permutation matrix acting on centred pixel
// coordinates (u, v) = (2r - (rows-1), 2c - (cols-1)) of the output image and
// yielding the centred coordinates of the source pixel.
struct Mat2 {
  int a, b, c, d;  // [[a, b], [c, d]]
  friend constexpr bool operator==(const Mat2&, const Mat2&) = default;
};

constexpr std::array<Mat2, Orientation::kCount> kMatrices{{
    {1, 0, 0, 1},    // identity
    {1, 0, 0, -1},   // horizontal flip
    {-1, 0, 0, 1},   // vertical flip
    {-1, 0, 0, -1},  // rotate 180
    {0, 1, 1, 0},    // main diagonal
    {0, -1, 1, 0},   // rotate 90 cw
    {0, 1, -1, 0},   // rotate 270 cw
    {0, -1, -1, 0},  // anti-diagonal
}};

constexpr std::array<std::string_view, Orientation::kCount> kLabels{
    "identity",      "horizontal flip", "vertical flip",  "rotate 180",
    "main diagonal", "rotate 90 cw",    "rotate 270 cw",  "anti-diagonal",
};

constexpr Mat2 multiply(const Mat2& x, const Mat2& y) {
  return {x.a * y.a + x.b * y.c, x.a * y.b + x.b * y.d, x.c * y.a + x.d * y.c,
          x.c * y.b + x.d * y.d};
}

constexpr int find_code(const Mat2& m) {
  for (int i = 0; i < Orientation::kCount; ++i)
    if (kMatrices[i] == m) return i;
  return -1;
}

constexpr std::array<std::array<std::uint8_t, 8>, 8> make_compose_table() {
  std::array<std::array<std::uint8_t, 8>, 8> table{};
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b)
      // apply(a, apply(b, s)) reads s at M_b * (M_a * p).
      table[a][b] = static_cast<std::uint8_t>(find_code(multiply(kMatrices[b], kMatrices[a])));
  return table;
}

constexpr auto kCompose = make_compose_table();

static_assert([] {
  for (const auto& row : kCompose)
    for (auto c : row)
      if (c >= 8) return false;
  return true;
}());

}  // namespace

Orientation Orientation::from_code(int code) {
  if (code < 0 || code >= kCount)
    throw Error(Errc::invalid_argument,
                "orientation code " + std::to_string(code) + " outside [0, 8)");
  return Orientation(static_cast<std::uint8_t>(code));
}

std::string_view Orientation::label() const { return kLabels[code_]; }

Slice::Slice(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != rows * cols)
    throw Error(Errc::shape_mismatch, "slice data length " + std::to_string(data.size()) +
                                          " != " + std::to_string(rows) + "x" +
                                          std::to_string(cols));
}

Slice Volume::slice(std::size_t z) const {
  const auto n = slice_size();
  Slice s(rows, cols);
  std::copy(data.begin() + static_cast<std::ptrdiff_t>(z * n),
            data.begin() + static_cast<std::ptrdiff_t>((z + 1) * n), s.data.begin());
  return s;
}

void Volume::set_slice(std::size_t z, const Slice& s) {
  if (s.rows != rows || s.cols != cols)
    throw Error(Errc::shape_mismatch, "slice does not match volume in-plane dims");
  std::copy(s.data.begin(), s.data.end(), data.begin() + static_cast<std::ptrdiff_t>(z * slice_size()));
}

PixelIndex source_index(Orientation o, std::size_t rows, std::size_t cols, std::size_t r,
                        std::size_t c) {
  const auto& m = kMatrices[o.code()];
  const auto out_rows = static_cast<long>(o.transposes() ? cols : rows);
  const auto out_cols = static_cast<long>(o.transposes() ? rows : cols);
  const long u = 2 * static_cast<long>(r) - (out_rows - 1);
  const long v = 2 * static_cast<long>(c) - (out_cols - 1);
  const long us = m.a * u + m.b * v;
  const long vs = m.c * u + m.d * v;
  return {static_cast<std::size_t>((us + static_cast<long>(rows) - 1) / 2),
          static_cast<std::size_t>((vs + static_cast<long>(cols) - 1) / 2)};
}

namespace {

// Writes apply(o, src) into dst, both row-major planes.
void apply_plane(Orientation o, std::size_t rows, std::size_t cols, const double* src,
                 double* dst) {
  const std::size_t out_rows = o.transposes() ? cols : rows;
  const std::size_t out_cols = o.transposes() ? rows : cols;
  for (std::size_t r = 0; r < out_rows; ++r)
    for (std::size_t c = 0; c < out_cols; ++c) {
      const auto idx = source_index(o, rows, cols, r, c);
      dst[r * out_cols + c] = src[idx.row * cols + idx.col];
    }
}

}  // namespace

Slice apply(Orientation o, const Slice& s) {
  Slice out(o.transposes() ? s.cols : s.rows, o.transposes() ? s.rows : s.cols);
  apply_plane(o, s.rows, s.cols, s.data.data(), out.data.data());
  return out;
}

Volume apply_volume(Orientation o, const Volume& v) {
  Volume out(o.transposes() ? v.cols : v.rows, o.transposes() ? v.rows : v.cols, v.depth);
  out.meta = v.meta;
  const auto n = v.slice_size();
  for (std::size_t z = 0; z < v.depth; ++z)
    apply_plane(o, v.rows, v.cols, v.data.data() + z * n, out.data.data() + z * n);
  return out;
}

Orientation compose(Orientation a, Orientation b) {
  return Orientation::from_code(kCompose[a.code()][b.code()]);
}

Orientation inverse(Orientation o) {
  for (auto candidate : Orientation::all())
    if (kCompose[candidate.code()][o.code()] == 0) return candidate;
  return Orientation{};  // unreachable: every element has an inverse
}

Orientation correction(Orientation detected, Orientation target) {
  return compose(target, inverse(detected));
}

}  // namespace cmro
