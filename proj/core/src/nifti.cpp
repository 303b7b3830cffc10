#include "cmro/nifti.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "byte_io.hpp"

namespace cmro {

namespace {

using detail::Bytes;

// Numeric header fields as (offset, element width, count); everything else is
// character data.
struct Field {
  std::size_t offset, width, count;
};
constexpr Field kNumericFields[] = {
    {0, 4, 1},     // sizeof_hdr
    {32, 4, 1},    // extents
    {36, 2, 1},    // session_error
    {40, 2, 8},    // dim
    {56, 4, 3},    // intent_p1..p3
    {68, 2, 1},    // intent_code
    {70, 2, 1},    // datatype
    {72, 2, 1},    // bitpix
    {74, 2, 1},    // slice_start
    {76, 4, 8},    // pixdim
    {108, 4, 1},   // vox_offset
    {112, 4, 1},   // scl_slope
    {116, 4, 1},   // scl_inter
    {120, 2, 1},   // slice_end
    {124, 4, 1},   // cal_max
    {128, 4, 1},   // cal_min
    {132, 4, 1},   // slice_duration
    {136, 4, 1},   // toffset
    {140, 4, 1},   // glmax
    {144, 4, 1},   // glmin
    {252, 2, 1},   // qform_code
    {254, 2, 1},   // sform_code
    {256, 4, 6},   // quatern_b..qoffset_z
    {280, 4, 12},  // srow_x, srow_y, srow_z
};

void swap_header_fields(std::uint8_t* h) {
  for (const auto& f : kNumericFields)
    for (std::size_t i = 0; i < f.count; ++i) {
      std::uint8_t* p = h + f.offset + i * f.width;
      for (std::size_t k = 0; k < f.width / 2; ++k) std::swap(p[k], p[f.width - 1 - k]);
    }
}

template <typename T>
T get(const std::uint8_t* h, std::size_t offset) {
  T v;
  std::memcpy(&v, h + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) v = detail::byteswap_value(v);
  return v;
}

template <typename T>
void put(std::uint8_t* h, std::size_t offset, T v) {
  if constexpr (std::endian::native == std::endian::big) v = detail::byteswap_value(v);
  std::memcpy(h + offset, &v, sizeof(T));
}

std::size_t datatype_size(NiftiDatatype dt) {
  switch (dt) {
    case NiftiDatatype::uint8: return 1;
    case NiftiDatatype::int16:
    case NiftiDatatype::uint16: return 2;
    case NiftiDatatype::int32:
    case NiftiDatatype::float32: return 4;
    case NiftiDatatype::float64: return 8;
  }
  return 0;
}

bool supported(std::int16_t code) {
  switch (static_cast<NiftiDatatype>(code)) {
    case NiftiDatatype::uint8:
    case NiftiDatatype::int16:
    case NiftiDatatype::uint16:
    case NiftiDatatype::int32:
    case NiftiDatatype::float32:
    case NiftiDatatype::float64: return true;
  }
  return false;
}

template <typename T>
double load(const std::uint8_t* p, bool swap) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  const bool flip = swap != (std::endian::native == std::endian::big);
  if (flip) v = detail::byteswap_value(v);
  return static_cast<double>(v);
}

double load_voxel(NiftiDatatype dt, const std::uint8_t* p, bool swap) {
  switch (dt) {
    case NiftiDatatype::uint8: return load<std::uint8_t>(p, swap);
    case NiftiDatatype::int16: return load<std::int16_t>(p, swap);
    case NiftiDatatype::uint16: return load<std::uint16_t>(p, swap);
    case NiftiDatatype::int32: return load<std::int32_t>(p, swap);
    case NiftiDatatype::float32: return load<float>(p, swap);
    case NiftiDatatype::float64: return load<double>(p, swap);
  }
  return 0.0;
}

template <typename T>
void store(detail::ByteWriter& w, double v) {
  if constexpr (std::is_integral_v<T>) {
    const double lo = static_cast<double>(std::numeric_limits<T>::min());
    const double hi = static_cast<double>(std::numeric_limits<T>::max());
    w.write(static_cast<T>(std::clamp(std::nearbyint(v), lo, hi)));
  } else {
    w.write(static_cast<T>(v));
  }
}

void store_voxel(NiftiDatatype dt, detail::ByteWriter& w, double v) {
  switch (dt) {
    case NiftiDatatype::uint8: store<std::uint8_t>(w, v); break;
    case NiftiDatatype::int16: store<std::int16_t>(w, v); break;
    case NiftiDatatype::uint16: store<std::uint16_t>(w, v); break;
    case NiftiDatatype::int32: store<std::int32_t>(w, v); break;
    case NiftiDatatype::float32: store<float>(w, v); break;
    case NiftiDatatype::float64: store<double>(w, v); break;
  }
}

void parse_fields(NiftiHeader& h) {
  const std::uint8_t* r = h.raw.data();
  for (std::size_t i = 0; i < 8; ++i) {
    h.dim[i] = get<std::int16_t>(r, 40 + 2 * i);
    h.pixdim[i] = get<float>(r, 76 + 4 * i);
  }
  h.datatype = static_cast<NiftiDatatype>(get<std::int16_t>(r, 70));
  h.bitpix = get<std::int16_t>(r, 72);
  h.vox_offset = get<float>(r, 108);
  h.scl_slope = get<float>(r, 112);
  h.scl_inter = get<float>(r, 116);
  std::memcpy(h.magic.data(), r + 344, 4);
}

}  // namespace

NiftiHeader NiftiHeader::synthesize() {
  NiftiHeader h;
  std::uint8_t* r = h.raw.data();
  put<std::int32_t>(r, 0, 348);
  r[38] = 'r';  // regular
  put<std::int16_t>(r, 40, 3);
  for (std::size_t i = 1; i < 8; ++i) put<std::int16_t>(r, 40 + 2 * i, 1);
  for (std::size_t i = 0; i < 8; ++i) put<float>(r, 76 + 4 * i, 1.0f);
  put<std::int16_t>(r, 70, static_cast<std::int16_t>(NiftiDatatype::float32));
  put<std::int16_t>(r, 72, 32);
  put<float>(r, 108, 352.0f);
  std::memcpy(r + 344, "n+1\0", 4);
  h.extension = {0, 0, 0, 0};
  parse_fields(h);
  return h;
}

void swap_inplane_spacing(NiftiHeader& h) {
  const float a = get<float>(h.raw.data(), 80), b = get<float>(h.raw.data(), 84);
  put<float>(h.raw.data(), 80, b);
  put<float>(h.raw.data(), 84, a);
  std::swap(h.pixdim[1], h.pixdim[2]);
}

Volume decode_nifti(std::span<const std::uint8_t> input) {
  Bytes inflated;
  if (detail::is_gzip(input)) {
    inflated = detail::gunzip(input);
    input = inflated;
  }
  if (input.size() < kNiftiHeaderSize)
    throw Error(Errc::truncated, "truncated NIfTI header: " + std::to_string(input.size()) +
                                     " of 348 bytes");
  NiftiHeader h;
  std::memcpy(h.raw.data(), input.data(), kNiftiHeaderSize);

  // dim[0] outside [1, 7] means the file was written with the other byte order.
  auto dim0 = get<std::int16_t>(h.raw.data(), 40);
  if (dim0 < 1 || dim0 > 7) {
    if (detail::byteswap_value(dim0) < 1 || detail::byteswap_value(dim0) > 7)
      throw Error(Errc::bad_magic, "NIfTI dim[0] = " + std::to_string(dim0) +
                                       " is invalid in either byte order");
    swap_header_fields(h.raw.data());
    h.byte_swapped_source = true;
  }
  parse_fields(h);
  if (std::memcmp(h.magic.data(), "n+1\0", 4) != 0)
    throw Error(Errc::bad_magic, "NIfTI magic is not \"n+1\" (single-file NIfTI-1 required)");
  if (get<std::int32_t>(h.raw.data(), 0) != 348)
    throw Error(Errc::bad_magic, "NIfTI sizeof_hdr is not 348");

  const auto code = static_cast<std::int16_t>(h.datatype);
  if (!supported(code))
    throw Error(Errc::unsupported_datatype, "unsupported NIfTI datatype " + std::to_string(code));
  const std::size_t bytes_per = datatype_size(h.datatype);
  if (static_cast<std::size_t>(h.bitpix) != bytes_per * 8)
    throw Error(Errc::unsupported_datatype, "NIfTI bitpix " + std::to_string(h.bitpix) +
                                                " inconsistent with datatype " + std::to_string(code));

  const int ndim = h.dim[0];
  if (ndim < 2)
    throw Error(Errc::invalid_argument, "NIfTI volume needs at least 2 dimensions");
  for (int i = 1; i <= ndim; ++i)
    if (h.dim[i] < 1) throw Error(Errc::invalid_argument, "NIfTI dim[" + std::to_string(i) + "] < 1");
  for (int i = 4; i <= ndim; ++i)
    if (h.dim[i] != 1)
      throw Error(Errc::invalid_argument, "NIfTI volumes with more than 3 non-trivial dimensions are not supported");

  const auto cols = static_cast<std::size_t>(h.dim[1]);
  const auto rows = static_cast<std::size_t>(h.dim[2]);
  const std::size_t depth = ndim >= 3 ? static_cast<std::size_t>(h.dim[3]) : 1;

  if (!std::isfinite(h.vox_offset) || h.vox_offset < 348.0f)
    throw Error(Errc::invalid_argument, "NIfTI vox_offset " + std::to_string(h.vox_offset) + " is invalid");
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  const std::size_t count = rows * cols * depth;
  if (input.size() < offset || input.size() - offset < count * bytes_per)
    throw Error(Errc::truncated, "truncated NIfTI payload: need " + std::to_string(count * bytes_per) +
                                     " bytes after offset " + std::to_string(offset) + ", have " +
                                     std::to_string(input.size() > offset ? input.size() - offset : 0));
  if (!h.byte_swapped_source)
    h.extension.assign(input.begin() + kNiftiHeaderSize, input.begin() + static_cast<std::ptrdiff_t>(offset));

  Volume v(rows, cols, depth);
  const bool scaled = h.scl_slope != 0.0f && std::isfinite(h.scl_slope);
  const double slope = h.scl_slope, inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
  const std::uint8_t* p = input.data() + offset;
  for (std::size_t i = 0; i < count; ++i, p += bytes_per) {
    const double raw = load_voxel(h.datatype, p, h.byte_swapped_source);
    v.data[i] = scaled ? raw * slope + inter : raw;
  }
  v.meta = std::move(h);
  return v;
}

Volume read_nifti(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_nifti(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_nifti(const Volume& v, NiftiDatatype datatype) {
  if (v.rows == 0 || v.cols == 0 || v.depth == 0)
    throw Error(Errc::invalid_argument, "cannot write a NIfTI volume with an empty dimension");
  constexpr auto kMax = static_cast<std::size_t>(std::numeric_limits<std::int16_t>::max());
  if (v.rows > kMax || v.cols > kMax || v.depth > kMax)
    throw Error(Errc::invalid_argument, "volume extent exceeds the NIfTI-1 limit of 32767");
  if (!supported(static_cast<std::int16_t>(datatype)))
    throw Error(Errc::unsupported_datatype, "unsupported NIfTI datatype");

  const auto* src = std::any_cast<NiftiHeader>(&v.meta);
  NiftiHeader h = src ? *src : NiftiHeader::synthesize();
  std::uint8_t* r = h.raw.data();
  const bool planar = h.dim[0] == 2 && v.depth == 1;
  put<std::int16_t>(r, 40, planar ? 2 : 3);
  put<std::int16_t>(r, 42, static_cast<std::int16_t>(v.cols));
  put<std::int16_t>(r, 44, static_cast<std::int16_t>(v.rows));
  put<std::int16_t>(r, 46, static_cast<std::int16_t>(v.depth));
  for (std::size_t i = 4; i < 8; ++i) put<std::int16_t>(r, 40 + 2 * i, 1);
  put<std::int16_t>(r, 70, static_cast<std::int16_t>(datatype));
  put<std::int16_t>(r, 72, static_cast<std::int16_t>(datatype_size(datatype) * 8));
  put<float>(r, 112, 0.0f);
  put<float>(r, 116, 0.0f);
  std::memcpy(r + 344, "n+1\0", 4);

  Bytes extension = h.extension;
  if (extension.size() < 4) extension.assign(4, 0);
  put<float>(r, 108, static_cast<float>(kNiftiHeaderSize + extension.size()));

  detail::ByteWriter w;
  w.write_bytes(h.raw);
  w.write_bytes(extension);
  for (double x : v.data) store_voxel(datatype, w, x);
  return std::move(w.bytes());
}

void write_nifti(const Volume& v, const std::filesystem::path& path, NiftiDatatype datatype) {
  auto bytes = encode_nifti(v, datatype);
  if (path.extension() == ".gz") bytes = detail::gzip(bytes);
  detail::write_file(path, bytes);
}

}  // namespace cmro
