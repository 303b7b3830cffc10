#include "cmro/dicom.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "byte_io.hpp"

namespace cmro {

namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;
constexpr DicomTag kItem{0xFFFE, 0xE000};
constexpr DicomTag kItemDelimiter{0xFFFE, 0xE00D};
constexpr DicomTag kSequenceDelimiter{0xFFFE, 0xE0DD};

std::string tag_string(DicomTag t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "(%04X,%04X)", t.group, t.element);
  return buf;
}

bool long_vr(const std::array<char, 2>& vr) {
  static constexpr const char* kLong[] = {"OB", "OD", "OF", "OL", "OV", "OW", "SQ",
                                          "SV", "UC", "UN", "UR", "UT", "UV"};
  return std::any_of(std::begin(kLong), std::end(kLong),
                     [&](const char* v) { return vr[0] == v[0] && vr[1] == v[1]; });
}

bool valid_vr(const std::array<char, 2>& vr) {
  return vr[0] >= 'A' && vr[0] <= 'Z' && vr[1] >= 'A' && vr[1] <= 'Z';
}

[[noreturn]] void malformed(const std::string& what) {
  throw Error(Errc::invalid_argument, "malformed DICOM: " + what);
}

DicomTag read_tag(ByteReader& in) {
  const auto g = in.read<std::uint16_t>("element tag");
  const auto e = in.read<std::uint16_t>("element tag");
  return {g, e};
}

void skip_sequence(ByteReader& in, int depth);

// Reads one explicit-VR element header and value; sequences of undefined
// length are walked to find their end.
void skip_element(ByteReader& in, DicomTag tag, int depth) {
  std::array<char, 2> vr{};
  const auto v = in.take(2, "VR of " + tag_string(tag));
  vr = {static_cast<char>(v[0]), static_cast<char>(v[1])};
  if (!valid_vr(vr)) malformed("invalid VR at " + tag_string(tag));
  std::uint32_t length;
  if (long_vr(vr)) {
    in.read<std::uint16_t>("reserved bytes of " + tag_string(tag));
    length = in.read<std::uint32_t>("length of " + tag_string(tag));
  } else {
    length = in.read<std::uint16_t>("length of " + tag_string(tag));
  }
  if (length == kUndefinedLength)
    skip_sequence(in, depth + 1);
  else
    in.take(length, "value of " + tag_string(tag));
}

void skip_sequence(ByteReader& in, int depth) {
  if (depth > 64) malformed("sequence nesting too deep");
  for (;;) {
    const DicomTag tag = read_tag(in);
    const auto length = in.read<std::uint32_t>("item length");
    if (tag == kSequenceDelimiter) return;
    if (!(tag == kItem)) malformed("expected item in sequence, found " + tag_string(tag));
    if (length != kUndefinedLength) {
      in.take(length, "sequence item");
      continue;
    }
    for (;;) {
      const DicomTag inner = read_tag(in);
      if (inner == kItemDelimiter) {
        in.read<std::uint32_t>("item delimiter length");
        break;
      }
      skip_element(in, inner, depth);
    }
  }
}

std::string trim_value(std::span<const std::uint8_t> v) {
  std::string s(v.begin(), v.end());
  while (!s.empty() && (s.back() == '\0' || s.back() == ' ')) s.pop_back();
  while (!s.empty() && s.front() == ' ') s.erase(s.begin());
  return s;
}

DicomElement make_element(DicomTag tag, const char* vr, std::vector<std::uint8_t> value) {
  DicomElement e;
  e.tag = tag;
  e.vr = {vr[0], vr[1]};
  e.value = std::move(value);
  return e;
}

DicomElement us_element(DicomTag tag, std::uint16_t v) {
  return make_element(tag, "US", {static_cast<std::uint8_t>(v & 0xFF), static_cast<std::uint8_t>(v >> 8)});
}

DicomElement text_element(DicomTag tag, const char* vr, std::string s) {
  const char pad = (vr[0] == 'U' && vr[1] == 'I') ? '\0' : ' ';
  if (s.size() % 2) s.push_back(pad);
  return make_element(tag, vr, std::vector<std::uint8_t>(s.begin(), s.end()));
}

struct PixelFormat {
  std::size_t rows, cols;
  std::uint16_t bits_allocated, bits_stored;
  bool is_signed;

  std::size_t bytes_per() const { return bits_allocated / 8; }
  double min_value() const { return is_signed ? -std::ldexp(1.0, bits_stored - 1) : 0.0; }
  double max_value() const {
    return is_signed ? std::ldexp(1.0, bits_stored - 1) - 1.0 : std::ldexp(1.0, bits_stored) - 1.0;
  }
};

PixelFormat pixel_format(const DicomDataset& ds) {
  auto required = [&](DicomTag t, const char* name) {
    const auto v = ds.get_us(t);
    if (!v) throw Error(Errc::missing_tag, std::string("missing required tag ") + name + " " + tag_string(t));
    return *v;
  };
  PixelFormat f{};
  f.rows = required(tags::kRows, "Rows");
  f.cols = required(tags::kColumns, "Columns");
  f.bits_allocated = required(tags::kBitsAllocated, "BitsAllocated");
  const auto rep = required(tags::kPixelRepresentation, "PixelRepresentation");
  f.bits_stored = ds.get_us(tags::kBitsStored).value_or(f.bits_allocated);
  f.is_signed = rep == 1;
  if (rep > 1) malformed("PixelRepresentation " + std::to_string(rep));
  if (f.bits_allocated != 8 && f.bits_allocated != 16 && f.bits_allocated != 32)
    throw Error(Errc::unsupported_encoding,
                "unsupported encoding: BitsAllocated " + std::to_string(f.bits_allocated));
  if (f.bits_stored == 0 || f.bits_stored > f.bits_allocated)
    malformed("BitsStored " + std::to_string(f.bits_stored));
  if (f.rows == 0 || f.cols == 0) malformed("zero Rows or Columns");
  if (auto spp = ds.get_us(tags::kSamplesPerPixel); spp && *spp != 1)
    throw Error(Errc::unsupported_encoding,
                "unsupported encoding: SamplesPerPixel " + std::to_string(*spp));
  if (auto frames = ds.get_string(tags::kNumberOfFrames); frames && !frames->empty() && *frames != "1")
    throw Error(Errc::unsupported_encoding, "unsupported encoding: multi-frame (" + *frames + " frames)");
  if (auto pi = ds.get_string(tags::kPhotometric); pi && pi->rfind("MONOCHROME", 0) != 0)
    throw Error(Errc::unsupported_encoding, "unsupported encoding: PhotometricInterpretation " + *pi);
  return f;
}

}  // namespace

const DicomElement* DicomDataset::find(DicomTag tag) const {
  for (const auto& e : elements)
    if (e.tag == tag) return &e;
  return nullptr;
}

DicomElement* DicomDataset::find(DicomTag tag) {
  for (auto& e : elements)
    if (e.tag == tag) return &e;
  return nullptr;
}

std::optional<std::uint16_t> DicomDataset::get_us(DicomTag tag) const {
  const auto* e = find(tag);
  if (!e || e->value.size() < 2) return std::nullopt;
  return static_cast<std::uint16_t>(e->value[0] | (e->value[1] << 8));
}

std::optional<std::string> DicomDataset::get_string(DicomTag tag) const {
  const auto* e = find(tag);
  if (!e) return std::nullopt;
  return trim_value(e->value);
}

void DicomDataset::set(DicomElement element) {
  auto it = std::find_if(elements.begin(), elements.end(),
                         [&](const DicomElement& e) { return e.tag.key() >= element.tag.key(); });
  if (it != elements.end() && it->tag == element.tag)
    *it = std::move(element);
  else
    elements.insert(it, std::move(element));
}

DicomDataset DicomDataset::minimal(std::size_t rows, std::size_t cols, std::uint16_t bits_allocated,
                                   bool is_signed) {
  DicomDataset ds;
  ds.set(make_element({0x0002, 0x0001}, "OB", {0x00, 0x01}));
  ds.set(text_element({0x0002, 0x0002}, "UI", "1.2.840.10008.5.1.4.1.1.4"));
  ds.set(text_element({0x0002, 0x0003}, "UI", "2.25.1"));
  ds.set(text_element(tags::kTransferSyntax, "UI", std::string(kExplicitVrLittleEndian)));
  ds.set(text_element({0x0008, 0x0016}, "UI", "1.2.840.10008.5.1.4.1.1.4"));
  ds.set(text_element({0x0008, 0x0018}, "UI", "2.25.1"));
  ds.set(text_element({0x0008, 0x0060}, "CS", "MR"));
  ds.set(us_element(tags::kSamplesPerPixel, 1));
  ds.set(text_element(tags::kPhotometric, "CS", "MONOCHROME2"));
  ds.set(us_element(tags::kRows, static_cast<std::uint16_t>(rows)));
  ds.set(us_element(tags::kColumns, static_cast<std::uint16_t>(cols)));
  ds.set(us_element(tags::kBitsAllocated, bits_allocated));
  ds.set(us_element(tags::kBitsStored, bits_allocated));
  ds.set(us_element({0x0028, 0x0102}, static_cast<std::uint16_t>(bits_allocated - 1)));
  ds.set(us_element(tags::kPixelRepresentation, is_signed ? 1 : 0));
  ds.set(make_element(tags::kPixelData, bits_allocated == 8 ? "OB" : "OW", {}));

  std::uint32_t meta_length = 0;
  for (const auto& e : ds.elements)
    if (e.tag.group == 0x0002) meta_length += static_cast<std::uint32_t>((long_vr(e.vr) ? 12 : 8) + e.value.size());
  std::vector<std::uint8_t> ul(4);
  for (int i = 0; i < 4; ++i) ul[i] = static_cast<std::uint8_t>(meta_length >> (8 * i));
  ds.set(make_element({0x0002, 0x0000}, "UL", ul));
  return ds;
}

DicomImage decode_dicom(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 132 || std::memcmp(bytes.data() + 128, "DICM", 4) != 0)
    throw Error(Errc::bad_magic, "missing DICM preamble (not a DICOM Part 10 file)");
  DicomImage img;
  std::memcpy(img.dataset.preamble.data(), bytes.data(), 128);
  auto& ds = img.dataset;

  ByteReader in(bytes);
  in.seek(132);
  bool syntax_checked = false;
  while (!in.at_end()) {
    const DicomTag tag = read_tag(in);
    if (tag.group != 0x0002 && !syntax_checked) {
      const auto ts = ds.get_string(tags::kTransferSyntax);
      if (!ts) throw Error(Errc::missing_tag, "missing TransferSyntaxUID (0002,0010)");
      if (*ts != kExplicitVrLittleEndian)
        throw Error(Errc::unsupported_encoding,
                    "unsupported encoding: transfer syntax " + *ts +
                        " (only explicit VR little endian is supported)");
      syntax_checked = true;
    }
    if (tag.group == 0xFFFE) malformed("unexpected item tag " + tag_string(tag) + " at top level");

    DicomElement e;
    e.tag = tag;
    const auto v = in.take(2, "VR of " + tag_string(tag));
    e.vr = {static_cast<char>(v[0]), static_cast<char>(v[1])};
    if (!valid_vr(e.vr)) malformed("invalid VR at " + tag_string(tag));
    std::uint32_t length;
    if (long_vr(e.vr)) {
      in.read<std::uint16_t>("reserved bytes of " + tag_string(tag));
      length = in.read<std::uint32_t>("length of " + tag_string(tag));
    } else {
      length = in.read<std::uint16_t>("length of " + tag_string(tag));
    }
    if (length == kUndefinedLength) {
      if (tag == tags::kPixelData)
        throw Error(Errc::unsupported_encoding, "unsupported encoding: encapsulated (compressed) PixelData");
      if (!(e.vr[0] == 'S' && e.vr[1] == 'Q'))
        throw Error(Errc::unsupported_encoding,
                    "unsupported encoding: undefined length for non-sequence " + tag_string(tag));
      const auto start = in.pos();
      skip_sequence(in, 0);
      e.value.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                     bytes.begin() + static_cast<std::ptrdiff_t>(in.pos()));
      e.undefined_length = true;
    } else {
      const auto value = in.take(length, "value of " + tag_string(tag));
      e.value.assign(value.begin(), value.end());
    }
    ds.elements.push_back(std::move(e));
  }
  if (!syntax_checked) throw Error(Errc::missing_tag, "DICOM file has no dataset after the file meta group");

  const auto f = pixel_format(ds);
  const auto* pixels = ds.find(tags::kPixelData);
  if (!pixels) throw Error(Errc::missing_tag, "missing required tag PixelData (7FE0,0010)");
  const std::size_t need = f.rows * f.cols * f.bytes_per();
  if (pixels->value.size() < need)
    throw Error(Errc::truncated, "truncated PixelData: need " + std::to_string(need) + " bytes, have " +
                                     std::to_string(pixels->value.size()));

  img.slice = Slice(f.rows, f.cols);
  const std::uint64_t mask = f.bits_stored >= 64 ? ~0ull : ((1ull << f.bits_stored) - 1);
  const std::uint8_t* p = pixels->value.data();
  for (std::size_t i = 0; i < f.rows * f.cols; ++i, p += f.bytes_per()) {
    std::uint64_t raw = 0;
    for (std::size_t b = 0; b < f.bytes_per(); ++b) raw |= std::uint64_t{p[b]} << (8 * b);
    raw &= mask;
    double value;
    if (f.is_signed && (raw >> (f.bits_stored - 1)) & 1)
      value = static_cast<double>(static_cast<std::int64_t>(raw) - static_cast<std::int64_t>(mask) - 1);
    else
      value = static_cast<double>(raw);
    img.slice.data[i] = value;
  }
  return img;
}

DicomImage read_dicom(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_dicom(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_dicom(const Slice& s, const DicomDataset& tmpl) {
  if (s.empty()) throw Error(Errc::invalid_argument, "cannot encode an empty slice as DICOM");
  if (s.rows > 0xFFFF || s.cols > 0xFFFF)
    throw Error(Errc::invalid_argument, "slice extents exceed the DICOM US range");
  DicomDataset ds = tmpl;
  ds.set(us_element(tags::kRows, static_cast<std::uint16_t>(s.rows)));
  ds.set(us_element(tags::kColumns, static_cast<std::uint16_t>(s.cols)));
  const auto f = pixel_format(ds);

  auto* pixels = ds.find(tags::kPixelData);
  if (!pixels) throw Error(Errc::missing_tag, "template has no PixelData element");
  pixels->undefined_length = false;
  pixels->value.clear();
  pixels->value.reserve(s.data.size() * f.bytes_per() + 1);
  for (double v : s.data) {
    const double clamped = std::clamp(std::nearbyint(v), f.min_value(), f.max_value());
    const auto raw = static_cast<std::uint64_t>(static_cast<std::int64_t>(clamped));
    for (std::size_t b = 0; b < f.bytes_per(); ++b)
      pixels->value.push_back(static_cast<std::uint8_t>(raw >> (8 * b)));
  }
  if (pixels->value.size() % 2) pixels->value.push_back(0);

  ByteWriter w;
  w.write_bytes(ds.preamble);
  w.write_string("DICM");
  for (const auto& e : ds.elements) {
    w.write(e.tag.group);
    w.write(e.tag.element);
    w.write_bytes(std::span(reinterpret_cast<const std::uint8_t*>(e.vr.data()), 2));
    const auto length = e.undefined_length ? kUndefinedLength : static_cast<std::uint32_t>(e.value.size());
    if (long_vr(e.vr)) {
      w.write(std::uint16_t{0});
      w.write(length);
    } else {
      if (e.value.size() > 0xFFFF)
        throw Error(Errc::invalid_argument, "element " + tag_string(e.tag) + " too long for its VR");
      w.write(static_cast<std::uint16_t>(length));
    }
    w.write_bytes(e.value);
  }
  return std::move(w.bytes());
}

void write_dicom(const Slice& s, const DicomDataset& tmpl, const std::filesystem::path& path) {
  detail::write_file(path, encode_dicom(s, tmpl));
}

}  // namespace cmro
