#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cmro/dicom.hpp"
#include "cmro/error.hpp"
#include "cmro/nifti.hpp"
#include "cmro/random.hpp"
#include "cmro/weights.hpp"
#include "support/fixtures.hpp"

using namespace cmro;
using namespace cmro::test;
namespace fs = std::filesystem;

namespace {

Errc error_code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no cmro::Error thrown";
  return Errc::invalid_argument;
}

std::string error_text_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("cmro_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

template <typename T>
T read_at(const std::vector<std::uint8_t>& b, std::size_t at) {
  T v;
  std::memcpy(&v, b.data() + at, sizeof v);
  return v;
}

}  // namespace

// --- NIfTI -----------------------------------------------------------------

TEST(Nifti, MinimalInt16WithoutScaling) {
  const auto file = nifti_file({}, payload_of<std::int16_t>({1, 2, 3, -4}));
  const auto v = decode_nifti(file);
  EXPECT_EQ(v.rows, 2u);
  EXPECT_EQ(v.cols, 2u);
  EXPECT_EQ(v.depth, 1u);
  EXPECT_EQ(v.data, (std::vector<double>{1, 2, 3, -4}));
}

TEST(Nifti, SlopeAndIntercept) {
  NiftiSpec s;
  s.slope = 2.0f;
  s.inter = 1.0f;
  const auto v = decode_nifti(nifti_file(s, payload_of<std::int16_t>({1, 2, 3, 4})));
  EXPECT_EQ(v.data, (std::vector<double>{3, 5, 7, 9}));
}

TEST(Nifti, RowsFollowSecondDimension) {
  NiftiSpec s;
  s.nx = 3;
  s.ny = 2;
  const auto v = decode_nifti(nifti_file(s, payload_of<std::int16_t>({1, 2, 3, 4, 5, 6})));
  EXPECT_EQ(v.rows, 2u);
  EXPECT_EQ(v.cols, 3u);
  EXPECT_EQ(v.slice(0)(1, 0), 4.0);
}

TEST(Nifti, BigEndianSource) {
  NiftiSpec s;
  s.big_endian = true;
  s.datatype = 16;
  s.bitpix = 32;
  const auto v = decode_nifti(nifti_file(s, payload_of<float>({1.5f, -2.0f, 3.25f, 4.0f}, true)));
  EXPECT_EQ(v.data, (std::vector<double>{1.5, -2.0, 3.25, 4.0}));
  EXPECT_TRUE(std::any_cast<NiftiHeader>(v.meta).byte_swapped_source);
}

TEST(Nifti, AllDatatypesRoundTrip) {
  Rng rng(1);
  Volume v(3, 4, 2);
  for (auto& x : v.data) x = static_cast<double>(static_cast<int>(rng.below(200)));
  for (auto dt : {NiftiDatatype::uint8, NiftiDatatype::int16, NiftiDatatype::uint16, NiftiDatatype::int32,
                  NiftiDatatype::float32, NiftiDatatype::float64}) {
    const auto bytes = encode_nifti(v, dt);
    EXPECT_EQ(read_at<std::int16_t>(bytes, 70), static_cast<std::int16_t>(dt));
    const auto back = decode_nifti(bytes);
    EXPECT_TRUE(back.same_voxels(v)) << static_cast<int>(dt);
  }
}

TEST(Nifti, FileRoundTripRawAndGzip) {
  TempDir tmp;
  Rng rng(2);
  Volume v(5, 7, 3);
  for (auto& x : v.data) x = static_cast<double>(static_cast<float>(rng.uniform(-1e3, 1e3)));
  for (const char* name : {"a.nii", "a.nii.gz"}) {
    write_nifti(v, tmp.path / name);
    const auto back = read_nifti(tmp.path / name);
    EXPECT_TRUE(back.same_voxels(v)) << name;
  }
  std::ifstream gz(tmp.path / "a.nii.gz", std::ios::binary);
  EXPECT_EQ(gz.get(), 0x1f);
}

TEST(Nifti, RewriteKeepsHeaderFieldsAndUpdatesDims) {
  const auto file = nifti_file({.nx = 3, .ny = 2}, payload_of<std::int16_t>({1, 2, 3, 4, 5, 6}));
  const auto v = decode_nifti(file);
  const auto same = encode_nifti(v);
  EXPECT_EQ(read_at<float>(same, 80), read_at<float>(file, 80));  // pixdim[1]
  EXPECT_EQ(read_at<float>(same, 112), 0.0f);                       // slope
  EXPECT_EQ(read_at<std::int16_t>(same, 70), 16);                   // float32

  const auto t = apply_volume(Orientation::from_code(4), v);
  const auto bytes = encode_nifti(t);
  EXPECT_EQ(read_at<std::int16_t>(bytes, 42), 2);
  EXPECT_EQ(read_at<std::int16_t>(bytes, 44), 3);
  EXPECT_TRUE(decode_nifti(bytes).same_voxels(t));

  auto h = std::any_cast<NiftiHeader>(v.meta);
  swap_inplane_spacing(h);
  EXPECT_EQ(h.pixdim[1], read_at<float>(file, 84));
  EXPECT_EQ(h.pixdim[2], read_at<float>(file, 80));
}

TEST(Nifti, EmptyVolumeRejected) {
  EXPECT_THROW(encode_nifti(Volume{}), Error);
}

TEST(Nifti, MalformedInputsGiveDistinctErrors) {
  const auto good = nifti_file({}, payload_of<std::int16_t>({1, 2, 3, 4}));
  EXPECT_EQ(error_code_of([&] { decode_nifti(nifti_file({.magic = "ni1"}, payload_of<std::int16_t>({1, 2, 3, 4}))); }),
            Errc::bad_magic);
  EXPECT_EQ(error_code_of([&] {
              decode_nifti(nifti_file({.datatype = 128, .bitpix = 24}, payload_of<std::int16_t>({1, 2, 3, 4})));
            }),
            Errc::unsupported_datatype);
  EXPECT_EQ(error_code_of([&] { decode_nifti(std::span(good).first(good.size() - 1)); }), Errc::truncated);
  EXPECT_EQ(error_code_of([&] { decode_nifti(std::span(good).first(100)); }), Errc::truncated);
  EXPECT_EQ(error_code_of([&] { decode_nifti(std::span(good).first(0)); }), Errc::truncated);
  // Every prefix fails cleanly.
  for (std::size_t n = 0; n < good.size(); ++n)
    EXPECT_THROW(decode_nifti(std::span(good).first(n)), Error) << n;
  EXPECT_EQ(error_code_of([] { read_nifti("/nonexistent/x.nii"); }), Errc::io);
}

// --- DICOM -----------------------------------------------------------------

TEST(Dicom, Handcrafted8Bit) {
  const auto img = decode_dicom(dicom_file({}, {1, 2, 3, 4}));
  EXPECT_EQ(img.slice, Slice(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(img.dataset.get_us(tags::kRows), 2);
}

TEST(Dicom, Signed16BitSignExtension) {
  DicomSpec s;
  s.bits_allocated = 16;
  s.bits_stored = 16;
  s.pixel_representation = 1;
  const auto img = decode_dicom(dicom_file(s, payload_of<std::int16_t>({-1, 300, -32768, 7})));
  EXPECT_EQ(img.slice, Slice(2, 2, {-1, 300, -32768, 7}));
  s.bits_stored = 12;
  const auto masked = decode_dicom(dicom_file(s, payload_of<std::uint16_t>({0x0FFF, 0x07FF, 0xF800, 0x0001})));
  EXPECT_EQ(masked.slice, Slice(2, 2, {-1, 2047, -2048, 1}));
}

TEST(Dicom, RoundTripKeepsElementsVerbatim) {
  DicomSpec s;
  s.rows = 2;
  s.cols = 3;
  s.bits_allocated = 16;
  s.bits_stored = 16;
  s.with_sequence = true;
  s.pixel_spacing = "0.5\\0.75";
  const auto file = dicom_file(s, payload_of<std::uint16_t>({10, 20, 30, 40, 50, 60}));
  const auto img = decode_dicom(file);
  EXPECT_EQ(encode_dicom(img.slice, img.dataset), file);
  const auto back = decode_dicom(encode_dicom(img.slice, img.dataset));
  EXPECT_EQ(back.slice, img.slice);
}

TEST(Dicom, TransposeSwapsRowsAndColumnsAndClamps) {
  DicomSpec s;
  s.rows = 2;
  s.cols = 3;
  const auto img = decode_dicom(dicom_file(s, {1, 2, 3, 4, 5, 6}));
  Slice t = apply(Orientation::from_code(4), img.slice);
  t(0, 0) = 300.0;
  t(0, 1) = -5.0;
  const auto back = decode_dicom(encode_dicom(t, img.dataset));
  EXPECT_EQ(back.dataset.get_us(tags::kRows), 3);
  EXPECT_EQ(back.dataset.get_us(tags::kColumns), 2);
  EXPECT_EQ(back.slice(0, 0), 255.0);
  EXPECT_EQ(back.slice(0, 1), 0.0);
  EXPECT_EQ(back.slice(2, 1), 6.0);
}

TEST(Dicom, MinimalDatasetRoundTrip) {
  Rng rng(3);
  Slice s(4, 5);
  for (auto& v : s.data) v = static_cast<double>(static_cast<int>(rng.below(4000)) - 2000);
  const auto ds = DicomDataset::minimal(4, 5, 16, true);
  EXPECT_EQ(decode_dicom(encode_dicom(s, ds)).slice, s);
}

TEST(Dicom, MalformedInputs) {
  EXPECT_EQ(error_code_of([] { decode_dicom(dicom_file({.with_preamble = false}, {1, 2, 3, 4})); }),
            Errc::bad_magic);
  const auto implicit_msg =
      error_text_of([] { decode_dicom(dicom_file({.transfer_syntax = "1.2.840.10008.1.2"}, {1, 2, 3, 4})); });
  EXPECT_NE(implicit_msg.find("unsupported encoding"), std::string::npos) << implicit_msg;
  EXPECT_EQ(error_code_of([] { decode_dicom(dicom_file({.transfer_syntax = "1.2.840.10008.1.2.4.50"}, {1, 2, 3, 4})); }),
            Errc::unsupported_encoding);
  EXPECT_EQ(error_code_of([] { decode_dicom(dicom_file({.photometric = "RGB"}, {1, 2, 3, 4})); }),
            Errc::unsupported_encoding);
  EXPECT_EQ(error_code_of([] { decode_dicom(dicom_file({.rows = 4}, {1, 2, 3, 4})); }), Errc::truncated);
  const auto good = dicom_file({.with_sequence = true}, {1, 2, 3, 4});
  for (std::size_t n = 0; n < good.size(); ++n)
    EXPECT_THROW(decode_dicom(std::span(good).first(n)), Error) << n;
}

// --- weights ---------------------------------------------------------------

namespace {

ModelParams<float> small_model(std::uint64_t seed) {
  Architecture arch;
  arch.input_rows = arch.input_cols = 16;
  auto p = ModelParams<float>::initialize(arch, seed);
  Rng rng(seed);
  for (auto& e : p.entries())
    for (auto& v : e.value.values()) v = static_cast<float>(rng.normal());
  return p;
}

PreprocConfig small_config() {
  PreprocConfig cfg;
  cfg.train_size = {16, 16};
  return cfg;
}

}  // namespace

TEST(Weights, RoundTripIsBitExact) {
  const auto p = small_model(4);
  const auto bytes = encode_weights(p, small_config(), "LGE");
  EXPECT_EQ(std::memcmp(bytes.data(), "CMRO", 4), 0);
  EXPECT_EQ(read_at<std::uint32_t>(bytes, 4), 1u);
  const auto w = decode_weights(bytes);
  EXPECT_EQ(w.modality, "LGE");
  EXPECT_EQ(w.preprocess, small_config());
  ASSERT_EQ(w.params.entries().size(), p.entries().size());
  for (std::size_t i = 0; i < p.entries().size(); ++i) {
    EXPECT_EQ(w.params.entries()[i].name, p.entries()[i].name);
    EXPECT_EQ(std::memcmp(w.params.entries()[i].value.data(), p.entries()[i].value.data(),
                          p.entries()[i].value.size() * sizeof(float)),
              0);
  }
  EXPECT_EQ(w.params.arch(), p.arch());
  EXPECT_EQ(encode_weights(w.params, w.preprocess, w.modality), bytes);
}

TEST(Weights, RejectsBadMagicVersionAndTruncation) {
  auto bytes = encode_weights(small_model(5), small_config(), "bSSFP");
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(error_code_of([&] { decode_weights(bad); }), Errc::bad_magic);
  bad = bytes;
  bad[4] = 9;
  EXPECT_EQ(error_code_of([&] { decode_weights(bad); }), Errc::version_mismatch);
  const auto msg = error_text_of([&] { decode_weights(std::span(bytes).first(bytes.size() - 10)); });
  EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
  EXPECT_NE(msg.find("record for tensor 'head.1.bias'"), std::string::npos) << msg;
  for (std::size_t n = 0; n < bytes.size(); n += 97)
    EXPECT_THROW(decode_weights(std::span(bytes).first(n)), Error);
}

TEST(Weights, ArchitectureMismatchNamesTensor) {
  const auto p = small_model(6);
  // Config claims 32x32 inputs while the head was built for 16x16.
  PreprocConfig cfg = small_config();
  cfg.train_size = {32, 32};
  const auto msg = error_text_of([&] { decode_weights(encode_weights(p, cfg, "x")); });
  EXPECT_NE(msg.find("head.0.weight"), std::string::npos) << msg;

  Architecture other = p.arch();
  other.hidden = 64;
  EXPECT_EQ(error_code_of([&] { check_architecture(p, other); }), Errc::architecture_mismatch);
  EXPECT_NO_THROW(check_architecture(p, p.arch()));
}

TEST(Weights, FileRoundTrip) {
  TempDir tmp;
  const auto p = small_model(7);
  write_weights(p, small_config(), "T2", tmp.path / "m.cmro");
  const auto w = read_weights(tmp.path / "m.cmro");
  EXPECT_EQ(w.modality, "T2");
  for (std::size_t i = 0; i < p.entries().size(); ++i)
    EXPECT_EQ(w.params.entries()[i].value, p.entries()[i].value);
}
