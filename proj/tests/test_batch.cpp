#include <gtest/gtest.h>

#include <fstream>

#include "cmro/batch.hpp"
#include "cmro/error.hpp"
#include "cmro/nifti.hpp"
#include "json.hpp"
#include "support/small_model.hpp"

using namespace cmro;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class BatchTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("cmro_batch_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_ / "in" / "sub");
    pristine_ = generate_phantoms(4, test::kSmallDims, 911);
    // Stored orientations: 0, 3, 5 (nested, gzip) and 6.
    write_nifti(pristine_[0], root_ / "in" / "a.nii");
    write_nifti(apply_volume(Orientation::from_code(3), pristine_[1]), root_ / "in" / "b.nii.gz");
    write_nifti(apply_volume(Orientation::from_code(5), pristine_[2]), root_ / "in" / "sub" / "c.nii.gz");
    write_nifti(apply_volume(Orientation::from_code(6), pristine_[3]), root_ / "in" / "d.nii");
    std::ofstream(root_ / "in" / "notes.txt") << "ignored";
  }
  void TearDown() override { fs::remove_all(root_); }

  std::vector<InputFile> inputs() const {
    const fs::path args[] = {root_ / "in"};
    return collect_inputs(args);
  }

  fs::path root_;
  std::vector<Volume> pristine_;
};

}  // namespace

TEST_F(BatchTest, CollectsRecursivelyInSortedOrder) {
  const auto in = inputs();
  ASSERT_EQ(in.size(), 4u);
  EXPECT_EQ(in[0].relative, "a.nii");
  EXPECT_EQ(in[2].relative, "d.nii");
  EXPECT_EQ(in[3].relative, fs::path("sub") / "c.nii.gz");
  fs::create_directories(root_ / "empty");
  const fs::path empty[] = {root_ / "empty"};
  try {
    collect_inputs(empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no supported files"), std::string::npos);
  }
}

TEST_F(BatchTest, RecognizeReportsStoredClasses) {
  const auto report = recognize_files(test::small_trained_model(), inputs());
  ASSERT_EQ(report.files.size(), 4u);
  EXPECT_EQ(report.files[0].detected, 0);
  EXPECT_EQ(report.files[1].detected, 3);
  EXPECT_EQ(report.files[2].detected, 6);
  EXPECT_EQ(report.files[3].detected, 5);
  EXPECT_TRUE(report.ok());
}

TEST_F(BatchTest, CorrectRestoresOriginalsAndLeavesInputsAlone) {
  const auto in = inputs();
  std::vector<std::vector<std::uint8_t>> before;
  for (const auto& f : in) before.push_back(bytes_of(f.path));

  CorrectOptions opts;
  opts.out_dir = root_ / "out";
  const auto report = correct_files(test::small_trained_model(), in, opts);
  EXPECT_EQ(report.corrected, 3u);
  EXPECT_EQ(report.already_correct, 1u);
  EXPECT_EQ(report.failed, 0u);
  EXPECT_EQ(report.files[0].action, FileAction::already_correct);
  EXPECT_EQ(bytes_of(root_ / "out" / "a.nii"), before[0]);
  EXPECT_TRUE(read_nifti(root_ / "out" / "b.nii.gz").same_voxels(pristine_[1]));
  EXPECT_TRUE(read_nifti(root_ / "out" / "sub" / "c.nii.gz").same_voxels(pristine_[2]));
  EXPECT_TRUE(read_nifti(root_ / "out" / "d.nii").same_voxels(pristine_[3]));
  for (std::size_t i = 0; i < in.size(); ++i) EXPECT_EQ(bytes_of(in[i].path), before[i]);

  // Second pass on the corrected files does nothing corrective.
  const fs::path again[] = {root_ / "out"};
  opts.out_dir = root_ / "out2";
  const auto second = correct_files(test::small_trained_model(), collect_inputs(again), opts);
  EXPECT_EQ(second.corrected, 0u);
  EXPECT_EQ(second.already_correct, 4u);
}

TEST_F(BatchTest, TargetOtherThanIdentity) {
  CorrectOptions opts;
  opts.out_dir = root_ / "out";
  opts.target = Orientation::from_code(1);
  const auto report = correct_files(test::small_trained_model(), inputs(), opts);
  EXPECT_EQ(report.corrected, 4u);
  EXPECT_TRUE(read_nifti(root_ / "out" / "a.nii").same_voxels(apply_volume(Orientation::from_code(1), pristine_[0])));
}

TEST_F(BatchTest, DryRunWritesNothing) {
  CorrectOptions opts;
  opts.out_dir = root_ / "out";
  opts.dry_run = true;
  const auto report = correct_files(test::small_trained_model(), inputs(), opts);
  EXPECT_FALSE(fs::exists(root_ / "out"));
  EXPECT_EQ(report.files[1].action, FileAction::would_correct);
  EXPECT_EQ(report.corrected, 3u);
}

TEST_F(BatchTest, InPlaceKeepsBackup) {
  const auto in = inputs();
  const auto original = bytes_of(in[1].path);
  CorrectOptions opts;
  opts.in_place = true;
  const auto report = correct_files(test::small_trained_model(), in, opts);
  EXPECT_TRUE(report.ok());
  EXPECT_EQ(bytes_of(root_ / "in" / "b.nii.gz.bak"), original);
  EXPECT_TRUE(read_nifti(in[1].path).same_voxels(pristine_[1]));
  EXPECT_FALSE(fs::exists(root_ / "in" / "a.nii.bak"));
}

TEST_F(BatchTest, NeverOverwritesInputsWithoutInPlace) {
  const auto in = inputs();
  const auto original = bytes_of(in[1].path);
  CorrectOptions opts;
  opts.out_dir = root_ / "in";
  const auto report = correct_files(test::small_trained_model(), in, opts);
  EXPECT_EQ(report.failed, 4u);
  EXPECT_NE(report.files[1].error.find("refusing to overwrite"), std::string::npos);
  EXPECT_EQ(bytes_of(in[1].path), original);
}

TEST_F(BatchTest, CorruptFileIsReportedAndOthersProceed) {
  std::ofstream(root_ / "in" / "broken.nii") << "not a nifti file";
  CorrectOptions opts;
  opts.out_dir = root_ / "out";
  const auto report = correct_files(test::small_trained_model(), inputs(), opts);
  ASSERT_EQ(report.files.size(), 5u);
  EXPECT_EQ(report.failed, 1u);
  EXPECT_EQ(report.files[2].action, FileAction::failed);
  EXPECT_EQ(report.already_correct + report.corrected + report.failed, 5u);
  EXPECT_FALSE(report.ok());
}

TEST_F(BatchTest, WorkerPoolKeepsInputOrder) {
  const auto in = inputs();
  const auto serial = recognize_files(test::small_trained_model(), in, 1);
  const auto parallel = recognize_files(test::small_trained_model(), in, 3);
  EXPECT_EQ(serial.to_json(), parallel.to_json());
}

TEST_F(BatchTest, JsonHasExactlyTheReportFields) {
  CorrectOptions opts;
  opts.out_dir = root_ / "out";
  const auto j = nlohmann::json::parse(correct_files(test::small_trained_model(), inputs(), opts).to_json());
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"already_correct", "corrected", "failed", "files"}));
  keys.clear();
  for (const auto& [k, v] : j["files"][0].items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"action", "confidence", "detected", "output", "path"}));
}

TEST(BatchImage, DicomTransposeSwapsGeometry) {
  const auto root = fs::temp_directory_path() / "cmro_batch_dicom";
  fs::remove_all(root);
  fs::create_directories(root);
  auto ds = DicomDataset::minimal(2, 3, 16, false);
  DicomElement spacing;
  spacing.tag = {0x0028, 0x0030};
  spacing.vr = {'D', 'S'};
  const std::string text = "0.5\\0.75";
  spacing.value.assign(text.begin(), text.end());
  ds.set(spacing);
  write_dicom(Slice(2, 3, {1, 2, 3, 4, 5, 6}), ds, root / "x.dcm");

  const auto img = load_image(root / "x.dcm");
  EXPECT_EQ(img.format, FileFormat::dicom);
  const auto t = transform_image(img, Orientation::from_code(5));
  save_image(t, root / "y.dcm");
  const auto back = read_dicom(root / "y.dcm");
  EXPECT_EQ(back.dataset.get_us(tags::kRows), 3);
  EXPECT_EQ(back.dataset.get_us(tags::kColumns), 2);
  EXPECT_EQ(back.slice, apply(Orientation::from_code(5), Slice(2, 3, {1, 2, 3, 4, 5, 6})));
  EXPECT_EQ(back.dataset.get_string({0x0028, 0x0030}), "0.75\\0.5");
  fs::remove_all(root);
}

TEST(BatchImage, NiftiTransposeSwapsSpacing) {
  Volume v(2, 3, 1);
  NiftiHeader h = NiftiHeader::synthesize();
  h.pixdim[1] = 0.5f;
  h.pixdim[2] = 2.0f;
  v.meta = h;
  Image img{FileFormat::nifti, v, {}};
  const auto t = transform_image(img, Orientation::from_code(4));
  const auto& th = std::any_cast<const NiftiHeader&>(t.volume.meta);
  EXPECT_EQ(th.pixdim[1], 2.0f);
  EXPECT_EQ(th.pixdim[2], 0.5f);
  EXPECT_EQ(std::any_cast<const NiftiHeader&>(transform_image(img, Orientation::from_code(3)).volume.meta).pixdim[1],
            0.5f);
}

TEST(BatchImage, FormatDetection) {
  EXPECT_EQ(detect_format("a/B.NII.GZ"), FileFormat::nifti);
  EXPECT_EQ(detect_format("x.dcm"), FileFormat::dicom);
  EXPECT_EQ(detect_format("x.gz"), FileFormat::unknown);
}
