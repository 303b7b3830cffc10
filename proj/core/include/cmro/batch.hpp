#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmro/dicom.hpp"
#include "cmro/orientation.hpp"
#include "cmro/weights.hpp"

// File-level recognition and correction as used by the cmrorient tool.

namespace cmro {

enum class FileFormat { nifti, dicom, unknown };

/// By extension: .nii, .nii.gz, .dcm (case-insensitive).
FileFormat detect_format(const std::filesystem::path& path);

struct InputFile {
  std::filesystem::path path;
  std::filesystem::path relative;  // name under the output directory
};

/// Files are taken as given; directories are searched recursively for
/// supported files, in sorted order. Throws Error(invalid_argument) with a
/// "no supported files" message when nothing is found.
std::vector<InputFile> collect_inputs(std::span<const std::filesystem::path> args);

struct Image {
  FileFormat format = FileFormat::unknown;
  Volume volume;       // DICOM images load as depth 1
  DicomDataset dicom;  // template for DICOM output
};

Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);

/// apply_volume plus the metadata that follows a transposition: NIfTI
/// in-plane spacing and DICOM PixelSpacing are swapped; DICOM Rows/Columns
/// follow the slice when written.
Image transform_image(const Image& image, Orientation o);

/// Every supported file under `dir`, loaded as volumes, in sorted path order.
std::vector<Volume> load_volumes(const std::filesystem::path& dir);

enum class FileAction { recognized, already_correct, corrected, would_correct, failed };

std::string_view to_string(FileAction a);

struct FileRecord {
  std::filesystem::path path;
  std::optional<int> detected;
  double confidence = 0.0;
  std::array<std::size_t, 8> votes{};
  FileAction action = FileAction::failed;
  std::optional<std::filesystem::path> output;
  std::string error;  // diagnostic for failed records
};

struct CorrectionReport {
  std::vector<FileRecord> files;  // input order
  std::size_t already_correct = 0;
  std::size_t corrected = 0;
  std::size_t failed = 0;

  bool ok() const { return failed == 0; }
  /// Fields: files[{path, detected, confidence, action, output}],
  /// already_correct, corrected, failed.
  std::string to_json() const;
  std::string to_table() const;
};

struct CorrectOptions {
  std::filesystem::path out_dir;
  Orientation target;
  bool dry_run = false;
  bool in_place = false;
  std::size_t jobs = 1;
};

/// Per-file majority-vote recognition. Unreadable files become failed records.
CorrectionReport recognize_files(const WeightsFile& model, std::span<const InputFile> inputs,
                                 std::size_t jobs = 1);

/// Recognise each file and bring it to `target`. Outputs mirror input names
/// under out_dir; a file already at target is copied byte for byte. Inputs
/// are never overwritten unless in_place is set, in which case the original is
/// kept as "<name>.bak".
CorrectionReport correct_files(const WeightsFile& model, std::span<const InputFile> inputs,
                               const CorrectOptions& opts);

}  // namespace cmro
