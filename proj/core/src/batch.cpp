#include "cmro/batch.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <iomanip>
#include <sstream>
#include <thread>

#include "cmro/error.hpp"
#include "cmro/nifti.hpp"
#include "cmro/pipeline.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace cmro {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

constexpr DicomTag kPixelSpacing{0x0028, 0x0030};

void swap_pixel_spacing(DicomDataset& ds) {
  auto* e = ds.find(kPixelSpacing);
  if (!e) return;
  std::string text(e->value.begin(), e->value.end());
  while (!text.empty() && (text.back() == ' ' || text.back() == '\0')) text.pop_back();
  const auto sep = text.find('\\');
  if (sep == std::string::npos) return;
  std::string swapped = text.substr(sep + 1) + "\\" + text.substr(0, sep);
  if (swapped.size() % 2) swapped.push_back(' ');
  e->value.assign(swapped.begin(), swapped.end());
}

template <typename F>
void run_pool(std::size_t n, std::size_t jobs, F&& work) {
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> workers;
  for (std::size_t t = 0; t < jobs; ++t)
    workers.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) work(i);
    });
}

Recognition recognize_image(const WeightsFile& model, const Image& img) {
  return recognize_volume(model.params, model.preprocess, img.volume);
}

void tally(CorrectionReport& r) {
  for (const auto& f : r.files) {
    if (f.action == FileAction::failed) ++r.failed;
    else if (f.action == FileAction::already_correct) ++r.already_correct;
    else if (f.action == FileAction::corrected || f.action == FileAction::would_correct) ++r.corrected;
  }
}

bool same_file(const fs::path& a, const fs::path& b) {
  std::error_code ec;
  return fs::exists(a, ec) && fs::exists(b, ec) && fs::equivalent(a, b, ec);
}

}  // namespace

FileFormat detect_format(const fs::path& path) {
  const auto name = lower(path.filename().string());
  if (ends_with(name, ".nii") || ends_with(name, ".nii.gz")) return FileFormat::nifti;
  if (ends_with(name, ".dcm")) return FileFormat::dicom;
  return FileFormat::unknown;
}

std::vector<InputFile> collect_inputs(std::span<const fs::path> args) {
  std::vector<InputFile> out;
  for (const auto& arg : args) {
    std::error_code ec;
    if (fs::is_directory(arg, ec)) {
      std::vector<InputFile> found;
      for (const auto& entry : fs::recursive_directory_iterator(arg)) {
        if (!entry.is_regular_file() || detect_format(entry.path()) == FileFormat::unknown) continue;
        found.push_back({entry.path(), fs::relative(entry.path(), arg)});
      }
      std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back({arg, arg.filename()});
    }
  }
  if (out.empty()) throw Error(Errc::invalid_argument, "no supported files (.nii, .nii.gz, .dcm) found");
  return out;
}

Image load_image(const fs::path& path) {
  Image img;
  img.format = detect_format(path);
  switch (img.format) {
    case FileFormat::nifti:
      img.volume = read_nifti(path);
      break;
    case FileFormat::dicom: {
      auto d = read_dicom(path);
      img.volume = Volume(d.slice.rows, d.slice.cols, 1);
      img.volume.set_slice(0, d.slice);
      img.dicom = std::move(d.dataset);
      break;
    }
    case FileFormat::unknown:
      throw Error(Errc::unsupported_encoding, path.string() + ": unsupported file type");
  }
  return img;
}

void save_image(const Image& image, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  switch (image.format) {
    case FileFormat::nifti:
      write_nifti(image.volume, path);
      break;
    case FileFormat::dicom:
      write_dicom(image.volume.slice(0), image.dicom, path);
      break;
    case FileFormat::unknown:
      throw Error(Errc::invalid_argument, "cannot save an image of unknown format");
  }
}

Image transform_image(const Image& image, Orientation o) {
  Image out = image;
  out.volume = apply_volume(o, image.volume);
  if (o.transposes()) {
    if (auto* h = std::any_cast<NiftiHeader>(&out.volume.meta)) swap_inplane_spacing(*h);
    if (out.format == FileFormat::dicom) swap_pixel_spacing(out.dicom);
  }
  return out;
}

std::vector<Volume> load_volumes(const fs::path& dir) {
  const fs::path args[] = {dir};
  std::vector<Volume> out;
  for (const auto& f : collect_inputs(args)) out.push_back(load_image(f.path).volume);
  return out;
}

std::string_view to_string(FileAction a) {
  switch (a) {
    case FileAction::recognized: return "recognized";
    case FileAction::already_correct: return "already-correct";
    case FileAction::corrected: return "corrected";
    case FileAction::would_correct: return "would-correct";
    case FileAction::failed: return "failed";
  }
  return "?";
}

std::string CorrectionReport::to_json() const {
  nlohmann::json files_json = nlohmann::json::array();
  for (const auto& f : files) {
    nlohmann::json j;
    j["path"] = f.path.string();
    j["detected"] = f.detected ? nlohmann::json(*f.detected) : nlohmann::json(nullptr);
    j["confidence"] = f.detected ? nlohmann::json(f.confidence) : nlohmann::json(nullptr);
    j["action"] = std::string(to_string(f.action));
    j["output"] = f.output ? nlohmann::json(f.output->string()) : nlohmann::json(nullptr);
    files_json.push_back(std::move(j));
  }
  nlohmann::json j;
  j["files"] = std::move(files_json);
  j["already_correct"] = already_correct;
  j["corrected"] = corrected;
  j["failed"] = failed;
  return j.dump();
}

std::string CorrectionReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(16) << "action" << std::setw(22) << "detected" << std::setw(8) << "conf"
     << "path\n";
  for (const auto& f : files) {
    std::string det = "-", conf = "-";
    if (f.detected) {
      det = std::to_string(*f.detected) + " " + std::string(Orientation::from_code(*f.detected).label());
      std::ostringstream c;
      c << std::fixed << std::setprecision(2) << f.confidence;
      conf = c.str();
    }
    os << std::setw(16) << to_string(f.action) << std::setw(22) << det << std::setw(8) << conf
       << f.path.string();
    if (f.output) os << " -> " << f.output->string();
    if (!f.error.empty()) os << "  (" << f.error << ")";
    os << "\n";
  }
  os << files.size() << " files: " << already_correct << " already correct, " << corrected
     << " corrected, " << failed << " failed\n";
  return os.str();
}

CorrectionReport recognize_files(const WeightsFile& model, std::span<const InputFile> inputs,
                                 std::size_t jobs) {
  CorrectionReport report;
  report.files.resize(inputs.size());
  run_pool(inputs.size(), jobs, [&](std::size_t i) {
    auto& rec = report.files[i];
    rec.path = inputs[i].path;
    try {
      const auto r = recognize_image(model, load_image(inputs[i].path));
      rec.detected = r.detected.code();
      rec.confidence = r.confidence;
      rec.votes = r.votes;
      rec.action = FileAction::recognized;
    } catch (const std::exception& e) {
      rec.action = FileAction::failed;
      rec.error = e.what();
    }
  });
  tally(report);
  return report;
}

CorrectionReport correct_files(const WeightsFile& model, std::span<const InputFile> inputs,
                               const CorrectOptions& opts) {
  if (!opts.in_place && opts.out_dir.empty())
    throw Error(Errc::invalid_argument, "an output directory is required unless in-place correction is requested");
  CorrectionReport report;
  report.files.resize(inputs.size());

  // Claim output names up front so duplicates fail deterministically.
  std::vector<std::string> claim_error(inputs.size());
  if (!opts.in_place) {
    std::vector<std::pair<fs::path, std::size_t>> names;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      names.emplace_back((opts.out_dir / inputs[i].relative).lexically_normal(), i);
    std::stable_sort(names.begin(), names.end());
    for (std::size_t k = 1; k < names.size(); ++k)
      if (names[k].first == names[k - 1].first)
        claim_error[names[k].second] = "output name collides with " + inputs[names[k - 1].second].path.string();
  }

  run_pool(inputs.size(), opts.jobs, [&](std::size_t i) {
    auto& rec = report.files[i];
    const auto& in = inputs[i];
    rec.path = in.path;
    try {
      if (!claim_error[i].empty()) throw Error(Errc::invalid_argument, claim_error[i]);
      const fs::path out = opts.in_place ? in.path : opts.out_dir / in.relative;
      if (!opts.in_place && same_file(out, in.path))
        throw Error(Errc::invalid_argument, "refusing to overwrite input " + in.path.string() +
                                                " (use --in-place)");
      const Image img = load_image(in.path);
      const auto r = recognize_image(model, img);
      rec.detected = r.detected.code();
      rec.confidence = r.confidence;
      rec.votes = r.votes;
      rec.output = out;
      if (r.detected == opts.target) {
        rec.action = FileAction::already_correct;
        if (!opts.dry_run && !opts.in_place) {
          if (out.has_parent_path()) fs::create_directories(out.parent_path());
          fs::copy_file(in.path, out, fs::copy_options::overwrite_existing);
        }
        return;
      }
      rec.action = opts.dry_run ? FileAction::would_correct : FileAction::corrected;
      if (opts.dry_run) return;
      const Image fixed = transform_image(img, correction(r.detected, opts.target));
      if (opts.in_place) {
        fs::path backup = in.path;
        backup += ".bak";
        fs::copy_file(in.path, backup, fs::copy_options::overwrite_existing);
      }
      save_image(fixed, out);
    } catch (const std::exception& e) {
      rec.action = FileAction::failed;
      rec.error = e.what();
    }
  });
  tally(report);
  return report;
}

}  // namespace cmro
