// cmrorient: recognise and correct the stored orientation of cardiac MR
// images, and train the recognition model.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmro/batch.hpp"
#include "cmro/error.hpp"
#include "cmro/nifti.hpp"
#include "cmro/phantom.hpp"
#include "cmro/pipeline.hpp"
#include "cmro/weights.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace cmro;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::size_t> parse_extents(const std::string& text, std::size_t min_parts, std::size_t max_parts) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (true) {
    const auto x = text.find_first_of("xX,", start);
    const auto part = text.substr(start, x == std::string::npos ? std::string::npos : x - start);
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size() || v == 0) throw UsageError("invalid extent list '" + text + "'");
    out.push_back(v);
    if (x == std::string::npos) break;
    start = x + 1;
  }
  if (out.size() < min_parts || out.size() > max_parts) throw UsageError("invalid extent list '" + text + "'");
  return out;
}

Extent2 parse_size(const std::string& text) {
  const auto e = parse_extents(text, 1, 2);
  return {e[0], e.size() == 2 ? e[1] : e[0]};
}

std::string resolve_model(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("CMRO_MODEL"); env && *env) return env;
  throw UsageError("no model given: pass --model or set CMRO_MODEL");
}

std::vector<InputFile> inputs_from(const std::vector<std::string>& args) {
  std::vector<fs::path> paths(args.begin(), args.end());
  return collect_inputs(paths);
}

EpochCallback history_printer(bool json, const char* stage = nullptr) {
  return [json, stage](const EpochRecord& r) {
    if (json) {
      auto j = nlohmann::json::parse(to_json_line(r));
      if (stage) j["stage"] = stage;
      std::cout << j.dump() << "\n";
    } else {
      if (stage) std::cout << stage << " ";
      std::printf("epoch %3zu  loss %.6f  val_acc %.4f\n", r.epoch, r.train_loss, r.val_accuracy);
    }
    std::cout.flush();
  };
}

// --- recognize -------------------------------------------------------------

struct RecognizeArgs {
  std::vector<std::string> paths;
  std::string model;
  bool json = false;
  std::size_t jobs = 1;
};

int run_recognize(const RecognizeArgs& a) {
  const auto model = read_weights(resolve_model(a.model));
  const auto inputs = inputs_from(a.paths);
  const auto report = recognize_files(model, inputs, a.jobs);
  if (a.json) {
    std::cout << report.to_json() << "\n";
  } else {
    std::cout << report.to_table();
  }
  for (const auto& f : report.files)
    if (!f.error.empty()) std::cerr << "error: " << f.path.string() << ": " << f.error << "\n";
  return report.ok() ? 0 : kExitFailure;
}

// --- correct ---------------------------------------------------------------

struct CorrectArgs {
  std::vector<std::string> paths;
  std::string model;
  std::string out;
  int target = 0;
  bool dry_run = false;
  bool in_place = false;
  bool json = false;
  std::size_t jobs = 1;
};

int run_correct(const CorrectArgs& a) {
  if (a.out.empty() && !a.in_place) throw UsageError("--out DIR is required unless --in-place is given");
  if (!a.out.empty() && a.in_place) throw UsageError("--out and --in-place are mutually exclusive");
  const auto model = read_weights(resolve_model(a.model));
  const auto inputs = inputs_from(a.paths);
  CorrectOptions opts;
  opts.out_dir = a.out;
  opts.target = Orientation::from_code(a.target);
  opts.dry_run = a.dry_run;
  opts.in_place = a.in_place;
  opts.jobs = a.jobs;
  const auto report = correct_files(model, inputs, opts);
  if (a.json) {
    std::cout << report.to_json() << "\n";
  } else {
    std::cout << report.to_table();
    if (a.dry_run) std::cout << "dry run: nothing was written\n";
  }
  for (const auto& f : report.files)
    if (!f.error.empty()) std::cerr << "error: " << f.path.string() << ": " << f.error << "\n";
  return report.ok() ? 0 : kExitFailure;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::size_t synthetic = 0;
  std::string out;
  std::size_t epochs = 40;
  std::size_t batch = 32;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  std::string train_size = "64";
  std::string modality = "bSSFP";
  bool json = false;
};

std::vector<Volume> training_volumes(const std::string& data, std::size_t synthetic, std::uint64_t seed) {
  if (synthetic) return generate_phantoms(synthetic, {}, seed);
  return load_volumes(data);
}

int run_train(const TrainArgs& a) {
  PreprocConfig pc;
  pc.train_size = parse_size(a.train_size);
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.lr = a.lr;
  tc.seed = a.seed;
  const auto arch = architecture_for(pc);
  try {
    pc.validate();
    tc.validate();
    arch.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto volumes = training_volumes(a.data, a.synthetic, a.seed);
  const auto ds = build_dataset(volumes, pc, a.seed);
  if (!a.json)
    std::printf("%zu volumes: %zu training / %zu validation examples, %zu parameters\n", volumes.size(),
                ds.train.size(), ds.val.size(), count_parameters(ModelParams<float>::zeros(arch)));
  const auto result = train(ds, tc, pc, arch, history_printer(a.json));
  write_weights(result.params, pc, a.modality, a.out);
  if (a.json) {
    std::cout << nlohmann::json{{"best_epoch", result.best_epoch},
                                {"best_val_accuracy", result.best_val_accuracy},
                                {"weights", a.out}}
                     .dump()
              << "\n";
  } else if (result.best_epoch) {
    std::printf("best epoch %zu (val_acc %.4f) written to %s\n", result.best_epoch, result.best_val_accuracy,
                a.out.c_str());
  } else {
    std::printf("untrained weights written to %s\n", a.out.c_str());
  }
  return 0;
}

// --- finetune --------------------------------------------------------------

struct FinetuneArgs {
  std::string base;
  std::string data;
  std::string out;
  double stage1_lr = 1e-3;
  double stage2_lr = 1e-4;
  std::vector<std::size_t> stage_epochs{5, 5};
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  std::string modality = "LGE";
  bool json = false;
};

int run_finetune(const FinetuneArgs& a) {
  const auto base = read_weights(a.base);
  TransferConfig cfg;
  cfg.stage1_lr = a.stage1_lr;
  cfg.stage2_lr = a.stage2_lr;
  cfg.stage1_epochs = a.stage_epochs.at(0);
  cfg.stage2_epochs = a.stage_epochs.at(1);
  cfg.base.batch_size = a.batch;
  cfg.base.seed = a.seed;
  try {
    cfg.base.validate();
    TrainConfig probe = cfg.base;
    probe.lr = cfg.stage1_lr;
    probe.validate();
    probe.lr = cfg.stage2_lr;
    probe.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto& pc = base.preprocess;
  const auto arch = base.params.arch();
  const auto ds = build_dataset(load_volumes(a.data), pc, a.seed);
  if (!a.json && !ds.val.empty())
    std::printf("base model on new data: val_acc %.4f\n", evaluate(base.params, ds.val).accuracy);
  std::size_t seen = 0;
  const auto stage1 = history_printer(a.json, "stage1");
  const auto stage2 = history_printer(a.json, "stage2");
  const auto result = transfer(base.params, ds, cfg, pc, arch, [&](const EpochRecord& r) {
    (seen++ < cfg.stage1_epochs ? stage1 : stage2)(r);
  });
  write_weights(result.params, pc, a.modality, a.out);
  if (!a.json) std::printf("fine-tuned weights (%s) written to %s\n", a.modality.c_str(), a.out.c_str());
  return 0;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t count = 10;
  std::string dims = "96x96x6";
  std::uint64_t seed = 0;
  std::string style = "bright-blood";
};

int run_synth(const SynthArgs& a) {
  const auto d = parse_extents(a.dims, 3, 3);
  PhantomStyle style{};
  try {
    style = phantom_style_from_string(a.style);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const auto volumes = generate_phantoms(a.count, {d[0], d[1], d[2]}, a.seed, style);
  fs::create_directories(a.out);
  const int width = std::max<int>(3, static_cast<int>(std::to_string(a.count - 1).size()));
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    std::string idx = std::to_string(i);
    idx.insert(0, static_cast<std::size_t>(width) - std::min<std::size_t>(idx.size(), width), '0');
    write_nifti(volumes[i], fs::path(a.out) / ("phantom_" + idx + ".nii.gz"));
  }
  std::printf("%zu %s phantoms (%zux%zux%zu) written to %s\n", volumes.size(), a.style.c_str(), d[0], d[1], d[2],
              a.out.c_str());
  return 0;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::string data;
  std::string train_size;
  bool json = false;
};

int run_eval(const EvalArgs& a) {
  const auto model = read_weights(resolve_model(a.model));
  if (!a.train_size.empty() && parse_size(a.train_size) != model.preprocess.train_size)
    std::cerr << "warning: --train-size " << a.train_size
              << " differs from the preprocessing stored in the weights; using the weights' config ("
              << model.preprocess.train_size.rows << "x" << model.preprocess.train_size.cols << ")\n";
  const auto volumes = load_volumes(a.data);
  std::vector<std::size_t> all(volumes.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto examples = expand_examples(volumes, all, model.preprocess);
  const auto report = evaluate(model.params, examples);
  std::cout << (a.json ? report.to_json() + "\n" : report.to_text());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recognise and correct the stored orientation of cardiac MR images"};
  app.require_subcommand(1);

  RecognizeArgs rec;
  auto* recognize = app.add_subcommand("recognize", "Report the detected orientation class of each file");
  recognize->add_option("paths", rec.paths, "Files or folders (.nii, .nii.gz, .dcm)")->required();
  recognize->add_option("--model", rec.model, "Weights file (default: $CMRO_MODEL)");
  recognize->add_flag("--json", rec.json, "Structured output");
  recognize->add_option("--jobs", rec.jobs, "Worker threads")->check(CLI::PositiveNumber);

  CorrectArgs cor;
  auto* correct = app.add_subcommand("correct", "Rewrite files into the target orientation");
  correct->add_option("paths", cor.paths, "Files or folders (.nii, .nii.gz, .dcm)")->required();
  correct->add_option("--model", cor.model, "Weights file (default: $CMRO_MODEL)");
  correct->add_option("--out", cor.out, "Output directory");
  correct->add_option("--target", cor.target, "Target orientation class")->check(CLI::Range(0, 7));
  correct->add_flag("--dry-run", cor.dry_run, "Report only, write nothing");
  correct->add_flag("--in-place", cor.in_place, "Overwrite inputs, keeping <name>.bak");
  correct->add_flag("--json", cor.json, "Structured output");
  correct->add_option("--jobs", cor.jobs, "Worker threads")->check(CLI::PositiveNumber);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a recognition model");
  auto* data_opt = train_cmd->add_option("--data", tr.data, "Folder of correctly oriented volumes");
  auto* synth_opt = train_cmd->add_option("--synthetic", tr.synthetic, "Train on N generated phantoms")
                        ->check(CLI::PositiveNumber);
  data_opt->excludes(synth_opt);
  train_cmd->add_option("--out", tr.out, "Output weights file")->required();
  train_cmd->add_option("--epochs", tr.epochs, "Training epochs");
  train_cmd->add_option("--batch", tr.batch, "Minibatch size");
  train_cmd->add_option("--lr", tr.lr, "Learning rate");
  train_cmd->add_option("--seed", tr.seed, "Random seed");
  train_cmd->add_option("--train-size", tr.train_size, "Network input size, N or RxC");
  train_cmd->add_option("--modality", tr.modality, "Modality tag stored in the weights");
  train_cmd->add_flag("--json", tr.json, "Epoch history as JSON lines");

  FinetuneArgs ft;
  auto* finetune = app.add_subcommand("finetune", "Two-stage transfer to a new dataset");
  finetune->add_option("--base", ft.base, "Base weights file")->required();
  finetune->add_option("--data", ft.data, "Folder of correctly oriented volumes")->required();
  finetune->add_option("--stage1-lr", ft.stage1_lr, "Head-only learning rate");
  finetune->add_option("--stage2-lr", ft.stage2_lr, "Full-network learning rate");
  finetune->add_option("--stage-epochs", ft.stage_epochs, "Epochs for stage 1 and stage 2")->expected(2);
  finetune->add_option("--out", ft.out, "Output weights file")->required();
  finetune->add_option("--modality", ft.modality, "Modality tag for the new weights");
  finetune->add_option("--batch", ft.batch, "Minibatch size");
  finetune->add_option("--seed", ft.seed, "Random seed");
  finetune->add_flag("--json", ft.json, "Epoch history as JSON lines");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Write synthetic phantom volumes");
  synth->add_option("--out", sy.out, "Output folder")->required();
  synth->add_option("--count", sy.count, "Number of volumes")->check(CLI::PositiveNumber);
  synth->add_option("--dims", sy.dims, "RxCxD");
  synth->add_option("--seed", sy.seed, "Random seed");
  synth->add_option("--style", sy.style, "bright-blood or dark-blood");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Accuracy and confusion matrix on all eight orientations of a folder");
  eval->add_option("--model", ev.model, "Weights file (default: $CMRO_MODEL)");
  eval->add_option("--data", ev.data, "Folder of correctly oriented volumes")->required();
  eval->add_option("--train-size", ev.train_size, "Expected network input size (checked against the weights)");
  eval->add_flag("--json", ev.json, "Structured output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*recognize) return run_recognize(rec);
    if (*correct) return run_correct(cor);
    if (*train_cmd) {
      if (tr.data.empty() && tr.synthetic == 0) throw UsageError("train needs --data DIR or --synthetic N");
      return run_train(tr);
    }
    if (*finetune) return run_finetune(ft);
    if (*synth) return run_synth(sy);
    if (*eval) return run_eval(ev);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::invalid_argument ? kExitUsage : kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
