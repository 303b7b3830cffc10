#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cmro/model.hpp"
#include "cmro/orientation.hpp"
#include "cmro/preprocess.hpp"

namespace cmro {

struct LabeledExample {
  Tensor input;  // [channels, rows, cols]
  int label = 0;
  std::size_t volume = 0;
  std::size_t slice = 0;
};

struct SplitDataset {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> val;
  std::uint64_t split_seed = 0;
  std::vector<std::size_t> train_volumes;
  std::vector<std::size_t> val_volumes;
};

/// Every slice of the selected volumes under all eight orientations, labelled
/// by the applied class and preprocessed with assemble().
std::vector<LabeledExample> expand_examples(const std::vector<Volume>& volumes,
                                            std::span<const std::size_t> which,
                                            const PreprocConfig& cfg);

/// Volume-level split (val_fraction of volumes, rounded, at least one when
/// two or more volumes exist), then 8-way expansion of each side.
SplitDataset build_dataset(const std::vector<Volume>& volumes, const PreprocConfig& cfg,
                           std::uint64_t seed, double val_fraction = 0.2);

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
  bool augment = true;

  void validate() const;
  BatchNormOptions batchnorm() const { return {bn_momentum, bn_epsilon}; }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

/// One JSON object per line: {"epoch":..,"train_loss":..,"val_accuracy":..}.
std::string to_json_line(const EpochRecord& r);

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainResult {
  ModelParams<float> params;  // best-validation checkpoint
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_accuracy = 0.0;
};

/// Minibatch SGD over `params` in place of a fresh init. Frozen entries stay
/// bit-identical. Returns the epoch with the highest validation accuracy
/// (the last epoch when there is no validation set); with zero epochs the
/// input params are returned unchanged.
TrainResult fit(ModelParams<float> params, const SplitDataset& ds, const TrainConfig& tc,
                const PreprocConfig& pc, const EpochCallback& on_epoch = {});

/// Fresh initialisation (seeded from tc.seed) followed by fit().
TrainResult train(const SplitDataset& ds, const TrainConfig& tc, const PreprocConfig& pc,
                  const Architecture& arch, const EpochCallback& on_epoch = {});

struct TransferConfig {
  double stage1_lr = 1e-3;
  double stage2_lr = 1e-4;
  std::size_t stage1_epochs = 5;
  std::size_t stage2_epochs = 5;
  TrainConfig base;  // batch size, momentum, seed, batchnorm, augmentation
};

struct TransferResult {
  ModelParams<float> params;
  ModelParams<float> after_stage1;
  std::vector<EpochRecord> stage1_history;
  std::vector<EpochRecord> stage2_history;
};

/// Stage 1 trains the head with the backbone frozen (batchnorm statistics
/// included); stage 2 trains everything at the lower rate from the stage-1
/// checkpoint. Throws Error(architecture_mismatch) if `base` does not have the
/// layout of `arch`.
TransferResult transfer(const ModelParams<float>& base, const SplitDataset& ds_new,
                        const TransferConfig& cfg, const PreprocConfig& pc, const Architecture& arch,
                        const EpochCallback& on_epoch = {});

struct EvalReport {
  double accuracy = 0.0;
  std::array<std::array<std::size_t, 8>, 8> confusion{};  // [true][predicted]
  std::array<double, 8> per_class_accuracy{};
  std::size_t total = 0;

  std::string to_text() const;
  std::string to_json() const;
};

EvalReport report_from_predictions(std::span<const int> labels, std::span<const int> predictions);

/// Argmax over logit rows, ties to the lower class index.
std::vector<int> predict_classes(const ModelParams<float>& params, std::span<const LabeledExample> examples,
                                 BatchNormOptions bn = {});

EvalReport evaluate(const ModelParams<float>& params, std::span<const LabeledExample> examples,
                    BatchNormOptions bn = {});

struct Recognition {
  Orientation detected;
  std::array<std::size_t, 8> votes{};
  double confidence = 0.0;  // fraction of slices voting for `detected`
};

/// Majority vote, ties to the lower class index.
Recognition decide_by_votes(const std::array<std::size_t, 8>& votes);

Recognition recognize_volume(const ModelParams<float>& params, const PreprocConfig& cfg,
                             const Volume& v, BatchNormOptions bn = {});

}  // namespace cmro
