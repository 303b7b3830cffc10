#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cmro/orientation.hpp"
#include "cmro/random.hpp"
#include "cmro/tensor.hpp"

namespace cmro {

struct Extent2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

struct AugmentConfig {
  double max_rotation_deg = 10.0;
  double crop_fraction = 0.9;
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct PreprocConfig {
  std::vector<double> thresholds{0.60, 0.80, 1.00};
  Extent2 canonical_size{256, 256};
  Extent2 train_size{64, 64};
  std::size_t eq_levels = 256;
  double zscore_epsilon = 1e-8;
  AugmentConfig aug;

  /// Throws Error(invalid_argument) on non-increasing thresholds, thresholds
  /// outside (0, 1], zero sizes or zero bins.
  void validate() const;

  /// Canonical JSON text (sorted keys) and its inverse.
  std::string to_json() const;
  static PreprocConfig from_json(const std::string& text);

  friend bool operator==(const PreprocConfig&, const PreprocConfig&) = default;
};

/// Network input: tensor of shape [channels, rows, cols], z-scored jointly.
struct ModelInput {
  TensorD tensor;
};

Slice truncate(const Slice& s, double fraction);
Slice hist_equalize(const Slice& s, std::size_t levels = 256);

/// Bilinear resampling with pixel-centre alignment (corners not aligned).
/// Sampling weights are mirror-symmetric, so resizing commutes exactly with
/// flips and, for square-to-square resizes, with transposition.
Slice resize(const Slice& s, Extent2 target);

/// (t - mean) / (std + epsilon) over all elements, population std.
TensorD zscore(const TensorD& t, double epsilon);

/// resize -> truncate per threshold -> equalize -> stack -> resize -> z-score.
ModelInput assemble(const Slice& s, const PreprocConfig& cfg);

struct AugmentParams {
  double angle_deg = 0.0;
  double crop_row = 0.0;  // window origin as a fraction of the free margin
  double crop_col = 0.0;
};

AugmentParams draw_augment(const AugmentConfig& cfg, Rng& rng);

/// Rotation about the centre (bilinear, edge padding), crop of side ratio
/// crop_fraction at the drawn offset, resize back to the input extents.
Slice augment(const Slice& s, const AugmentConfig& cfg, const AugmentParams& p);
Slice augment(const Slice& s, const AugmentConfig& cfg, Rng& rng);

/// Applies one draw of augmentation to every channel of a [C,H,W] tensor and
/// re-normalises it.
TensorD augment_input(const TensorD& input, const PreprocConfig& cfg, Rng& rng);

}  // namespace cmro
