#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmro/layers.hpp"
#include "cmro/tensor.hpp"

namespace cmro {

/// Shape of the recognition network: three conv blocks
/// (conv 3x3 pad 1 -> batchnorm -> ReLU -> 2x2 max pool) followed by
/// flatten -> FC(hidden) -> ReLU -> FC(classes).
struct Architecture {
  std::size_t in_channels = 3;
  std::array<std::size_t, 3> conv_channels{16, 32, 64};
  std::size_t kernel_size = 3;
  std::size_t hidden = 256;
  std::size_t classes = 8;
  std::size_t input_rows = 64;
  std::size_t input_cols = 64;

  std::size_t flatten_width() const {
    return conv_channels[2] * (input_rows / 8) * (input_cols / 8);
  }
  /// Throws unless extents are positive multiples of 8 and widths are non-zero.
  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

inline constexpr std::size_t kConvBlocks = 3;
inline constexpr std::size_t kDenseLayers = 2;

enum class ParamRole {
  conv_kernel,
  conv_bias,
  bn_scale,
  bn_shift,
  bn_running_mean,
  bn_running_var,
  fc_weight,
  fc_bias,
};

enum class Part { backbone, head };

template <typename T>
struct ParamEntry {
  std::string name;
  ParamRole role;
  Part part;
  BasicTensor<T> value;
  bool frozen = false;

  bool learnable() const {
    return role != ParamRole::bn_running_mean && role != ParamRole::bn_running_var;
  }
};

/// Every tensor of the network in a fixed order: per conv block
/// {kernel, bias, bn scale, bn shift, running mean, running var}, then per
/// dense layer {weight, bias}. Running statistics are not learnable.
template <typename T>
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(Architecture arch, std::vector<ParamEntry<T>> entries)
      : arch_(arch), entries_(std::move(entries)) {}

  /// Fan-in scaled uniform weights, zero biases, unit bn scale, zero shift.
  static ModelParams initialize(const Architecture& arch, std::uint64_t seed);

  /// Zero-valued tensors with the canonical names and shapes.
  static ModelParams zeros(const Architecture& arch);

  const Architecture& arch() const { return arch_; }
  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }

  BasicTensor<T>& conv_kernel(std::size_t b) { return entries_[b * 6 + 0].value; }
  BasicTensor<T>& conv_bias(std::size_t b) { return entries_[b * 6 + 1].value; }
  BasicTensor<T>& bn_scale(std::size_t b) { return entries_[b * 6 + 2].value; }
  BasicTensor<T>& bn_shift(std::size_t b) { return entries_[b * 6 + 3].value; }
  BasicTensor<T>& running_mean(std::size_t b) { return entries_[b * 6 + 4].value; }
  BasicTensor<T>& running_var(std::size_t b) { return entries_[b * 6 + 5].value; }
  BasicTensor<T>& fc_weight(std::size_t l) { return entries_[kConvBlocks * 6 + l * 2].value; }
  BasicTensor<T>& fc_bias(std::size_t l) { return entries_[kConvBlocks * 6 + l * 2 + 1].value; }

  const BasicTensor<T>& conv_kernel(std::size_t b) const { return entries_[b * 6 + 0].value; }
  const BasicTensor<T>& conv_bias(std::size_t b) const { return entries_[b * 6 + 1].value; }
  const BasicTensor<T>& bn_scale(std::size_t b) const { return entries_[b * 6 + 2].value; }
  const BasicTensor<T>& bn_shift(std::size_t b) const { return entries_[b * 6 + 3].value; }
  const BasicTensor<T>& running_mean(std::size_t b) const { return entries_[b * 6 + 4].value; }
  const BasicTensor<T>& running_var(std::size_t b) const { return entries_[b * 6 + 5].value; }
  const BasicTensor<T>& fc_weight(std::size_t l) const { return entries_[kConvBlocks * 6 + l * 2].value; }
  const BasicTensor<T>& fc_bias(std::size_t l) const { return entries_[kConvBlocks * 6 + l * 2 + 1].value; }

  bool block_frozen(std::size_t b) const { return entries_[b * 6 + 2].frozen; }

  void set_backbone_frozen(bool frozen);
  void set_all_frozen(bool frozen);

  template <typename U>
  ModelParams<U> cast() const {
    std::vector<ParamEntry<U>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_)
      out.push_back({e.name, e.role, e.part, e.value.template cast<U>(), e.frozen});
    return ModelParams<U>(arch_, std::move(out));
  }

 private:
  Architecture arch_;
  std::vector<ParamEntry<T>> entries_;
};

/// Canonical tensor layout for an architecture: (name, role, part, shape).
struct ParamSlot {
  std::string name;
  ParamRole role;
  Part part;
  Shape shape;
};
std::vector<ParamSlot> parameter_layout(const Architecture& arch);

/// Gradient per entry, aligned with ModelParams::entries(). Empty tensors for
/// running statistics and for entries whose gradient was not computed.
template <typename T>
using ModelGrads = std::vector<BasicTensor<T>>;

template <typename T>
std::size_t count_parameters(std::span<const ParamEntry<T>> entries) {
  std::size_t n = 0;
  for (const auto& e : entries)
    if (e.learnable()) n += e.value.size();
  return n;
}

template <typename T>
std::size_t count_parameters(const ModelParams<T>& params) {
  return count_parameters(std::span<const ParamEntry<T>>(params.entries()));
}

template <typename T>
struct BlockCache {
  BasicTensor<T> input;
  BatchNormCache<T> bn;
  BasicTensor<T> activated_input;  // batchnorm output, pre-ReLU
  Shape pool_input_shape;
  std::vector<std::uint32_t> pool_argmax;
};

template <typename T>
struct ForwardCache {
  std::array<BlockCache<T>, kConvBlocks> blocks;
  Shape features_shape;
  BasicTensor<T> flat;
  BasicTensor<T> hidden_pre;
  BasicTensor<T> hidden;
};

/// Logits [N, classes] for a batch [N, in_channels, rows, cols]. In train
/// mode, blocks whose batchnorm is not frozen normalise with batch statistics
/// and update their running estimates; frozen blocks always run in eval mode
/// so their statistics stay fixed.
template <typename T>
BasicTensor<T> model_forward(ModelParams<T>& params, const BasicTensor<T>& batch, Mode mode,
                             BatchNormOptions bn = {}, ForwardCache<T>* cache = nullptr);

/// Eval-mode forward; never mutates params.
template <typename T>
BasicTensor<T> model_predict(const ModelParams<T>& params, const BasicTensor<T>& batch,
                             BatchNormOptions bn = {});

/// Gradients of a loss with respect to every learnable entry given
/// d(loss)/d(logits). Backbone gradients are skipped when the whole backbone
/// is frozen. If `grad_input` is non-null it receives d(loss)/d(batch).
template <typename T>
ModelGrads<T> model_backward(const ModelParams<T>& params, const ForwardCache<T>& cache,
                             const BasicTensor<T>& grad_logits, BasicTensor<T>* grad_input = nullptr);

template <typename T>
struct SgdState {
  std::vector<BasicTensor<T>> velocity;
};

/// v <- momentum * v + g; p <- p - lr * v for every learnable, unfrozen entry.
/// Frozen entries and their velocity are left untouched. Rejects the whole
/// step, mutating nothing, if any consumed gradient is non-finite.
template <typename T>
void sgd_step(ModelParams<T>& params, const ModelGrads<T>& grads, SgdState<T>& state, double lr,
              double momentum);

}  // namespace cmro
