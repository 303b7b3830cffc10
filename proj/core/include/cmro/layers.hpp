#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cmro/tensor.hpp"

// Forward and backward kernels for the layers of the recognition network.
// All activations are NCHW. Instantiated for float and double.

namespace cmro {

enum class Mode { train, eval };

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> input;
  BasicTensor<T> kernel;
  BasicTensor<T> bias;
};

/// Cross-correlation of input [N,C,H,W] with kernel [K,C,kh,kw] plus bias [K].
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                              const BasicTensor<T>& bias, Conv2dSpec spec = {});

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                               const BasicTensor<T>& kernel, Conv2dSpec spec = {});

struct BatchNormOptions {
  double momentum = 0.1;  // weight of the new batch statistic in the running average
  double epsilon = 1e-5;
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::train;
  BasicTensor<T> normalized;
  std::vector<T> inv_std;  // per channel
};

/// Per-channel normalisation. Train mode uses batch statistics and updates the
/// running estimates (unbiased variance); eval mode reads the running estimates.
template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& input, const BasicTensor<T>& scale,
                                 const BasicTensor<T>& shift, BasicTensor<T>& running_mean,
                                 BasicTensor<T>& running_var, Mode mode, BatchNormOptions opts,
                                 BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input;
  BasicTensor<T> scale;
  BasicTensor<T> shift;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BatchNormCache<T>& cache,
                                     const BasicTensor<T>& scale);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

/// Subgradient at zero is zero.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input);

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// Non-overlapping 2x2 max pooling. Ties go to the first position in
/// row-major window order.
template <typename T>
PoolResult<T> maxpool2x2_forward(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out,
                                   std::span<const std::uint32_t> argmax, const Shape& input_shape);

template <typename T>
struct FcGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

/// y = x W^T + b for x [N,in], W [out,in], b [out].
template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                          const BasicTensor<T>& bias);

template <typename T>
FcGrads<T> fc_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                       const BasicTensor<T>& weight);

/// Row-wise softmax of [N,K] logits, max-subtracted.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <typename T>
struct LossResult {
  T loss;
  BasicTensor<T> grad;  // d(mean loss)/d(logits)
};

template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

}  // namespace cmro
