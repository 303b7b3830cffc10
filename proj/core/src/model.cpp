#include "cmro/model.hpp"

#include <cmath>

#include "cmro/random.hpp"

namespace cmro {

void Architecture::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::invalid_argument, what); };
  if (input_rows == 0 || input_cols == 0 || input_rows % 8 != 0 || input_cols % 8 != 0)
    fail("network input " + std::to_string(input_rows) + "x" + std::to_string(input_cols) +
         " must be a positive multiple of 8 in each extent");
  if (in_channels == 0 || hidden == 0 || classes == 0 || kernel_size == 0 || kernel_size % 2 == 0)
    fail("architecture widths must be positive and the kernel size odd");
  for (auto c : conv_channels)
    if (c == 0) fail("conv channel count must be positive");
}

std::vector<ParamSlot> parameter_layout(const Architecture& arch) {
  std::vector<ParamSlot> slots;
  std::size_t in = arch.in_channels;
  for (std::size_t b = 0; b < kConvBlocks; ++b) {
    const std::string p = "backbone." + std::to_string(b) + ".";
    const std::size_t k = arch.conv_channels[b];
    slots.push_back({p + "conv.weight", ParamRole::conv_kernel, Part::backbone,
                     {k, in, arch.kernel_size, arch.kernel_size}});
    slots.push_back({p + "conv.bias", ParamRole::conv_bias, Part::backbone, {k}});
    slots.push_back({p + "bn.weight", ParamRole::bn_scale, Part::backbone, {k}});
    slots.push_back({p + "bn.bias", ParamRole::bn_shift, Part::backbone, {k}});
    slots.push_back({p + "bn.running_mean", ParamRole::bn_running_mean, Part::backbone, {k}});
    slots.push_back({p + "bn.running_var", ParamRole::bn_running_var, Part::backbone, {k}});
    in = k;
  }
  const std::size_t widths[kDenseLayers + 1] = {arch.flatten_width(), arch.hidden, arch.classes};
  for (std::size_t l = 0; l < kDenseLayers; ++l) {
    const std::string p = "head." + std::to_string(l) + ".";
    slots.push_back({p + "weight", ParamRole::fc_weight, Part::head, {widths[l + 1], widths[l]}});
    slots.push_back({p + "bias", ParamRole::fc_bias, Part::head, {widths[l + 1]}});
  }
  return slots;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const Architecture& arch) {
  arch.validate();
  std::vector<ParamEntry<T>> entries;
  for (auto& slot : parameter_layout(arch))
    entries.push_back({slot.name, slot.role, slot.part, BasicTensor<T>(slot.shape), false});
  return ModelParams(arch, std::move(entries));
}

template <typename T>
ModelParams<T> ModelParams<T>::initialize(const Architecture& arch, std::uint64_t seed) {
  auto params = zeros(arch);
  Rng rng(seed);
  for (auto& e : params.entries_) {
    switch (e.role) {
      case ParamRole::conv_kernel:
      case ParamRole::fc_weight: {
        const auto fan_in = e.value.size() / e.value.dim(0);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& v : e.value.values()) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
      case ParamRole::bn_scale:
      case ParamRole::bn_running_var: e.value.fill(T{1}); break;
      default: break;
    }
  }
  return params;
}

template <typename T>
void ModelParams<T>::set_backbone_frozen(bool frozen) {
  for (auto& e : entries_)
    if (e.part == Part::backbone) e.frozen = frozen;
}

template <typename T>
void ModelParams<T>::set_all_frozen(bool frozen) {
  for (auto& e : entries_) e.frozen = frozen;
}

namespace {

template <typename T>
void check_batch(const Architecture& arch, const BasicTensor<T>& batch) {
  const Shape expected_tail{arch.in_channels, arch.input_rows, arch.input_cols};
  if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) != expected_tail) {
    if (batch.rank() == 4 && (batch.dim(2) % 8 != 0 || batch.dim(3) % 8 != 0))
      throw Error(Errc::shape_mismatch, "batch spatial extents " + shape_string(batch.shape()) +
                                            " are not divisible by 8");
    throw Error(Errc::shape_mismatch, "batch shape " + shape_string(batch.shape()) +
                                          " does not match network input [N," +
                                          std::to_string(arch.in_channels) + "," +
                                          std::to_string(arch.input_rows) + "," +
                                          std::to_string(arch.input_cols) + "]");
  }
}

template <typename T>
BasicTensor<T> run_forward(ModelParams<T>& params, const BasicTensor<T>& batch, Mode mode,
                           BatchNormOptions bn, ForwardCache<T>* cache) {
  const auto& arch = params.arch();
  check_batch(arch, batch);
  const Conv2dSpec conv{1, arch.kernel_size / 2};
  BasicTensor<T> x = batch;
  for (std::size_t b = 0; b < kConvBlocks; ++b) {
    const Mode block_mode = params.block_frozen(b) ? Mode::eval : mode;
    auto conv_out = conv2d_forward(x, params.conv_kernel(b), params.conv_bias(b), conv);
    BatchNormCache<T>* bn_cache = cache ? &cache->blocks[b].bn : nullptr;
    auto normed = batchnorm_forward(conv_out, params.bn_scale(b), params.bn_shift(b),
                                    params.running_mean(b), params.running_var(b), block_mode, bn,
                                    bn_cache);
    auto activated = relu_forward(normed);
    auto pooled = maxpool2x2_forward(activated);
    if (cache) {
      auto& bc = cache->blocks[b];
      bc.input = std::move(x);
      bc.activated_input = std::move(normed);
      bc.pool_input_shape = activated.shape();
      bc.pool_argmax = std::move(pooled.argmax);
    }
    x = std::move(pooled.output);
  }
  const std::size_t n = x.dim(0);
  const Shape features_shape = x.shape();
  auto flat = x.reshaped({n, x.size() / n});
  auto hidden_pre = fc_forward(flat, params.fc_weight(0), params.fc_bias(0));
  auto hidden = relu_forward(hidden_pre);
  auto logits = fc_forward(hidden, params.fc_weight(1), params.fc_bias(1));
  if (cache) {
    cache->features_shape = features_shape;
    cache->flat = std::move(flat);
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
  }
  return logits;
}

}  // namespace

template <typename T>
BasicTensor<T> model_forward(ModelParams<T>& params, const BasicTensor<T>& batch, Mode mode,
                             BatchNormOptions bn, ForwardCache<T>* cache) {
  return run_forward(params, batch, mode, bn, cache);
}

template <typename T>
BasicTensor<T> model_predict(const ModelParams<T>& params, const BasicTensor<T>& batch,
                             BatchNormOptions bn) {
  // Eval-mode batchnorm only reads the running statistics.
  return run_forward(const_cast<ModelParams<T>&>(params), batch, Mode::eval, bn, static_cast<ForwardCache<T>*>(nullptr));
}

template <typename T>
ModelGrads<T> model_backward(const ModelParams<T>& params, const ForwardCache<T>& cache,
                             const BasicTensor<T>& grad_logits, BasicTensor<T>* grad_input) {
  const auto& arch = params.arch();
  ModelGrads<T> grads(params.entries().size());
  const std::size_t head = kConvBlocks * 6;

  auto g2 = fc_backward(grad_logits, cache.hidden, params.fc_weight(1));
  grads[head + 2] = std::move(g2.weight);
  grads[head + 3] = std::move(g2.bias);
  auto g_hidden = relu_backward(g2.input, cache.hidden_pre);
  auto g1 = fc_backward(g_hidden, cache.flat, params.fc_weight(0));
  grads[head + 0] = std::move(g1.weight);
  grads[head + 1] = std::move(g1.bias);

  bool backbone_frozen = true;
  for (std::size_t b = 0; b < kConvBlocks; ++b)
    for (std::size_t i = 0; i < 6; ++i) backbone_frozen = backbone_frozen && params.entries()[b * 6 + i].frozen;
  if (backbone_frozen && !grad_input) return grads;

  const Conv2dSpec conv{1, arch.kernel_size / 2};
  BasicTensor<T> g = g1.input.reshaped(cache.features_shape);
  for (std::size_t bi = kConvBlocks; bi-- > 0;) {
    const auto& bc = cache.blocks[bi];
    auto g_act = maxpool2x2_backward(g, bc.pool_argmax, bc.pool_input_shape);
    auto g_norm = relu_backward(g_act, bc.activated_input);
    auto gbn = batchnorm_backward(g_norm, bc.bn, params.bn_scale(bi));
    auto gconv = conv2d_backward(gbn.input, bc.input, params.conv_kernel(bi), conv);
    grads[bi * 6 + 0] = std::move(gconv.kernel);
    grads[bi * 6 + 1] = std::move(gconv.bias);
    grads[bi * 6 + 2] = std::move(gbn.scale);
    grads[bi * 6 + 3] = std::move(gbn.shift);
    g = std::move(gconv.input);
  }
  if (grad_input) *grad_input = std::move(g);
  return grads;
}

template <typename T>
void sgd_step(ModelParams<T>& params, const ModelGrads<T>& grads, SgdState<T>& state, double lr,
              double momentum) {
  auto& entries = params.entries();
  if (grads.size() != entries.size())
    throw Error(Errc::shape_mismatch, "sgd: " + std::to_string(grads.size()) +
                                          " gradients for " + std::to_string(entries.size()) +
                                          " parameters");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (!e.learnable() || e.frozen) continue;
    if (grads[i].shape() != e.value.shape())
      throw Error(Errc::shape_mismatch, "sgd: gradient for " + e.name + " has shape " +
                                            shape_string(grads[i].shape()) + ", expected " +
                                            shape_string(e.value.shape()));
    if (!grads[i].all_finite())
      throw Error(Errc::non_finite, "sgd: non-finite gradient for " + e.name);
  }
  if (state.velocity.size() != entries.size()) state.velocity.assign(entries.size(), {});
  const T lr_t = static_cast<T>(lr);
  const T mom_t = static_cast<T>(momentum);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (!e.learnable() || e.frozen) continue;
    auto& v = state.velocity[i];
    if (v.shape() != e.value.shape()) v = BasicTensor<T>(e.value.shape());
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = mom_t * v[k] + grads[i][k];
      e.value[k] -= lr_t * v[k];
    }
  }
}

#define CMRO_INSTANTIATE_MODEL(T)                                                                 \
  template class ModelParams<T>;                                                                  \
  template BasicTensor<T> model_forward(ModelParams<T>&, const BasicTensor<T>&, Mode,            \
                                        BatchNormOptions, ForwardCache<T>*);                      \
  template BasicTensor<T> model_predict(const ModelParams<T>&, const BasicTensor<T>&,            \
                                        BatchNormOptions);                                        \
  template ModelGrads<T> model_backward(const ModelParams<T>&, const ForwardCache<T>&,           \
                                        const BasicTensor<T>&, BasicTensor<T>*);                  \
  template void sgd_step(ModelParams<T>&, const ModelGrads<T>&, SgdState<T>&, double, double);

CMRO_INSTANTIATE_MODEL(float)
CMRO_INSTANTIATE_MODEL(double)

#undef CMRO_INSTANTIATE_MODEL

}  // namespace cmro
