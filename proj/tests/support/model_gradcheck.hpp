#pragma once

#include <string>
#include <vector>

#include "cmro/model.hpp"
#include "support/gradcheck.hpp"

namespace cmro::test {

struct GradReport {
  std::string name;
  double rel_error = 0.0;
};

/// End-to-end check of model_backward on a [2, 3, 16, 16] batch in train
/// mode. Every learnable tensor is probed at `per_tensor` random entries, the
/// input gradient at the same number.
inline std::vector<GradReport> model_gradient_check(std::uint64_t seed = 7, std::size_t per_tensor = 12) {
  Architecture arch;
  arch.input_rows = arch.input_cols = 16;
  auto params = ModelParams<double>::initialize(arch, seed);
  Rng rng(seed + 1);
  // Non-trivial batchnorm affine parameters so their gradients are exercised.
  for (auto& e : params.entries())
    if (e.role == ParamRole::bn_scale || e.role == ParamRole::bn_shift || e.role == ParamRole::conv_bias ||
        e.role == ParamRole::fc_bias)
      for (auto& v : e.value.values()) v = (e.role == ParamRole::bn_scale ? 1.0 : 0.0) + rng.uniform(-0.3, 0.3);
  auto x = random_tensor({2, 3, 16, 16}, rng);
  const auto w = random_tensor({2, arch.classes}, rng);

  ForwardCache<double> cache;
  model_forward(params, x, Mode::train, {}, &cache);
  TensorD grad_input;
  const auto grads = model_backward(params, cache, w, &grad_input);

  auto loss = [&] { return weighted_sum(model_forward(params, x, Mode::train), w); };
  std::vector<GradReport> out;
  for (std::size_t i = 0; i < params.entries().size(); ++i) {
    auto& e = params.entries()[i];
    if (!e.learnable()) continue;
    out.push_back({e.name, check_gradient(e.value, grads[i], loss, rng, per_tensor)});
  }
  out.push_back({"input", check_gradient(x, grad_input, loss, rng, per_tensor)});
  return out;
}

}  // namespace cmro::test
