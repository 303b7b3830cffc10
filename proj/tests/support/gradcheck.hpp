#pragma once

// Central finite-difference oracle. Layer outputs are reduced to a scalar with
// fixed random weights, L = sum_i w_i * y_i, so dL/dy = w feeds the analytic
// backward pass while the numeric side only ever evaluates the forward pass.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cmro/random.hpp"
#include "cmro/tensor.hpp"

namespace cmro::test {

inline TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double weighted_sum(const TensorD& y, const TensorD& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

/// ||a - n|| / max(||a|| + ||n||, 1e-4) over the probed entries. The floor
/// turns the comparison absolute for gradients that vanish identically, such
/// as a convolution bias feeding train-mode batchnorm.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nn);
  return std::sqrt(diff) / std::max(denom, 1e-4);
}

/// Probes `count` entries of `x` (all of them when count == 0 or count >=
/// x.size()) and compares the numeric derivative of `loss` to `analytic`.
inline double check_gradient(TensorD& x, const TensorD& analytic, const std::function<double()>& loss,
                             Rng& rng, std::size_t count = 0, double h = 1e-5) {
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (count && count < idx.size()) {
    rng.shuffle(idx);
    idx.resize(count);
  }
  std::vector<double> a, n;
  for (auto i : idx) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    a.push_back(analytic[i]);
    n.push_back((up - down) / (2.0 * h));
  }
  return relative_error(a, n);
}

}  // namespace cmro::test
