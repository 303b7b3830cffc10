#include "cmro/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <string>

namespace cmro {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRow = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapRow = Eigen::Map<const RowMatrix<T>>;

[[noreturn]] void shape_error(const std::string& what) { throw Error(Errc::shape_mismatch, what); }

void require_rank(const Shape& s, std::size_t rank, const char* name) {
  if (s.size() != rank)
    shape_error(std::string(name) + " must have rank " + std::to_string(rank) + ", got " +
                shape_string(s));
}

struct ConvGeometry {
  std::size_t n, c, h, w;  // input
  std::size_t k, kh, kw;   // kernel
  std::size_t oh, ow;      // output
  std::size_t stride, pad;

  std::size_t patch() const { return c * kh * kw; }
  std::size_t out_pixels() const { return oh * ow; }
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                           Conv2dSpec spec) {
  require_rank(input.shape(), 4, "conv2d input");
  require_rank(kernel.shape(), 4, "conv2d kernel");
  if (spec.stride == 0) shape_error("conv2d stride must be positive");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                 kernel.dim(0), kernel.dim(2), kernel.dim(3), 0, 0, spec.stride, spec.padding};
  if (kernel.dim(1) != g.c)
    shape_error("conv2d kernel channels " + std::to_string(kernel.dim(1)) +
                " != input channels " + std::to_string(g.c) + " (input " +
                shape_string(input.shape()) + ", kernel " + shape_string(kernel.shape()) + ")");
  const std::size_t ph = g.h + 2 * g.pad, pw = g.w + 2 * g.pad;
  if (ph < g.kh || pw < g.kw || (ph - g.kh) % g.stride != 0 || (pw - g.kw) % g.stride != 0)
    shape_error("conv2d window " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                " does not tile padded input " + std::to_string(ph) + "x" + std::to_string(pw) +
                " at stride " + std::to_string(g.stride));
  g.oh = (ph - g.kh) / g.stride + 1;
  g.ow = (pw - g.kw) / g.stride + 1;
  return g;
}

// Unfolds sample n into a [C*kh*kw, oh*ow] row-major matrix.
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* cols) {
  const auto P = g.out_pixels();
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((ch * g.kh + ki) * g.kw + kj) * P;
        const T* plane = image + ch * g.h * g.w;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, T{});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T{} : src[ix];
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* image) {
  const auto P = g.out_pixels();
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((ch * g.kh + ki) * g.kw + kj) * P;
        T* plane = image + ch * g.h * g.w;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * g.w;
          const T* src = row + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                              const BasicTensor<T>& bias, Conv2dSpec spec) {
  const auto g = conv_geometry(input, kernel, spec);
  if (bias.size() != g.k)
    shape_error("conv2d bias length " + std::to_string(bias.size()) + " != output channels " +
                std::to_string(g.k));
  const auto P = g.out_pixels();
  BasicTensor<T> out({g.n, g.k, g.oh, g.ow});
  std::vector<T> cols(g.patch() * P);
  ConstMapRow<T> weights(kernel.data(), static_cast<Eigen::Index>(g.k),
                         static_cast<Eigen::Index>(g.patch()));
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(input.data() + n * g.c * g.h * g.w, g, cols.data());
    ConstMapRow<T> colm(cols.data(), static_cast<Eigen::Index>(g.patch()),
                        static_cast<Eigen::Index>(P));
    MapRow<T> result(out.data() + n * g.k * P, static_cast<Eigen::Index>(g.k),
                     static_cast<Eigen::Index>(P));
    result.noalias() = weights * colm;
    for (std::size_t k = 0; k < g.k; ++k) result.row(static_cast<Eigen::Index>(k)).array() += bias[k];
  }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                               const BasicTensor<T>& kernel, Conv2dSpec spec) {
  const auto g = conv_geometry(input, kernel, spec);
  const Shape expected{g.n, g.k, g.oh, g.ow};
  if (grad_out.shape() != expected)
    shape_error("conv2d grad_out shape " + shape_string(grad_out.shape()) + " != expected " +
                shape_string(expected));
  const auto P = g.out_pixels();
  Conv2dGrads<T> grads{BasicTensor<T>(input.shape()), BasicTensor<T>(kernel.shape()),
                       BasicTensor<T>({g.k})};
  std::vector<T> cols(g.patch() * P);
  std::vector<T> dcols(g.patch() * P);
  ConstMapRow<T> weights(kernel.data(), static_cast<Eigen::Index>(g.k),
                         static_cast<Eigen::Index>(g.patch()));
  MapRow<T> dweights(grads.kernel.data(), static_cast<Eigen::Index>(g.k),
                     static_cast<Eigen::Index>(g.patch()));
  for (std::size_t n = 0; n < g.n; ++n) {
    ConstMapRow<T> gout(grad_out.data() + n * g.k * P, static_cast<Eigen::Index>(g.k),
                        static_cast<Eigen::Index>(P));
    im2col(input.data() + n * g.c * g.h * g.w, g, cols.data());
    ConstMapRow<T> colm(cols.data(), static_cast<Eigen::Index>(g.patch()),
                        static_cast<Eigen::Index>(P));
    dweights.noalias() += gout * colm.transpose();
    for (std::size_t k = 0; k < g.k; ++k) {
      const T* row = grad_out.data() + (n * g.k + k) * P;
      T s = 0;
      for (std::size_t p = 0; p < P; ++p) s += row[p];
      grads.bias[k] += s;
    }
    MapRow<T> dcolm(dcols.data(), static_cast<Eigen::Index>(g.patch()),
                    static_cast<Eigen::Index>(P));
    dcolm.noalias() = weights.transpose() * gout;
    col2im(dcols.data(), g, grads.input.data() + n * g.c * g.h * g.w);
  }
  return grads;
}

namespace {

template <typename T>
void check_channel_vector(const BasicTensor<T>& t, std::size_t channels, const char* name) {
  if (t.size() != channels)
    shape_error(std::string("batchnorm ") + name + " length " + std::to_string(t.size()) +
                " != channels " + std::to_string(channels));
}

}  // namespace

template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& input, const BasicTensor<T>& scale,
                                 const BasicTensor<T>& shift, BasicTensor<T>& running_mean,
                                 BasicTensor<T>& running_var, Mode mode, BatchNormOptions opts,
                                 BatchNormCache<T>* cache) {
  require_rank(input.shape(), 4, "batchnorm input");
  const std::size_t N = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  check_channel_vector(scale, C, "scale");
  check_channel_vector(shift, C, "shift");
  check_channel_vector(running_mean, C, "running mean");
  check_channel_vector(running_var, C, "running variance");
  const std::size_t M = N * HW;
  if (mode == Mode::train && M < 2)
    throw Error(Errc::invalid_argument,
                "batchnorm in train mode needs at least 2 values per channel, got " +
                    std::to_string(M));

  BasicTensor<T> out(input.shape());
  BasicTensor<T> normalized(input.shape());
  std::vector<T> inv_std(C);
  const T eps = static_cast<T>(opts.epsilon);
  const T mom = static_cast<T>(opts.momentum);

  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == Mode::train) {
      double sum = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = input.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) sum += p[i];
      }
      const double m = sum / static_cast<double>(M);
      double sq = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = input.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = p[i] - m;
          sq += d * d;
        }
      }
      mean = static_cast<T>(m);
      var = static_cast<T>(sq / static_cast<double>(M));
      const T unbiased = static_cast<T>(sq / static_cast<double>(M - 1));
      running_mean[c] = (T{1} - mom) * running_mean[c] + mom * mean;
      running_var[c] = (T{1} - mom) * running_var[c] + mom * unbiased;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    inv_std[c] = T{1} / std::sqrt(var + eps);
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T xhat = (input[off + i] - mean) * inv_std[c];
        normalized[off + i] = xhat;
        out[off + i] = scale[c] * xhat + shift[c];
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BatchNormCache<T>& cache,
                                     const BasicTensor<T>& scale) {
  if (grad_out.shape() != cache.normalized.shape())
    shape_error("batchnorm grad_out shape " + shape_string(grad_out.shape()) +
                " != forward shape " + shape_string(cache.normalized.shape()));
  const std::size_t N = grad_out.dim(0), C = grad_out.dim(1), HW = grad_out.dim(2) * grad_out.dim(3);
  const std::size_t M = N * HW;
  BatchNormGrads<T> g{BasicTensor<T>(grad_out.shape()), BasicTensor<T>({C}), BasicTensor<T>({C})};
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xhat += static_cast<double>(grad_out[off + i]) * cache.normalized[off + i];
      }
    }
    g.shift[c] = static_cast<T>(sum_dy);
    g.scale[c] = static_cast<T>(sum_dy_xhat);
    const T k = scale[c] * cache.inv_std[c];
    if (cache.mode == Mode::eval) {
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t off = (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) g.input[off + i] = k * grad_out[off + i];
      }
      continue;
    }
    const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(M));
    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / static_cast<double>(M));
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i)
        g.input[off + i] =
            k * (grad_out[off + i] - mean_dy - cache.normalized[off + i] * mean_dy_xhat);
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? input[i] : T{0};
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input) {
  if (grad_out.shape() != input.shape())
    shape_error("relu grad_out shape " + shape_string(grad_out.shape()) + " != input shape " +
                shape_string(input.shape()));
  BasicTensor<T> g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > T{0} ? grad_out[i] : T{0};
  return g;
}

template <typename T>
PoolResult<T> maxpool2x2_forward(const BasicTensor<T>& input) {
  require_rank(input.shape(), 4, "maxpool input");
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    shape_error("maxpool2x2 needs even spatial extents, got " + std::to_string(H) + "x" +
                std::to_string(W));
  const std::size_t OH = H / 2, OW = W / 2;
  PoolResult<T> r{BasicTensor<T>({N, C, OH, OW}), std::vector<std::uint32_t>(N * C * OH * OW)};
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    const std::size_t base = plane * H * W;
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t x = 0; x < OW; ++x, ++o) {
        std::size_t best = base + 2 * y * W + 2 * x;
        const std::size_t cand[3] = {best + 1, best + W, best + W + 1};
        for (auto idx : cand)
          if (input[idx] > input[best]) best = idx;
        r.output[o] = input[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>& grad_out,
                                   std::span<const std::uint32_t> argmax, const Shape& input_shape) {
  if (argmax.size() != grad_out.size())
    shape_error("maxpool backward: argmax count does not match grad_out");
  BasicTensor<T> g(input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                          const BasicTensor<T>& bias) {
  require_rank(input.shape(), 2, "fc input");
  require_rank(weight.shape(), 2, "fc weight");
  const std::size_t N = input.dim(0), in = input.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in)
    shape_error("fc input width " + std::to_string(in) + " != weight columns " +
                std::to_string(weight.dim(1)) + " (weight " + shape_string(weight.shape()) + ")");
  if (bias.size() != out)
    shape_error("fc bias length " + std::to_string(bias.size()) + " != outputs " +
                std::to_string(out));
  BasicTensor<T> y({N, out});
  ConstMapRow<T> x(input.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(in));
  ConstMapRow<T> w(weight.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  MapRow<T> ym(y.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(out));
  ym.noalias() = x * w.transpose();
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), static_cast<Eigen::Index>(out));
  ym.rowwise() += b;
  return y;
}

template <typename T>
FcGrads<T> fc_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                       const BasicTensor<T>& weight) {
  require_rank(grad_out.shape(), 2, "fc grad_out");
  const std::size_t N = input.dim(0), in = input.dim(1), out = weight.dim(0);
  if (grad_out.dim(0) != N || grad_out.dim(1) != out)
    shape_error("fc grad_out shape " + shape_string(grad_out.shape()) + " inconsistent with input " +
                shape_string(input.shape()) + " and weight " + shape_string(weight.shape()));
  FcGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weight.shape()), BasicTensor<T>({out})};
  ConstMapRow<T> gy(grad_out.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(out));
  ConstMapRow<T> x(input.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(in));
  ConstMapRow<T> w(weight.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  MapRow<T>(g.input.data(), static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(in)).noalias() =
      gy * w;
  MapRow<T>(g.weight.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in))
      .noalias() = gy.transpose() * x;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t o = 0; o < out; ++o) g.bias[o] += grad_out[i * out + o];
  return g;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  require_rank(logits.shape(), 2, "softmax logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  BasicTensor<T> p(logits.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = logits.data() + n * K;
    T* out = p.data() + n * K;
    const T mx = *std::max_element(row, row + K);
    T sum = 0;
    for (std::size_t k = 0; k < K; ++k) sum += (out[k] = std::exp(row[k] - mx));
    for (std::size_t k = 0; k < K; ++k) out[k] /= sum;
  }
  return p;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_rank(logits.shape(), 2, "cross-entropy logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N)
    shape_error("cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(N) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw Error(Errc::invalid_argument,
                  "label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
  LossResult<T> r{T{0}, BasicTensor<T>(logits.shape())};
  double total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = logits.data() + n * K;
    const T mx = *std::max_element(row, row + K);
    double sum = 0;
    for (std::size_t k = 0; k < K; ++k) sum += std::exp(static_cast<double>(row[k] - mx));
    const double log_sum = std::log(sum);
    const auto y = static_cast<std::size_t>(labels[n]);
    total += log_sum - static_cast<double>(row[y] - mx);
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(static_cast<double>(row[k] - mx) - log_sum);
      r.grad[n * K + k] = static_cast<T>((p - (k == y ? 1.0 : 0.0)) / static_cast<double>(N));
    }
  }
  r.loss = static_cast<T>(total / static_cast<double>(N));
  return r;
}

#define CMRO_INSTANTIATE_LAYERS(T)                                                                \
  template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                         const BasicTensor<T>&, Conv2dSpec);                      \
  template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                          const BasicTensor<T>&, Conv2dSpec);                     \
  template BasicTensor<T> batchnorm_forward(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                            const BasicTensor<T>&, BasicTensor<T>&,               \
                                            BasicTensor<T>&, Mode, BatchNormOptions,              \
                                            BatchNormCache<T>*);                                  \
  template BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>&, const BatchNormCache<T>&, \
                                                const BasicTensor<T>&);                           \
  template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                    \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template PoolResult<T> maxpool2x2_forward(const BasicTensor<T>&);                               \
  template BasicTensor<T> maxpool2x2_backward(const BasicTensor<T>&,                              \
                                              std::span<const std::uint32_t>, const Shape&);      \
  template BasicTensor<T> fc_forward(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                     const BasicTensor<T>&);                                      \
  template FcGrads<T> fc_backward(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                  const BasicTensor<T>&);                                         \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                         \
  template LossResult<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);

CMRO_INSTANTIATE_LAYERS(float)
CMRO_INSTANTIATE_LAYERS(double)

#undef CMRO_INSTANTIATE_LAYERS

}  // namespace cmro
