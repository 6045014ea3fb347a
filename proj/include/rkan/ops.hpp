#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "rkan/parallel.hpp"
#include "rkan/tensor.hpp"

namespace rkan {

/// Kernel, stride and zero-padding of a sliding-window operation.
struct ConvGeometry {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h(std::size_t h) const { return out_extent(h, kernel_h, "height"); }
  std::size_t out_w(std::size_t w) const { return out_extent(w, kernel_w, "width"); }

 private:
  std::size_t out_extent(std::size_t extent, std::size_t kernel, const char* axis) const {
    if (kernel == 0 || stride == 0)
      throw GeometryError("kernel and stride must be at least 1");
    const std::size_t padded = extent + 2 * padding;
    if (padded < kernel)
      throw GeometryError(std::string("kernel ") + axis + " " + std::to_string(kernel) +
                          " exceeds padded input " + axis + " " + std::to_string(padded));
    return (padded - kernel) / stride + 1;
  }
};

namespace detail {
inline void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) throw GeometryError(std::string(what) + ": expected rank-4 input, got " + to_string(s));
}
}  // namespace detail

namespace detail {
// Output columns [lo, hi) whose input column ox*stride + kc - pad is inside [0, w).
inline void valid_span(std::size_t out_w, std::size_t w, std::size_t stride, std::size_t kc,
                       std::size_t pad, std::size_t& lo, std::size_t& hi) {
  lo = kc >= pad ? 0 : (pad - kc + stride - 1) / stride;
  // largest ox with ox*stride + kc - pad <= w - 1
  const long top = static_cast<long>(w) - 1 + static_cast<long>(pad) - static_cast<long>(kc);
  hi = top < 0 ? 0 : std::min(out_w, static_cast<std::size_t>(top) / stride + 1);
  if (hi < lo) hi = lo;
}
}  // namespace detail

/// Patch matrix with one row per patch feature and one column per (batch,
/// location) pair: shape [C*kh*kw, B*L]. Rows are ordered channel, kernel row,
/// kernel column; columns are batch-major, then row-major over the output grid.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, const ConvGeometry& g, std::size_t first = 0,
                 std::size_t count = static_cast<std::size_t>(-1)) {
  detail::require_rank4(x.shape(), "im2col");
  const std::size_t channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  first = std::min(first, x.dim(0));
  const std::size_t batch = std::min(count, x.dim(0) - first);
  const std::size_t oh = g.out_h(h), ow = g.out_w(w);
  const std::size_t locations = oh * ow, cols = batch * locations;
  const std::size_t features = channels * g.kernel_h * g.kernel_w;
  Tensor<T> out({features, cols});
  const long pad = static_cast<long>(g.padding);
  parallel_for(features, [&](std::size_t row) {
    const std::size_t c = row / (g.kernel_h * g.kernel_w);
    const std::size_t kr = (row / g.kernel_w) % g.kernel_h;
    const std::size_t kc = row % g.kernel_w;
    std::size_t lo = 0, hi = 0;
    detail::valid_span(ow, w, g.stride, kc, g.padding, lo, hi);
    const long shift = static_cast<long>(kc) - pad;
    for (std::size_t b = 0; b < batch; ++b) {
      const T* src = x.ptr() + ((first + b) * channels + c) * h * w;
      T* dst = out.ptr() + row * cols + b * locations;
      for (std::size_t oy = 0; oy < oh; ++oy, dst += ow) {
        const long iy = static_cast<long>(oy * g.stride + kr) - pad;
        if (iy < 0 || iy >= static_cast<long>(h)) {
          std::fill_n(dst, ow, T{0});
          continue;
        }
        const T* line = src + iy * static_cast<long>(w);
        std::fill_n(dst, lo, T{0});
        if (g.stride == 1) {
          std::copy_n(line + static_cast<long>(lo) + shift, hi - lo, dst + lo);
        } else {
          for (std::size_t ox = lo; ox < hi; ++ox)
            dst[ox] = line[static_cast<long>(ox * g.stride) + shift];
        }
        std::fill(dst + hi, dst + ow, T{0});
      }
    }
  });
  return out;
}

/// Adjoint of im2col: scatter-adds the patch gradients of samples
/// [first, first + n) onto out, where n is implied by the column count.
template <typename T>
void col2im_into(const Tensor<T>& cols, Tensor<T>& out, const ConvGeometry& g,
                 std::size_t first = 0) {
  detail::require_rank4(out.shape(), "col2im");
  const std::size_t channels = out.dim(1), h = out.dim(2), w = out.dim(3);
  const std::size_t oh = g.out_h(h), ow = g.out_w(w), locations = oh * ow;
  const std::size_t kk = g.kernel_h * g.kernel_w;
  const std::size_t ncols = cols.rank() == 2 ? cols.dim(1) : 0;
  const std::size_t batch = locations ? ncols / locations : 0;
  if (cols.rank() != 2 || cols.dim(0) != channels * kk || batch * locations != ncols ||
      first + batch > out.dim(0))
    throw GeometryError("col2im: patch matrix " + to_string(cols.shape()) +
                        " does not match input " + to_string(out.shape()));
  const long pad = static_cast<long>(g.padding);
  parallel_for(batch * channels, [&](std::size_t bc) {
    const std::size_t b = bc / channels, c = bc % channels;
    T* dst = out.ptr() + ((first + b) * channels + c) * h * w;
    for (std::size_t k = 0; k < kk; ++k) {
      const std::size_t kr = k / g.kernel_w, kc = k % g.kernel_w;
      std::size_t lo = 0, hi = 0;
      detail::valid_span(ow, w, g.stride, kc, g.padding, lo, hi);
      const long shift = static_cast<long>(kc) - pad;
      const T* src = cols.ptr() + (c * kk + k) * ncols + b * locations;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const long iy = static_cast<long>(oy * g.stride + kr) - pad;
        if (iy < 0 || iy >= static_cast<long>(h)) continue;
        T* line = dst + iy * static_cast<long>(w);
        const T* row = src + oy * ow;
        for (std::size_t ox = lo; ox < hi; ++ox)
          line[static_cast<long>(ox * g.stride) + shift] += row[ox];
      }
    }
  });
}

template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, const Shape& input_shape, const ConvGeometry& g) {
  detail::require_rank4(input_shape, "col2im");
  Tensor<T> out(input_shape);
  const std::size_t locations = g.out_h(input_shape[2]) * g.out_w(input_shape[3]);
  if (cols.rank() != 2 || cols.dim(1) != input_shape[0] * locations)
    throw GeometryError("col2im: patch matrix " + to_string(cols.shape()) +
                        " does not match input " + to_string(input_shape));
  col2im_into(cols, out, g, 0);
  return out;
}

/// [C, B*L] (channel-major) to [B, C, rest...] (batch-major).
template <typename T>
Tensor<T> channels_to_batch(const Tensor<T>& m, std::size_t batch, Shape spatial) {
  const std::size_t channels = m.dim(0);
  const std::size_t per = m.dim(1) / batch;
  if (per * batch != m.dim(1) || shape_size(spatial) != per)
    throw GeometryError("channels_to_batch: cannot split " + to_string(m.shape()));
  Shape shape{batch, channels};
  shape.insert(shape.end(), spatial.begin(), spatial.end());
  Tensor<T> out(std::move(shape));
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(m.ptr() + c * m.dim(1) + b * per, per, out.ptr() + (b * channels + c) * per);
  return out;
}

/// [B, C, rest...] to [C, B*rest].
template <typename T>
Tensor<T> batch_to_channels(const Tensor<T>& t) {
  const std::size_t batch = t.dim(0), channels = t.dim(1);
  const std::size_t per = t.size() / std::max<std::size_t>(1, batch * channels);
  Tensor<T> out({channels, batch * per});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(t.ptr() + (b * channels + c) * per, per, out.ptr() + c * batch * per + b * per);
  return out;
}

/// Extracts zero-padded patches: [B, C, H, W] -> [B, C*kh*kw, L].
template <typename T>
Tensor<T> unfold(const Tensor<T>& x, const ConvGeometry& g) {
  const Tensor<T> cols = im2col(x, g);
  const std::size_t batch = x.dim(0);
  const std::size_t locations = cols.dim(1) / std::max<std::size_t>(1, batch);
  // im2col rows are features; regroup the batch-major columns per sample.
  return channels_to_batch(cols, batch, {locations});
}

/// Adjoint of unfold.
template <typename T>
Tensor<T> unfold_backward(const Tensor<T>& grad_patches, const Shape& input_shape,
                          const ConvGeometry& g) {
  return col2im(batch_to_channels(grad_patches), input_shape, g);
}

/// Places per-location outputs [B, C, L] on an out_h x out_w grid. A pure
/// reshape: each location already holds exactly one value.
template <typename T>
Tensor<T> fold_to_grid(const Tensor<T>& y, std::size_t out_h, std::size_t out_w) {
  if (y.rank() != 3) throw GeometryError("fold_to_grid: expected [B, C, L], got " + to_string(y.shape()));
  if (y.dim(2) != out_h * out_w)
    throw GeometryError("fold_to_grid: " + std::to_string(y.dim(2)) + " locations cannot fill a " +
                        std::to_string(out_h) + "x" + std::to_string(out_w) + " grid");
  return y.reshaped({y.dim(0), y.dim(1), out_h, out_w});
}

template <typename T>
Tensor<T> fold_to_grid_backward(const Tensor<T>& grad) {
  return grad.reshaped({grad.dim(0), grad.dim(1), grad.dim(2) * grad.dim(3)});
}

// ----------------------------------------------------------------------------
// Convolution

namespace detail {
// Samples per GEMM so that each patch matrix stays cache-sized while the
// GEMM still sees a few hundred columns.
inline std::size_t conv_chunk(std::size_t batch, std::size_t features, std::size_t locations) {
  const std::size_t want = (512 + locations - 1) / std::max<std::size_t>(1, locations);
  const std::size_t cap = std::max<std::size_t>(1, (std::size_t{1} << 19) /
                                                       std::max<std::size_t>(1, features * locations));
  return std::clamp<std::size_t>(std::min(want, cap), 1, std::max<std::size_t>(1, batch));
}
}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const std::type_identity_t<Tensor<T>>* bias, std::size_t stride,
                 std::size_t padding) {
  detail::require_rank4(x.shape(), "conv2d");
  if (weight.rank() != 4) throw GeometryError("conv2d: weight must be [C_out, C_in, kh, kw]");
  if (weight.dim(1) != x.dim(1))
    throw GeometryError("conv2d: input has " + std::to_string(x.dim(1)) +
                        " channels, weight expects " + std::to_string(weight.dim(1)));
  const ConvGeometry g{weight.dim(2), weight.dim(3), stride, padding};
  const std::size_t oh = g.out_h(x.dim(2)), ow = g.out_w(x.dim(3)), locations = oh * ow;
  const std::size_t batch = x.dim(0), out_c = weight.dim(0), features = weight.size() / out_c;
  if (bias && bias->size() != out_c) throw GeometryError("conv2d: bias length mismatch");
  Tensor<T> out({batch, out_c, oh, ow});
  const std::size_t chunk = detail::conv_chunk(batch, features, locations);
  Tensor<T> y;
  for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
    const std::size_t n = std::min(chunk, batch - b0);
    const Tensor<T> cols = im2col(x, g, b0, n);
    y = Tensor<T>({out_c, n * locations});
    gemm(false, false, out_c, n * locations, features, T{1}, weight.ptr(), cols.ptr(), T{0},
         y.ptr());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < out_c; ++o) {
        const T* src = y.ptr() + o * n * locations + b * locations;
        T* dst = out.ptr() + ((b0 + b) * out_c + o) * locations;
        const T add = bias ? (*bias)[o] : T{0};
        for (std::size_t j = 0; j < locations; ++j) dst[j] = src[j] + add;
      }
  }
  return out;
}

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;  // empty when the layer has no bias
};

/// Adjoint of conv2d; patch matrices are rebuilt chunk by chunk.
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, bool has_bias,
                               std::size_t stride, std::size_t padding,
                               const Tensor<T>& grad_out, bool need_input_grad = true) {
  const ConvGeometry g{weight.dim(2), weight.dim(3), stride, padding};
  const std::size_t oh = g.out_h(x.dim(2)), ow = g.out_w(x.dim(3)), locations = oh * ow;
  const std::size_t batch = x.dim(0), out_c = weight.dim(0), features = weight.size() / out_c;
  if (grad_out.shape() != Shape{batch, out_c, oh, ow})
    throw GeometryError("conv2d_backward: gradient shape " + to_string(grad_out.shape()) +
                        " does not match forward output");
  Conv2dGrads<T> grads;
  grads.weight = Tensor<T>(weight.shape());
  if (has_bias) {
    grads.bias = Tensor<T>({out_c});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < out_c; ++o) {
        const T* row = grad_out.ptr() + (b * out_c + o) * locations;
        T acc{0};
        for (std::size_t j = 0; j < locations; ++j) acc += row[j];
        grads.bias[o] += acc;
      }
  }
  if (need_input_grad) grads.input = Tensor<T>(x.shape());
  const std::size_t chunk = detail::conv_chunk(batch, features, locations);
  Tensor<T> gy, gcols;
  for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
    const std::size_t n = std::min(chunk, batch - b0);
    const std::size_t ncols = n * locations;
    const Tensor<T> cols = im2col(x, g, b0, n);
    gy = Tensor<T>({out_c, ncols});
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < out_c; ++o)
        std::copy_n(grad_out.ptr() + ((b0 + b) * out_c + o) * locations, locations,
                    gy.ptr() + o * ncols + b * locations);
    gemm(false, true, out_c, features, ncols, T{1}, gy.ptr(), cols.ptr(), T{1},
         grads.weight.ptr());
    if (need_input_grad) {
      gcols = Tensor<T>({features, ncols});
      gemm(true, false, features, ncols, out_c, T{1}, weight.ptr(), gy.ptr(), T{0}, gcols.ptr());
      col2im_into(gcols, grads.input, g, b0);
    }
  }
  return grads;
}

// ----------------------------------------------------------------------------
// Element-wise activations

enum class Activation { tanh, silu, relu };

/// While armed, every ReLU folds the sign pattern of its input into a
/// running fingerprint. Two evaluations with equal fingerprints took the same
/// linear piece of every ReLU.
struct KinkMonitor {
  static inline thread_local bool armed = false;
  static inline thread_local std::uint64_t fingerprint = 0;
};

template <typename T>
inline T sigmoid(T v) {
  return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation kind) {
  Tensor<T> y(x.shape());
  const T* in = x.ptr();
  T* out = y.ptr();
  const std::size_t n = x.size();
  switch (kind) {
    case Activation::tanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
      break;
    case Activation::silu:
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i] * sigmoid(in[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
      if (KinkMonitor::armed) {
        std::uint64_t h = KinkMonitor::fingerprint ^ (n * 0x9e3779b97f4a7c15ULL);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ (in[i] > T{0} ? 1u : 0u)) * 0x100000001b3ULL;
        KinkMonitor::fingerprint = h;
      }
      break;
  }
  return y;
}

/// Gradient with respect to the activation input x.
template <typename T>
Tensor<T> activate_backward(const Tensor<T>& x, const Tensor<T>& grad_out, Activation kind) {
  x.require_same_shape(grad_out, "activate_backward");
  Tensor<T> g(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    T d{0};
    switch (kind) {
      case Activation::tanh: {
        const T t = std::tanh(v);
        d = T{1} - t * t;
        break;
      }
      case Activation::silu: {
        const T s = sigmoid(v);
        d = s * (T{1} + v * (T{1} - s));
        break;
      }
      case Activation::relu:
        d = v > T{0} ? T{1} : T{0};
        break;
    }
    g[i] = d * grad_out[i];
  }
  return g;
}

// ----------------------------------------------------------------------------
// Pooling, dense head, loss

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_rank4(x.shape(), "global_avg_pool");
  const std::size_t bc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw GeometryError("global_avg_pool: empty spatial extent");
  Tensor<T> y({x.dim(0), x.dim(1), 1, 1});
  for (std::size_t i = 0; i < bc; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < hw; ++j) acc += x[i * hw + j];
    y[i] = acc / static_cast<T>(hw);
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
  Tensor<T> g(input_shape);
  const std::size_t bc = input_shape[0] * input_shape[1], hw = input_shape[2] * input_shape[3];
  for (std::size_t i = 0; i < bc; ++i) {
    const T v = grad_out[i] / static_cast<T>(hw);
    std::fill_n(g.ptr() + i * hw, hw, v);
  }
  return g;
}

/// y = x * W^T + b for x [B, in], W [out, in].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const std::type_identity_t<Tensor<T>>* bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1))
    throw GeometryError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                        to_string(weight.shape()));
  const std::size_t batch = x.dim(0), out_f = weight.dim(0);
  Tensor<T> y({batch, out_f});
  gemm(false, true, batch, out_f, x.dim(1), T{1}, x.ptr(), weight.ptr(), T{0}, y.ptr());
  if (bias)
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < out_f; ++o) y[b * out_f + o] += (*bias)[o];
  return y;
}

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, bool has_bias,
                               const Tensor<T>& grad_out) {
  const std::size_t batch = x.dim(0), in_f = x.dim(1), out_f = weight.dim(0);
  LinearGrads<T> g;
  g.input = Tensor<T>(x.shape());
  g.weight = Tensor<T>(weight.shape());
  gemm(false, false, batch, in_f, out_f, T{1}, grad_out.ptr(), weight.ptr(), T{0}, g.input.ptr());
  gemm(true, false, out_f, in_f, batch, T{1}, grad_out.ptr(), x.ptr(), T{0}, g.weight.ptr());
  if (has_bias) {
    g.bias = Tensor<T>({out_f});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < out_f; ++o) g.bias[o] += grad_out[b * out_f + o];
  }
  return g;
}

template <typename T>
struct LossResult {
  T loss{0};
  Tensor<T> grad;  // d loss / d logits
};

/// Mean negative log-likelihood of softmax(logits) at the given labels.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw GeometryError("softmax_cross_entropy: logits " + to_string(logits.shape()) +
                        " vs " + std::to_string(labels.size()) + " labels");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  LossResult<T> r;
  r.grad = Tensor<T>(logits.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw InputError("softmax_cross_entropy: label " + std::to_string(label) +
                       " outside [0, " + std::to_string(classes) + ")");
    const T* row = logits.ptr() + b * classes;
    T* grow = r.grad.ptr() + b * classes;
    const T peak = *std::max_element(row, row + classes);
    T denom{0};
    for (std::size_t k = 0; k < classes; ++k) {
      grow[k] = std::exp(row[k] - peak);
      denom += grow[k];
    }
    r.loss += std::log(denom) - (row[label] - peak);
    for (std::size_t k = 0; k < classes; ++k)
      grow[k] = (grow[k] / denom - (static_cast<int>(k) == label ? T{1} : T{0})) /
                static_cast<T>(batch);
  }
  r.loss /= static_cast<T>(batch);
  return r;
}

/// Element-wise merge of the main path and the residual branch.
template <typename T>
Tensor<T> aggregate(const Tensor<T>& main, const Tensor<T>& residual) {
  main.require_same_shape(residual, "aggregate");
  Tensor<T> out = main;
  out += residual;
  return out;
}

}  // namespace rkan
