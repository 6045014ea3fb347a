#pragma once

// Direct loop implementations used as independent references.

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "rkan/tensor.hpp"

namespace oracle {

inline rkan::Tensor<double> random(rkan::Shape shape, unsigned seed, double lo = -1.0,
                                   double hi = 1.0) {
  rkan::Tensor<double> t(std::move(shape));
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline double padded(const rkan::Tensor<double>& x, std::size_t b, std::size_t c, long y, long xx) {
  if (y < 0 || xx < 0 || y >= static_cast<long>(x.dim(2)) || xx >= static_cast<long>(x.dim(3)))
    return 0.0;
  return x.at(b, c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
}

// y[b,o,i,j] = bias[o] + sum_{c,u,v} W[o,c,u,v] * x[b,c,i*s+u-p,j*s+v-p]
inline rkan::Tensor<double> conv2d(const rkan::Tensor<double>& x, const rkan::Tensor<double>& w,
                                   const rkan::Tensor<double>* bias, std::size_t s, std::size_t p) {
  const std::size_t kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (x.dim(2) + 2 * p - kh) / s + 1, ow = (x.dim(3) + 2 * p - kw) / s + 1;
  rkan::Tensor<double> y({x.dim(0), w.dim(0), oh, ow});
  for (std::size_t b = 0; b < x.dim(0); ++b)
    for (std::size_t o = 0; o < w.dim(0); ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::size_t c = 0; c < x.dim(1); ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v)
                acc += w.at(o, c, u, v) *
                       padded(x, b, c, static_cast<long>(i * s + u) - static_cast<long>(p),
                              static_cast<long>(j * s + v) - static_cast<long>(p));
          y.at(b, o, i, j) = acc;
        }
  return y;
}

inline double chebyshev(int d, double x) { return std::cos(d * std::acos(x)); }

// KAN convolution written per output element: sum over patch features of
// sum_d alpha[o,f,d] * phi_d(tanh(x_f)) + wb[o,f] * x_f.
template <typename Phi>
rkan::Tensor<double> kan_conv(const rkan::Tensor<double>& x, const rkan::Tensor<double>& alpha,
                              const rkan::Tensor<double>* wb, std::size_t k, std::size_t s,
                              std::size_t p, Phi phi) {
  const std::size_t out_c = alpha.dim(0), m = alpha.dim(2), in_c = x.dim(1);
  const std::size_t oh = (x.dim(2) + 2 * p - k) / s + 1, ow = (x.dim(3) + 2 * p - k) / s + 1;
  rkan::Tensor<double> y({x.dim(0), out_c, oh, ow});
  for (std::size_t b = 0; b < x.dim(0); ++b)
    for (std::size_t o = 0; o < out_c; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < in_c; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const std::size_t f = (c * k + u) * k + v;
                const double raw =
                    padded(x, b, c, static_cast<long>(i * s + u) - static_cast<long>(p),
                           static_cast<long>(j * s + v) - static_cast<long>(p));
                const double t = std::tanh(raw);
                for (std::size_t d = 0; d < m; ++d) acc += alpha[(o * alpha.dim(1) + f) * m + d] * phi(d, t);
                if (wb) acc += (*wb)[o * wb->dim(1) + f] * raw;
              }
          y.at(b, o, i, j) = acc;
        }
  return y;
}

inline double max_abs_diff(const rkan::Tensor<double>& a, const rkan::Tensor<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
