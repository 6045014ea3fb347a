#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rkan/basis.hpp"
#include "rkan/module.hpp"
#include "rkan/ops.hpp"

namespace rkan {

struct KanConvOptions {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  BasisKind basis = Chebyshev{3};
  bool linear_path = true;
};

struct KanParameterCount {
  std::size_t basis_params = 0;
  std::size_t linear_params = 0;
  std::size_t total = 0;
  friend bool operator==(const KanParameterCount&, const KanParameterCount&) = default;
};

/// Closed-form parameter count: C_in * C_out * kh * kw * M coefficients, where
/// M = degree + 1 for Chebyshev or the center count for RBF, plus one linear
/// weight per (output, patch feature) pair when the linear path is on.
inline KanParameterCount kan_parameter_count(std::size_t in_channels, std::size_t out_channels,
                                             std::size_t kernel_h, std::size_t kernel_w,
                                             const BasisKind& basis, bool linear_path = true) {
  KanParameterCount c;
  const std::size_t weights = in_channels * out_channels * kernel_h * kernel_w;
  c.basis_params = weights * basis_size(basis);
  c.linear_params = linear_path ? weights : 0;
  c.total = c.basis_params + c.linear_params;
  return c;
}

/// KAN convolution. Every patch feature is squashed with tanh, expanded in
/// the basis, and contracted against learnable coefficients
///
///   y[o, p] = sum_i sum_m coeff[o][i][m] * phi_m(tanh(patch[p, i]))
///           + sum_i linear[o][i] * patch[p, i]
///
/// The linear path sees the raw (un-normalized) patch values. No bias.
template <typename T>
class KanConv2d final : public Module<T> {
 public:
  KanConv2d(std::string name, KanConvOptions options)
      : options_(std::move(options)),
        geometry_{options_.kernel_h, options_.kernel_w, options_.stride, options_.padding} {
    validate(options_.basis);
    if (options_.in_channels == 0 || options_.out_channels == 0)
      throw ConfigError("kan conv " + name + ": channel counts must be positive");
    features_ = options_.in_channels * options_.kernel_h * options_.kernel_w;
    basis_size_ = rkan::basis_size(options_.basis);
    coefficients_ = Parameter<T>(name + ".coefficients",
                                 {options_.out_channels, features_, basis_size_});
    if (options_.linear_path)
      linear_weight_ = Parameter<T>(name + ".linear_weight", {options_.out_channels, features_});
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.rank() != 4 || x.dim(1) != options_.in_channels)
      throw GeometryError("kan conv expects " + std::to_string(options_.in_channels) +
                          " input channels, got shape " + to_string(x.shape()));
    input_shape_ = x.shape();
    const std::size_t oh = geometry_.out_h(x.dim(2)), ow = geometry_.out_w(x.dim(3));
    patches_ = im2col(x, geometry_);
    const std::size_t cols = patches_.dim(1);
    expand(patches_);

    const std::size_t out_c = options_.out_channels;
    Tensor<T> y({out_c, cols});
    gemm(false, false, out_c, cols, features_ * basis_size_, T{1}, coefficients_.value.ptr(),
         basis_values_.ptr(), T{0}, y.ptr());
    if (options_.linear_path)
      gemm(false, false, out_c, cols, features_, T{1}, linear_weight_.value.ptr(), patches_.ptr(),
           T{1}, y.ptr());
    Tensor<T> out = channels_to_batch(y, x.dim(0), {oh, ow});
    require_finite(out, coefficients_.name);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const Tensor<T> gy = batch_to_channels(grad_out);
    const std::size_t out_c = options_.out_channels, cols = patches_.dim(1);
    const std::size_t rows = features_ * basis_size_;
    if (gy.dim(0) != out_c || gy.dim(1) != cols)
      throw GeometryError("kan conv backward: gradient shape " + to_string(grad_out.shape()) +
                          " does not match the last forward");

    gemm(false, true, out_c, rows, cols, T{1}, gy.ptr(), basis_values_.ptr(), T{1},
         coefficients_.grad.ptr());

    Tensor<T> grad_patches({features_, cols});
    if (options_.linear_path) {
      gemm(false, true, out_c, features_, cols, T{1}, gy.ptr(), patches_.ptr(), T{1},
           linear_weight_.grad.ptr());
      gemm(true, false, features_, cols, out_c, T{1}, linear_weight_.value.ptr(), gy.ptr(), T{0},
           grad_patches.ptr());
    }

    Tensor<T> grad_basis({rows, cols});
    gemm(true, false, rows, cols, out_c, T{1}, coefficients_.value.ptr(), gy.ptr(), T{0},
         grad_basis.ptr());
    const std::size_t m = basis_size_;
    parallel_for(features_, [&](std::size_t i) {
      T* dst = grad_patches.ptr() + i * cols;
      for (std::size_t d = 0; d < m; ++d) {
        const T* gb = grad_basis.ptr() + (i * m + d) * cols;
        const T* db = basis_derivs_.ptr() + (i * m + d) * cols;
        for (std::size_t j = 0; j < cols; ++j) dst[j] += gb[j] * db[j];
      }
    });
    return col2im(grad_patches, input_shape_, geometry_);
  }

  void collect_parameters(ParameterList<T>& out) override {
    out.push_back(&coefficients_);
    if (options_.linear_path) out.push_back(&linear_weight_);
  }

  void init(std::uint64_t seed) override {
    init_uniform(coefficients_,
                 std::sqrt(1.0 / static_cast<double>(features_ * basis_size_)), seed);
    if (options_.linear_path)
      init_uniform(linear_weight_, std::sqrt(1.0 / static_cast<double>(features_)), seed);
  }

  KanParameterCount parameter_count() const {
    return kan_parameter_count(options_.in_channels, options_.out_channels, options_.kernel_h,
                               options_.kernel_w, options_.basis, options_.linear_path);
  }

  const KanConvOptions& options() const { return options_; }
  const ConvGeometry& geometry() const { return geometry_; }
  std::size_t patch_features() const { return features_; }
  std::size_t basis_count() const { return basis_size_; }
  Parameter<T>& coefficients() { return coefficients_; }
  Parameter<T>& linear_weight() { return linear_weight_; }

 private:
  // Fills basis_values_ [I*M, N] with phi_m(tanh(x)) and basis_derivs_ with
  // d phi_m(tanh(x)) / dx, the chain through tanh already applied.
  void expand(const Tensor<T>& patches) {
    const std::size_t cols = patches.dim(1), m = basis_size_;
    basis_values_ = Tensor<T>({features_ * m, cols});
    basis_derivs_ = Tensor<T>({features_ * m, cols});
    parallel_for(features_, [&](std::size_t i) {
      std::vector<T> values(m), derivs(m);
      const T* src = patches.ptr() + i * cols;
      T* vals = basis_values_.ptr() + i * m * cols;
      T* ders = basis_derivs_.ptr() + i * m * cols;
      for (std::size_t j = 0; j < cols; ++j) {
        const T t = std::tanh(src[j]);
        const T dt = T{1} - t * t;
        evaluate_basis<T>(options_.basis, t, values, derivs);
        for (std::size_t d = 0; d < m; ++d) {
          vals[d * cols + j] = values[d];
          ders[d * cols + j] = derivs[d] * dt;
        }
      }
    });
  }

  KanConvOptions options_;
  ConvGeometry geometry_;
  std::size_t features_ = 0;
  std::size_t basis_size_ = 0;
  Parameter<T> coefficients_;
  Parameter<T> linear_weight_;

  Shape input_shape_;
  Tensor<T> patches_;
  Tensor<T> basis_values_;
  Tensor<T> basis_derivs_;
};

}  // namespace rkan
