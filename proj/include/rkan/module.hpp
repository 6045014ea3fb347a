#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rkan/ops.hpp"
#include "rkan/tensor.hpp"

namespace rkan {

/// A named learnable array together with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}

  void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
using ParameterList = std::vector<Parameter<T>*>;

/// FNV-1a, used to give every named parameter its own RNG stream so that
/// adding or removing layers never perturbs the initialization of the others.
constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::mt19937_64 stream_for(std::uint64_t seed, std::string_view name) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a(name)),
                    static_cast<std::uint32_t>(fnv1a(name) >> 32)};
  return std::mt19937_64(seq);
}

/// Fills p with U(-bound, bound) drawn from the parameter's own stream.
template <typename T>
void init_uniform(Parameter<T>& p, double bound, std::uint64_t seed) {
  auto rng = stream_for(seed, p.name);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
}

/// Differentiable layer with an explicit adjoint. forward caches what
/// backward needs; backward accumulates parameter gradients and returns the
/// gradient with respect to the forward input.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void collect_parameters(ParameterList<T>& out) = 0;
  virtual void init(std::uint64_t seed) = 0;

  ParameterList<T> parameters() {
    ParameterList<T> out;
    collect_parameters(out);
    return out;
  }

  std::size_t parameter_census() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }
};

/// Standard convolution (cross-correlation) with optional bias.
template <typename T>
class Conv2d final : public Module<T> {
 public:
  Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         std::size_t stride, std::size_t padding, bool bias)
      : weight_(name + ".weight", {out_channels, in_channels, kernel, kernel}),
        stride_(stride),
        padding_(padding),
        has_bias_(bias) {
    if (bias) bias_ = Parameter<T>(name + ".bias", {out_channels});
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    input_ = x;
    return conv2d(x, weight_.value, has_bias_ ? &bias_.value : nullptr, stride_, padding_);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto g = conv2d_backward(input_, weight_.value, has_bias_, stride_, padding_, grad_out,
                             need_input_grad_);
    weight_.grad += g.weight;
    if (has_bias_) bias_.grad += g.bias;
    return need_input_grad_ ? std::move(g.input) : Tensor<T>(input_.shape());
  }

  void collect_parameters(ParameterList<T>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

  /// Fan-in uniform init with bound gain * sqrt(1 / fan_in).
  void init(std::uint64_t seed) override { init_scaled(seed, 1.0); }

  void init_scaled(std::uint64_t seed, double gain) {
    const double fan_in = static_cast<double>(weight_.value.size() / weight_.value.dim(0));
    init_uniform(weight_, gain * std::sqrt(1.0 / fan_in), seed);
    if (has_bias_) bias_.value.fill(T{0});
  }

  void zero_weights() {
    weight_.value.fill(T{0});
    if (has_bias_) bias_.value.fill(T{0});
  }

  /// The stem never needs dL/dx; skipping it saves a col2im per step.
  void set_need_input_grad(bool need) { need_input_grad_ = need; }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  bool has_bias() const { return has_bias_; }
  std::size_t in_channels() const { return weight_.value.dim(1); }
  std::size_t out_channels() const { return weight_.value.dim(0); }
  std::size_t kernel() const { return weight_.value.dim(2); }
  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return padding_; }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
  std::size_t stride_;
  std::size_t padding_;
  bool has_bias_;
  bool need_input_grad_ = true;
  Tensor<T> input_;
};

/// Element-wise nonlinearity.
template <typename T>
class ActivationLayer final : public Module<T> {
 public:
  explicit ActivationLayer(Activation kind) : kind_(kind) {}
  Tensor<T> forward(const Tensor<T>& x) override {
    input_ = x;
    return activate(x, kind_);
  }
  Tensor<T> backward(const Tensor<T>& grad_out) override {
    return activate_backward(input_, grad_out, kind_);
  }
  void collect_parameters(ParameterList<T>&) override {}
  void init(std::uint64_t) override {}

 private:
  Activation kind_;
  Tensor<T> input_;
};

/// Learnable per-channel scale and shift, y = gamma_c * x + beta_c.
template <typename T>
class ChannelAffine final : public Module<T> {
 public:
  ChannelAffine(std::string name, std::size_t channels)
      : scale_(name + ".scale", {channels}), shift_(name + ".shift", {channels}) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    input_ = x;
    Tensor<T> y(x.shape());
    const std::size_t channels = x.dim(1), hw = x.dim(2) * x.dim(3);
    for (std::size_t b = 0; b < x.dim(0); ++b)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (b * channels + c) * hw;
        for (std::size_t j = 0; j < hw; ++j)
          y[base + j] = scale_.value[c] * x[base + j] + shift_.value[c];
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> gx(input_.shape());
    const std::size_t channels = input_.dim(1), hw = input_.dim(2) * input_.dim(3);
    for (std::size_t b = 0; b < input_.dim(0); ++b)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (b * channels + c) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          const T g = grad_out[base + j];
          gx[base + j] = scale_.value[c] * g;
          scale_.grad[c] += g * input_[base + j];
          shift_.grad[c] += g;
        }
      }
    return gx;
  }

  void collect_parameters(ParameterList<T>& out) override {
    out.push_back(&scale_);
    out.push_back(&shift_);
  }

  void init(std::uint64_t) override { init_with_scale(T{1}); }
  void init_with_scale(T value) {
    scale_.value.fill(value);
    shift_.value.fill(T{0});
  }

 private:
  Parameter<T> scale_;
  Parameter<T> shift_;
  Tensor<T> input_;
};

/// Fully connected layer on [B, in] inputs.
template <typename T>
class Linear final : public Module<T> {
 public:
  Linear(std::string name, std::size_t in_features, std::size_t out_features)
      : weight_(name + ".weight", {out_features, in_features}),
        bias_(name + ".bias", {out_features}) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    input_ = x;
    return linear(x, weight_.value, &bias_.value);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto g = linear_backward(input_, weight_.value, true, grad_out);
    weight_.grad += g.weight;
    bias_.grad += g.bias;
    return std::move(g.input);
  }

  void collect_parameters(ParameterList<T>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  void init(std::uint64_t seed) override {
    init_uniform(weight_, std::sqrt(1.0 / static_cast<double>(weight_.value.dim(1))), seed);
    bias_.value.fill(T{0});
  }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

}  // namespace rkan
