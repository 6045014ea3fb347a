#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rkan/kan_conv.hpp"
#include "rkan/module.hpp"

namespace rkan {

enum class BasisFamily { chebyshev, rbf };

inline constexpr std::array<std::size_t, 6> kReduceFactors{1, 2, 4, 8, 16, 32};

struct RkanBlockConfig {
  std::size_t in_channels = 64;      // channels entering the enclosed stage
  std::size_t stage_channels = 128;  // channels leaving the enclosed stage
  std::size_t reduce_factor = 2;
  std::size_t stride = 2;
  std::array<int, 2> degrees{3, 2};
  bool second_kan = true;
  BasisFamily family = BasisFamily::chebyshev;
  GaussianRbf rbf{};
  bool zero_init_expand = false;

  std::size_t reduced_channels() const { return in_channels / reduce_factor; }

  BasisKind basis_for(std::size_t layer) const {
    if (family == BasisFamily::rbf) return rbf;
    return Chebyshev{degrees.at(layer)};
  }

  /// Throws ConfigError listing every violated constraint.
  void validate() const {
    std::vector<std::string> problems;
    if (std::find(kReduceFactors.begin(), kReduceFactors.end(), reduce_factor) ==
        kReduceFactors.end())
      problems.push_back("reduce_factor " + std::to_string(reduce_factor) +
                         " not in {1,2,4,8,16,32}");
    else if (in_channels % reduce_factor != 0)
      problems.push_back("in_channels " + std::to_string(in_channels) +
                         " not divisible by reduce_factor " + std::to_string(reduce_factor));
    if (in_channels == 0 || stage_channels == 0) problems.push_back("channel counts must be positive");
    if (stride != 1 && stride != 2) problems.push_back("stride must be 1 or 2");
    for (std::size_t l = 0; l < 2; ++l) {
      try {
        rkan::validate(basis_for(l));
      } catch (const ConfigError& e) {
        problems.push_back(e.what());
      }
    }
    if (!problems.empty()) {
      std::string msg = "invalid rkan block:";
      for (const auto& p : problems) msg += "\n  - " + p;
      throw ConfigError(msg);
    }
  }
};

/// One learnable layer's share of a model's parameters.
struct LayerParameterCount {
  std::string name;
  std::string kind;
  std::size_t census = 0;    // scalars actually allocated
  std::size_t analytic = 0;  // closed-form prediction
};

/// Residual branch enclosing one stage:
///   reduce(1x1) -> SiLU -> KAN conv (stride s) -> expand(1x1) [-> KAN conv]
/// Its output is added to the stage's main-path output.
template <typename T>
class RkanBlock final : public Module<T> {
 public:
  RkanBlock(std::string name, RkanBlockConfig config)
      : name_(std::move(name)), config_(std::move(config)) {
    config_.validate();
    const std::size_t reduced = config_.reduced_channels();
    reduce_ = std::make_unique<Conv2d<T>>(name_ + ".reduce", config_.in_channels, reduced, 1, 1,
                                          0, false);
    KanConvOptions first;
    first.in_channels = reduced;
    first.out_channels = reduced;
    first.stride = config_.stride;
    first.padding = 1;
    first.basis = config_.basis_for(0);
    kan1_ = std::make_unique<KanConv2d<T>>(name_ + ".kan1", first);
    expand_ = std::make_unique<Conv2d<T>>(name_ + ".expand", reduced, config_.stage_channels, 1,
                                          1, 0, false);
    if (config_.second_kan) {
      KanConvOptions second;
      second.in_channels = config_.stage_channels;
      second.out_channels = config_.stage_channels;
      second.stride = 1;
      second.padding = 1;
      second.basis = config_.basis_for(1);
      kan2_ = std::make_unique<KanConv2d<T>>(name_ + ".kan2", second);
    }
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.rank() != 4 || x.dim(1) != config_.in_channels)
      throw GeometryError(name_ + ": expected " + std::to_string(config_.in_channels) +
                          " input channels, got " + to_string(x.shape()));
    Tensor<T> h = reduce_->forward(x);
    h = silu_.forward(h);
    h = kan1_->forward(h);
    h = expand_->forward(h);
    if (kan2_) h = kan2_->forward(h);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> g = kan2_ ? kan2_->backward(grad_out) : grad_out;
    g = expand_->backward(g);
    g = kan1_->backward(g);
    g = silu_.backward(g);
    return reduce_->backward(g);
  }

  void collect_parameters(ParameterList<T>& out) override {
    reduce_->collect_parameters(out);
    kan1_->collect_parameters(out);
    expand_->collect_parameters(out);
    if (kan2_) kan2_->collect_parameters(out);
  }

  void init(std::uint64_t seed) override {
    reduce_->init(seed);
    kan1_->init(seed);
    expand_->init(seed);
    if (kan2_) kan2_->init(seed);
    if (config_.zero_init_expand) expand_->zero_weights();
  }

  /// Per-layer census next to the closed-form prediction.
  std::vector<LayerParameterCount> parameter_breakdown() {
    std::vector<LayerParameterCount> rows;
    auto conv_row = [&](Conv2d<T>& c, const std::string& n) {
      rows.push_back({n, "conv1x1", c.parameter_census(), c.in_channels() * c.out_channels()});
    };
    auto kan_row = [&](KanConv2d<T>& k, const std::string& n) {
      const auto& o = k.options();
      rows.push_back({n, "kan_" + basis_name(o.basis), k.parameter_census(),
                      kan_parameter_count(o.in_channels, o.out_channels, o.kernel_h, o.kernel_w,
                                          o.basis, o.linear_path)
                          .total});
    };
    conv_row(*reduce_, name_ + ".reduce");
    kan_row(*kan1_, name_ + ".kan1");
    conv_row(*expand_, name_ + ".expand");
    if (kan2_) kan_row(*kan2_, name_ + ".kan2");
    return rows;
  }

  const RkanBlockConfig& config() const { return config_; }
  const std::string& name() const { return name_; }
  Conv2d<T>& reduce() { return *reduce_; }
  KanConv2d<T>& kan1() { return *kan1_; }
  Conv2d<T>& expand() { return *expand_; }
  KanConv2d<T>* kan2() { return kan2_.get(); }

 private:
  std::string name_;
  RkanBlockConfig config_;
  std::unique_ptr<Conv2d<T>> reduce_;
  ActivationLayer<T> silu_{Activation::silu};
  std::unique_ptr<KanConv2d<T>> kan1_;
  std::unique_ptr<Conv2d<T>> expand_;
  std::unique_ptr<KanConv2d<T>> kan2_;
};

}  // namespace rkan
