#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "rkan/module.hpp"
#include "rkan/ops.hpp"
#include "rkan/rkan_block.hpp"

namespace rkan {

struct StageSpec {
  std::size_t out_channels = 16;
  std::size_t num_blocks = 2;
  std::size_t stride = 1;
  friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

/// Settings shared by every RKAN block attached to a backbone.
struct RkanTemplate {
  std::size_t reduce_factor = 2;
  std::array<int, 2> degrees{3, 2};
  BasisFamily family = BasisFamily::chebyshev;
  GaussianRbf rbf{};
  bool zero_init_expand = false;
  bool second_kan = true;  // only ever applied at stage 4
};

struct BackboneSpec {
  std::size_t in_channels = 3;
  std::size_t stem_channels = 16;
  std::array<StageSpec, 4> stages{StageSpec{16, 2, 1}, StageSpec{32, 2, 2}, StageSpec{64, 2, 2},
                                  StageSpec{128, 2, 2}};
  std::size_t num_classes = 10;
  bool affine_norm = false;
  std::set<int> rkan_stages{};
  RkanTemplate rkan{};

  std::size_t stage_in_channels(int stage) const {
    return stage == 1 ? stem_channels : stages[stage - 2].out_channels;
  }

  RkanBlockConfig rkan_config(int stage) const {
    RkanBlockConfig c;
    c.in_channels = stage_in_channels(stage);
    c.stage_channels = stages[stage - 1].out_channels;
    c.reduce_factor = rkan.reduce_factor;
    c.stride = stages[stage - 1].stride;
    c.degrees = rkan.degrees;
    c.second_kan = rkan.second_kan && stage == 4;
    c.family = rkan.family;
    c.rbf = rkan.rbf;
    c.zero_init_expand = rkan.zero_init_expand;
    return c;
  }

  /// Collects every violation into one ConfigError.
  void validate() const {
    std::vector<std::string> problems;
    if (in_channels == 0) problems.push_back("in_channels must be positive");
    if (stem_channels == 0) problems.push_back("stem_channels must be positive");
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto& st = stages[s];
      const std::string tag = "stage " + std::to_string(s + 1);
      if (st.out_channels == 0) problems.push_back(tag + ": out_channels must be positive");
      if (st.num_blocks == 0) problems.push_back(tag + ": num_blocks must be positive");
      if (st.stride != 1 && st.stride != 2) problems.push_back(tag + ": stride must be 1 or 2");
    }
    if (num_classes < 2) problems.push_back("num_classes must be at least 2");
    for (int s : rkan_stages) {
      if (s < 2 || s > 4) {
        problems.push_back("rkan stage " + std::to_string(s) + " not in {2,3,4}");
        continue;
      }
      try {
        rkan_config(s).validate();
      } catch (const ConfigError& e) {
        problems.push_back("rkan stage " + std::to_string(s) + ": " + e.what());
      }
    }
    if (!problems.empty()) {
      std::string msg = "invalid backbone spec:";
      for (const auto& p : problems) msg += "\n  - " + p;
      throw ConfigError(msg);
    }
  }
};

/// Two 3x3 convolutions with ReLU and an identity or 1x1 projection shortcut.
template <typename T>
class BasicBlock final : public Module<T> {
 public:
  BasicBlock(const std::string& name, std::size_t in_c, std::size_t out_c, std::size_t stride,
             bool affine, double residual_gain)
      : conv1_(name + ".conv1", in_c, out_c, 3, stride, 1, true),
        conv2_(name + ".conv2", out_c, out_c, 3, 1, 1, true),
        residual_gain_(residual_gain) {
    if (affine) {
      norm1_ = std::make_unique<ChannelAffine<T>>(name + ".norm1", out_c);
      norm2_ = std::make_unique<ChannelAffine<T>>(name + ".norm2", out_c);
    }
    if (in_c != out_c || stride != 1)
      shortcut_ = std::make_unique<Conv2d<T>>(name + ".shortcut", in_c, out_c, 1, stride, 0, true);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> h = conv1_.forward(x);
    if (norm1_) h = norm1_->forward(h);
    h = relu1_.forward(h);
    h = conv2_.forward(h);
    if (norm2_) h = norm2_->forward(h);
    h += shortcut_ ? shortcut_->forward(x) : x;
    return relu2_.forward(h);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const Tensor<T> g = relu2_.backward(grad_out);
    Tensor<T> gb = norm2_ ? norm2_->backward(g) : g;
    gb = conv2_.backward(gb);
    gb = relu1_.backward(gb);
    if (norm1_) gb = norm1_->backward(gb);
    gb = conv1_.backward(gb);
    gb += shortcut_ ? shortcut_->backward(g) : g;
    return gb;
  }

  void collect_parameters(ParameterList<T>& out) override {
    conv1_.collect_parameters(out);
    if (norm1_) norm1_->collect_parameters(out);
    conv2_.collect_parameters(out);
    if (norm2_) norm2_->collect_parameters(out);
    if (shortcut_) shortcut_->collect_parameters(out);
  }

  // He-uniform on the first conv; the residual conv is damped so the sum of
  // stacked branches stays O(1) without batch statistics.
  void init(std::uint64_t seed) override {
    conv1_.init_scaled(seed, std::sqrt(6.0));
    conv2_.init_scaled(seed, std::sqrt(6.0) * residual_gain_);
    if (norm1_) norm1_->init(seed);
    if (norm2_) norm2_->init(seed);
    if (shortcut_) shortcut_->init_scaled(seed, std::sqrt(3.0));
  }

 private:
  Conv2d<T> conv1_;
  Conv2d<T> conv2_;
  std::unique_ptr<ChannelAffine<T>> norm1_;
  std::unique_ptr<ChannelAffine<T>> norm2_;
  std::unique_ptr<Conv2d<T>> shortcut_;
  ActivationLayer<T> relu1_{Activation::relu};
  ActivationLayer<T> relu2_{Activation::relu};
  double residual_gain_;
};

/// Stem -> four residual stages (each optionally enclosed by an RKAN block)
/// -> global average pool -> linear head.
template <typename T>
class Model final : public Module<T> {
 public:
  explicit Model(BackboneSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    stem_ = std::make_unique<Conv2d<T>>("stem", spec_.in_channels, spec_.stem_channels, 3, 1, 1,
                                        true);
    stem_->set_need_input_grad(false);
    std::size_t total_blocks = 0;
    for (const auto& st : spec_.stages) total_blocks += st.num_blocks;
    const double residual_gain = 1.0 / std::sqrt(static_cast<double>(total_blocks));
    std::size_t in_c = spec_.stem_channels;
    for (int s = 1; s <= 4; ++s) {
      const auto& st = spec_.stages[s - 1];
      auto& stage = stages_[s - 1];
      for (std::size_t b = 0; b < st.num_blocks; ++b) {
        const std::string name = "stage" + std::to_string(s) + ".block" + std::to_string(b + 1);
        stage.blocks.push_back(std::make_unique<BasicBlock<T>>(
            name, b == 0 ? in_c : st.out_channels, st.out_channels, b == 0 ? st.stride : 1,
            spec_.affine_norm, residual_gain));
      }
      if (spec_.rkan_stages.contains(s))
        stage.rkan = std::make_unique<RkanBlock<T>>("stage" + std::to_string(s) + ".rkan",
                                                    spec_.rkan_config(s));
      in_c = st.out_channels;
    }
    head_ = std::make_unique<Linear<T>>("head", in_c, spec_.num_classes);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.rank() != 4 || x.dim(1) != spec_.in_channels)
      throw GeometryError("model expects [B, " + std::to_string(spec_.in_channels) +
                          ", H, W] input, got " + to_string(x.shape()));
    Tensor<T> h = stem_relu_.forward(stem_->forward(x));
    for (auto& stage : stages_) {
      Tensor<T> main = h;
      for (auto& block : stage.blocks) main = block->forward(main);
      if (stage.rkan) {
        const Tensor<T> residual = stage.rkan->forward(h);
        if (residual.shape() != main.shape())
          throw GeometryError("rkan branch " + to_string(residual.shape()) +
                              " does not align with stage output " + to_string(main.shape()));
        main = aggregate(main, residual);
      }
      h = std::move(main);
    }
    pooled_shape_ = h.shape();
    const Tensor<T> pooled = global_avg_pool(h);
    return head_->forward(pooled.reshaped({pooled.dim(0), pooled.dim(1)}));
  }

  Tensor<T> backward(const Tensor<T>& grad_logits) override {
    Tensor<T> g = head_->backward(grad_logits);
    g = global_avg_pool_backward(g.reshaped({g.dim(0), g.dim(1), 1, 1}), pooled_shape_);
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) {
      Tensor<T> gm = g;
      for (auto b = it->blocks.rbegin(); b != it->blocks.rend(); ++b) gm = (*b)->backward(gm);
      if (it->rkan) gm += it->rkan->backward(g);
      g = std::move(gm);
    }
    return stem_->backward(stem_relu_.backward(g));
  }

  void collect_parameters(ParameterList<T>& out) override {
    stem_->collect_parameters(out);
    for (auto& stage : stages_) {
      for (auto& block : stage.blocks) block->collect_parameters(out);
      if (stage.rkan) stage.rkan->collect_parameters(out);
    }
    head_->collect_parameters(out);
  }

  void init(std::uint64_t seed) override {
    stem_->init_scaled(seed, std::sqrt(6.0));
    for (auto& stage : stages_) {
      for (auto& block : stage.blocks) block->init(seed);
      if (stage.rkan) stage.rkan->init(seed);
    }
    head_->init(seed);
  }

  /// Enables dL/d(input) from backward (off by default; training never needs it).
  void set_need_input_grad(bool need) { stem_->set_need_input_grad(need); }

  RkanBlock<T>* rkan_block(int stage) { return stages_.at(stage - 1).rkan.get(); }

  std::size_t rkan_parameter_census() {
    std::size_t n = 0;
    for (auto& stage : stages_)
      if (stage.rkan) n += stage.rkan->parameter_census();
    return n;
  }

  std::size_t baseline_parameter_census() { return this->parameter_census() - rkan_parameter_census(); }

  const BackboneSpec& spec() const { return spec_; }

 private:
  struct Stage {
    std::vector<std::unique_ptr<BasicBlock<T>>> blocks;
    std::unique_ptr<RkanBlock<T>> rkan;
  };

  BackboneSpec spec_;
  std::unique_ptr<Conv2d<T>> stem_;
  ActivationLayer<T> stem_relu_{Activation::relu};
  std::array<Stage, 4> stages_;
  std::unique_ptr<Linear<T>> head_;
  Shape pooled_shape_;
};

/// Builds and seeds a model.
template <typename T = double>
std::unique_ptr<Model<T>> build_model(const BackboneSpec& spec, std::uint64_t seed) {
  auto model = std::make_unique<Model<T>>(spec);
  model->init(seed);
  return model;
}

}  // namespace rkan
