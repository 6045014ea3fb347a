#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "rkan/backbone.hpp"
#include "rkan/module.hpp"
#include "rkan/ops.hpp"

namespace rkan {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t max_coords = 200;  // per parameter tensor; 0 checks every coordinate
  std::size_t max_input_coords = 0;
  // Relative error is |a - n| / max(|a|, |n|, floor); floor keeps vanishing
  // gradients from turning round-off into large ratios.
  double floor = 1e-6;
  // Coordinates whose +/- step moves some ReLU input across zero are replaced
  // by fresh ones; a difference quotient across a kink has no analytic match.
  bool skip_kinks = true;
  std::uint64_t seed = 7;
};

struct GradcheckEntry {
  std::string name;
  std::size_t coords = 0;
  std::size_t kinks_skipped = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool passed = true;

  std::size_t kinks_skipped() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.kinks_skipped;
    return n;
  }
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// A tensor whose coordinates are perturbed, with its analytic gradient.
struct GradTarget {
  std::string name;
  Tensor<double>* value;
  const Tensor<double>* analytic;
  std::size_t max_coords;
};

/// Central differences of loss() against precomputed analytic gradients.
inline GradcheckReport check_gradients(const std::function<double()>& loss,
                                       const std::vector<GradTarget>& targets,
                                       const GradcheckOptions& opt) {
  GradcheckReport report;
  report.tolerance = opt.tolerance;
  std::mt19937_64 rng(opt.seed);
  struct Arm {
    explicit Arm(bool on) : saved(KinkMonitor::armed) { KinkMonitor::armed = on; }
    ~Arm() { KinkMonitor::armed = saved; }
    bool saved;
  } arm(opt.skip_kinks);
  auto evaluate = [&](std::uint64_t& pattern) {
    KinkMonitor::fingerprint = 0;
    const double v = loss();
    pattern = KinkMonitor::fingerprint;
    return v;
  };
  std::uint64_t base_pattern = 0;
  evaluate(base_pattern);
  for (const auto& t : targets) {
    GradcheckEntry entry{t.name};
    std::vector<std::size_t> coords(t.value->size());
    std::iota(coords.begin(), coords.end(), 0);
    const bool sampled = t.max_coords != 0 && coords.size() > t.max_coords;
    if (sampled) std::shuffle(coords.begin(), coords.end(), rng);
    const std::size_t wanted = sampled ? t.max_coords : coords.size();
    for (std::size_t i : coords) {
      if (entry.coords == wanted) break;
      double& v = (*t.value)[i];
      const double saved = v;
      std::uint64_t up_pattern = 0, down_pattern = 0;
      v = saved + opt.step;
      const double up = evaluate(up_pattern);
      v = saved - opt.step;
      const double down = evaluate(down_pattern);
      v = saved;
      if (opt.skip_kinks && (up_pattern != base_pattern || down_pattern != base_pattern)) {
        ++entry.kinks_skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = (*t.analytic)[i];
      entry.max_abs_err = std::max(entry.max_abs_err, std::abs(analytic - numeric));
      entry.max_rel_err = std::max(entry.max_rel_err, relative_error(analytic, numeric, opt.floor));
      ++entry.coords;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(entry);
  }
  report.passed = report.max_rel_err < opt.tolerance;
  return report;
}

/// Gradient check of a module under the scalar loss sum(R * module(x)) with a
/// fixed random projection R. Checks every parameter and the input.
inline GradcheckReport gradcheck_module(Module<double>& module, Tensor<double> x,
                                        const GradcheckOptions& opt = {}) {
  Tensor<double> probe = module.forward(x);
  std::mt19937_64 rng(opt.seed + 1);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& v : probe.values()) v = dist(rng);
  module.zero_grad();
  module.forward(x);
  const Tensor<double> grad_x = module.backward(probe);

  auto loss = [&] {
    const Tensor<double> y = module.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * probe[i];
    return s;
  };
  std::vector<GradTarget> targets;
  for (auto* p : module.parameters()) targets.push_back({p->name, &p->value, &p->grad, opt.max_coords});
  targets.push_back({"input", &x, &grad_x, opt.max_input_coords});
  return check_gradients(loss, targets, opt);
}

/// Gradient check of the full classifier under mean cross-entropy.
inline GradcheckReport gradcheck_model(Model<double>& model, Tensor<double> x,
                                       const std::vector<int>& labels,
                                       const GradcheckOptions& opt = {}) {
  model.set_need_input_grad(true);
  model.zero_grad();
  const auto result = softmax_cross_entropy<double>(model.forward(x), labels);
  const Tensor<double> grad_x = model.backward(result.grad);
  model.set_need_input_grad(false);

  auto loss = [&] { return softmax_cross_entropy<double>(model.forward(x), labels).loss; };
  std::vector<GradTarget> targets;
  for (auto* p : model.parameters()) targets.push_back({p->name, &p->value, &p->grad, opt.max_coords});
  targets.push_back({"input", &x, &grad_x, opt.max_input_coords});
  return check_gradients(loss, targets, opt);
}

}  // namespace rkan
