#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "rkan/gradcheck.hpp"
#include "rkan/training.hpp"

using namespace rkan;

namespace {

BackboneSpec tiny(bool rkan) {
  BackboneSpec s;
  s.num_classes = 3;
  s.stem_channels = 4;
  std::size_t c = 4;
  for (auto& st : s.stages) {
    st.out_channels = c;
    st.num_blocks = 1;
    c *= 2;
  }
  if (rkan) s.rkan_stages = {4};
  return s;
}

Dataset shapes(std::size_t per_class, std::uint64_t seed) {
  SyntheticConfig sc;
  sc.per_class = per_class;
  sc.seed = seed;
  return generate_synthetic(sc);
}

}  // namespace

TEST(Schedule, Anchors) {
  const TrainConfig cfg;
  EXPECT_NEAR(lr_at(0, cfg), 0.005, 1e-15);
  EXPECT_NEAR(lr_at(5, cfg), 0.0275, 1e-15);
  EXPECT_NEAR(lr_at(10, cfg), 0.05, 1e-15);
  EXPECT_NEAR(lr_at(29, cfg), 1e-5, 1e-15);
}

TEST(Schedule, ContinuousAtWarmupAndNonincreasingAfter) {
  for (std::size_t epochs : {12ul, 30ul, 200ul}) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    const double step = (cfg.peak_lr - cfg.base_lr) / static_cast<double>(cfg.warmup_epochs);
    EXPECT_NEAR(lr_at(cfg.warmup_epochs, cfg) - lr_at(cfg.warmup_epochs - 1, cfg), step, 1e-12);
    for (std::size_t e = cfg.warmup_epochs + 1; e < epochs; ++e)
      EXPECT_LE(lr_at(e, cfg), lr_at(e - 1, cfg)) << e;
    EXPECT_NEAR(lr_at(epochs - 1, cfg), cfg.final_lr, 1e-15);
  }
}

TEST(Schedule, LinearScalingRule) {
  EXPECT_DOUBLE_EQ(scaled_peak_lr(128), 0.05);
  EXPECT_DOUBLE_EQ(scaled_peak_lr(256), 0.1);
  EXPECT_DOUBLE_EQ(scaled_peak_lr(64), 0.025);
}

TEST(Schedule, InvalidConfigNamesTheProblem) {
  TrainConfig cfg;
  cfg.warmup_epochs = 30;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.base_lr = 0.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(NesterovSgd, HandSimulatedStep) {
  Parameter<double> p("w", {1});
  p.value[0] = 1.0;
  p.grad[0] = 0.1;
  NesterovSgd<double> opt(0.9, 0.0);
  opt.step({&p}, 0.1);
  EXPECT_NEAR(opt.velocity()[0][0], 0.1, 1e-15);
  EXPECT_NEAR(p.value[0], 0.981, 1e-15);
}

TEST(NesterovSgd, PlainSgdWithoutMomentum) {
  Parameter<double> p("w", {3});
  p.value = Tensor<double>({3}, std::vector<double>{1, -2, 3});
  p.grad = Tensor<double>({3}, std::vector<double>{0.5, 0.25, -1});
  NesterovSgd<double> opt(0.0, 0.0);
  opt.step({&p}, 0.2);
  EXPECT_EQ(p.value, (Tensor<double>({3}, std::vector<double>{0.9, -2.05, 3.2})));
}

TEST(NesterovSgd, ZeroGradientIsAFixedPoint) {
  Parameter<double> p("w", {4});
  p.value.fill(0.3);
  NesterovSgd<double> opt(0.9, 0.0);
  for (int i = 0; i < 3; ++i) opt.step({&p}, 0.1);
  for (double v : p.value.values()) EXPECT_EQ(v, 0.3);
}

TEST(NesterovSgd, NonFiniteGradientAbortsBeforeAnyUpdate) {
  Parameter<double> a("a", {2}), b("b", {2});
  a.value.fill(1.0);
  b.value.fill(2.0);
  a.grad.fill(0.1);
  b.grad[1] = std::numeric_limits<double>::infinity();
  NesterovSgd<double> opt(0.9, 5e-4);
  EXPECT_THROW(opt.step({&a, &b}, 0.1), NumericError);
  for (double v : a.value.values()) EXPECT_EQ(v, 1.0);
  for (double v : b.value.values()) EXPECT_EQ(v, 2.0);
}

TEST(ClipGradNorm, RescalesJointlyAndKeepsDirection) {
  Parameter<double> a("a", {2}), b("b", {1});
  a.grad[0] = 3.0;
  a.grad[1] = 0.0;
  b.grad[0] = 4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm<double>({&a, &b}, 10.0), 5.0);
  EXPECT_EQ(a.grad[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm<double>({&a, &b}, 1.0), 5.0);
  EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm<double>({&a, &b}, 0.0), 1.0, 1e-15);
  EXPECT_NEAR(b.grad[0], 0.8, 1e-15);
}

TEST(Metrics, CoefficientOfVariation) {
  const std::vector<double> flat{80, 80, 80}, ramp{1, 2, 3};
  EXPECT_EQ(coefficient_of_variation(flat), 0.0);
  EXPECT_NEAR(coefficient_of_variation(ramp), 40.8248, 1e-4);
  EXPECT_THROW(coefficient_of_variation(std::vector<double>{}), InputError);
  EXPECT_THROW(coefficient_of_variation(std::vector<double>{-1, 1}), InputError);
}

TEST(Metrics, CoefficientOfVariationMatchesTwoPassOracle) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> dist(10, 90);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(1 + rng() % 40);
    for (auto& x : v) x = dist(rng);
    long double mean = 0, ss = 0;
    for (double x : v) mean += x;
    mean /= v.size();
    for (double x : v) ss += (x - mean) * (x - mean);
    const double want = static_cast<double>(std::sqrt(ss / v.size()) / mean * 100);
    EXPECT_NEAR(coefficient_of_variation(v), want, 1e-10);
  }
}

TEST(Metrics, Throughput) {
  EXPECT_EQ(throughput(100000, 100), 1000.0);
  EXPECT_EQ(throughput(50000, 25), 2000.0);
  EXPECT_THROW(throughput(10, 0), InputError);
  EXPECT_THROW(throughput(10, -1), InputError);
}

TEST(Metrics, CsvHasOneRowPerEpoch) {
  RunMetrics m;
  for (std::size_t e = 0; e < 4; ++e) m.epochs.push_back({e, 1.0, 0.5, 0.01, 2.0, 150.0});
  const auto csv = metrics_csv(m);
  EXPECT_EQ(csv.rfind("epoch,train_loss,val_top1,lr,epoch_seconds,throughput\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Gradcheck, ZeroInputIsVacuous) {
  Linear<double> head("head", 4, 3);
  head.init(1);
  head.weight().value.fill(0.0);
  const auto rep = gradcheck_module(head, Tensor<double>({2, 4}));
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_err, 1e-12);
}

TEST(Gradcheck, DetectsAWrongGradient) {
  Tensor<double> w({3}, 0.5), g({3}, 1.0);
  auto loss = [&] { return w[0] * w[0] + w[1] * w[1] + w[2] * w[2]; };  // true gradient is 1.0
  EXPECT_TRUE(check_gradients(loss, {{"w", &w, &g, 0}}, {}).passed);
  g[1] = 1.1;
  EXPECT_FALSE(check_gradients(loss, {{"w", &w, &g, 0}}, {}).passed);
}

TEST(Gradcheck, ReluKinkCoordinatesAreReplaced) {
  Tensor<double> w({2}, std::vector<double>{1e-6, 0.5}), g({2}, 1.0);
  auto loss = [&] {
    const auto y = activate(w, Activation::relu);
    return y[0] + y[1];
  };
  GradcheckOptions opt;
  const auto rep = check_gradients(loss, {{"w", &w, &g, 0}}, opt);
  EXPECT_TRUE(rep.passed);
  EXPECT_EQ(rep.kinks_skipped(), 1u);
  EXPECT_EQ(rep.entries[0].coords, 1u);
  opt.skip_kinks = false;
  EXPECT_FALSE(check_gradients(loss, {{"w", &w, &g, 0}}, opt).passed);
  EXPECT_FALSE(KinkMonitor::armed);
}

TEST(TrainRun, ZeroEpochsLeavesTheModelAtInit) {
  auto m = build_model<double>(tiny(false), 1);
  const auto before = snapshot(m->parameters());
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto metrics = train_run(*m, shapes(4, 1), shapes(2, 2), cfg);
  EXPECT_TRUE(metrics.epochs.empty());
  const auto after = snapshot(m->parameters());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].data, after[i].data);
}

TEST(TrainRun, SameSeedSameRows) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 8;
  cfg.flip = true;
  const auto train = shapes(8, 1), val = shapes(4, 2);
  auto run = [&] {
    auto m = build_model<double>(tiny(true), 5);
    return train_run(*m, train, val, cfg);
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.epochs.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(a.epochs[e].train_loss, b.epochs[e].train_loss);
    EXPECT_EQ(a.epochs[e].val_top1, b.epochs[e].val_top1);
    EXPECT_EQ(a.epochs[e].lr, b.epochs[e].lr);
  }
}

TEST(TrainRun, NumericBlowupRollsBackToLastGoodEpoch) {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 8;
  cfg.base_lr = 1e-4;
  cfg.peak_lr = 1e12;
  auto m = build_model<double>(tiny(false), 2);
  const auto metrics = train_run(*m, shapes(8, 1), shapes(2, 2), cfg);
  EXPECT_TRUE(metrics.aborted);
  EXPECT_NE(metrics.abort_reason.find("epoch"), std::string::npos);
  EXPECT_LT(metrics.epochs.size(), 4u);
  for (auto* p : m->parameters()) EXPECT_TRUE(p->value.all_finite()) << p->name;
}

TEST(Checkpoint, RoundTripAndTruncation) {
  auto m = build_model<double>(tiny(true), 3);
  const auto params = m->parameters();
  const auto bytes = encode_checkpoint(snapshot(params));
  auto other = build_model<double>(tiny(true), 4);
  restore(other->parameters(), decode_checkpoint(bytes));
  for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(params[i]->value, other->parameters()[i]->value);
  auto cut = bytes;
  cut.resize(bytes.size() - 3);
  try {
    decode_checkpoint(cut);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, MissingOrReshapedParameterIsRejected) {
  auto a = build_model<double>(tiny(false), 1), b = build_model<double>(tiny(true), 1);
  EXPECT_THROW(restore(b->parameters(), snapshot(a->parameters())), FormatError);
  auto arrays = snapshot(a->parameters());
  arrays[0].shape = {arrays[0].data.size()};
  EXPECT_THROW(restore(a->parameters(), arrays), FormatError);
}

TEST(TrainRun, TenthEpochLossBelowFirstForBothVariants) {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.warmup_epochs = 5;
  cfg.batch_size = 32;
  cfg.grad_clip = 2.0;
  const auto train = shapes(40, 1), val = shapes(10, 2);
  for (bool rkan : {false, true}) {
    auto m = build_model<double>(tiny(rkan), 3);
    const auto metrics = train_run(*m, train, val, cfg);
    ASSERT_EQ(metrics.epochs.size(), 10u);
    EXPECT_LT(metrics.epochs[9].train_loss, metrics.epochs[0].train_loss) << "rkan=" << rkan;
  }
}
