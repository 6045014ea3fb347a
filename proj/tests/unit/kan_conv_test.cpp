#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "rkan/gradcheck.hpp"
#include "rkan/kan_conv.hpp"

using namespace rkan;

namespace {

KanConv2d<double> make(std::size_t in, std::size_t out, std::size_t stride, BasisKind basis,
                       bool linear = true) {
  KanConvOptions o;
  o.in_channels = in;
  o.out_channels = out;
  o.stride = stride;
  o.padding = 1;
  o.basis = basis;
  o.linear_path = linear;
  KanConv2d<double> k("kan", o);
  k.init(4);
  return k;
}

}  // namespace

TEST(KanConv, ChebyshevForwardMatchesLoopOracle) {
  for (int degree : {0, 2, 3, 5}) {
    auto k = make(3, 4, 2, Chebyshev{degree});
    const auto x = oracle::random({2, 3, 7, 6}, 12, -2, 2);
    const auto want = oracle::kan_conv(x, k.coefficients().value, &k.linear_weight().value, 3, 2, 1,
                                       [](std::size_t d, double t) { return oracle::chebyshev(static_cast<int>(d), t); });
    EXPECT_LT(oracle::max_abs_diff(k.forward(x), want), 1e-12) << "degree " << degree;
  }
}

TEST(KanConv, RbfForwardMatchesLoopOracle) {
  const GaussianRbf rbf{{-1.0, -0.2, 0.4, 1.0}, 0.7};
  auto k = make(2, 3, 1, rbf);
  const auto x = oracle::random({2, 2, 5, 5}, 13, -2, 2);
  const auto want = oracle::kan_conv(x, k.coefficients().value, &k.linear_weight().value, 3, 1, 1,
                                     [&](std::size_t d, double t) {
                                       const double z = (t - rbf.centers[d]) / rbf.width;
                                       return std::exp(-0.5 * z * z);
                                     });
  EXPECT_LT(oracle::max_abs_diff(k.forward(x), want), 1e-12);
}

TEST(KanConv, ZeroCoefficientsReduceToConvolution) {
  auto k = make(3, 5, 2, Chebyshev{3});
  k.coefficients().value.fill(0.0);
  const auto x = oracle::random({2, 3, 8, 8}, 3, -3, 3);
  const auto w = k.linear_weight().value.reshaped({5, 3, 3, 3});
  EXPECT_LT(oracle::max_abs_diff(k.forward(x), conv2d(x, w, nullptr, 2, 1)), 1e-12);
}

TEST(KanConv, FirstDegreeOnlyIsConvolutionOfTanhPatches) {
  auto k = make(2, 3, 1, Chebyshev{3}, false);
  auto& a = k.coefficients().value;
  const auto w = oracle::random({3, 2, 3, 3}, 21);
  a.fill(0.0);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t f = 0; f < 18; ++f) a[(o * 18 + f) * 4 + 1] = w[o * 18 + f];
  const auto x = oracle::random({2, 2, 6, 5}, 22, -2, 2);
  // tanh(0) = 0 keeps zero padding intact, so this is conv2d(tanh(x), W).
  Tensor<double> tx = x;
  for (auto& v : tx.values()) v = std::tanh(v);
  EXPECT_LT(oracle::max_abs_diff(k.forward(x), conv2d(tx, w, nullptr, 1, 1)), 1e-12);
}

TEST(KanConv, OutputShapeMatchesConvolution) {
  auto k = make(8, 8, 2, Chebyshev{3});
  EXPECT_EQ(k.forward(Tensor<double>({2, 8, 16, 16})).shape(), (Shape{2, 8, 8, 8}));
  EXPECT_THROW(k.forward(Tensor<double>({2, 7, 16, 16})), GeometryError);
}

TEST(KanConv, ParameterCountClosedForm) {
  const auto c = kan_parameter_count(16, 32, 3, 3, Chebyshev{3}, false);
  EXPECT_EQ(c.basis_params, 18432u);
  EXPECT_EQ(kan_parameter_count(16, 32, 3, 3, Chebyshev{3}, true).total, 23040u);
  EXPECT_EQ(kan_parameter_count(16, 32, 3, 3, Chebyshev{0}, false).basis_params, 16u * 32u * 9u);
  auto k = make(16, 32, 1, Chebyshev{3});
  EXPECT_EQ(k.parameter_census(), 23040u);
}

TEST(KanConv, ZeroUpstreamGradientGivesZeroGradients) {
  auto k = make(2, 3, 1, Chebyshev{2});
  const auto x = oracle::random({1, 2, 4, 4}, 1);
  const auto y = k.forward(x);
  k.zero_grad();
  const auto gx = k.backward(Tensor<double>(y.shape()));
  for (double v : gx.values()) EXPECT_EQ(v, 0.0);
  for (auto* p : k.parameters())
    for (double v : p->grad.values()) EXPECT_EQ(v, 0.0);
}

TEST(KanConv, GradientsAgreeWithFiniteDifferences) {
  struct Case {
    BasisKind basis;
    Shape x;
    std::size_t stride;
  };
  for (const auto& c : {Case{Chebyshev{3}, {1, 2, 5, 5}, 1}, Case{Chebyshev{2}, {2, 8, 3, 3}, 1},
                        Case{Chebyshev{3}, {2, 3, 7, 6}, 2}, Case{GaussianRbf{}, {2, 3, 5, 4}, 1}}) {
    auto k = make(c.x[1], 4, c.stride, c.basis);
    const auto rep = gradcheck_module(k, oracle::random(c.x, 17, -2, 2));
    EXPECT_LT(rep.max_rel_err, 1e-4) << basis_name(c.basis) << " " << to_string(c.x);
  }
}

TEST(KanConv, SinglePrecisionTracksDouble) {
  auto k = make(3, 4, 1, Chebyshev{3});
  KanConvOptions o = k.options();
  KanConv2d<float> kf("kan", o);
  kf.coefficients().value = tensor_cast<float>(k.coefficients().value);
  kf.linear_weight().value = tensor_cast<float>(k.linear_weight().value);
  const auto x = oracle::random({2, 3, 6, 6}, 5);
  const auto yd = k.forward(x);
  const auto yf = kf.forward(tensor_cast<float>(x));
  for (std::size_t i = 0; i < yd.size(); ++i) EXPECT_NEAR(yf[i], yd[i], 1e-4);
}

TEST(KanConv, InvalidBasisRejectedAtConstruction) {
  KanConvOptions o;
  o.in_channels = 2;
  o.out_channels = 2;
  o.basis = Chebyshev{-2};
  EXPECT_THROW(KanConv2d<double>("bad", o), ConfigError);
  o.basis = Chebyshev{3};
  o.in_channels = 0;
  EXPECT_THROW(KanConv2d<double>("bad", o), ConfigError);
}
