#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "rkan/basis.hpp"

using namespace rkan;

TEST(Chebyshev, EndpointsAndMidpoint) {
  EXPECT_EQ(chebyshev_basis(1.0, 3), (std::vector<double>{1, 1, 1, 1}));
  EXPECT_EQ(chebyshev_basis(-1.0, 3), (std::vector<double>{1, -1, 1, -1}));
  const auto h = chebyshev_basis(0.5, 3);
  const std::vector<double> want{1, 0.5, -0.5, -1.0};
  for (int d = 0; d <= 3; ++d) EXPECT_NEAR(h[d], want[d], 1e-15);
}

TEST(Chebyshev, RecurrenceMatchesTrigonometricForm) {
  for (int d = 0; d <= 12; ++d)
    for (int i = 0; i <= 400; ++i) {
      const double x = -1.0 + 2.0 * i / 400.0;
      EXPECT_NEAR(chebyshev_basis(x, d)[d], oracle::chebyshev(d, x), 1e-12);
    }
}

TEST(Chebyshev, BoundedByOneOnTheDomain) {
  for (int i = 0; i <= 200; ++i)
    for (double v : chebyshev_basis(-1.0 + i / 100.0, 8)) EXPECT_LE(std::abs(v), 1.0 + 1e-12);
}

TEST(Chebyshev, DomainIsEnforcedWithSlack) {
  EXPECT_NO_THROW(chebyshev_basis(1.0 + 1e-10, 3));
  EXPECT_THROW(chebyshev_basis(1.0 + 1e-8, 3), InputError);
  EXPECT_THROW(chebyshev_basis(-1.5, 2), InputError);
}

TEST(Chebyshev, DerivativeMatchesFiniteDifferences) {
  for (int d = 0; d <= 8; ++d)
    for (int i = 0; i <= 100; ++i) {
      const double x = -0.99 + 1.98 * i / 100.0, h = 1e-6;
      const double fd = (chebyshev_basis(x + h, d)[d] - chebyshev_basis(x - h, d)[d]) / (2 * h);
      const double g = chebyshev_basis_grad(x, d)[d];
      EXPECT_LT(std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1.0}), 1e-8) << d << " " << x;
    }
}

TEST(Chebyshev, DerivativeClosedFormAtOne) {
  // T_d'(1) = d^2
  const auto g = chebyshev_basis_grad(1.0, 6);
  for (int d = 0; d <= 6; ++d) EXPECT_NEAR(g[d], d * d, 1e-12);
}

TEST(Rbf, ReferenceValues) {
  const std::vector<double> centers{-1, 0, 1};
  const auto v = rbf_basis(0.0, centers, 1.0);
  EXPECT_NEAR(v[0], 0.606531, 1e-6);
  EXPECT_EQ(v[1], 1.0);
  EXPECT_NEAR(v[2], 0.606531, 1e-6);
  EXPECT_NEAR(rbf_basis(1.0, centers, 1.0)[2], 1.0, 0.0);
  EXPECT_LT(rbf_basis(40.0, centers, 1.0)[0], 1e-300);
}

TEST(Rbf, RejectsNonpositiveWidth) {
  const std::vector<double> centers{0.0};
  EXPECT_THROW(rbf_basis(0.0, centers, 0.0), InputError);
  EXPECT_THROW(rbf_basis(0.0, centers, -1.0), InputError);
}

TEST(Rbf, DerivativeMatchesFiniteDifferences) {
  const std::vector<double> centers{-1, -0.25, 0.5, 1};
  for (double w : {0.5, 1.0, 2.0})
    for (int i = 0; i <= 50; ++i) {
      const double x = -1.0 + i / 25.0, h = 1e-6;
      std::vector<double> values(4), derivs(4);
      rbf_basis_with_grad(x, std::span<const double>(centers), w, std::span<double>(values),
                          std::span<double>(derivs));
      const auto up = rbf_basis(x + h, centers, w), dn = rbf_basis(x - h, centers, w);
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(derivs[j], (up[j] - dn[j]) / (2 * h), 1e-8);
    }
}

TEST(BasisKind, SizesAndValidation) {
  EXPECT_EQ(basis_size(Chebyshev{3}), 4u);
  EXPECT_EQ(basis_size(GaussianRbf{}), 3u);
  EXPECT_THROW(validate(Chebyshev{-1}), ConfigError);
  EXPECT_THROW(validate(Chebyshev{kMaxChebyshevDegree + 1}), ConfigError);
  EXPECT_THROW(validate(GaussianRbf{{}, 1.0}), ConfigError);
  EXPECT_THROW(validate(GaussianRbf{{0.0}, 0.0}), ConfigError);
}

TEST(TanhNormalize, OddAndBounded) {
  const auto x = oracle::random({4, 50}, 2, -6, 6);
  Tensor<double> neg = x;
  neg *= -1.0;
  const auto a = tanh_normalize(x), b = tanh_normalize(neg);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(a[i], -b[i]);
    EXPECT_LT(std::abs(a[i]), 1.0);
  }
  EXPECT_NEAR(tanh_normalize(Tensor<double>({1}, 2.0))[0], 0.9640276, 1e-7);
  EXPECT_EQ(tanh_normalize(Tensor<double>({1}, 0.0))[0], 0.0);
}
