#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rkan/tensor.hpp"

namespace rkan {

inline constexpr int kMaxChebyshevDegree = 16;
inline constexpr double kChebyshevDomainSlack = 1e-9;

struct Chebyshev {
  int degree = 3;
  friend bool operator==(const Chebyshev&, const Chebyshev&) = default;
};

struct GaussianRbf {
  std::vector<double> centers{-1.0, 0.0, 1.0};
  double width = 1.0;
  friend bool operator==(const GaussianRbf&, const GaussianRbf&) = default;
};

using BasisKind = std::variant<Chebyshev, GaussianRbf>;

inline void validate(const BasisKind& basis) {
  if (const auto* cheb = std::get_if<Chebyshev>(&basis)) {
    if (cheb->degree < 0 || cheb->degree > kMaxChebyshevDegree)
      throw ConfigError("chebyshev degree " + std::to_string(cheb->degree) + " outside [0, " +
                        std::to_string(kMaxChebyshevDegree) + "]");
    return;
  }
  const auto& rbf = std::get<GaussianRbf>(basis);
  if (!(rbf.width > 0.0))
    throw ConfigError("rbf width must be positive, got " + std::to_string(rbf.width));
  if (rbf.centers.empty()) throw ConfigError("rbf needs at least one center");
  for (std::size_t j = 1; j < rbf.centers.size(); ++j)
    if (!(rbf.centers[j] > rbf.centers[j - 1]))
      throw ConfigError("rbf centers must be strictly increasing");
}

/// Number of basis functions per input feature.
inline std::size_t basis_size(const BasisKind& basis) {
  if (const auto* cheb = std::get_if<Chebyshev>(&basis)) return static_cast<std::size_t>(cheb->degree) + 1;
  return std::get<GaussianRbf>(basis).centers.size();
}

inline std::string basis_name(const BasisKind& basis) {
  return std::holds_alternative<Chebyshev>(basis) ? "chebyshev" : "rbf";
}

namespace detail {
template <typename T>
void check_chebyshev_domain(T x) {
  if (!(std::abs(static_cast<double>(x)) <= 1.0 + kChebyshevDomainSlack))
    throw InputError("chebyshev argument " + std::to_string(static_cast<double>(x)) +
                     " outside [-1, 1]");
}
}  // namespace detail

/// Writes T_0(x) .. T_D(x) into out (length D+1) by the three-term recurrence.
template <typename T>
void chebyshev_basis(T x, int degree, std::span<T> out) {
  detail::check_chebyshev_domain(x);
  out[0] = T{1};
  if (degree >= 1) out[1] = x;
  for (int d = 2; d <= degree; ++d) out[d] = T{2} * x * out[d - 1] - out[d - 2];
}

template <typename T>
std::vector<T> chebyshev_basis(T x, int degree) {
  std::vector<T> out(static_cast<std::size_t>(degree) + 1);
  chebyshev_basis<T>(x, degree, out);
  return out;
}

/// Writes T_d(x) into values and dT_d/dx into derivs, both length D+1.
template <typename T>
void chebyshev_basis_with_grad(T x, int degree, std::span<T> values, std::span<T> derivs) {
  chebyshev_basis<T>(x, degree, values);
  derivs[0] = T{0};
  if (degree >= 1) derivs[1] = T{1};
  for (int d = 2; d <= degree; ++d)
    derivs[d] = T{2} * values[d - 1] + T{2} * x * derivs[d - 1] - derivs[d - 2];
}

template <typename T>
std::vector<T> chebyshev_basis_grad(T x, int degree) {
  std::vector<T> values(static_cast<std::size_t>(degree) + 1), derivs(values.size());
  chebyshev_basis_with_grad<T>(x, degree, values, derivs);
  return derivs;
}

/// Gaussian bumps exp(-(x - c_j)^2 / (2 h^2)), one per center.
template <typename T>
void rbf_basis(T x, std::span<const double> centers, double width, std::span<T> out) {
  if (!(width > 0.0)) throw InputError("rbf width must be positive");
  const T inv = T{1} / static_cast<T>(2.0 * width * width);
  for (std::size_t j = 0; j < centers.size(); ++j) {
    const T diff = x - static_cast<T>(centers[j]);
    out[j] = std::exp(-diff * diff * inv);
  }
}

template <typename T>
std::vector<T> rbf_basis(T x, std::span<const double> centers, double width) {
  std::vector<T> out(centers.size());
  rbf_basis<T>(x, centers, width, out);
  return out;
}

template <typename T>
void rbf_basis_with_grad(T x, std::span<const double> centers, double width, std::span<T> values,
                         std::span<T> derivs) {
  rbf_basis<T>(x, centers, width, values);
  const T inv_h2 = T{1} / static_cast<T>(width * width);
  for (std::size_t j = 0; j < centers.size(); ++j)
    derivs[j] = -(x - static_cast<T>(centers[j])) * inv_h2 * values[j];
}

/// Evaluates any basis kind and its derivative at x.
template <typename T>
void evaluate_basis(const BasisKind& basis, T x, std::span<T> values, std::span<T> derivs) {
  if (const auto* cheb = std::get_if<Chebyshev>(&basis)) {
    chebyshev_basis_with_grad<T>(x, cheb->degree, values, derivs);
  } else {
    const auto& rbf = std::get<GaussianRbf>(basis);
    rbf_basis_with_grad<T>(x, rbf.centers, rbf.width, values, derivs);
  }
}

/// Element-wise tanh, mapping patch values into (-1, 1).
template <typename T>
Tensor<T> tanh_normalize(const Tensor<T>& patches) {
  Tensor<T> out(patches.shape());
  for (std::size_t i = 0; i < patches.size(); ++i) out[i] = std::tanh(patches[i]);
  return out;
}

}  // namespace rkan
