#pragma once

// Internal helpers shared by the translation units. Not installed.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>

#include <fmt/format.h>

namespace crowdflow::detail {

// 5-point Gauss-Legendre rule on [-1, 1]; exact for degree <= 9.
inline constexpr std::array<double, 5> kGaussNodes = {
    -0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831, 0.9061798459386640};
inline constexpr std::array<double, 5> kGaussWeights = {
    0.2369268850561891, 0.4786286704993665, 0.5688888888888889, 0.4786286704993665,
    0.2369268850561891};

template <class F>
double gauss_integrate(F&& f, double a, double b) {
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  double sum = 0.0;
  for (std::size_t k = 0; k < kGaussNodes.size(); ++k) sum += kGaussWeights[k] * f(mid + half * kGaussNodes[k]);
  return half * sum;
}

/// x^m, exact repeated multiplication for small integer exponents.
inline double power(double x, double m) {
  if (m == 2.0) return x * x;
  const double r = std::round(m);
  if (r == m && m > 0.0 && m <= 512.0) {
    auto n = static_cast<unsigned>(r);
    double result = 1.0;
    double base = x;
    while (n != 0) {
      if (n & 1U) result *= base;
      base *= base;
      n >>= 1U;
    }
    return result;
  }
  return std::pow(x, m);
}

/// Round-trip decimal formatting used for every CSV and JSON number.
inline std::string num(double x) { return fmt::format("{:.17g}", x); }

}  // namespace crowdflow::detail
