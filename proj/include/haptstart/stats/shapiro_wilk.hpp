#pragma once

// Shapiro-Wilk W test using Royston's approximation (AS R94): polynomial
// approximations for the coefficients, a log-normal transform of 1 - W for the
// p-value, with separate fits for n <= 11 and n >= 12, and the exact
// distribution for n = 3.

#include <algorithm>
#include <cmath>
#include <vector>

#include "haptstart/error.hpp"
#include "haptstart/stats/descriptive.hpp"
#include "haptstart/stats/distributions.hpp"
#include "haptstart/stats/tests.hpp"

namespace haptstart::stats {

namespace detail {

/// c[0] + c[1] x + c[2] x^2 + ...
template <std::size_t N>
double poly(const double (&c)[N], double x) {
  double r = 0.0;
  for (std::size_t i = N; i-- > 0;) r = r * x + c[i];
  return r;
}

/// Upper half of the Shapiro-Wilk coefficient vector, a[0] for the extremes.
inline std::vector<double> shapiro_wilk_coefficients(std::size_t n) {
  const std::size_t half = n / 2;
  std::vector<double> a(half);
  if (n == 3) {
    a[0] = std::sqrt(0.5);
    return a;
  }
  static constexpr double c1[] = {0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056};
  static constexpr double c2[] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
  const double an = static_cast<double>(n);
  const double an25 = an + 0.25;
  std::vector<double> m(half);
  double summ2 = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    m[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / an25);
    summ2 += m[i] * m[i];
  }
  summ2 *= 2.0;
  const double ssumm2 = std::sqrt(summ2);
  const double rsn = 1.0 / std::sqrt(an);
  const double a1 = poly(c1, rsn) - m[0] / ssumm2;

  std::size_t first_scaled;
  double fac;
  if (n > 5) {
    first_scaled = 2;
    const double a2 = -m[1] / ssumm2 + poly(c2, rsn);
    fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
    a[1] = a2;
  } else {
    first_scaled = 1;
    fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
  }
  a[0] = a1;
  for (std::size_t i = first_scaled; i < half; ++i) a[i] = -m[i] / fac;
  return a;
}

}  // namespace detail

inline TestResult shapiro_wilk(const SampleSet& s) {
  const std::size_t n = s.values.size();
  if (n < 3) throw Error(ErrorKind::TooFewSamples, "Shapiro-Wilk needs at least 3 values");
  if (n > 5000) throw Error(ErrorKind::OutOfRange, "Shapiro-Wilk approximation is valid up to n = 5000");

  std::vector<double> x = s.values;
  std::sort(x.begin(), x.end());
  if (x.back() - x.front() < 1e-19 * std::max(1.0, std::fabs(x.front()))) {
    throw Error(ErrorKind::DegenerateGroup, "all values are identical");
  }
  const auto a = detail::shapiro_wilk_coefficients(n);
  const auto d = descriptive(std::span<const double>(x));
  const double ss = d.sd * d.sd * static_cast<double>(n - 1);
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) num += a[i] * (x[n - 1 - i] - x[i]);
  double w = std::min(1.0, num * num / ss);

  TestResult r;
  r.method = "shapiro_wilk";
  r.statistic = w;
  r.df1 = static_cast<double>(n);

  if (n == 3) {
    constexpr double pi6 = 1.90985931710274;   // 6 / pi
    constexpr double stqr = 1.04719755119660;  // pi / 3
    r.p_value = std::clamp(pi6 * (std::asin(std::sqrt(w)) - stqr), 0.0, 1.0);
    return r;
  }

  static constexpr double c3[] = {0.544, -0.39978, 0.025054, -6.714e-4};
  static constexpr double c4[] = {1.3822, -0.77857, 0.062767, -0.0020322};
  static constexpr double c5[] = {-1.5861, -0.31082, -0.083751, 0.0038915};
  static constexpr double c6[] = {-0.4803, -0.082676, 0.0030302};
  static constexpr double g[] = {-2.273, 0.459};

  const double an = static_cast<double>(n);
  double y = std::log1p(-w);
  double mean, sd;
  if (n <= 11) {
    const double gamma = detail::poly(g, an);
    if (y >= gamma) {
      r.p_value = 1e-99;
      return r;
    }
    y = -std::log(gamma - y);
    mean = detail::poly(c3, an);
    sd = std::exp(detail::poly(c4, an));
  } else {
    const double xx = std::log(an);
    mean = detail::poly(c5, xx);
    sd = std::exp(detail::poly(c6, xx));
  }
  r.p_value = std::clamp(1.0 - normal_cdf((y - mean) / sd), 0.0, 1.0);
  return r;
}

}  // namespace haptstart::stats
