#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "haptstart/error.hpp"

namespace haptstart::stats {

struct SampleSet {
  std::string label;
  std::vector<double> values;
};

struct Descriptive {
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;  // sample (n - 1); zero for n < 2
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

/// Two-pass mean and sample variance.
inline Descriptive descriptive(std::span<const double> xs) {
  Descriptive d;
  d.n = xs.size();
  if (xs.empty()) return d;
  double sum = 0.0;
  for (double x : xs) {
    if (!std::isfinite(x)) throw Error(ErrorKind::SchemaViolation, "non-finite sample value");
    sum += x;
  }
  d.mean = sum / static_cast<double>(d.n);
  if (d.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - d.mean) * (x - d.mean);
    d.sd = std::sqrt(ss / static_cast<double>(d.n - 1));
  }
  auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  d.min = *lo;
  d.max = *hi;
  d.median = median_of(std::vector<double>(xs.begin(), xs.end()));
  return d;
}

inline Descriptive descriptive(const SampleSet& s) { return descriptive(std::span<const double>(s.values)); }

/// Welford accumulator for running summaries.
class RunningStats {
 public:
  void push(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }

  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double sd() const { return std::sqrt(variance()); }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace haptstart::stats
