#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "haptstart/error.hpp"
#include "haptstart/stats/descriptive.hpp"

namespace haptstart::stats {

inline constexpr int kLikertMin = 1;
inline constexpr int kLikertMax = 7;

inline void validate_likert(int v) {
  if (v < kLikertMin || v > kLikertMax) {
    throw Error(ErrorKind::OutOfRange, "Likert response " + std::to_string(v) + " is outside 1..7");
  }
}

struct LikertSummary {
  std::size_t n = 0;
  double median = 0.0;
  double mean = 0.0;
  double sd = 0.0;  // population (divide by n)
};

/// Questionnaire tables report the population standard deviation.
inline LikertSummary likert_summary(std::span<const int> responses) {
  LikertSummary s;
  s.n = responses.size();
  if (responses.empty()) return s;
  std::vector<double> v;
  v.reserve(responses.size());
  for (int r : responses) {
    validate_likert(r);
    v.push_back(static_cast<double>(r));
  }
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(ss / static_cast<double>(v.size()));
  s.median = median_of(v);
  return s;
}

}  // namespace haptstart::stats
