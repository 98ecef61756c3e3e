#pragma once

// Two-sample and multiple-comparison tests. All p-values are two-sided.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "haptstart/error.hpp"
#include "haptstart/stats/descriptive.hpp"
#include "haptstart/stats/distributions.hpp"

namespace haptstart::stats {

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double df1 = 0.0;
  std::optional<double> df2;
  std::string method;
};

namespace detail {

inline void require_n(const SampleSet& s, std::size_t n) {
  if (s.values.size() < n) {
    throw Error(ErrorKind::TooFewSamples, "'" + s.label + "' has " + std::to_string(s.values.size()) +
                                              " values, need at least " + std::to_string(n));
  }
}

inline double variance_of(const SampleSet& s) {
  const auto d = descriptive(s);
  return d.sd * d.sd;
}

}  // namespace detail

/// Unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
inline TestResult welch_t(const SampleSet& a, const SampleSet& b) {
  detail::require_n(a, 3);
  detail::require_n(b, 3);
  const auto da = descriptive(a), db = descriptive(b);
  const double na = static_cast<double>(da.n), nb = static_cast<double>(db.n);
  const double va = da.sd * da.sd / na, vb = db.sd * db.sd / nb;
  const double se2 = va + vb;
  TestResult r;
  r.method = "welch_t";
  const double diff = da.mean - db.mean;
  if (se2 == 0.0) {
    r.statistic = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.df1 = na + nb - 2.0;
    r.p_value = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.statistic = diff / std::sqrt(se2);
  r.df1 = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  r.p_value = student_t_two_sided(r.statistic, r.df1);
  return r;
}

/// Pooled-variance (Student) t-test.
inline TestResult pooled_t(const SampleSet& a, const SampleSet& b) {
  detail::require_n(a, 2);
  detail::require_n(b, 2);
  const auto da = descriptive(a), db = descriptive(b);
  const double na = static_cast<double>(da.n), nb = static_cast<double>(db.n);
  const double df = na + nb - 2.0;
  const double sp2 = ((na - 1.0) * da.sd * da.sd + (nb - 1.0) * db.sd * db.sd) / df;
  TestResult r;
  r.method = "student_t";
  r.df1 = df;
  const double diff = da.mean - db.mean;
  const double se = std::sqrt(sp2 * (1.0 / na + 1.0 / nb));
  if (se == 0.0) {
    r.statistic = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.p_value = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.statistic = diff / se;
  r.p_value = student_t_two_sided(r.statistic, df);
  return r;
}

/// Variance-ratio test: F = larger variance / smaller variance, two-sided p.
inline TestResult f_test_var(const SampleSet& a, const SampleSet& b) {
  detail::require_n(a, 3);
  detail::require_n(b, 3);
  double va = detail::variance_of(a), vb = detail::variance_of(b);
  double na = static_cast<double>(a.values.size()), nb = static_cast<double>(b.values.size());
  if (va < vb) {
    std::swap(va, vb);
    std::swap(na, nb);
  }
  TestResult r;
  r.method = "f_test";
  r.df1 = na - 1.0;
  r.df2 = nb - 1.0;
  if (vb == 0.0) {
    r.statistic = va == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    r.p_value = va == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.statistic = va / vb;
  r.p_value = std::min(1.0, 2.0 * fisher_f_sf(r.statistic, r.df1, *r.df2));
  return r;
}

struct PairComparison {
  std::size_t i = 0;
  std::size_t j = 0;
  double mean_diff = 0.0;  // mean_i - mean_j
  std::optional<double> tukey_statistic;  // studentized range q
  std::optional<double> tukey_p;
  std::optional<double> bonferroni_statistic;  // pairwise t
  std::optional<double> bonferroni_raw_p;
  std::optional<double> bonferroni_p;
};

/// Significance tiers reported alongside every adjusted p-value.
inline constexpr double kAlphaTrend = 0.10;
inline constexpr double kAlpha = 0.05;
inline constexpr double kAlphaStrict = 0.001;

struct SignificanceFlags {
  bool trend = false;   // p < .10
  bool significant = false;  // p < .05
  bool strict = false;  // p < .001
};

inline SignificanceFlags flags_for(double p) { return {p < kAlphaTrend, p < kAlpha, p < kAlphaStrict}; }

/// Pairwise results over k groups; (i, j) and (j, i) resolve to the same pair,
/// the diagonal has no entry.
struct ComparisonMatrix {
  std::vector<std::string> labels;
  std::vector<PairComparison> pairs;  // i < j, lexicographic

  std::size_t size() const { return labels.size(); }
  std::size_t pair_count() const { return pairs.size(); }

  const PairComparison* find(std::size_t i, std::size_t j) const {
    if (i == j) return nullptr;
    if (i > j) std::swap(i, j);
    for (const auto& p : pairs) {
      if (p.i == i && p.j == j) return &p;
    }
    return nullptr;
  }

  /// Signed mean difference row - column.
  double mean_diff(std::size_t i, std::size_t j) const {
    const auto* p = find(i, j);
    if (!p) return 0.0;
    return i < j ? p->mean_diff : -p->mean_diff;
  }
};

namespace detail {

inline ComparisonMatrix empty_matrix(const std::vector<SampleSet>& groups) {
  if (groups.size() < 2) throw Error(ErrorKind::TooFewGroups, "need at least two groups");
  ComparisonMatrix m;
  for (const auto& g : groups) {
    require_n(g, 2);
    m.labels.push_back(g.label);
  }
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      PairComparison c;
      c.i = i;
      c.j = j;
      c.mean_diff = descriptive(groups[i]).mean - descriptive(groups[j]).mean;
      m.pairs.push_back(c);
    }
  }
  return m;
}

}  // namespace detail

/// Tukey-Kramer all-pairs comparison. Uses the pooled within-group variance
/// with N - k degrees of freedom and the harmonic Kramer adjustment for
/// unequal group sizes.
inline ComparisonMatrix tukey_kramer(const std::vector<SampleSet>& groups) {
  auto m = detail::empty_matrix(groups);
  const double k = static_cast<double>(groups.size());
  double total_n = 0.0, ss_within = 0.0;
  std::vector<double> n;
  for (const auto& g : groups) {
    const auto d = descriptive(g);
    n.push_back(static_cast<double>(d.n));
    total_n += static_cast<double>(d.n);
    ss_within += (static_cast<double>(d.n) - 1.0) * d.sd * d.sd;
  }
  const double df = total_n - k;
  const double mse = ss_within / df;
  for (auto& p : m.pairs) {
    const double se = std::sqrt(mse * 0.5 * (1.0 / n[p.i] + 1.0 / n[p.j]));
    double q;
    if (se == 0.0) {
      q = p.mean_diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    } else {
      q = std::fabs(p.mean_diff) / se;
    }
    p.tukey_statistic = q;
    p.tukey_p = studentized_range_sf(q, k, df);
  }
  return m;
}

/// welch and pooled use only the two groups of a pair; pooled_mse uses the
/// within-group variance of all groups with N - k df, as Tukey-Kramer does.
enum class PairwiseTest { welch, pooled, pooled_mse };

namespace detail {

inline TestResult mse_t(const SampleSet& a, const SampleSet& b, double mse, double df) {
  const auto da = descriptive(a), db = descriptive(b);
  TestResult r;
  r.method = "student_t_mse";
  r.df1 = df;
  const double diff = da.mean - db.mean;
  const double se = std::sqrt(mse * (1.0 / static_cast<double>(da.n) + 1.0 / static_cast<double>(db.n)));
  if (se == 0.0) {
    r.statistic = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.p_value = diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.statistic = diff / se;
  r.p_value = student_t_two_sided(r.statistic, df);
  return r;
}

}  // namespace detail

/// Pairwise t-tests with p multiplied by the number of pairs k(k - 1)/2,
/// capped at 1. Welch by default.
inline ComparisonMatrix bonferroni_pairwise(const std::vector<SampleSet>& groups,
                                            PairwiseTest test = PairwiseTest::welch) {
  auto m = detail::empty_matrix(groups);
  const double factor = static_cast<double>(m.pair_count());
  double total_n = 0.0, ss_within = 0.0;
  for (const auto& g : groups) {
    detail::require_n(g, 2);
    const auto d = descriptive(g);
    total_n += static_cast<double>(d.n);
    ss_within += (static_cast<double>(d.n) - 1.0) * d.sd * d.sd;
  }
  const double df = total_n - static_cast<double>(groups.size());
  for (auto& p : m.pairs) {
    TestResult r;
    switch (test) {
      case PairwiseTest::welch: r = welch_t(groups[p.i], groups[p.j]); break;
      case PairwiseTest::pooled: r = pooled_t(groups[p.i], groups[p.j]); break;
      case PairwiseTest::pooled_mse: r = detail::mse_t(groups[p.i], groups[p.j], ss_within / df, df); break;
    }
    p.bonferroni_statistic = r.statistic;
    p.bonferroni_raw_p = r.p_value;
    p.bonferroni_p = std::min(1.0, r.p_value * factor);
  }
  return m;
}

/// Merges Tukey and Bonferroni results computed over the same groups.
inline ComparisonMatrix combine(ComparisonMatrix tukey, const ComparisonMatrix& bonferroni) {
  if (tukey.labels != bonferroni.labels) throw Error(ErrorKind::TooFewGroups, "matrices cover different groups");
  for (std::size_t k = 0; k < tukey.pairs.size(); ++k) {
    const auto& b = bonferroni.pairs[k];
    tukey.pairs[k].bonferroni_statistic = b.bonferroni_statistic;
    tukey.pairs[k].bonferroni_raw_p = b.bonferroni_raw_p;
    tukey.pairs[k].bonferroni_p = b.bonferroni_p;
  }
  return tukey;
}

}  // namespace haptstart::stats
