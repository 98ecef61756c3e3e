#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "haptstart/stats/descriptive.hpp"

namespace haptstart::stats {

struct Observation {
  std::string participant;
  std::string condition;
  double value = 0.0;
};

struct Exclusion {
  std::size_t index = 0;  // into the input sequence
  std::string participant;
  std::string condition;
  double value = 0.0;
  double z = 0.0;
};

struct OutlierReport {
  double k_sigma = 3.0;
  std::vector<Exclusion> excluded;
  std::map<std::string, std::size_t> excluded_per_condition;
  /// Groups that could not be screened (sd = 0 or fewer than two values).
  std::vector<std::string> warnings;
};

struct OutlierScreen {
  std::vector<std::size_t> kept;  // indices into the input, in input order
  OutlierReport report;
};

/// Single pass: each participant x condition group's mean and sample sd are
/// computed once over the full group, and values farther than k sd from the
/// mean are dropped.
inline OutlierScreen exclude_outliers_3sigma(const std::vector<Observation>& obs, double k_sigma = 3.0) {
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < obs.size(); ++i) groups[{obs[i].participant, obs[i].condition}].push_back(i);

  OutlierScreen out;
  out.report.k_sigma = k_sigma;
  std::vector<bool> drop(obs.size(), false);
  for (const auto& [key, idx] : groups) {
    const auto label = key.first + "/" + key.second;
    if (idx.size() < 2) {
      out.report.warnings.push_back("DegenerateGroup: " + label + " has fewer than two values");
      continue;
    }
    std::vector<double> v;
    v.reserve(idx.size());
    for (auto i : idx) v.push_back(obs[i].value);
    const auto d = descriptive(std::span<const double>(v));
    if (d.sd == 0.0) {
      out.report.warnings.push_back("DegenerateGroup: " + label + " has zero standard deviation");
      continue;
    }
    for (auto i : idx) {
      const double z = (obs[i].value - d.mean) / d.sd;
      if (std::fabs(obs[i].value - d.mean) > k_sigma * d.sd) {
        drop[i] = true;
        out.report.excluded.push_back({i, obs[i].participant, obs[i].condition, obs[i].value, z});
        ++out.report.excluded_per_condition[obs[i].condition];
      }
    }
  }
  std::sort(out.report.excluded.begin(), out.report.excluded.end(),
            [](const Exclusion& a, const Exclusion& b) { return a.index < b.index; });
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (!drop[i]) out.kept.push_back(i);
  }
  return out;
}

}  // namespace haptstart::stats
