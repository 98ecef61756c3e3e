#pragma once

// Analysis pipeline over a session log and running session summaries.

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "haptstart/config.hpp"
#include "haptstart/harness.hpp"
#include "haptstart/persistence.hpp"
#include "haptstart/stats.hpp"

namespace haptstart {

inline constexpr int kReportVersion = 1;

/// Applies the k-sigma screen to valid, non-practice records grouped by
/// participant x condition. Screened records become `excluded_outlier`.
inline stats::OutlierReport apply_outlier_screen(std::vector<TrialRecord>& records, double k_sigma) {
  std::vector<stats::Observation> obs;
  std::vector<std::size_t> index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.outcome != TrialOutcome::valid || r.practice) continue;
    obs.push_back({r.participant_id, r.condition_id, to_ms(*r.rt_raw)});
    index.push_back(i);
  }
  auto screen = stats::exclude_outliers_3sigma(obs, k_sigma);
  for (auto& e : screen.report.excluded) {
    records[index[e.index]].outcome = TrialOutcome::excluded_outlier;
    e.index = index[e.index];
  }
  return screen.report;
}

namespace detail {

inline json descriptive_json(const stats::Descriptive& d) {
  return json{{"n", d.n}, {"mean", d.mean}, {"sd", d.sd}, {"median", d.median}, {"min", d.min}, {"max", d.max}};
}

inline json test_json(const stats::TestResult& t) {
  json j{{"method", t.method}, {"statistic", t.statistic}, {"p_value", t.p_value}, {"df", t.df1}};
  if (t.df2) j["df2"] = *t.df2;
  if (!std::isfinite(t.statistic)) j["statistic"] = t.statistic > 0 ? "inf" : "-inf";
  return j;
}

inline json flags_json(double p) {
  const auto f = stats::flags_for(p);
  return json{{"p_lt_0.10", f.trend}, {"p_lt_0.05", f.significant}, {"p_lt_0.001", f.strict}};
}

inline std::vector<std::string> condition_order(const SessionConfig& config, const std::vector<TrialRecord>& records) {
  std::vector<std::string> out;
  for (const auto& c : config.conditions) out.push_back(c.id);
  for (const auto& r : records) {
    if (std::find(out.begin(), out.end(), r.condition_id) == out.end()) out.push_back(r.condition_id);
  }
  return out;
}

}  // namespace detail

struct Accounting {
  std::size_t planned = 0;
  std::size_t records = 0;
  std::size_t valid = 0;
  std::size_t false_start = 0;
  std::size_t retry = 0;
  std::size_t excluded_outlier = 0;
  std::size_t practice = 0;

  /// Every planned trial ends in exactly one final record; retries are extra.
  bool balances() const { return valid + false_start + excluded_outlier + retry + practice == records; }
};

inline Accounting account(const std::vector<TrialRecord>& records, std::size_t planned) {
  Accounting a;
  a.planned = planned;
  a.records = records.size();
  for (const auto& r : records) {
    if (r.practice) {
      ++a.practice;
      continue;
    }
    switch (r.outcome) {
      case TrialOutcome::valid: ++a.valid; break;
      case TrialOutcome::false_start: ++a.false_start; break;
      case TrialOutcome::retry: ++a.retry; break;
      case TrialOutcome::excluded_outlier: ++a.excluded_outlier; break;
    }
  }
  return a;
}

/// Full report for a log: accounting, outlier screen, descriptives, normality,
/// Tukey-Kramer and Bonferroni comparisons, and for two-condition designs the
/// Welch and F tests (overall and per participant), plus Likert summaries.
inline json analyze(const SessionLog& log) {
  const auto& config = log.config;
  auto records = log.records;
  if (records.empty()) throw Error(ErrorKind::TooFewSamples, "log contains no trial records");

  json report{{"format", "haptstart-report"}, {"version", kReportVersion}, {"config_hash", log.config_hash},
              {"study", config.study}};

  stats::OutlierReport outliers;
  outliers.k_sigma = config.analysis.outlier_k_sigma;
  if (config.analysis.exclude_outliers) outliers = apply_outlier_screen(records, config.analysis.outlier_k_sigma);
  json excluded = json::array();
  for (const auto& e : outliers.excluded) {
    excluded.push_back({{"seq", records[e.index].seq}, {"participant_id", e.participant}, {"condition_id", e.condition},
                        {"rt_ms", e.value}, {"z", e.z}});
  }
  report["outliers"] = {{"applied", config.analysis.exclude_outliers}, {"k_sigma", outliers.k_sigma},
                        {"excluded", excluded}, {"per_condition", outliers.excluded_per_condition},
                        {"total", outliers.excluded.size()}, {"warnings", outliers.warnings}};

  const auto acc = account(records, config.make_plan().planned_trials());
  report["accounting"] = {{"planned", acc.planned},   {"records", acc.records},
                          {"valid", acc.valid},       {"false_start", acc.false_start},
                          {"retry", acc.retry},       {"excluded_outlier", acc.excluded_outlier},
                          {"practice", acc.practice}, {"balanced", acc.balances()}};

  const auto conditions = detail::condition_order(config, records);
  std::vector<stats::SampleSet> groups, compensated;
  std::map<std::string, std::map<std::string, stats::SampleSet>> per_participant;
  stats::SampleSet pooled{"pooled", {}};
  for (const auto& c : conditions) {
    stats::SampleSet g{c, {}}, comp{c, {}};
    for (const auto& r : records) {
      if (r.condition_id != c || r.outcome != TrialOutcome::valid || r.practice) continue;
      g.values.push_back(to_ms(*r.rt_raw));
      comp.values.push_back(to_ms(*r.rt_compensated));
      per_participant[r.participant_id][c].label = c;
      per_participant[r.participant_id][c].values.push_back(to_ms(*r.rt_raw));
    }
    pooled.values.insert(pooled.values.end(), g.values.begin(), g.values.end());
    groups.push_back(std::move(g));
    compensated.push_back(std::move(comp));
  }

  json desc = json::object(), comp_desc = json::object();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    desc[groups[i].label] = detail::descriptive_json(stats::descriptive(groups[i]));
    comp_desc[groups[i].label] = detail::descriptive_json(stats::descriptive(compensated[i]));
  }
  report["descriptive"] = {{"rt_raw_ms", desc}, {"rt_compensated_ms", comp_desc}};

  auto safe = [](auto&& fn) -> json {
    try {
      return fn();
    } catch (const Error& e) {
      return json{{"error", to_string(e.kind())}, {"message", e.what()}};
    }
  };

  json normality{{"pooled", safe([&] { return detail::test_json(stats::shapiro_wilk(pooled)); })}};
  json per_cond = json::object();
  for (const auto& g : groups) per_cond[g.label] = safe([&] { return detail::test_json(stats::shapiro_wilk(g)); });
  normality["per_condition"] = per_cond;
  report["normality"] = normality;

  std::vector<stats::SampleSet> testable;
  for (const auto& g : groups) {
    if (g.values.size() >= 3) testable.push_back(g);
  }
  if (testable.size() >= 2) {
    report["multiple_comparisons"] = safe([&] {
      const auto m = stats::combine(stats::tukey_kramer(testable), stats::bonferroni_pairwise(testable));
      json pairs = json::array();
      for (const auto& p : m.pairs) {
        pairs.push_back({{"a", m.labels[p.i]},
                         {"b", m.labels[p.j]},
                         {"mean_diff_ms", p.mean_diff},
                         {"tukey_q", *p.tukey_statistic},
                         {"tukey_p", *p.tukey_p},
                         {"tukey_flags", detail::flags_json(*p.tukey_p)},
                         {"bonferroni_t", *p.bonferroni_statistic},
                         {"bonferroni_p", *p.bonferroni_p},
                         {"bonferroni_flags", detail::flags_json(*p.bonferroni_p)},
                         {"both_significant_p_lt_0.001", *p.tukey_p < stats::kAlphaStrict &&
                                                             *p.bonferroni_p < stats::kAlphaStrict}});
      }
      return json{{"labels", m.labels}, {"bonferroni_factor", m.pair_count()}, {"pairs", pairs}};
    });
  }

  if (groups.size() == 2) {
    json two{{"a", groups[0].label}, {"b", groups[1].label}};
    two["welch"] = safe([&] { return detail::test_json(stats::welch_t(groups[0], groups[1])); });
    two["f_test"] = safe([&] { return detail::test_json(stats::f_test_var(groups[0], groups[1])); });
    json per = json::array();
    for (const auto& [pid, by_cond] : per_participant) {
      auto a = by_cond.find(groups[0].label), b = by_cond.find(groups[1].label);
      if (a == by_cond.end() || b == by_cond.end()) continue;
      json w = safe([&] { return detail::test_json(stats::welch_t(a->second, b->second)); });
      json row{{"participant_id", pid}, {"welch", w}};
      if (w.contains("p_value")) row["flags"] = detail::flags_json(w["p_value"].get<double>());
      per.push_back(row);
    }
    two["per_participant"] = per;
    two["mean_gap_raw_ms"] = stats::descriptive(groups[0]).mean - stats::descriptive(groups[1]).mean;
    two["mean_gap_compensated_ms"] = stats::descriptive(compensated[0]).mean - stats::descriptive(compensated[1]).mean;
    report["two_sample"] = two;
  }

  json likert = json::array();
  for (const auto& q : config.likert_questions) {
    for (auto b : config.trial.likert_blocks) {
      std::vector<int> values;
      for (const auto& r : log.likert) {
        if (r.block != b) continue;
        auto it = r.answers.find(q);
        if (it != r.answers.end()) values.push_back(it->second);
      }
      if (values.empty()) continue;
      const auto s = stats::likert_summary(values);
      likert.push_back({{"question", q}, {"block", b}, {"n", s.n}, {"median", s.median}, {"mean", s.mean}, {"sd", s.sd}});
    }
  }
  report["likert"] = likert;
  return report;
}

/// Running per-condition statistics and progress, as served to the console.
inline json summarize(const SessionPlan& plan, const std::vector<TrialRecord>& records,
                      std::optional<PlanItem> current = std::nullopt) {
  json conditions = json::object();
  for (const auto& c : plan.conditions) {
    std::vector<double> raw, comp;
    for (const auto& r : records) {
      if (r.condition_id != c.id || r.outcome != TrialOutcome::valid || r.practice) continue;
      raw.push_back(to_ms(*r.rt_raw));
      comp.push_back(to_ms(*r.rt_compensated));
    }
    const auto d = stats::descriptive(std::span<const double>(raw));
    const auto dc = stats::descriptive(std::span<const double>(comp));
    conditions[c.id] = {{"n", d.n}, {"mean_ms", d.mean}, {"sd_ms", d.sd}, {"compensated_mean_ms", dc.mean},
                        {"compensated_sd_ms", dc.sd}};
  }
  const auto acc = account(records, plan.planned_trials());
  json progress{{"planned", acc.planned},
                {"records", acc.records},
                {"completed", acc.valid + acc.false_start + acc.excluded_outlier},
                {"valid", acc.valid},
                {"false_starts", acc.false_start},
                {"retries", acc.retry}};
  if (current) {
    progress["current"] = {{"participant_id", plan.participant_ids[current->participant_index]},
                           {"block", current->block_index + 1},
                           {"condition_id", plan.conditions[current->condition_index].id},
                           {"trial", current->trial_index + 1},
                           {"practice", current->practice}};
  } else {
    progress["current"] = nullptr;
  }
  return json{{"conditions", conditions}, {"progress", progress}};
}

}  // namespace haptstart
