#pragma once

// Headless entry points shared by tools/haptstart and the tests.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "haptstart/analysis.hpp"
#include "haptstart/config.hpp"
#include "haptstart/error.hpp"
#include "haptstart/http.hpp"
#include "haptstart/persistence.hpp"
#include "haptstart/service.hpp"
#include "haptstart/session.hpp"

namespace haptstart::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kConfigError = 2,
  kIoError = 3,
  kDataError = 4,  // protocol violations, corrupt logs, unusable data
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidRange:
    case ErrorKind::InvalidProfile:
    case ErrorKind::InvalidPlan:
    case ErrorKind::UnknownDevice:
    case ErrorKind::DuplicateDevice:
      return kConfigError;
    case ErrorKind::IoFailure: return kIoError;
    default: return kDataError;
  }
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot read '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, "cannot write '" + path + "'");
  out << text;
  out.flush();
  if (!out) throw Error(ErrorKind::IoFailure, "write failed for '" + path + "'");
}

struct SimulateResult {
  std::size_t records = 0;
  std::size_t planned = 0;
  std::string log_path;
};

inline SimulateResult cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> seed,
                                   const std::string& out_path) {
  const auto raw = json::parse(read_text(config_path), nullptr, false);
  if (raw.is_discarded()) throw Error(ErrorKind::InvalidConfig, "config '" + config_path + "' is not valid JSON");
  auto config = config_from_json(raw);
  if (seed) config.seed = *seed;
  config.validate();
  const auto records = simulate_to_log(config, out_path);
  return {records.size(), config.make_plan().planned_trials(), out_path};
}

/// CSV exports land beside the report: <stem>.rt_by_condition.csv etc.
inline std::vector<std::string> export_paths(const std::string& report_path) {
  std::filesystem::path p(report_path);
  const auto base = (p.parent_path() / p.stem()).string();
  return {base + ".rt_by_condition.csv", base + ".histogram.csv", base + ".likert.csv"};
}

inline json cmd_analyze(const std::string& log_path, const std::string& report_path) {
  auto log = read_log(log_path);
  if (log.records.empty()) throw Error(ErrorKind::TooFewSamples, "log '" + log_path + "' has no trial records");
  const auto report = analyze(log);
  write_text(report_path, report.dump(2) + "\n");

  // Exports follow the report: outlier-screened when the report screened.
  if (log.config.analysis.exclude_outliers) apply_outlier_screen(log.records, log.config.analysis.outlier_k_sigma);
  const auto paths = export_paths(report_path);
  write_text(paths[0], to_csv(export_csv(log, ExportKind::rt_by_condition)));
  write_text(paths[1], to_csv(export_csv(log, ExportKind::histogram)));
  write_text(paths[2], to_csv(export_csv(log, ExportKind::likert)));
  return report;
}

/// Rebuilds the session's event stream from its log. The closing
/// session_summary carries the same conditions/progress block as get_summary.
inline std::vector<json> replay_events(const SessionLog& log) {
  std::vector<json> events;
  auto emit = [&](EventKind kind, Timestamp at, json payload) {
    std::int64_t t = at.time_since_epoch().count();
    if (!events.empty()) t = std::max(t, events.back().at("t_us").get<std::int64_t>());
    events.push_back(json{{"seq", events.size()}, {"kind", to_string(kind)}, {"t_us", t}, {"payload", std::move(payload)}});
  };
  auto phase = [&](Timestamp at, StartPhase from, StartPhase to) {
    emit(EventKind::phase_changed, at, {{"from", to_string(from)}, {"to", to_string(to)}});
  };

  std::map<std::string, std::string> device_of;
  for (const auto& c : log.config.conditions) device_of[c.id] = c.device_id;
  const auto registry = log.config.make_registry();
  const std::set<std::uint64_t> operator_retry(log.retry_marks.begin(), log.retry_marks.end());

  const auto& recs = log.records;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    phase(r.times.marks, StartPhase::Idle, StartPhase::OnYourMarks);
    phase(r.times.set, StartPhase::OnYourMarks, StartPhase::Set);
    phase(r.times.start, StartPhase::Set, StartPhase::Fired);
    const auto& device = device_of[r.condition_id];
    json stim{{"device_id", device},
              {"modality", to_string(registry.get(device).modality)},
              {"commanded_at_us", r.times.start.time_since_epoch().count()}};
    if (r.times.stimulus_onset) stim["physical_onset_us"] = r.times.stimulus_onset->time_since_epoch().count();
    emit(EventKind::stimulus_fired, r.times.start, stim);

    const Timestamp done = r.times.reaction.value_or(r.times.start);
    const auto terminal = r.outcome == TrialOutcome::false_start ? StartPhase::FalseStart : StartPhase::Completed;
    phase(done, StartPhase::Fired, terminal);
    json payload = trial_event_payload(r);
    switch (r.outcome) {
      case TrialOutcome::valid:
      case TrialOutcome::excluded_outlier: emit(EventKind::rt_recorded, done, payload); break;
      case TrialOutcome::false_start: emit(EventKind::false_start, done, payload); break;
      case TrialOutcome::retry:
        payload["operator"] = operator_retry.count(r.seq) != 0;
        emit(EventKind::trial_retry, done, payload);
        break;
    }
    phase(done, terminal, StartPhase::Idle);

    const bool last_of_block = i + 1 == recs.size() || recs[i + 1].participant_id != r.participant_id ||
                               recs[i + 1].block_index != r.block_index;
    if (last_of_block) {
      const auto block = r.block_index + 1;
      const auto& due = log.config.trial.likert_blocks;
      emit(EventKind::block_complete, done,
           {{"participant_id", r.participant_id},
            {"block", block},
            {"likert_due", std::find(due.begin(), due.end(), block) != due.end()}});
    }
  }
  const auto summary = summarize(log.config.make_plan(), log.records);
  emit(EventKind::session_summary, events.empty() ? Timestamp{} : Timestamp{Duration{events.back().at("t_us").get<std::int64_t>()}},
       summary);
  return events;
}

inline std::size_t cmd_replay(const std::string& log_path, std::ostream& out) {
  const auto events = replay_events(read_log(log_path));
  for (const auto& e : events) out << e.dump() << '\n';
  return events.size();
}

/// Bind precedence: --bind flag, then HAPTSTART_BIND, then the config's
/// "service.bind", then 127.0.0.1:8787.
inline BindAddress resolve_bind(const std::optional<std::string>& flag, const std::optional<std::string>& config_path) {
  if (flag) return BindAddress::parse(*flag);
  if (const char* env = std::getenv("HAPTSTART_BIND"); env && *env) return BindAddress::parse(env);
  if (config_path) {
    const auto raw = json::parse(read_text(*config_path), nullptr, false);
    if (!raw.is_discarded() && raw.contains("service") && raw.at("service").contains("bind")) {
      return BindAddress::parse(raw.at("service").at("bind").get<std::string>());
    }
  }
  return {};
}

struct ServeOptions {
  std::optional<std::string> config_path;
  BindAddress bind;
  std::filesystem::path log_dir = ".";
};

/// Serves until SIGTERM/SIGINT, then flushes every session log. The caller
/// must not have started other threads before this runs (signal mask).
inline int cmd_serve(const ServeOptions& opts, std::ostream& out) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGINT);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  ControlService service(opts.log_dir);
  if (opts.config_path) {
    const auto config_json = json::parse(read_text(*opts.config_path), nullptr, false);
    if (config_json.is_discarded()) throw Error(ErrorKind::InvalidConfig, "config is not valid JSON");
    const auto id = service.create_session(config_json);
    out << "session " << id << " log " << service.log_path(id) << std::endl;
  }
  HttpControlServer server(service);
  const int port = server.bind(opts.bind);
  out << "listening on " << opts.bind.host << ":" << port << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.wait_until_ready();
    server.stop();
  });
  server.serve();
  // serve() can also return on its own; wake the waiter in that case.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  service.flush_all();
  out << "stopped; logs flushed" << std::endl;
  return kOk;
}

}  // namespace haptstart::cli
