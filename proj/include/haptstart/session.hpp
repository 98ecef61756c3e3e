#pragma once

// Builds a runnable TrialSession from a SessionConfig and runs whole
// simulated studies into a log.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "haptstart/analysis.hpp"
#include "haptstart/config.hpp"
#include "haptstart/harness.hpp"
#include "haptstart/persistence.hpp"

namespace haptstart {

/// Live sessions take their reactions from `live_source`; simulated sessions
/// use each participant's profile.
inline std::unique_ptr<TrialSession> make_session(const SessionConfig& config,
                                                  std::optional<LiveReactor::Source> live_source = std::nullopt) {
  config.validate();
  std::vector<std::unique_ptr<Reactor>> reactors;
  for (const auto& p : config.participants) {
    if (config.mode == SessionMode::live) {
      if (!live_source) throw Error(ErrorKind::InvalidConfig, "live sessions need a reaction source");
      reactors.push_back(std::make_unique<LiveReactor>(*live_source));
    } else {
      reactors.push_back(std::make_unique<SimulatedReactor>(p.profile, config.trial.sensor));
    }
  }
  auto clock = config.clock == ClockSource::Kind::simulated ? ClockSource::simulated() : ClockSource::real();
  // The plan consumes `seed` directly; trial randomness gets a distinct stream.
  const std::uint64_t trial_seed = config.seed.value_or(0) ^ 0x9e3779b97f4a7c15ULL;
  return std::make_unique<TrialSession>(config.make_plan(), config.make_registry(), config.sequence,
                                        std::move(reactors), config.trial, clock, trial_seed);
}

/// Runs every planned trial on the simulated clock and writes the log.
inline std::vector<TrialRecord> simulate_to_log(const SessionConfig& config, const std::string& out_path) {
  if (config.mode != SessionMode::simulated) throw Error(ErrorKind::InvalidConfig, "simulate needs a simulated config");
  if (config.clock != ClockSource::Kind::simulated) throw Error(ErrorKind::InvalidConfig, "simulate needs a simulated clock");
  auto session = make_session(config);
  LogWriter writer(out_path, config);
  session->on_record([&](const TrialRecord& r) { writer.write_record(r); });
  session->run_all();
  writer.flush();
  return session->records();
}

/// In-memory variant for tests and Monte-Carlo loops.
inline std::vector<TrialRecord> simulate(const SessionConfig& config) {
  auto session = make_session(config);
  session->run_all();
  return session->records();
}

}  // namespace haptstart
