#pragma once

// Race-start phase machine: On your marks -> Set -> Start, with recall and
// false-start outcomes.

#include <array>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "haptstart/devices.hpp"
#include "haptstart/error.hpp"
#include "haptstart/time.hpp"

namespace haptstart {

enum class StartPhase { Idle, OnYourMarks, Set, Fired, Completed, FalseStart, Recalled };

inline constexpr std::array<StartPhase, 7> kAllPhases = {
    StartPhase::Idle,      StartPhase::OnYourMarks, StartPhase::Set,     StartPhase::Fired,
    StartPhase::Completed, StartPhase::FalseStart,  StartPhase::Recalled};

constexpr std::string_view to_string(StartPhase p) {
  switch (p) {
    case StartPhase::Idle: return "Idle";
    case StartPhase::OnYourMarks: return "OnYourMarks";
    case StartPhase::Set: return "Set";
    case StartPhase::Fired: return "Fired";
    case StartPhase::Completed: return "Completed";
    case StartPhase::FalseStart: return "FalseStart";
    case StartPhase::Recalled: return "Recalled";
  }
  return "?";
}

constexpr bool is_terminal(StartPhase p) {
  return p == StartPhase::Completed || p == StartPhase::FalseStart || p == StartPhase::Recalled;
}

enum class StarterCommand { OnYourMarks, Set, Start, Recall, Reset };

inline constexpr std::array<StarterCommand, 5> kAllCommands = {
    StarterCommand::OnYourMarks, StarterCommand::Set, StarterCommand::Start, StarterCommand::Recall,
    StarterCommand::Reset};

constexpr std::string_view to_string(StarterCommand c) {
  switch (c) {
    case StarterCommand::OnYourMarks: return "OnYourMarks";
    case StarterCommand::Set: return "Set";
    case StarterCommand::Start: return "Start";
    case StarterCommand::Recall: return "Recall";
    case StarterCommand::Reset: return "Reset";
  }
  return "?";
}

inline StarterCommand parse_command(std::string_view s) {
  for (auto c : kAllCommands) {
    if (to_string(c) == s) return c;
  }
  throw Error(ErrorKind::BadRequest, "unknown starter command '" + std::string(s) + "'");
}

/// Pure transition function. Throws IllegalTransition for anything off the graph.
inline StartPhase advance(StartPhase state, StarterCommand command) {
  using P = StartPhase;
  using C = StarterCommand;
  switch (command) {
    case C::OnYourMarks:
      if (state == P::Idle) return P::OnYourMarks;
      break;
    case C::Set:
      if (state == P::OnYourMarks) return P::Set;
      break;
    case C::Start:
      if (state == P::Set) return P::Fired;
      break;
    case C::Recall:
      if (state == P::OnYourMarks || state == P::Set || state == P::Fired) return P::Recalled;
      break;
    case C::Reset:
      if (is_terminal(state)) return P::Idle;
      break;
  }
  throw Error(ErrorKind::IllegalTransition,
              std::string(to_string(command)) + " is not allowed in phase " + std::string(to_string(state)));
}

inline bool is_legal(StartPhase state, StarterCommand command) {
  try {
    advance(state, command);
    return true;
  } catch (const Error&) {
    return false;
  }
}

inline std::vector<StarterCommand> legal_commands(StartPhase state) {
  std::vector<StarterCommand> out;
  for (auto c : kAllCommands) {
    if (is_legal(state, c)) out.push_back(c);
  }
  return out;
}

enum class StartVerdict { valid, false_start };

/// Fired resolves into Completed or FalseStart once the reaction is judged.
inline StartPhase resolve(StartPhase state, StartVerdict verdict) {
  if (state != StartPhase::Fired) {
    throw Error(ErrorKind::IllegalTransition, "only a fired start can be resolved, phase is " +
                                                  std::string(to_string(state)));
  }
  return verdict == StartVerdict::valid ? StartPhase::Completed : StartPhase::FalseStart;
}

struct SequenceConfig {
  std::vector<std::string> on_your_marks_devices;
  std::vector<std::string> set_devices;
  std::vector<std::string> start_devices;
  Duration false_start_threshold = from_ms(100);
  Duration min_set_hold = from_ms(0);

  void validate() const {
    if (start_devices.empty()) throw Error(ErrorKind::NoStartChannel, "Start maps to no device");
    if (false_start_threshold.count() <= 0) throw Error(ErrorKind::InvalidRange, "false-start threshold must be positive");
    if (min_set_hold.count() < 0) throw Error(ErrorKind::InvalidRange, "min_set_hold must be non-negative");
  }
};

/// Reactions strictly under the threshold are anticipations; the threshold itself is valid.
inline StartVerdict judge_false_start(Duration rt_raw, const SequenceConfig& cfg) {
  return rt_raw < cfg.false_start_threshold ? StartVerdict::false_start : StartVerdict::valid;
}

/// Commands every start channel at the same instant.
inline std::vector<StimulusEvent> fire_start(DeviceRegistry& devices, const std::vector<std::string>& channels,
                                             Timestamp t, Rng& rng) {
  if (channels.empty()) throw Error(ErrorKind::NoStartChannel, "no start channel configured");
  for (const auto& id : channels) devices.get(id);  // all-or-nothing
  std::vector<StimulusEvent> events;
  events.reserve(channels.size());
  for (const auto& id : channels) events.push_back(devices.fire(id, t, rng));
  return events;
}

struct SequencerEvent {
  enum class Kind { phase_changed, stimulus_fired };
  Kind kind;
  Timestamp at;
  StartPhase from = StartPhase::Idle;
  StartPhase to = StartPhase::Idle;
  StimulusEvent stimulus;
};

/// Stateful wrapper around `advance` that fires the mapped devices and
/// notifies observers. Commands must be applied serially.
class StartSequencer {
 public:
  using Observer = std::function<void(const SequencerEvent&)>;

  StartSequencer(SequenceConfig config, DeviceRegistry& devices) : config_(std::move(config)), devices_(&devices) {
    config_.validate();
  }

  StartPhase phase() const { return phase_; }
  const SequenceConfig& config() const { return config_; }

  void set_start_channels(std::vector<std::string> channels) {
    if (channels.empty()) throw Error(ErrorKind::NoStartChannel, "Start maps to no device");
    config_.start_devices = std::move(channels);
  }

  void subscribe(Observer observer) { observers_.push_back(std::move(observer)); }

  /// Applies one command at time `t`; returns the stimuli it fired. On error
  /// the phase is unchanged and nothing fires.
  std::vector<StimulusEvent> apply(StarterCommand command, Timestamp t, Rng& rng) {
    const StartPhase next = advance(phase_, command);
    if (command == StarterCommand::Start && t < set_at_ + config_.min_set_hold) {
      throw Error(ErrorKind::IllegalTransition, "Start issued before the set hold elapsed");
    }
    std::vector<StimulusEvent> fired;
    switch (command) {
      case StarterCommand::OnYourMarks:
        for (const auto& id : config_.on_your_marks_devices) fired.push_back(devices_->fire(id, t, rng));
        break;
      case StarterCommand::Set:
        for (const auto& id : config_.set_devices) fired.push_back(devices_->fire(id, t, rng));
        set_at_ = t;
        break;
      case StarterCommand::Start:
        fired = fire_start(*devices_, config_.start_devices, t, rng);
        break;
      default:
        break;
    }
    transition(next, t);
    for (const auto& ev : fired) notify({SequencerEvent::Kind::stimulus_fired, t, next, next, ev});
    return fired;
  }

  void resolve(StartVerdict verdict, Timestamp t) { transition(haptstart::resolve(phase_, verdict), t); }

 private:
  void transition(StartPhase next, Timestamp t) {
    SequencerEvent ev{SequencerEvent::Kind::phase_changed, t, phase_, next, {}};
    phase_ = next;
    notify(ev);
  }

  void notify(const SequencerEvent& ev) {
    for (const auto& o : observers_) o(ev);
  }

  SequenceConfig config_;
  DeviceRegistry* devices_;
  StartPhase phase_ = StartPhase::Idle;
  Timestamp set_at_{};
  std::vector<Observer> observers_;
};

}  // namespace haptstart
