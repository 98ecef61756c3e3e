#pragma once

// Study designs and trial execution: plan construction, counterbalanced
// condition order, and a serial trial runner that drives the start sequencer
// against a simulated or live reactor.

#include <algorithm>
#include <deque>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "haptstart/athlete.hpp"
#include "haptstart/devices.hpp"
#include "haptstart/error.hpp"
#include "haptstart/sequencer.hpp"
#include "haptstart/time.hpp"

namespace haptstart {

struct Participant {
  std::string id;
  std::optional<int> age;
  std::optional<std::string> hearing_level_db;
  std::optional<double> athletics_history_years;
  std::vector<std::string> events;
  std::vector<std::string> personal_bests;
  AthleteProfile profile;
};

struct Condition {
  std::string id;
  std::string device_id;
  std::optional<ContactPoint> contact_point;
};

inline void validate_conditions(const std::vector<Condition>& conditions, const DeviceRegistry& devices) {
  std::set<std::string> ids;
  for (const auto& c : conditions) {
    if (!ids.insert(c.id).second) throw Error(ErrorKind::InvalidPlan, "duplicate condition '" + c.id + "'");
    const auto& d = devices.get(c.device_id);
    if (is_haptic(d.modality) && !c.contact_point) {
      throw Error(ErrorKind::InvalidPlan, "haptic condition '" + c.id + "' needs a contact point");
    }
    if (!is_haptic(d.modality) && c.contact_point) {
      throw Error(ErrorKind::InvalidPlan, "condition '" + c.id + "' has a contact point on a non-haptic device");
    }
  }
}

// ---------------------------------------------------------------------------
// Canonical study set-ups

/// LED plus the push device fitted with each of the 0/2/4 mm interfaces.
inline std::vector<StimulusDevice> study1_devices() {
  std::vector<StimulusDevice> out;
  out.push_back({"led", Modality::visual_led, led_latency(), std::nullopt, ColorRole::start});
  for (int gap : {0, 2, 4}) {
    out.push_back({"push-" + std::to_string(gap) + "mm", Modality::haptic_push, solenoid_latency(),
                   ContactInterfaceSpec{2, static_cast<double>(gap), 3.0, std::nullopt}, std::nullopt});
  }
  return out;
}

/// Seven conditions: LED, then each interface at both contact points.
inline std::vector<Condition> study1_conditions() {
  std::vector<Condition> out{{"LED", "led", std::nullopt}};
  for (int gap : {0, 2, 4}) {
    for (auto cp : {ContactPoint::finger_pad, ContactPoint::first_joint}) {
      out.push_back({"push-" + std::to_string(gap) + "mm/" + std::string(to_string(cp)),
                     "push-" + std::to_string(gap) + "mm", cp});
    }
  }
  return out;
}

/// Red/yellow LEDs for the command phases, a start LED and the 2 mm push device.
inline std::vector<StimulusDevice> study2_devices() {
  return {
      {"led-red", Modality::visual_led, led_latency(), std::nullopt, ColorRole::red},
      {"led-yellow", Modality::visual_led, led_latency(), std::nullopt, ColorRole::yellow},
      {"led-start", Modality::visual_led, led_latency(), std::nullopt, ColorRole::start},
      {"push", Modality::haptic_push, solenoid_latency(),
       ContactInterfaceSpec{2, 2.0, 3.0, ContactPoint::first_joint}, std::nullopt},
  };
}

inline std::vector<Condition> study2_conditions() {
  return {{"LED", "led-start", std::nullopt}, {"Push", "push", ContactPoint::first_joint}};
}

// ---------------------------------------------------------------------------
// Counterbalancing

namespace detail {

/// First row of a Williams design: 0, 1, n-1, 2, n-2, ...
inline std::vector<std::size_t> williams_row(std::size_t n) {
  std::vector<std::size_t> row(n, 0);
  for (std::size_t j = 1; j < n; ++j) row[j] = (j % 2 == 1) ? (j + 1) / 2 : n - j / 2;
  return row;
}

}  // namespace detail

/// Condition order for one participant and block.
///
/// With at least as many participants as conditions the rows of a balanced
/// (Williams) Latin square are used, rotating by participant and block; odd
/// condition counts use the doubled square with mirrored rows. With fewer
/// participants, the leading condition cycles across participants and blocks
/// and the remainder is a seeded shuffle.
inline std::vector<std::size_t> counterbalance_order(std::size_t n_conditions, std::size_t participant_index,
                                                     std::size_t n_participants, std::size_t block_index,
                                                     std::uint64_t seed) {
  if (n_conditions == 0) throw Error(ErrorKind::InvalidPlan, "no conditions to order");
  const std::size_t n = n_conditions;
  std::vector<std::size_t> order(n);
  if (n_participants >= n) {
    const auto base = detail::williams_row(n);
    const std::size_t rows = (n % 2 == 0) ? n : 2 * n;
    const std::size_t r = (participant_index + block_index) % rows;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t col = (r < n) ? j : n - 1 - j;
      order[j] = (base[col] + r) % n;
    }
    return order;
  }
  const std::size_t leader = (participant_index + block_index * std::max<std::size_t>(n_participants, 1)) % n;
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[0], order[leader]);
  std::seed_seq sseq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(participant_index), static_cast<std::uint32_t>(block_index)};
  Rng rng(sseq);
  std::shuffle(order.begin() + 1, order.end(), rng);
  return order;
}

// ---------------------------------------------------------------------------
// Plans

struct PlanItem {
  std::size_t participant_index = 0;
  std::size_t block_index = 0;
  std::size_t condition_index = 0;
  std::size_t trial_index = 0;  // within the condition's run in this block
  std::size_t ordinal = 0;      // position in the plan
  bool practice = false;
};

struct SessionPlan {
  int study = 1;
  std::vector<Condition> conditions;
  std::vector<std::string> participant_ids;
  std::size_t trials_per_condition_per_block = 0;
  std::size_t blocks = 0;
  std::size_t practice_trials = 0;  // per participant, ahead of block 0
  /// orders[participant][block] is a permutation of condition indices.
  std::vector<std::vector<std::vector<std::size_t>>> orders;

  std::size_t planned_trials() const {
    return participant_ids.size() * conditions.size() * trials_per_condition_per_block * blocks;
  }

  /// Flattened execution order: participant, practice, block, condition run, trial.
  std::vector<PlanItem> items() const {
    std::vector<PlanItem> out;
    out.reserve(planned_trials() + practice_trials * participant_ids.size());
    for (std::size_t p = 0; p < participant_ids.size(); ++p) {
      for (std::size_t k = 0; k < practice_trials; ++k) {
        out.push_back({p, 0, k % conditions.size(), k, out.size(), true});
      }
      for (std::size_t b = 0; b < blocks; ++b) {
        for (auto c : orders.at(p).at(b)) {
          for (std::size_t t = 0; t < trials_per_condition_per_block; ++t) {
            out.push_back({p, b, c, t, out.size(), false});
          }
        }
      }
    }
    return out;
  }
};

namespace detail {

/// Reorders the haptic runs of each block so contact points strictly alternate
/// over the participant's whole haptic sequence. Non-haptic positions and the
/// relative order within each contact point are kept.
inline void alternate_contact_points(std::vector<std::vector<std::size_t>>& blocks,
                                     const std::vector<Condition>& conditions, ContactPoint first) {
  ContactPoint next = first;
  for (auto& order : blocks) {
    std::vector<std::size_t> positions;
    std::deque<std::size_t> pad, joint;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& cp = conditions[order[i]].contact_point;
      if (!cp) continue;
      positions.push_back(i);
      (*cp == ContactPoint::finger_pad ? pad : joint).push_back(order[i]);
    }
    for (auto pos : positions) {
      auto* want = next == ContactPoint::finger_pad ? &pad : &joint;
      auto* other = next == ContactPoint::finger_pad ? &joint : &pad;
      if (want->empty()) std::swap(want, other);
      order[pos] = want->front();
      want->pop_front();
      next = conditions[order[pos]].contact_point == ContactPoint::finger_pad ? ContactPoint::first_joint
                                                                               : ContactPoint::finger_pad;
    }
  }
}

}  // namespace detail

inline SessionPlan build_plan(int study, const std::vector<std::string>& participant_ids,
                              std::vector<Condition> conditions, std::size_t trials, std::size_t blocks,
                              std::uint64_t seed, bool alternate_contact_points = false) {
  if (participant_ids.empty()) throw Error(ErrorKind::InvalidPlan, "a plan needs at least one participant");
  if (conditions.empty() || trials == 0 || blocks == 0) throw Error(ErrorKind::InvalidPlan, "empty design");
  std::set<std::string> unique(participant_ids.begin(), participant_ids.end());
  if (unique.size() != participant_ids.size()) throw Error(ErrorKind::InvalidPlan, "participant ids must be unique");
  SessionPlan plan;
  plan.study = study;
  plan.conditions = std::move(conditions);
  plan.participant_ids = participant_ids;
  plan.trials_per_condition_per_block = trials;
  plan.blocks = blocks;
  const auto np = participant_ids.size();
  plan.orders.resize(np);
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t b = 0; b < blocks; ++b) {
      plan.orders[p].push_back(counterbalance_order(plan.conditions.size(), p, np, b, seed));
    }
    if (alternate_contact_points) {
      detail::alternate_contact_points(plan.orders[p], plan.conditions,
                                       p % 2 == 0 ? ContactPoint::finger_pad : ContactPoint::first_joint);
    }
  }
  return plan;
}

/// Button-press study: 7 conditions x 10 trials x 4 blocks per participant.
inline SessionPlan build_study1_plan(const std::vector<std::string>& participant_ids, std::uint64_t seed,
                                     std::vector<Condition> conditions = study1_conditions()) {
  if (conditions.size() != 7) throw Error(ErrorKind::InvalidPlan, "study 1 uses exactly 7 conditions");
  return build_plan(1, participant_ids, std::move(conditions), 10, 4, seed, true);
}

/// Crouch-start study: 2 conditions x 5 trials x 16 blocks per participant.
inline SessionPlan build_study2_plan(const std::vector<std::string>& participant_ids, std::uint64_t seed,
                                     std::vector<Condition> conditions = study2_conditions()) {
  if (conditions.size() != 2) throw Error(ErrorKind::InvalidPlan, "study 2 uses exactly 2 conditions");
  return build_plan(2, participant_ids, std::move(conditions), 5, 16, seed, false);
}

// ---------------------------------------------------------------------------
// Trial records

enum class TrialOutcome { valid, false_start, retry, excluded_outlier };

constexpr std::string_view to_string(TrialOutcome o) {
  switch (o) {
    case TrialOutcome::valid: return "valid";
    case TrialOutcome::false_start: return "false_start";
    case TrialOutcome::retry: return "retry";
    case TrialOutcome::excluded_outlier: return "excluded_outlier";
  }
  return "?";
}

inline TrialOutcome parse_outcome(std::string_view s) {
  for (auto o : {TrialOutcome::valid, TrialOutcome::false_start, TrialOutcome::retry, TrialOutcome::excluded_outlier}) {
    if (to_string(o) == s) return o;
  }
  throw Error(ErrorKind::SchemaViolation, "unknown outcome '" + std::string(s) + "'");
}

constexpr bool carries_rt(TrialOutcome o) { return o == TrialOutcome::valid || o == TrialOutcome::excluded_outlier; }

struct PhaseTimes {
  Timestamp marks{};
  Timestamp set{};
  Timestamp start{};
  std::optional<Timestamp> stimulus_onset;
  std::optional<Timestamp> reaction;

  friend bool operator==(const PhaseTimes&, const PhaseTimes&) = default;
};

struct TrialRecord {
  std::uint64_t seq = 0;
  std::string participant_id;
  std::string condition_id;
  std::size_t block_index = 0;
  std::size_t trial_index = 0;
  std::size_t plan_ordinal = 0;
  std::size_t attempt = 0;
  bool practice = false;
  Duration foreperiod{};
  std::optional<Duration> rt_raw;
  std::optional<Duration> rt_compensated;
  TrialOutcome outcome = TrialOutcome::valid;
  PhaseTimes times;

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;

  void validate() const {
    const bool has_rt = rt_raw.has_value() && rt_compensated.has_value();
    if (carries_rt(outcome) && !has_rt) {
      throw Error(ErrorKind::SchemaViolation, "outcome " + std::string(to_string(outcome)) + " requires RT fields");
    }
    if (!carries_rt(outcome) && (rt_raw || rt_compensated)) {
      throw Error(ErrorKind::SchemaViolation, "outcome " + std::string(to_string(outcome)) + " must not carry RT");
    }
    if (participant_id.empty() || condition_id.empty()) throw Error(ErrorKind::SchemaViolation, "record lacks ids");
    if (!(times.marks < times.set && times.set < times.start)) {
      throw Error(ErrorKind::SchemaViolation, "phase timestamps are not strictly increasing");
    }
    if (times.reaction && *times.reaction < times.start) {
      throw Error(ErrorKind::SchemaViolation, "reaction precedes start");
    }
  }
};

// ---------------------------------------------------------------------------
// Reactors

enum class SensorKind { button, force };

/// What a reactor produced for one start: a press instant or a force trace.
struct Response {
  std::optional<Timestamp> press;
  std::optional<ForceTrace> trace;
};

class Reactor {
 public:
  virtual ~Reactor() = default;
  virtual Response respond(const StimulusEvent& start, Modality modality, Rng& rng) = 0;
};

struct SensorSettings {
  SensorKind kind = SensorKind::button;
  Duration resolution = from_ms(1);
  OnsetParams onset;
  KickTraceShape kick;
};

class SimulatedReactor : public Reactor {
 public:
  SimulatedReactor(AthleteProfile profile, SensorSettings sensor) : profile_(std::move(profile)), sensor_(sensor) {
    profile_.validate();
  }

  Response respond(const StimulusEvent& start, Modality modality, Rng& rng) override {
    const auto reaction = sample_reaction(profile_, modality, start.physical_onset, rng);
    if (sensor_.kind == SensorKind::button) return Response{reaction.react_at, std::nullopt};
    const Timestamp t0 = start.commanded_at - from_ms(static_cast<std::int64_t>(sensor_.onset.baseline_window_ms));
    const auto span_ms = std::chrono::duration_cast<std::chrono::milliseconds>(reaction.react_at - t0).count();
    const auto length = static_cast<std::size_t>(span_ms) + 100;
    return Response{std::nullopt, simulate_force_trace(t0, length, reaction.react_at, sensor_.kick, rng)};
  }

  const AthleteProfile& profile() const { return profile_; }

 private:
  AthleteProfile profile_;
  SensorSettings sensor_;
};

/// Reaction supplied from outside (operator input, hardware bridge, test script).
class LiveReactor : public Reactor {
 public:
  using Source = std::function<Response(const StimulusEvent&, Modality)>;
  explicit LiveReactor(Source source) : source_(std::move(source)) {}
  Response respond(const StimulusEvent& start, Modality modality, Rng&) override { return source_(start, modality); }

 private:
  Source source_;
};

// ---------------------------------------------------------------------------
// Session events

/// Event payload for a finished trial. Block and trial are 1-based.
inline nlohmann::json trial_event_payload(const TrialRecord& rec) {
  nlohmann::json payload{{"seq", rec.seq},
                         {"participant_id", rec.participant_id},
                         {"condition_id", rec.condition_id},
                         {"block", rec.block_index + 1},
                         {"trial", rec.trial_index + 1}};
  if (rec.rt_raw) payload["rt_raw_us"] = rec.rt_raw->count();
  if (rec.rt_compensated) payload["rt_compensated_us"] = rec.rt_compensated->count();
  return payload;
}

enum class EventKind { phase_changed, stimulus_fired, rt_recorded, false_start, trial_retry, block_complete, session_summary };

constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::phase_changed: return "phase_changed";
    case EventKind::stimulus_fired: return "stimulus_fired";
    case EventKind::rt_recorded: return "rt_recorded";
    case EventKind::false_start: return "false_start";
    case EventKind::trial_retry: return "trial_retry";
    case EventKind::block_complete: return "block_complete";
    case EventKind::session_summary: return "session_summary";
  }
  return "?";
}

struct SessionEvent {
  EventKind kind;
  Timestamp at;
  nlohmann::json payload;
};

// ---------------------------------------------------------------------------
// Trial execution

struct TrialSettings {
  SensorSettings sensor;
  ForeperiodRange foreperiod;
  Duration marks_to_set = from_ms(2000);
  Duration inter_trial = from_ms(5000);
  double retry_probability = 0.0;  // simulated "start not satisfactory" self-reports
  bool rerun_false_starts = false;
  std::vector<std::size_t> likert_blocks;  // 1-based blocks after which a questionnaire is due
};

/// Serial orchestrator for one session. Interactive callers drive it phase by
/// phase and issue Reset after each terminal phase; batch callers use
/// `run_next_trial`/`run_all` on a simulated clock.
class TrialSession {
 public:
  using RecordSink = std::function<void(const TrialRecord&)>;
  using EventSink = std::function<void(const SessionEvent&)>;

  TrialSession(SessionPlan plan, DeviceRegistry devices, SequenceConfig sequence,
               std::vector<std::unique_ptr<Reactor>> reactors, TrialSettings settings, ClockSource clock,
               std::uint64_t seed)
      : plan_(std::move(plan)),
        devices_(std::move(devices)),
        sequencer_(std::move(sequence), devices_),
        reactors_(std::move(reactors)),
        settings_(std::move(settings)),
        clock_(clock),
        rng_(seed) {
    validate_conditions(plan_.conditions, devices_);
    if (reactors_.size() != plan_.participant_ids.size()) {
      throw Error(ErrorKind::InvalidPlan, "one reactor per participant is required");
    }
    settings_.foreperiod.validate();
    auto items = plan_.items();
    queue_.assign(items.begin(), items.end());
    for (const auto& it : items) {
      if (!it.practice) ++remaining_in_block_[{it.participant_index, it.block_index}];
    }
    sequencer_.subscribe([this](const SequencerEvent& ev) { on_sequencer_event(ev); });
  }

  void on_record(RecordSink sink) { record_sinks_.push_back(std::move(sink)); }
  void on_event(EventSink sink) { event_sinks_.push_back(std::move(sink)); }

  const SessionPlan& plan() const { return plan_; }
  const std::vector<TrialRecord>& records() const { return records_; }
  StartPhase phase() const { return sequencer_.phase(); }
  bool done() const { return queue_.empty(); }
  std::optional<PlanItem> current_item() const {
    if (queue_.empty()) return std::nullopt;
    return queue_.front();
  }
  std::size_t completed_items() const { return completed_items_; }
  ClockSource& clock() { return clock_; }
  const DeviceRegistry& devices() const { return devices_; }

  void on_your_marks() {
    if (queue_.empty()) throw Error(ErrorKind::SessionClosed, "plan is complete");
    const auto& item = queue_.front();
    const auto& cond = plan_.conditions[item.condition_index];
    if (sequencer_.phase() == StartPhase::Idle) sequencer_.set_start_channels({cond.device_id});
    if (clock_.is_simulated() && sequencer_.phase() == StartPhase::Idle && started_once_) {
      clock_.advance(settings_.inter_trial);
    }
    const Timestamp t = clock_.now();
    sequencer_.apply(StarterCommand::OnYourMarks, t, rng_);
    started_once_ = true;
    pending_ = PhaseTimes{};
    pending_.marks = t;
  }

  void set() {
    if (clock_.is_simulated() && sequencer_.phase() == StartPhase::OnYourMarks) clock_.advance(settings_.marks_to_set);
    const Timestamp t = clock_.now();
    sequencer_.apply(StarterCommand::Set, t, rng_);
    pending_.set = t;
    pending_foreperiod_ = sample_foreperiod(rng_, settings_.foreperiod);
  }

  /// Fires the start signal, captures and judges the reaction, and records the trial.
  TrialRecord start() {
    if (clock_.is_simulated() && sequencer_.phase() == StartPhase::Set) {
      auto hold = std::max(pending_foreperiod_, sequencer_.config().min_set_hold);
      clock_.advance(hold);
    }
    const Timestamp t = clock_.now();
    const auto fired = sequencer_.apply(StarterCommand::Start, t, rng_);
    const PlanItem item = queue_.front();
    queue_.pop_front();
    pending_.start = t;

    const auto& cond = plan_.conditions[item.condition_index];
    const auto& device = devices_.get(cond.device_id);
    const StimulusEvent& start_event = fired.front();
    pending_.stimulus_onset = start_event.physical_onset;

    TrialRecord rec;
    rec.participant_id = plan_.participant_ids[item.participant_index];
    rec.condition_id = cond.id;
    rec.block_index = item.block_index;
    rec.trial_index = item.trial_index;
    rec.plan_ordinal = item.ordinal;
    rec.attempt = attempts_[item.ordinal];
    rec.practice = item.practice;
    rec.foreperiod = pending_.start - pending_.set;

    auto& reactor = *reactors_.at(item.participant_index);
    const Response response = reactor.respond(start_event, device.modality, rng_);

    StartVerdict verdict = StartVerdict::valid;
    try {
      Duration raw{};
      if (response.press) {
        pending_.reaction = std::max(*response.press, t);
        raw = quantize_down(detect_button_press(*response.press, start_event), settings_.sensor.resolution);
      } else if (response.trace) {
        const Timestamp onset = detect_force_onset(*response.trace, settings_.sensor.onset);
        pending_.reaction = std::max(onset, t);
        if (onset < t) throw Error(ErrorKind::PressBeforeStart, "force onset before the start command");
        raw = onset - t;
      } else {
        throw Error(ErrorKind::NoOnset, "reactor produced no response");
      }
      verdict = judge_false_start(raw, sequencer_.config());
      if (verdict == StartVerdict::false_start) {
        rec.outcome = TrialOutcome::false_start;
      } else {
        rec.rt_compensated = compensate_latency(raw, device.latency.mean);
        rec.rt_raw = raw;
        rec.outcome = TrialOutcome::valid;
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::PressBeforeStart) {
        verdict = StartVerdict::false_start;
        rec.outcome = TrialOutcome::false_start;
      } else {
        rec.outcome = TrialOutcome::retry;
        rec.rt_raw.reset();
        rec.rt_compensated.reset();
      }
    }
    if (rec.outcome == TrialOutcome::valid && settings_.retry_probability > 0.0) {
      std::bernoulli_distribution self_report(settings_.retry_probability);
      if (self_report(rng_)) {
        rec.outcome = TrialOutcome::retry;
        rec.rt_raw.reset();
        rec.rt_compensated.reset();
      }
    }
    rec.times = pending_;
    const Timestamp done_at = pending_.reaction ? *pending_.reaction : t;
    if (clock_.is_simulated()) clock_.advance_to(std::max(clock_.now(), done_at));

    sequencer_.resolve(verdict, done_at);
    finish(rec, item, done_at);
    return records_.back();
  }

  /// Aborts the current start. Pre-start recalls consume no plan item.
  void recall() {
    const Timestamp t = clock_.now();
    sequencer_.apply(StarterCommand::Recall, t, rng_);
  }

  void reset() { sequencer_.apply(StarterCommand::Reset, clock_.now(), rng_); }

  /// Marks an earlier record as a retry and queues its plan item to run next.
  /// The original stays in the log; its outcome becomes `retry`.
  const TrialRecord& mark_retry(std::uint64_t seq) {
    auto it = std::find_if(records_.begin(), records_.end(), [&](const TrialRecord& r) { return r.seq == seq; });
    if (it == records_.end()) throw Error(ErrorKind::UnknownTrial, "no trial with seq " + std::to_string(seq));
    if (it->outcome == TrialOutcome::retry) throw Error(ErrorKind::AlreadyRetried, "trial already marked retry");
    if (superseded_.count(seq)) throw Error(ErrorKind::AlreadyRetried, "trial was already re-run");
    it->outcome = TrialOutcome::retry;
    it->rt_raw.reset();
    it->rt_compensated.reset();
    auto item = plan_.items().at(it->plan_ordinal);
    ++attempts_[item.ordinal];
    --completed_items_;
    if (!item.practice) ++remaining_in_block_[{item.participant_index, item.block_index}];
    queue_.push_front(item);
    emit({EventKind::trial_retry, clock_.now(), {{"seq", seq}, {"participant_id", it->participant_id},
                                                   {"condition_id", it->condition_id}, {"operator", true}}});
    return *it;
  }

  /// One full trial on the simulated clock.
  TrialRecord run_next_trial() {
    on_your_marks();
    set();
    auto rec = start();
    reset();
    return rec;
  }

  void run_all() {
    while (!done()) run_next_trial();
    emit_summary();
  }

  /// Counts only, unless the caller supplies a richer payload.
  void emit_summary(std::optional<nlohmann::json> payload = std::nullopt) {
    if (payload) {
      emit({EventKind::session_summary, clock_.now(), std::move(*payload)});
      return;
    }
    std::size_t valid = 0, false_starts = 0, retries = 0;
    for (const auto& r : records_) {
      valid += r.outcome == TrialOutcome::valid;
      false_starts += r.outcome == TrialOutcome::false_start;
      retries += r.outcome == TrialOutcome::retry;
    }
    emit({EventKind::session_summary, clock_.now(),
          {{"records", records_.size()}, {"valid", valid}, {"false_starts", false_starts}, {"retries", retries},
           {"planned", plan_.planned_trials()}}});
  }

 private:
  struct BlockKey {
    std::size_t participant, block;
    friend auto operator<=>(const BlockKey&, const BlockKey&) = default;
  };

  void finish(TrialRecord& rec, const PlanItem& item, Timestamp at) {
    rec.seq = records_.size();
    rec.validate();
    records_.push_back(rec);
    for (const auto& s : record_sinks_) s(records_.back());

    auto payload = trial_event_payload(rec);
    switch (rec.outcome) {
      case TrialOutcome::valid:
        emit({EventKind::rt_recorded, at, payload});
        break;
      case TrialOutcome::false_start:
        emit({EventKind::false_start, at, payload});
        break;
      default:
        payload["operator"] = false;
        emit({EventKind::trial_retry, at, payload});
        break;
    }

    const bool redo = rec.outcome == TrialOutcome::retry ||
                      (rec.outcome == TrialOutcome::false_start && settings_.rerun_false_starts);
    if (redo) {
      superseded_.insert(rec.seq);
      ++attempts_[item.ordinal];
      queue_.push_front(item);
      return;
    }
    ++completed_items_;
    if (item.practice) return;
    if (--remaining_in_block_[{item.participant_index, item.block_index}] == 0) {
      const auto block = item.block_index + 1;
      const bool likert = std::find(settings_.likert_blocks.begin(), settings_.likert_blocks.end(), block) !=
                          settings_.likert_blocks.end();
      emit({EventKind::block_complete, at,
            {{"participant_id", rec.participant_id}, {"block", block}, {"likert_due", likert}}});
    }
  }

  void on_sequencer_event(const SequencerEvent& ev) {
    if (ev.kind == SequencerEvent::Kind::phase_changed) {
      emit({EventKind::phase_changed, ev.at, {{"from", to_string(ev.from)}, {"to", to_string(ev.to)}}});
    } else {
      const auto& d = devices_.get(ev.stimulus.device_id);
      emit({EventKind::stimulus_fired, ev.at,
            {{"device_id", ev.stimulus.device_id},
             {"modality", to_string(d.modality)},
             {"commanded_at_us", ev.stimulus.commanded_at.time_since_epoch().count()},
             {"physical_onset_us", ev.stimulus.physical_onset.time_since_epoch().count()}}});
    }
  }

  void emit(const SessionEvent& ev) {
    for (const auto& s : event_sinks_) s(ev);
  }

  SessionPlan plan_;
  DeviceRegistry devices_;
  StartSequencer sequencer_;
  std::vector<std::unique_ptr<Reactor>> reactors_;
  TrialSettings settings_;
  ClockSource clock_;
  Rng rng_;

  std::deque<PlanItem> queue_;
  std::vector<TrialRecord> records_;
  std::map<std::size_t, std::size_t> attempts_;
  std::map<BlockKey, std::size_t> remaining_in_block_;
  std::set<std::uint64_t> superseded_;
  std::size_t completed_items_ = 0;
  PhaseTimes pending_;
  Duration pending_foreperiod_{};
  bool started_once_ = false;
  std::vector<RecordSink> record_sinks_;
  std::vector<EventSink> event_sinks_;
};

}  // namespace haptstart
