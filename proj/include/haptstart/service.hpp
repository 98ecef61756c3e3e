#pragma once

// Control service: session lifecycle, starter commands and per-session event
// history. Transport-independent; `handle` speaks the JSON wire protocol
// documented in docs/protocol.md.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "haptstart/analysis.hpp"
#include "haptstart/config.hpp"
#include "haptstart/error.hpp"
#include "haptstart/persistence.hpp"
#include "haptstart/session.hpp"

namespace haptstart {

inline constexpr int kProtocolVersion = 1;

struct ServiceEvent {
  std::uint64_t seq = 0;
  EventKind kind = EventKind::phase_changed;
  Timestamp at{};
  json payload;

  json to_json(const std::string& session_id) const {
    return json{{"session_id", session_id}, {"seq", seq}, {"kind", to_string(kind)},
                {"t_us", at.time_since_epoch().count()}, {"payload", payload}};
  }
};

struct CommandAck {
  StartPhase phase = StartPhase::Idle;
  std::optional<TrialRecord> record;
};

class ControlService {
 public:
  explicit ControlService(std::filesystem::path log_dir = std::filesystem::temp_directory_path())
      : log_dir_(std::move(log_dir)) {
    std::filesystem::create_directories(log_dir_);
  }

  std::string create_session(const json& config_json) {
    SessionConfig config;
    try {
      config = config_from_json(config_json);
      config.validate();
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::InvalidConfig) throw;
      throw Error(ErrorKind::InvalidConfig, e.what());
    }
    auto s = std::make_shared<Session>();
    {
      std::lock_guard lock(sessions_mutex_);
      char buf[32];
      std::snprintf(buf, sizeof buf, "s-%04llu", static_cast<unsigned long long>(++next_id_));
      s->id = buf;
    }
    s->config = config;
    auto* raw = s.get();
    s->trials = make_session(config, LiveReactor::Source([raw](const StimulusEvent& start, Modality) {
                               if (!raw->pending_reaction) {
                                 throw Error(ErrorKind::BadRequest, "live Start needs reaction_ms");
                               }
                               return Response{start.commanded_at + *raw->pending_reaction, std::nullopt};
                             }));
    s->log_path = (log_dir_ / (s->id + ".jsonl")).string();
    s->writer = std::make_unique<LogWriter>(s->log_path, config);
    s->trials->on_record([raw](const TrialRecord& r) { raw->writer->write_record(r); });
    s->trials->on_event([raw](const SessionEvent& ev) { raw->append_event(ev); });
    std::lock_guard lock(sessions_mutex_);
    sessions_[s->id] = s;
    return s->id;
  }

  std::string log_path(const std::string& id) const { return find(id)->log_path; }

  /// Applies one starter command; the reply carries the phase the sequencer
  /// reached and, for Start, the trial it produced. `reaction` is required for
  /// Start on live sessions: the externally measured press, relative to the
  /// start command.
  CommandAck issue_command(const std::string& id, StarterCommand command,
                           std::optional<Duration> reaction = std::nullopt) {
    auto s = find(id);
    std::lock_guard lock(s->command_mutex);
    if (s->closed) throw Error(ErrorKind::SessionClosed, "session " + id + " is closed");
    if (s->trials->done()) throw Error(ErrorKind::SessionClosed, "session " + id + " has completed its plan");
    CommandAck ack;
    switch (command) {
      case StarterCommand::OnYourMarks: s->trials->on_your_marks(); break;
      case StarterCommand::Set: s->trials->set(); break;
      case StarterCommand::Start: {
        if (s->config.mode == SessionMode::live && !reaction) {
          throw Error(ErrorKind::BadRequest, "live Start needs reaction_ms");
        }
        if (s->trials->phase() != StartPhase::Set) advance(s->trials->phase(), command);
        s->pending_reaction = reaction;
        ack.record = s->trials->start();
        s->pending_reaction.reset();
        if (s->trials->done()) finish(*s);
        break;
      }
      case StarterCommand::Recall: s->trials->recall(); break;
      case StarterCommand::Reset: s->trials->reset(); break;
    }
    ack.phase = s->trials->phase();
    return ack;
  }

  TrialRecord mark_retry(const std::string& id, std::uint64_t seq) {
    auto s = find(id);
    std::lock_guard lock(s->command_mutex);
    if (s->closed) throw Error(ErrorKind::SessionClosed, "session " + id + " is closed");
    if (s->trials->done()) throw Error(ErrorKind::SessionClosed, "session " + id + " has completed its plan");
    if (s->trials->phase() != StartPhase::Idle && !is_terminal(s->trials->phase())) {
      throw Error(ErrorKind::IllegalTransition, "cannot mark a retry during a start sequence");
    }
    auto rec = s->trials->mark_retry(seq);
    s->writer->write_retry(seq);
    return rec;
  }

  void submit_likert(const std::string& id, const LikertResponse& response) {
    auto s = find(id);
    std::lock_guard lock(s->command_mutex);
    if (s->closed) throw Error(ErrorKind::SessionClosed, "session " + id + " is closed");
    response.validate();
    const auto& ids = s->trials->plan().participant_ids;
    if (std::find(ids.begin(), ids.end(), response.participant_id) == ids.end()) {
      throw Error(ErrorKind::BadRequest, "unknown participant '" + response.participant_id + "'");
    }
    const auto& known = s->config.likert_questions;
    for (const auto& [q, v] : response.answers) {
      if (!known.empty() && std::find(known.begin(), known.end(), q) == known.end()) {
        throw Error(ErrorKind::BadRequest, "unknown question '" + q + "'");
      }
    }
    s->writer->write_likert(response);
    s->likert.push_back(response);
  }

  json get_summary(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->command_mutex);
    auto summary = summarize(s->trials->plan(), s->trials->records(), s->trials->current_item());
    summary["phase"] = to_string(s->trials->phase());
    summary["legal_commands"] = json::array();
    for (auto c : legal_commands(s->trials->phase())) summary["legal_commands"].push_back(to_string(c));
    summary["closed"] = s->closed || s->trials->done();
    summary["likert_submitted"] = s->likert.size();
    {
      std::lock_guard ev_lock(s->events_mutex);
      summary["next_seq"] = s->events.size();
    }
    return summary;
  }

  void close_session(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->command_mutex);
    s->closed = true;
    s->writer->flush();
    std::lock_guard ev_lock(s->events_mutex);
    s->events_closed = true;
    s->events_cv.notify_all();
  }

  /// Events with seq >= from_seq, oldest first.
  std::vector<ServiceEvent> events_since(const std::string& id, std::uint64_t from_seq) const {
    auto s = find(id);
    std::lock_guard lock(s->events_mutex);
    return s->slice(from_seq);
  }

  /// Blocks until at least one event with seq >= from_seq exists, the session
  /// closes, or the timeout passes.
  std::vector<ServiceEvent> wait_events(const std::string& id, std::uint64_t from_seq,
                                        std::chrono::milliseconds timeout) const {
    auto s = find(id);
    std::unique_lock lock(s->events_mutex);
    s->events_cv.wait_for(lock, timeout, [&] { return s->events.size() > from_seq || s->events_closed; });
    return s->slice(from_seq);
  }

  bool is_closed(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->events_mutex);
    return s->events_closed;
  }

  void flush_all() {
    std::lock_guard lock(sessions_mutex_);
    for (auto& [id, s] : sessions_) {
      std::lock_guard cl(s->command_mutex);
      s->writer->flush();
    }
  }

  /// Wire-protocol entry point: one request object in, exactly one reply out.
  json handle(const json& request) {
    json id = request.is_object() && request.contains("id") ? request.at("id") : json(nullptr);
    try {
      if (!request.is_object()) throw Error(ErrorKind::BadRequest, "request must be a JSON object");
      if (id.is_null()) throw Error(ErrorKind::BadRequest, "request id is required");
      const auto kind = request.value("kind", "");
      const json payload = request.value("payload", json::object());
      return json{{"v", kProtocolVersion}, {"id", id}, {"ok", true}, {"result", dispatch(kind, payload)}};
    } catch (const Error& e) {
      return json{{"v", kProtocolVersion}, {"id", id}, {"ok", false},
                  {"error", {{"kind", to_string(e.kind())}, {"message", e.what()}}}};
    } catch (const json::exception& e) {
      return json{{"v", kProtocolVersion}, {"id", id}, {"ok", false},
                  {"error", {{"kind", to_string(ErrorKind::BadRequest)}, {"message", e.what()}}}};
    }
  }

 private:
  struct Session {
    std::string id;
    SessionConfig config;
    std::unique_ptr<TrialSession> trials;
    std::unique_ptr<LogWriter> writer;
    std::string log_path;
    std::vector<LikertResponse> likert;
    std::optional<Duration> pending_reaction;
    bool closed = false;
    mutable std::mutex command_mutex;

    mutable std::mutex events_mutex;
    mutable std::condition_variable events_cv;
    std::vector<ServiceEvent> events;
    bool events_closed = false;

    void append_event(const SessionEvent& ev) {
      std::lock_guard lock(events_mutex);
      // Keep the stream in timestamp order even if a caller reports late.
      Timestamp at = ev.at;
      if (!events.empty() && at < events.back().at) at = events.back().at;
      events.push_back({events.size(), ev.kind, at, ev.payload});
      events_cv.notify_all();
    }

    std::vector<ServiceEvent> slice(std::uint64_t from_seq) const {
      if (from_seq >= events.size()) return {};
      return {events.begin() + static_cast<std::ptrdiff_t>(from_seq), events.end()};
    }
  };

  // Plan exhausted: summary event, then the stream ends. Likert entry stays open.
  static void finish(Session& s) {
    s.trials->emit_summary(summarize(s.trials->plan(), s.trials->records()));
    s.writer->flush();
    std::lock_guard lock(s.events_mutex);
    s.events_closed = true;
    s.events_cv.notify_all();
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::lock_guard lock(sessions_mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorKind::UnknownSession, "no session '" + id + "'");
    return it->second;
  }

  json dispatch(const std::string& kind, const json& payload) {
    auto session_id = [&] {
      if (!payload.contains("session_id")) throw Error(ErrorKind::BadRequest, "payload.session_id is required");
      return payload.at("session_id").get<std::string>();
    };
    if (kind == "create_session") {
      if (!payload.contains("config")) throw Error(ErrorKind::InvalidConfig, "payload.config is required");
      const auto sid = create_session(payload.at("config"));
      return json{{"session_id", sid}, {"log_path", log_path(sid)}, {"config_hash", find(sid)->writer->config_hash()}};
    }
    if (kind == "command") {
      const auto sid = session_id();
      const auto command = parse_command(payload.value("command", ""));
      std::optional<Duration> reaction;
      if (payload.contains("reaction_ms")) reaction = ms_to_duration(payload.at("reaction_ms").get<double>());
      const auto ack = issue_command(sid, command, reaction);
      json result{{"phase", to_string(ack.phase)}};
      if (ack.record) result["record"] = record_to_json(*ack.record);
      return result;
    }
    if (kind == "mark_retry") {
      const auto rec = mark_retry(session_id(), payload.at("seq").get<std::uint64_t>());
      return json{{"record", record_to_json(rec)}};
    }
    if (kind == "submit_likert") {
      LikertResponse r;
      r.participant_id = payload.value("participant_id", "");
      r.block = payload.value("block", std::size_t{0});
      r.answers = payload.value("answers", std::map<std::string, int>{});
      submit_likert(session_id(), r);
      return json{{"accepted", true}};
    }
    if (kind == "get_summary") return get_summary(session_id());
    if (kind == "close_session") {
      close_session(session_id());
      return json{{"closed", true}};
    }
    if (kind == "poll_events") {
      const auto sid = session_id();
      const auto from = payload.value("from_seq", std::uint64_t{0});
      const auto timeout = std::chrono::milliseconds(payload.value("timeout_ms", 0));
      json events = json::array();
      for (const auto& ev : timeout.count() > 0 ? wait_events(sid, from, timeout) : events_since(sid, from)) {
        events.push_back(ev.to_json(sid));
      }
      return json{{"events", events}};
    }
    throw Error(ErrorKind::BadRequest, "unknown message kind '" + kind + "'");
  }

  std::filesystem::path log_dir_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 0;
};

}  // namespace haptstart
