#pragma once

// Append-only session logs (one JSON object per line) and CSV exports.
//
// Line 1 is the header carrying the normalized config and its hash; every
// later line repeats the hash in "cfg". Times are integer microseconds.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "haptstart/config.hpp"
#include "haptstart/error.hpp"
#include "haptstart/harness.hpp"
#include "haptstart/stats/likert.hpp"

namespace haptstart {

inline constexpr int kLogVersion = 1;
inline constexpr const char* kLogFormat = "haptstart-log";

struct LikertResponse {
  std::string participant_id;
  std::size_t block = 0;  // 1-based, as announced by block_complete
  std::map<std::string, int> answers;

  friend bool operator==(const LikertResponse&, const LikertResponse&) = default;

  void validate() const {
    if (participant_id.empty()) throw Error(ErrorKind::SchemaViolation, "likert response without participant");
    if (block == 0) throw Error(ErrorKind::SchemaViolation, "likert block is 1-based");
    for (const auto& [q, v] : answers) {
      if (q.empty()) throw Error(ErrorKind::SchemaViolation, "likert question id is empty");
      stats::validate_likert(v);
    }
  }
};

// ---------------------------------------------------------------------------
// Record <-> JSON

inline json record_to_json(const TrialRecord& r) {
  json t{{"marks_us", r.times.marks.time_since_epoch().count()},
         {"set_us", r.times.set.time_since_epoch().count()},
         {"start_us", r.times.start.time_since_epoch().count()}};
  if (r.times.stimulus_onset) t["onset_us"] = r.times.stimulus_onset->time_since_epoch().count();
  if (r.times.reaction) t["reaction_us"] = r.times.reaction->time_since_epoch().count();
  json j{{"type", "trial"},
         {"seq", r.seq},
         {"participant_id", r.participant_id},
         {"condition_id", r.condition_id},
         {"block", r.block_index},
         {"trial", r.trial_index},
         {"ordinal", r.plan_ordinal},
         {"attempt", r.attempt},
         {"practice", r.practice},
         {"foreperiod_us", r.foreperiod.count()},
         {"outcome", to_string(r.outcome)},
         {"t", t}};
  if (r.rt_raw) j["rt_raw_us"] = r.rt_raw->count();
  if (r.rt_compensated) j["rt_compensated_us"] = r.rt_compensated->count();
  return j;
}

inline TrialRecord record_from_json(const json& j) {
  TrialRecord r;
  try {
    r.seq = j.at("seq").get<std::uint64_t>();
    r.participant_id = j.at("participant_id").get<std::string>();
    r.condition_id = j.at("condition_id").get<std::string>();
    r.block_index = j.at("block").get<std::size_t>();
    r.trial_index = j.at("trial").get<std::size_t>();
    r.plan_ordinal = j.at("ordinal").get<std::size_t>();
    r.attempt = j.at("attempt").get<std::size_t>();
    r.practice = j.at("practice").get<bool>();
    r.foreperiod = Duration(j.at("foreperiod_us").get<std::int64_t>());
    r.outcome = parse_outcome(j.at("outcome").get<std::string>());
    if (j.contains("rt_raw_us")) r.rt_raw = Duration(j.at("rt_raw_us").get<std::int64_t>());
    if (j.contains("rt_compensated_us")) r.rt_compensated = Duration(j.at("rt_compensated_us").get<std::int64_t>());
    const auto& t = j.at("t");
    r.times.marks = at_us(t.at("marks_us").get<std::int64_t>());
    r.times.set = at_us(t.at("set_us").get<std::int64_t>());
    r.times.start = at_us(t.at("start_us").get<std::int64_t>());
    if (t.contains("onset_us")) r.times.stimulus_onset = at_us(t.at("onset_us").get<std::int64_t>());
    if (t.contains("reaction_us")) r.times.reaction = at_us(t.at("reaction_us").get<std::int64_t>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, std::string("trial record: ") + e.what());
  }
  r.validate();
  return r;
}

inline json likert_to_json(const LikertResponse& l) {
  return json{{"type", "likert"}, {"participant_id", l.participant_id}, {"block", l.block}, {"answers", l.answers}};
}

inline LikertResponse likert_from_json(const json& j) {
  LikertResponse l;
  try {
    l.participant_id = j.at("participant_id").get<std::string>();
    l.block = j.at("block").get<std::size_t>();
    l.answers = j.at("answers").get<std::map<std::string, int>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, std::string("likert line: ") + e.what());
  }
  l.validate();
  return l;
}

// ---------------------------------------------------------------------------
// Writing

/// Single writer over one log file. Every line is flushed as it is written.
class LogWriter {
 public:
  LogWriter(const std::string& path, const SessionConfig& config)
      : path_(path), hash_(haptstart::config_hash(config)), out_(path, std::ios::out | std::ios::trunc) {
    if (!out_) throw Error(ErrorKind::IoFailure, "cannot open log '" + path + "' for writing");
    json header{{"type", "header"},
                {"format", kLogFormat},
                {"version", kLogVersion},
                {"config_hash", hash_},
                {"created_at", config.created_at},
                {"config", config_to_json(config)}};
    write_line(header);
  }

  const std::string& path() const { return path_; }
  const std::string& config_hash() const { return hash_; }
  std::size_t lines() const { return lines_; }

  /// Returns the record's position (its seq) in the log.
  std::uint64_t write_record(const TrialRecord& record) {
    record.validate();
    auto j = record_to_json(record);
    j["cfg"] = hash_;
    write_line(j);
    return record.seq;
  }

  void write_likert(const LikertResponse& response) {
    response.validate();
    auto j = likert_to_json(response);
    j["cfg"] = hash_;
    write_line(j);
  }

  /// Annotation: the trial with this seq was marked as a retry by the operator.
  void write_retry(std::uint64_t seq) { write_line(json{{"type", "retry"}, {"seq", seq}, {"cfg", hash_}}); }

  void flush() { out_.flush(); }

 private:
  void write_line(const json& j) {
    out_ << j.dump() << '\n';
    out_.flush();
    if (!out_) throw Error(ErrorKind::IoFailure, "write to '" + path_ + "' failed");
    ++lines_;
  }

  std::string path_;
  std::string hash_;
  std::ofstream out_;
  std::size_t lines_ = 0;
};

// ---------------------------------------------------------------------------
// Reading

struct SessionLog {
  json header;
  SessionConfig config;
  std::string config_hash;
  std::vector<TrialRecord> records;  // operator retries already applied
  std::vector<LikertResponse> likert;
  std::vector<std::uint64_t> retry_marks;
};

inline SessionLog parse_log(std::istream& in) {
  SessionLog log;
  std::string line;
  std::size_t line_no = 0;
  std::map<std::uint64_t, std::size_t> by_seq;
  while (std::getline(in, line)) {
    ++line_no;
    const bool last = in.peek() == std::char_traits<char>::eof();
    if (line.empty() && last) break;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorruptLineError(line_no, e.what());
    }
    try {
      if (line_no == 1) {
        if (j.value("type", "") != "header" || j.value("format", "") != kLogFormat) {
          throw CorruptLineError(line_no, "missing log header");
        }
        if (j.value("version", 0) != kLogVersion) throw CorruptLineError(line_no, "unsupported log version");
        log.header = j;
        log.config = config_from_json(j.at("config"));
        log.config.validate();
        log.config_hash = j.at("config_hash").get<std::string>();
        if (log.config_hash != config_hash(log.config)) throw CorruptLineError(line_no, "config hash mismatch");
        continue;
      }
      if (j.value("cfg", "") != log.config_hash) throw CorruptLineError(line_no, "line belongs to another config");
      const auto type = j.value("type", "");
      if (type == "trial") {
        auto rec = record_from_json(j);
        if (by_seq.count(rec.seq)) throw CorruptLineError(line_no, "duplicate seq");
        by_seq[rec.seq] = log.records.size();
        log.records.push_back(std::move(rec));
      } else if (type == "likert") {
        log.likert.push_back(likert_from_json(j));
      } else if (type == "retry") {
        const auto seq = j.at("seq").get<std::uint64_t>();
        auto it = by_seq.find(seq);
        if (it == by_seq.end()) throw CorruptLineError(line_no, "retry refers to unknown seq");
        auto& rec = log.records[it->second];
        rec.outcome = TrialOutcome::retry;
        rec.rt_raw.reset();
        rec.rt_compensated.reset();
        log.retry_marks.push_back(seq);
      } else {
        throw CorruptLineError(line_no, "unknown line type '" + type + "'");
      }
    } catch (const CorruptLineError&) {
      throw;
    } catch (const std::exception& e) {
      throw CorruptLineError(line_no, e.what());
    }
  }
  if (line_no == 0) throw CorruptLineError(1, "empty file, missing log header");
  return log;
}

inline SessionLog read_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open log '" + path + "'");
  return parse_log(in);
}

// ---------------------------------------------------------------------------
// CSV

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// RFC 4180 text with CRLF line endings.
inline std::string to_csv(const Table& t) {
  std::string out;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += csv_field(row[i]);
    }
    out += "\r\n";
  };
  emit(t.header);
  for (const auto& r : t.rows) emit(r);
  return out;
}

/// Microseconds as a millisecond string with three decimals.
inline std::string format_ms(Duration d) { return Decimal{d.count(), 3}.to_string(); }

enum class ExportKind { rt_by_condition, histogram, likert };

/// One row per analyzed trial (outcome valid): condition and measured RT.
inline Table export_rt_by_condition(const std::vector<TrialRecord>& records) {
  Table t{{"condition", "rt_ms"}, {}};
  for (const auto& r : records) {
    if (r.outcome != TrialOutcome::valid || r.practice) continue;
    t.rows.push_back({r.condition_id, format_ms(*r.rt_raw)});
  }
  return t;
}

/// Per-condition RT histogram over contiguous bins of `bin_ms`.
inline Table export_histogram(const std::vector<TrialRecord>& records, double bin_ms) {
  Table t{{"condition", "bin_start_ms", "bin_end_ms", "count"}, {}};
  const auto width = ms_to_duration(bin_ms).count();
  if (width <= 0) throw Error(ErrorKind::InvalidRange, "histogram bin must be positive");
  std::map<std::string, std::map<std::int64_t, std::size_t>> bins;
  std::vector<std::string> order;
  for (const auto& r : records) {
    if (r.outcome != TrialOutcome::valid || r.practice) continue;
    if (!bins.count(r.condition_id)) order.push_back(r.condition_id);
    ++bins[r.condition_id][r.rt_raw->count() / width];
  }
  for (const auto& cond : order) {
    const auto& b = bins[cond];
    for (auto k = b.begin()->first; k <= b.rbegin()->first; ++k) {
      auto it = b.find(k);
      t.rows.push_back({cond, format_ms(Duration(k * width)), format_ms(Duration((k + 1) * width)),
                        std::to_string(it == b.end() ? 0 : it->second)});
    }
  }
  return t;
}

/// Wide table: one row per participant, one column per question x block.
inline Table export_likert(const std::vector<LikertResponse>& responses, const std::vector<std::string>& questions,
                           const std::vector<std::size_t>& blocks) {
  Table t;
  t.header.push_back("participant_id");
  for (const auto& q : questions) {
    for (auto b : blocks) t.header.push_back(q + "@" + std::to_string(b));
  }
  std::vector<std::string> participants;
  std::map<std::string, std::map<std::string, int>> cells;
  for (const auto& r : responses) {
    if (!cells.count(r.participant_id)) participants.push_back(r.participant_id);
    auto& row = cells[r.participant_id];
    for (const auto& [q, v] : r.answers) row[q + "@" + std::to_string(r.block)] = v;
  }
  for (const auto& p : participants) {
    std::vector<std::string> row{p};
    for (std::size_t i = 1; i < t.header.size(); ++i) {
      auto it = cells[p].find(t.header[i]);
      row.push_back(it == cells[p].end() ? "" : std::to_string(it->second));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Table export_csv(const SessionLog& log, ExportKind kind) {
  switch (kind) {
    case ExportKind::rt_by_condition: return export_rt_by_condition(log.records);
    case ExportKind::histogram: return export_histogram(log.records, log.config.analysis.histogram_bin_ms);
    case ExportKind::likert: return export_likert(log.likert, log.config.likert_questions, log.config.trial.likert_blocks);
  }
  return {};
}

}  // namespace haptstart
