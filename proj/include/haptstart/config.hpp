#pragma once

// Session configuration: parsing, defaults per study, validation and a stable
// content hash. The schema is documented in docs/config.md.

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "haptstart/athlete.hpp"
#include "haptstart/devices.hpp"
#include "haptstart/error.hpp"
#include "haptstart/harness.hpp"
#include "haptstart/sequencer.hpp"
#include "haptstart/time.hpp"

namespace haptstart {

using nlohmann::json;

inline constexpr int kConfigVersion = 1;

enum class SessionMode { simulated, live };

struct PlanParams {
  std::size_t trials_per_condition_per_block = 0;
  std::size_t blocks = 0;
  std::size_t practice_trials = 0;
};

struct AnalysisParams {
  bool exclude_outliers = true;
  double outlier_k_sigma = 3.0;
  double histogram_bin_ms = 10.0;
};

struct SessionConfig {
  int version = kConfigVersion;
  int study = 2;  // 1, 2, or 0 for a custom design
  SessionMode mode = SessionMode::simulated;
  std::optional<std::uint64_t> seed;
  ClockSource::Kind clock = ClockSource::Kind::simulated;
  std::string created_at = "1970-01-01T00:00:00Z";
  std::vector<StimulusDevice> devices;
  std::vector<Condition> conditions;
  std::vector<Participant> participants;
  PlanParams plan;
  SequenceConfig sequence;  // start_devices is filled per trial from the condition
  TrialSettings trial;
  std::vector<std::string> likert_questions;
  AnalysisParams analysis;

  std::vector<std::string> participant_ids() const {
    std::vector<std::string> ids;
    for (const auto& p : participants) ids.push_back(p.id);
    return ids;
  }

  DeviceRegistry make_registry() const {
    DeviceRegistry r;
    for (const auto& d : devices) r.add(d);
    return r;
  }

  SessionPlan make_plan() const {
    const auto ids = participant_ids();
    const auto s = seed.value_or(0);
    SessionPlan out;
    if (study == 1) {
      out = build_study1_plan(ids, s, conditions);
    } else if (study == 2) {
      out = build_study2_plan(ids, s, conditions);
    } else {
      out = build_plan(0, ids, conditions, plan.trials_per_condition_per_block, plan.blocks, s);
    }
    out.practice_trials = plan.practice_trials;
    return out;
  }

  void validate() const;
};

namespace detail {

inline Error config_error(const std::string& what) { return Error(ErrorKind::InvalidConfig, what); }

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw config_error(std::string("field '") + key + "': " + e.what());
  }
}

inline Duration ms_field(const json& j, const char* key, Duration fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw config_error(std::string("field '") + key + "' must be a number of ms");
  return ms_to_duration(j.at(key).get<double>());
}

inline json duration_ms(Duration d) {
  // Integral milliseconds serialize as integers, anything finer as a decimal.
  if (d.count() % 1000 == 0) return d.count() / 1000;
  return static_cast<double>(d.count()) / 1000.0;
}

inline LatencyModel latency_from_json(const json& j) {
  LatencyModel m;
  m.mean = Duration(get_or<std::int64_t>(j, "mean_us", 0));
  const auto jitter = get_or<std::string>(j, "jitter", "constant");
  if (jitter == "constant") {
    m.jitter = LatencyModel::Jitter::constant;
  } else if (jitter == "normal") {
    m.jitter = LatencyModel::Jitter::normal;
    m.sd = Duration(get_or<std::int64_t>(j, "sd_us", 0));
  } else {
    throw config_error("latency jitter must be 'constant' or 'normal'");
  }
  return m;
}

inline json latency_to_json(const LatencyModel& m) {
  json j{{"mean_us", m.mean.count()}, {"jitter", m.jitter == LatencyModel::Jitter::constant ? "constant" : "normal"}};
  if (m.jitter == LatencyModel::Jitter::normal) j["sd_us"] = m.sd.count();
  return j;
}

inline StimulusDevice device_from_json(const json& j) {
  StimulusDevice d;
  d.id = get_or<std::string>(j, "id", "");
  d.modality = parse_modality(get_or<std::string>(j, "modality", ""));
  if (j.contains("latency")) d.latency = latency_from_json(j.at("latency"));
  if (j.contains("interface")) {
    const auto& ji = j.at("interface");
    ContactInterfaceSpec spec;
    spec.stages = get_or<int>(ji, "stages", 2);
    spec.gap_mm = get_or<double>(ji, "gap_mm", 0.0);
    spec.stroke_mm = get_or<double>(ji, "stroke_mm", 3.0);
    if (ji.contains("contact_point")) spec.contact_point = parse_contact_point(ji.at("contact_point").get<std::string>());
    d.interface = spec;
  }
  if (j.contains("color_role")) d.color_role = parse_color_role(j.at("color_role").get<std::string>());
  return d;
}

inline json device_to_json(const StimulusDevice& d) {
  json j{{"id", d.id}, {"modality", to_string(d.modality)}, {"latency", latency_to_json(d.latency)}};
  if (d.interface) {
    json ji{{"stages", d.interface->stages}, {"gap_mm", d.interface->gap_mm}, {"stroke_mm", d.interface->stroke_mm}};
    if (d.interface->contact_point) ji["contact_point"] = to_string(*d.interface->contact_point);
    j["interface"] = ji;
  }
  if (d.color_role) j["color_role"] = to_string(*d.color_role);
  return j;
}

inline constexpr std::array<Modality, 4> kModalities = {Modality::auditory, Modality::visual_led,
                                                        Modality::haptic_push, Modality::haptic_vibration};

inline AthleteProfile profile_from_json(const json& j) {
  AthleteProfile p;
  p.base_mean = ms_field(j, "base_mean_ms", p.base_mean);
  p.base_sd = ms_field(j, "base_sd_ms", p.base_sd);
  p.base_tail_tau = ms_field(j, "base_tail_tau_ms", p.base_tail_tau);
  if (j.contains("offsets_ms")) {
    for (const auto& [k, v] : j.at("offsets_ms").items()) p.offsets[parse_modality(k)].mean = ms_to_duration(v.get<double>());
  }
  if (j.contains("offset_sd_ms")) {
    for (const auto& [k, v] : j.at("offset_sd_ms").items()) p.offsets[parse_modality(k)].sd = ms_to_duration(v.get<double>());
  }
  if (j.contains("blink")) {
    const auto& jb = j.at("blink");
    p.blink.rate_hz = get_or<double>(jb, "rate_hz", 0.0);
    p.blink.blackout = ms_field(jb, "blackout_ms", p.blink.blackout);
  }
  if (j.contains("run_time_s")) {
    const auto& rt = j.at("run_time_s");
    if (!rt.is_string()) throw config_error("run_time_s must be a decimal string such as \"10.80\"");
    p.run_time_s = Decimal::parse(rt.get<std::string>());
  }
  return p;
}

inline json profile_to_json(const AthleteProfile& p) {
  json offsets = json::object(), sds = json::object();
  for (auto m : kModalities) {
    const auto& o = p.offset(m);
    offsets[std::string(to_string(m))] = duration_ms(o.mean);
    sds[std::string(to_string(m))] = duration_ms(o.sd);
  }
  json j{{"base_mean_ms", duration_ms(p.base_mean)},
         {"base_sd_ms", duration_ms(p.base_sd)},
         {"base_tail_tau_ms", duration_ms(p.base_tail_tau)},
         {"offsets_ms", offsets},
         {"offset_sd_ms", sds},
         {"blink", {{"rate_hz", p.blink.rate_hz}, {"blackout_ms", duration_ms(p.blink.blackout)}}}};
  if (p.run_time_s) j["run_time_s"] = p.run_time_s->to_string();
  return j;
}

inline Participant participant_from_json(const json& j) {
  Participant p;
  p.id = get_or<std::string>(j, "id", "");
  if (j.contains("age")) p.age = j.at("age").get<int>();
  if (j.contains("hearing_level_db")) {
    const auto& h = j.at("hearing_level_db");
    p.hearing_level_db = h.is_string() ? h.get<std::string>() : h.dump();
  }
  if (j.contains("athletics_history_years")) p.athletics_history_years = j.at("athletics_history_years").get<double>();
  p.events = get_or<std::vector<std::string>>(j, "events", {});
  p.personal_bests = get_or<std::vector<std::string>>(j, "personal_bests", {});
  if (j.contains("profile")) p.profile = profile_from_json(j.at("profile"));
  return p;
}

inline json participant_to_json(const Participant& p) {
  json j{{"id", p.id}, {"events", p.events}, {"personal_bests", p.personal_bests}, {"profile", profile_to_json(p.profile)}};
  if (p.age) j["age"] = *p.age;
  if (p.hearing_level_db) j["hearing_level_db"] = *p.hearing_level_db;
  if (p.athletics_history_years) j["athletics_history_years"] = *p.athletics_history_years;
  return j;
}

}  // namespace detail

inline void SessionConfig::validate() const {
  if (version != kConfigVersion) throw detail::config_error("unsupported config version " + std::to_string(version));
  if (study < 0 || study > 2) throw detail::config_error("study must be 1, 2, or 0 (custom)");
  if (mode == SessionMode::simulated && !seed) throw detail::config_error("seed is mandatory in simulated mode");
  if (participants.empty()) throw detail::config_error("at least one participant is required");
  try {
    auto registry = make_registry();
    validate_conditions(conditions, registry);
    for (const auto& id : sequence.on_your_marks_devices) registry.get(id);
    for (const auto& id : sequence.set_devices) registry.get(id);
    for (const auto& p : participants) {
      if (p.id.empty()) throw detail::config_error("participant without id");
      p.profile.validate();
    }
    trial.foreperiod.validate();
    if (sequence.false_start_threshold.count() <= 0) throw detail::config_error("false_start_threshold_ms must be positive");
    if (trial.retry_probability < 0.0 || trial.retry_probability >= 1.0) {
      throw detail::config_error("retry_probability must be in [0, 1)");
    }
    if (trial.sensor.resolution.count() <= 0) throw detail::config_error("resolution_us must be positive");
    if (trial.marks_to_set.count() <= 0) throw detail::config_error("marks_to_set_ms must be positive");
    if (study == 1 && (plan.trials_per_condition_per_block != 10 || plan.blocks != 4 || conditions.size() != 7)) {
      throw detail::config_error("study 1 is 7 conditions x 10 trials x 4 blocks");
    }
    if (study == 2 && (plan.trials_per_condition_per_block != 5 || plan.blocks != 16 || conditions.size() != 2)) {
      throw detail::config_error("study 2 is 2 conditions x 5 trials x 16 blocks");
    }
    if (plan.trials_per_condition_per_block == 0 || plan.blocks == 0) throw detail::config_error("empty plan");
    make_plan();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidConfig) throw;
    throw detail::config_error(e.what());
  }
}

inline SessionConfig config_from_json(const json& j) {
  if (!j.is_object()) throw detail::config_error("config must be a JSON object");
  SessionConfig c;
  try {
    c.version = detail::get_or<int>(j, "version", kConfigVersion);
    c.study = detail::get_or<int>(j, "study", 2);
    const auto mode = detail::get_or<std::string>(j, "mode", "simulated");
    if (mode != "simulated" && mode != "live") throw detail::config_error("mode must be 'simulated' or 'live'");
    c.mode = mode == "simulated" ? SessionMode::simulated : SessionMode::live;
    if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
    const auto clock = detail::get_or<std::string>(j, "clock", c.mode == SessionMode::simulated ? "simulated" : "real");
    if (clock != "simulated" && clock != "real") throw detail::config_error("clock must be 'simulated' or 'real'");
    c.clock = clock == "simulated" ? ClockSource::Kind::simulated : ClockSource::Kind::real;
    c.created_at = detail::get_or<std::string>(j, "created_at", c.created_at);

    if (j.contains("devices")) {
      for (const auto& d : j.at("devices")) c.devices.push_back(detail::device_from_json(d));
    } else {
      c.devices = c.study == 1 ? study1_devices() : study2_devices();
    }
    if (j.contains("conditions")) {
      for (const auto& jc : j.at("conditions")) {
        Condition cond;
        cond.id = detail::get_or<std::string>(jc, "id", "");
        cond.device_id = detail::get_or<std::string>(jc, "device", "");
        if (jc.contains("contact_point")) cond.contact_point = parse_contact_point(jc.at("contact_point").get<std::string>());
        c.conditions.push_back(cond);
      }
    } else {
      c.conditions = c.study == 1 ? study1_conditions() : study2_conditions();
    }
    for (const auto& p : detail::get_or<json>(j, "participants", json::array())) {
      c.participants.push_back(detail::participant_from_json(p));
    }

    const json plan = detail::get_or<json>(j, "plan", json::object());
    const std::size_t def_trials = c.study == 1 ? 10 : 5, def_blocks = c.study == 1 ? 4 : 16;
    c.plan.trials_per_condition_per_block = detail::get_or<std::size_t>(plan, "trials_per_condition_per_block", def_trials);
    c.plan.blocks = detail::get_or<std::size_t>(plan, "blocks", def_blocks);
    c.plan.practice_trials = detail::get_or<std::size_t>(plan, "practice_trials", 0);

    const json seq = detail::get_or<json>(j, "sequence", json::object());
    const std::vector<std::string> def_marks = c.study == 2 ? std::vector<std::string>{"led-red"} : std::vector<std::string>{};
    const std::vector<std::string> def_set = c.study == 2 ? std::vector<std::string>{"led-yellow"} : std::vector<std::string>{};
    c.sequence.on_your_marks_devices = detail::get_or(seq, "on_your_marks", def_marks);
    c.sequence.set_devices = detail::get_or(seq, "set", def_set);
    c.sequence.start_devices = c.conditions.empty() ? std::vector<std::string>{} : std::vector<std::string>{c.conditions[0].device_id};
    c.sequence.false_start_threshold = detail::ms_field(seq, "false_start_threshold_ms", from_ms(100));
    c.sequence.min_set_hold = detail::ms_field(seq, "min_set_hold_ms", from_ms(0));
    c.trial.marks_to_set = detail::ms_field(seq, "marks_to_set_ms", from_ms(2000));
    c.trial.inter_trial = detail::ms_field(seq, "inter_trial_ms", from_ms(5000));
    if (seq.contains("foreperiod")) {
      c.trial.foreperiod.min = detail::ms_field(seq.at("foreperiod"), "min_ms", from_ms(2000));
      c.trial.foreperiod.max = detail::ms_field(seq.at("foreperiod"), "max_ms", from_ms(3000));
    }

    const json meas = detail::get_or<json>(j, "measurement", json::object());
    const auto sensor = detail::get_or<std::string>(meas, "sensor", c.study == 1 ? "button" : "force");
    if (sensor != "button" && sensor != "force") throw detail::config_error("sensor must be 'button' or 'force'");
    c.trial.sensor.kind = sensor == "button" ? SensorKind::button : SensorKind::force;
    c.trial.sensor.resolution = Duration(detail::get_or<std::int64_t>(meas, "resolution_us", 1000));
    if (meas.contains("onset")) {
      const auto& o = meas.at("onset");
      c.trial.sensor.onset.baseline_window_ms = detail::get_or<std::size_t>(o, "baseline_window_ms", 500);
      c.trial.sensor.onset.k_sigma = detail::get_or<double>(o, "k_sigma", 5.0);
      c.trial.sensor.onset.min_rise_n = detail::get_or<std::size_t>(o, "min_rise_n", 3);
    }
    if (meas.contains("kick")) {
      const auto& k = meas.at("kick");
      c.trial.sensor.kick.resting_n = detail::get_or<double>(k, "resting_n", 300.0);
      c.trial.sensor.kick.noise_sd_n = detail::get_or<double>(k, "noise_sd_n", 2.0);
      c.trial.sensor.kick.slope_n_per_ms = detail::get_or<double>(k, "slope_n_per_ms", 20.0);
    }
    c.trial.retry_probability = detail::get_or<double>(j, "retry_probability", 0.0);
    c.trial.rerun_false_starts = detail::get_or<bool>(j, "rerun_false_starts", false);

    const json likert = detail::get_or<json>(j, "likert", json::object());
    const std::vector<std::size_t> def_likert_blocks = c.study == 2 ? std::vector<std::size_t>{8, 16} : std::vector<std::size_t>{};
    c.trial.likert_blocks = detail::get_or(likert, "blocks", def_likert_blocks);
    const std::vector<std::string> def_questions =
        c.study == 2 ? std::vector<std::string>{"ease_of_start_led", "ease_of_start_push", "ease_of_recognition_led",
                                                "ease_of_recognition_push", "easier_to_recognize", "easier_to_start",
                                                "future_potential"}
                     : std::vector<std::string>{};
    c.likert_questions = detail::get_or(likert, "questions", def_questions);

    const json an = detail::get_or<json>(j, "analysis", json::object());
    c.analysis.exclude_outliers = detail::get_or<bool>(an, "exclude_outliers", c.study != 1);
    c.analysis.outlier_k_sigma = detail::get_or<double>(an, "outlier_k_sigma", 3.0);
    c.analysis.histogram_bin_ms = detail::get_or<double>(an, "histogram_bin_ms", 10.0);
  } catch (const json::exception& e) {
    throw detail::config_error(e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidConfig) throw;
    throw detail::config_error(e.what());
  }
  return c;
}

/// Normalized form: every default made explicit, keys sorted.
inline json config_to_json(const SessionConfig& c) {
  json devices = json::array(), conditions = json::array(), participants = json::array();
  for (const auto& d : c.devices) devices.push_back(detail::device_to_json(d));
  for (const auto& cond : c.conditions) {
    json jc{{"id", cond.id}, {"device", cond.device_id}};
    if (cond.contact_point) jc["contact_point"] = to_string(*cond.contact_point);
    conditions.push_back(jc);
  }
  for (const auto& p : c.participants) participants.push_back(detail::participant_to_json(p));
  json j{
      {"version", c.version},
      {"study", c.study},
      {"mode", c.mode == SessionMode::simulated ? "simulated" : "live"},
      {"clock", c.clock == ClockSource::Kind::simulated ? "simulated" : "real"},
      {"created_at", c.created_at},
      {"devices", devices},
      {"conditions", conditions},
      {"participants", participants},
      {"plan",
       {{"trials_per_condition_per_block", c.plan.trials_per_condition_per_block},
        {"blocks", c.plan.blocks},
        {"practice_trials", c.plan.practice_trials}}},
      {"sequence",
       {{"on_your_marks", c.sequence.on_your_marks_devices},
        {"set", c.sequence.set_devices},
        {"false_start_threshold_ms", detail::duration_ms(c.sequence.false_start_threshold)},
        {"min_set_hold_ms", detail::duration_ms(c.sequence.min_set_hold)},
        {"marks_to_set_ms", detail::duration_ms(c.trial.marks_to_set)},
        {"inter_trial_ms", detail::duration_ms(c.trial.inter_trial)},
        {"foreperiod",
         {{"min_ms", detail::duration_ms(c.trial.foreperiod.min)}, {"max_ms", detail::duration_ms(c.trial.foreperiod.max)}}}}},
      {"measurement",
       {{"sensor", c.trial.sensor.kind == SensorKind::button ? "button" : "force"},
        {"resolution_us", c.trial.sensor.resolution.count()},
        {"onset",
         {{"baseline_window_ms", c.trial.sensor.onset.baseline_window_ms},
          {"k_sigma", c.trial.sensor.onset.k_sigma},
          {"min_rise_n", c.trial.sensor.onset.min_rise_n}}},
        {"kick",
         {{"resting_n", c.trial.sensor.kick.resting_n},
          {"noise_sd_n", c.trial.sensor.kick.noise_sd_n},
          {"slope_n_per_ms", c.trial.sensor.kick.slope_n_per_ms}}}}},
      {"retry_probability", c.trial.retry_probability},
      {"rerun_false_starts", c.trial.rerun_false_starts},
      {"likert", {{"blocks", c.trial.likert_blocks}, {"questions", c.likert_questions}}},
      {"analysis",
       {{"exclude_outliers", c.analysis.exclude_outliers},
        {"outlier_k_sigma", c.analysis.outlier_k_sigma},
        {"histogram_bin_ms", c.analysis.histogram_bin_ms}}},
  };
  if (c.seed) j["seed"] = *c.seed;
  return j;
}

/// FNV-1a 64 over the normalized JSON, as 16 hex digits.
inline std::string config_hash(const SessionConfig& c) {
  const auto text = config_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = hex[h & 0xF];
    h >>= 4;
  }
  return out;
}

inline SessionConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  auto c = config_from_json(j);
  c.validate();
  return c;
}

inline SessionConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoFailure, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace haptstart
