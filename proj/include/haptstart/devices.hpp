#pragma once

// Stimulus channels, their actuation latency and the reaction sensors.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "haptstart/error.hpp"
#include "haptstart/time.hpp"

namespace haptstart {

enum class Modality { auditory, visual_led, haptic_push, haptic_vibration };

constexpr std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::auditory: return "auditory";
    case Modality::visual_led: return "visual-led";
    case Modality::haptic_push: return "haptic-push";
    case Modality::haptic_vibration: return "haptic-vibration";
  }
  return "?";
}

inline Modality parse_modality(std::string_view s) {
  if (s == "auditory") return Modality::auditory;
  if (s == "visual-led") return Modality::visual_led;
  if (s == "haptic-push") return Modality::haptic_push;
  if (s == "haptic-vibration") return Modality::haptic_vibration;
  throw Error(ErrorKind::SchemaViolation, "unknown modality '" + std::string(s) + "'");
}

constexpr bool is_haptic(Modality m) { return m == Modality::haptic_push || m == Modality::haptic_vibration; }

enum class ContactPoint { finger_pad, first_joint };

constexpr std::string_view to_string(ContactPoint c) {
  return c == ContactPoint::finger_pad ? "finger-pad" : "first-joint";
}

inline ContactPoint parse_contact_point(std::string_view s) {
  if (s == "finger-pad") return ContactPoint::finger_pad;
  if (s == "first-joint") return ContactPoint::first_joint;
  throw Error(ErrorKind::SchemaViolation, "unknown contact point '" + std::string(s) + "'");
}

enum class ColorRole { red, yellow, start };

constexpr std::string_view to_string(ColorRole c) {
  switch (c) {
    case ColorRole::red: return "red";
    case ColorRole::yellow: return "yellow";
    case ColorRole::start: return "start";
  }
  return "?";
}

inline ColorRole parse_color_role(std::string_view s) {
  if (s == "red") return ColorRole::red;
  if (s == "yellow") return ColorRole::yellow;
  if (s == "start") return ColorRole::start;
  throw Error(ErrorKind::SchemaViolation, "unknown color role '" + std::string(s) + "'");
}

/// Plate geometry of a push-type haptic device. Metadata only.
struct ContactInterfaceSpec {
  int stages = 1;
  double gap_mm = 0.0;
  double stroke_mm = 3.0;
  std::optional<ContactPoint> contact_point;

  void validate() const {
    if (stages != 1 && stages != 2) throw Error(ErrorKind::SchemaViolation, "interface stages must be 1 or 2");
    if (gap_mm != 0.0 && gap_mm != 2.0 && gap_mm != 4.0) {
      throw Error(ErrorKind::SchemaViolation, "interface gap must be 0, 2 or 4 mm");
    }
    if (stroke_mm != 3.0) throw Error(ErrorKind::SchemaViolation, "solenoid stroke is 3 mm");
  }
};

struct LatencyModel {
  enum class Jitter { constant, normal };

  Duration mean{};
  Jitter jitter = Jitter::constant;
  Duration sd{};

  static LatencyModel constant(Duration mean) { return LatencyModel{mean, Jitter::constant, Duration{}}; }
  static LatencyModel normal(Duration mean, Duration sd) { return LatencyModel{mean, Jitter::normal, sd}; }

  bool is_constant() const { return jitter == Jitter::constant || sd.count() == 0; }

  void validate() const {
    if (mean.count() < 0) throw Error(ErrorKind::SchemaViolation, "latency mean must be non-negative");
    if (sd.count() < 0) throw Error(ErrorKind::SchemaViolation, "latency sd must be non-negative");
  }

  /// Normal jitter is truncated at zero by redrawing.
  Duration sample(Rng& rng) const {
    if (is_constant()) return mean;
    std::normal_distribution<double> dist(static_cast<double>(mean.count()), static_cast<double>(sd.count()));
    for (;;) {
      double v = dist(rng);
      if (v >= 0.0) return Duration(std::llround(v));
    }
  }
};

/// Solenoid start-up time: only the 8.7 ms mean is known.
inline LatencyModel solenoid_latency() { return LatencyModel::constant(Duration(8700)); }

/// LED onset is a few microseconds, below the 1 ms grid.
inline LatencyModel led_latency() { return LatencyModel::constant(Duration(0)); }

inline DelayCompliance check_start_system_delay(const LatencyModel& latency) {
  return check_start_system_delay(latency.mean, latency.is_constant());
}

struct StimulusDevice {
  std::string id;
  Modality modality = Modality::visual_led;
  LatencyModel latency;
  std::optional<ContactInterfaceSpec> interface;
  std::optional<ColorRole> color_role;

  void validate() const {
    if (id.empty()) throw Error(ErrorKind::SchemaViolation, "device id is empty");
    latency.validate();
    if (color_role && modality != Modality::visual_led) {
      throw Error(ErrorKind::SchemaViolation, "device '" + id + "': color_role is only valid on visual-led");
    }
    if (interface) {
      if (!is_haptic(modality)) {
        throw Error(ErrorKind::SchemaViolation, "device '" + id + "': contact interface on a non-haptic device");
      }
      interface->validate();
    }
  }
};

struct StimulusEvent {
  std::string device_id;
  Timestamp commanded_at;
  Timestamp physical_onset;
};

/// Session-scoped set of stimulus devices plus the log of everything fired.
class DeviceRegistry {
 public:
  void add(StimulusDevice device) {
    device.validate();
    if (devices_.count(device.id)) throw Error(ErrorKind::DuplicateDevice, "device '" + device.id + "' already registered");
    auto id = device.id;
    devices_.emplace(std::move(id), std::move(device));
  }

  const StimulusDevice& get(std::string_view id) const {
    auto it = devices_.find(std::string(id));
    if (it == devices_.end()) throw Error(ErrorKind::UnknownDevice, "no device '" + std::string(id) + "'");
    return it->second;
  }

  bool contains(std::string_view id) const { return devices_.count(std::string(id)) != 0; }

  StimulusEvent fire(std::string_view id, Timestamp t, Rng& rng) {
    const auto& device = get(id);
    StimulusEvent ev{device.id, t, t + device.latency.sample(rng)};
    fired_.push_back(ev);
    return ev;
  }

  const std::vector<StimulusEvent>& fired() const { return fired_; }
  const std::map<std::string, StimulusDevice, std::less<>>& devices() const { return devices_; }

 private:
  std::map<std::string, StimulusDevice, std::less<>> devices_;
  std::vector<StimulusEvent> fired_;
};

/// Registry-free form used by tests and one-off calls.
inline StimulusEvent fire_stimulus(const StimulusDevice& device, Timestamp t, Rng& rng) {
  return StimulusEvent{device.id, t, t + device.latency.sample(rng)};
}

/// Raw RT from the commanded start to the press; compensation happens later.
inline Duration detect_button_press(Timestamp press_time, const StimulusEvent& start_event) {
  if (press_time < start_event.commanded_at) {
    throw Error(ErrorKind::PressBeforeStart, "button pressed before the start command");
  }
  return press_time - start_event.commanded_at;
}

/// Force samples at a fixed 1 ms period starting at t0.
struct ForceTrace {
  std::vector<double> samples;
  Timestamp t0{};

  static constexpr Duration period = from_ms(1);

  Timestamp time_of(std::size_t index) const { return t0 + period * static_cast<std::int64_t>(index); }
};

struct OnsetParams {
  std::size_t baseline_window_ms = 500;
  double k_sigma = 5.0;
  std::size_t min_rise_n = 3;
};

/// First sample after the baseline window that exceeds baseline mean + k * sd
/// and stays above it for `min_rise_n` consecutive samples. The baseline sd is
/// the sample (n - 1) standard deviation of the leading window.
inline Timestamp detect_force_onset(const ForceTrace& trace, const OnsetParams& params) {
  const auto& x = trace.samples;
  if (params.baseline_window_ms < 2 || x.size() <= params.baseline_window_ms) {
    throw Error(ErrorKind::TraceTooShort, "trace has " + std::to_string(x.size()) +
                                              " samples, baseline window needs more than " +
                                              std::to_string(params.baseline_window_ms));
  }
  if (params.min_rise_n == 0) throw Error(ErrorKind::InvalidRange, "min_rise_n must be positive");
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(ErrorKind::SchemaViolation, "force trace has a non-finite sample");
  }
  const std::size_t w = params.baseline_window_ms;
  double mean = 0.0;
  for (std::size_t i = 0; i < w; ++i) mean += x[i];
  mean /= static_cast<double>(w);
  double ss = 0.0;
  for (std::size_t i = 0; i < w; ++i) ss += (x[i] - mean) * (x[i] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(w - 1));
  const double threshold = mean + params.k_sigma * sd;

  std::size_t run = 0;
  for (std::size_t i = w; i < x.size(); ++i) {
    if (x[i] > threshold) {
      if (++run == params.min_rise_n) return trace.time_of(i + 1 - run);
    } else {
      run = 0;
    }
  }
  throw Error(ErrorKind::NoOnset, "force never rose above baseline threshold");
}

/// Synthetic load-cell trace for simulated crouch starts: gaussian noise around
/// a resting load, then a linear force rise beginning at `kick_at`.
struct KickTraceShape {
  double resting_n = 300.0;
  double noise_sd_n = 2.0;
  double slope_n_per_ms = 20.0;
};

inline ForceTrace simulate_force_trace(Timestamp t0, std::size_t length_ms, Timestamp kick_at,
                                       const KickTraceShape& shape, Rng& rng) {
  ForceTrace trace;
  trace.t0 = t0;
  trace.samples.resize(length_ms);
  std::normal_distribution<double> noise(0.0, shape.noise_sd_n > 0 ? shape.noise_sd_n : 1.0);
  for (std::size_t i = 0; i < length_ms; ++i) {
    const double t_ms = to_ms(trace.time_of(i) - kick_at);
    double v = shape.resting_n;
    if (t_ms > 0.0) v += shape.slope_n_per_ms * t_ms;
    if (shape.noise_sd_n > 0) v += noise(rng);
    trace.samples[i] = v;
  }
  return trace;
}

}  // namespace haptstart
