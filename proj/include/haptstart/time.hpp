#pragma once

// Session timeline, foreperiod sampling, latency compensation and official
// time rounding.

#include <chrono>
#include <cmath>
#include <compare>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "haptstart/error.hpp"

namespace haptstart {

/// Engine used everywhere a seeded random source is injected.
using Rng = std::mt19937_64;

/// Durations are carried in integer microseconds. Protocol quantities
/// (foreperiods, measured RTs) live on the 1 ms grid; device latencies such
/// as 8.7 ms need the finer unit.
using Duration = std::chrono::microseconds;

/// Clock tag for the session timeline. Time zero is the session epoch.
struct SessionClock {
  using duration = Duration;
  using rep = duration::rep;
  using period = duration::period;
  using time_point = std::chrono::time_point<SessionClock, duration>;
  static constexpr bool is_steady = true;
};

using Timestamp = SessionClock::time_point;

constexpr Duration from_ms(std::int64_t ms) { return std::chrono::milliseconds(ms); }
constexpr Timestamp at_ms(std::int64_t ms) { return Timestamp(from_ms(ms)); }
constexpr Timestamp at_us(std::int64_t us) { return Timestamp(Duration(us)); }

/// Milliseconds as a double, for reporting and statistics.
constexpr double to_ms(Duration d) { return static_cast<double>(d.count()) / 1000.0; }
constexpr double to_ms(Timestamp t) { return to_ms(t.time_since_epoch()); }

/// Rounds a (possibly fractional) millisecond value to the nearest microsecond.
inline Duration ms_to_duration(double ms) {
  return Duration(static_cast<std::int64_t>(std::llround(ms * 1000.0)));
}

/// Truncates to the measurement grid (`resolution` ticks counted since `d = 0`).
constexpr Duration quantize_down(Duration d, Duration resolution) {
  if (resolution.count() <= 1) return d;
  auto ticks = d.count() / resolution.count();
  if (d.count() < 0 && d.count() % resolution.count() != 0) --ticks;
  return Duration(ticks * resolution.count());
}

struct ForeperiodRange {
  Duration min = from_ms(2000);
  Duration max = from_ms(3000);

  void validate() const {
    if (min >= max) throw Error(ErrorKind::InvalidRange, "foreperiod min must be below max");
    if (min.count() < 0) throw Error(ErrorKind::InvalidRange, "foreperiod must be non-negative");
  }
};

/// Uniform integer-millisecond draw in [min, max], both ends inclusive.
inline Duration sample_foreperiod(Rng& rng, const ForeperiodRange& range) {
  range.validate();
  const auto lo = std::chrono::duration_cast<std::chrono::milliseconds>(range.min).count();
  const auto hi = std::chrono::duration_cast<std::chrono::milliseconds>(range.max).count();
  std::uniform_int_distribution<std::int64_t> dist(lo, hi);
  return from_ms(dist(rng));
}

/// Removes a known actuation latency from a raw reaction time.
inline Duration compensate_latency(Duration measured_rt, Duration device_latency) {
  if (device_latency.count() < 0) {
    throw Error(ErrorKind::NegativeResult, "device latency is negative");
  }
  if (device_latency > measured_rt) {
    throw Error(ErrorKind::NegativeResult,
                "device latency " + std::to_string(device_latency.count()) +
                    " us exceeds measured RT " + std::to_string(measured_rt.count()) + " us");
  }
  return measured_rt - device_latency;
}

/// Session clock: either steady wall time since construction, or a simulated
/// timeline that only moves through `advance`/`advance_to`.
class ClockSource {
 public:
  enum class Kind { real, simulated };

  static ClockSource simulated(Timestamp start = Timestamp{}) { return ClockSource(Kind::simulated, start); }
  static ClockSource real() { return ClockSource(Kind::real, Timestamp{}); }

  Kind kind() const { return kind_; }
  bool is_simulated() const { return kind_ == Kind::simulated; }

  Timestamp now() {
    if (kind_ == Kind::simulated) return current_;
    auto elapsed = std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now() - epoch_);
    Timestamp t(elapsed);
    if (t < current_) t = current_;
    current_ = t;
    return t;
  }

  void advance(Duration step) {
    if (kind_ != Kind::simulated) throw Error(ErrorKind::IllegalTransition, "cannot step a real clock");
    if (step.count() < 0) throw Error(ErrorKind::InvalidRange, "clock step must be non-negative");
    current_ += step;
  }

  void advance_to(Timestamp t) {
    if (kind_ != Kind::simulated) throw Error(ErrorKind::IllegalTransition, "cannot step a real clock");
    if (t < current_) throw Error(ErrorKind::InvalidRange, "simulated clock cannot move backwards");
    current_ = t;
  }

 private:
  ClockSource(Kind kind, Timestamp start)
      : kind_(kind), current_(start), epoch_(std::chrono::steady_clock::now()) {}

  Kind kind_;
  Timestamp current_;
  std::chrono::steady_clock::time_point epoch_;
};

/// Exact decimal number `units * 10^-scale`. Used for official times so that
/// rounding never touches binary floating point.
struct Decimal {
  std::int64_t units = 0;
  int scale = 0;

  static Decimal parse(std::string_view text);
  static Decimal from_duration(Duration d) { return Decimal{d.count(), 6}; }

  Decimal rescaled(int new_scale) const {
    if (new_scale < scale) throw Error(ErrorKind::InvalidRange, "rescale would lose digits");
    Decimal out{units, scale};
    while (out.scale < new_scale) {
      out.units *= 10;
      ++out.scale;
    }
    return out;
  }

  double to_double() const {
    double v = static_cast<double>(units);
    for (int i = 0; i < scale; ++i) v /= 10.0;
    return v;
  }

  /// Plain seconds with exactly `scale` fractional digits.
  std::string to_string() const {
    std::string sign = units < 0 ? "-" : "";
    auto mag = units < 0 ? -units : units;
    std::int64_t pow = 1;
    for (int i = 0; i < scale; ++i) pow *= 10;
    std::string out = sign + std::to_string(mag / pow);
    if (scale > 0) {
      std::string frac = std::to_string(mag % pow);
      out += "." + std::string(static_cast<std::size_t>(scale) - frac.size(), '0') + frac;
    }
    return out;
  }

  /// Race-clock notation, e.g. 1577.54 -> "26:17.54"; under a minute stays "10.83".
  std::string to_race_time() const;

  friend Decimal operator+(Decimal a, Decimal b) {
    int s = a.scale > b.scale ? a.scale : b.scale;
    a = a.rescaled(s);
    b = b.rescaled(s);
    return Decimal{a.units + b.units, s};
  }
  friend Decimal operator-(Decimal a, Decimal b) { return a + Decimal{-b.units, b.scale}; }

  friend std::strong_ordering operator<=>(Decimal a, Decimal b) {
    int s = a.scale > b.scale ? a.scale : b.scale;
    return a.rescaled(s).units <=> b.rescaled(s).units;
  }
  friend bool operator==(Decimal a, Decimal b) { return (a <=> b) == std::strong_ordering::equal; }
};

inline Decimal Decimal::parse(std::string_view text) {
  auto fail = [&] { return Error(ErrorKind::InvalidRange, "not a decimal time: '" + std::string(text) + "'"); };
  if (text.empty()) throw fail();
  bool negative = false;
  if (text.front() == '-') {
    negative = true;
    text.remove_prefix(1);
  }
  // Optional h:mm: / mm: prefixes.
  std::int64_t whole_prefix_seconds = 0;
  while (true) {
    auto colon = text.find(':');
    if (colon == std::string_view::npos) break;
    auto part = text.substr(0, colon);
    if (part.empty()) throw fail();
    std::int64_t v = 0;
    for (char c : part) {
      if (c < '0' || c > '9') throw fail();
      v = v * 10 + (c - '0');
    }
    whole_prefix_seconds = (whole_prefix_seconds + v) * 60;
    text.remove_prefix(colon + 1);
  }
  Decimal d;
  bool seen_point = false;
  bool seen_digit = false;
  for (char c : text) {
    if (c == '.') {
      if (seen_point) throw fail();
      seen_point = true;
    } else if (c >= '0' && c <= '9') {
      d.units = d.units * 10 + (c - '0');
      if (seen_point) ++d.scale;
      seen_digit = true;
    } else {
      throw fail();
    }
  }
  if (!seen_digit || d.scale > 12) throw fail();
  std::int64_t pow = 1;
  for (int i = 0; i < d.scale; ++i) pow *= 10;
  d.units += whole_prefix_seconds * pow;
  if (negative) d.units = -d.units;
  return d;
}

inline std::string Decimal::to_race_time() const {
  std::int64_t pow = 1;
  for (int i = 0; i < scale; ++i) pow *= 10;
  if (units < 0 || units / pow < 60) return to_string();
  const auto whole = units / pow;
  Decimal seconds{(whole % 60) * pow + units % pow, scale};
  std::string sec = seconds.to_string();
  if (whole % 60 < 10) sec = "0" + sec;
  const auto minutes = whole / 60;
  if (minutes < 60) return std::to_string(minutes) + ":" + sec;
  std::string mm = std::to_string(minutes % 60);
  if (mm.size() < 2) mm = "0" + mm;
  return std::to_string(minutes / 60) + ":" + mm + ":" + sec;
}

/// Official time on the 0.01 s grid: exact hundredths are kept, anything else
/// goes up to the next hundredth.
inline Decimal round_photo_finish(Decimal time_s) {
  if (time_s.units <= 0) throw Error(ErrorKind::InvalidRange, "race time must be positive");
  if (time_s.scale <= 2) return time_s.rescaled(2);
  std::int64_t divisor = 1;
  for (int i = 2; i < time_s.scale; ++i) divisor *= 10;
  auto hundredths = time_s.units / divisor;
  if (time_s.units % divisor != 0) ++hundredths;
  return Decimal{hundredths, 2};
}

/// Outcome of checking a start-signal channel against the timing-system rule:
/// the delay must be constant and at most 1 ms.
struct DelayCompliance {
  bool compliant = false;
  bool constant = false;
  /// 1 ms minus the mean delay; negative when the mean is over the limit.
  Duration margin{};
};

inline constexpr Duration kMaxStartSystemDelay = from_ms(1);

inline DelayCompliance check_start_system_delay(Duration mean_latency, bool constant) {
  DelayCompliance v;
  v.constant = constant;
  v.margin = kMaxStartSystemDelay - mean_latency;
  v.compliant = constant && mean_latency <= kMaxStartSystemDelay;
  return v;
}

}  // namespace haptstart
