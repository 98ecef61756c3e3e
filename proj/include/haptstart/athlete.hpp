#pragma once

// Simulated reactor: modality offsets relative to the auditory reaction,
// base reaction variability and eyeblink blackout on visual starts.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "haptstart/devices.hpp"
#include "haptstart/error.hpp"
#include "haptstart/time.hpp"

namespace haptstart {

struct BlinkModel {
  double rate_hz = 0.0;
  Duration blackout = from_ms(100);

  void validate() const {
    if (!(rate_hz >= 0.0) || !std::isfinite(rate_hz)) throw Error(ErrorKind::InvalidProfile, "blink rate must be >= 0");
    if (blackout.count() <= 0) throw Error(ErrorKind::InvalidProfile, "blink blackout must be positive");
  }
};

struct ModalityOffset {
  Duration mean{};
  Duration sd{};
};

struct AthleteProfile {
  /// Auditory-referenced reaction: normal(mean, sd) truncated at zero, plus an
  /// optional exponential tail with mean `base_tail_tau` (ex-Gaussian).
  Duration base_mean = from_ms(140);
  Duration base_sd = from_ms(20);
  Duration base_tail_tau{};

  std::map<Modality, ModalityOffset> offsets = default_offsets();
  BlinkModel blink;
  std::optional<Decimal> run_time_s;

  static std::map<Modality, ModalityOffset> default_offsets() {
    return {{Modality::auditory, {from_ms(0), {}}},
            {Modality::visual_led, {from_ms(30), {}}},
            {Modality::haptic_push, {from_ms(5), {}}},
            {Modality::haptic_vibration, {from_ms(5), {}}}};
  }

  /// Zero-variance profile with the default offsets and no blinks.
  static AthleteProfile deterministic(Duration base) {
    AthleteProfile p;
    p.base_mean = base;
    p.base_sd = Duration{};
    return p;
  }

  const ModalityOffset& offset(Modality m) const {
    auto it = offsets.find(m);
    if (it == offsets.end()) throw Error(ErrorKind::InvalidProfile, "no offset for " + std::string(to_string(m)));
    return it->second;
  }

  void validate() const {
    if (base_mean.count() < 0 || base_sd.count() < 0 || base_tail_tau.count() < 0) {
      throw Error(ErrorKind::InvalidProfile, "base reaction parameters must be non-negative");
    }
    for (auto m : {Modality::auditory, Modality::visual_led, Modality::haptic_push, Modality::haptic_vibration}) {
      const auto& o = offset(m);
      if (o.mean.count() < 0 || o.sd.count() < 0) throw Error(ErrorKind::InvalidProfile, "offsets must be non-negative");
    }
    blink.validate();
  }
};

struct ReactionSample {
  Timestamp perceived_onset;
  Timestamp react_at;
  Modality modality = Modality::auditory;
  bool blink_delayed = false;
};

/// Blink starts of a Poisson process over [from, to), sorted.
inline std::vector<Timestamp> poisson_blink_schedule(Rng& rng, double rate_hz, Timestamp from, Timestamp to) {
  std::vector<Timestamp> out;
  if (rate_hz <= 0.0) return out;
  std::exponential_distribution<double> gap_s(rate_hz);
  double t_us = static_cast<double>(from.time_since_epoch().count());
  const double end_us = static_cast<double>(to.time_since_epoch().count());
  for (;;) {
    t_us += gap_s(rng) * 1e6;
    if (t_us >= end_us) break;
    out.push_back(at_us(static_cast<std::int64_t>(std::floor(t_us))));
  }
  return out;
}

/// If the onset falls inside a blackout [b, b + blackout) it is perceived when
/// the eye reopens; overlapping blinks chain.
inline Timestamp apply_blink(Timestamp onset, const std::vector<Timestamp>& schedule, Duration blackout) {
  Timestamp perceived = onset;
  for (auto b : schedule) {
    if (b > perceived) break;
    if (perceived < b + blackout) perceived = b + blackout;
  }
  return perceived;
}

namespace detail {

inline Duration draw_nonnegative_normal(Rng& rng, Duration mean, Duration sd) {
  if (sd.count() == 0) return mean;
  std::normal_distribution<double> dist(static_cast<double>(mean.count()), static_cast<double>(sd.count()));
  for (;;) {
    double v = dist(rng);
    if (v >= 0.0) return Duration(std::llround(v));
  }
}

inline Duration draw_base(Rng& rng, const AthleteProfile& p) {
  Duration base = draw_nonnegative_normal(rng, p.base_mean, p.base_sd);
  if (p.base_tail_tau.count() > 0) {
    std::exponential_distribution<double> tail(1.0 / static_cast<double>(p.base_tail_tau.count()));
    base += Duration(std::llround(tail(rng)));
  }
  return base;
}

/// Offsets are relative shifts and may come out negative; only the total
/// delay is clamped (in sample_reaction).
inline Duration draw_offset(Rng& rng, const AthleteProfile& p, Modality m) {
  const auto& o = p.offset(m);
  if (o.sd.count() == 0) return o.mean;
  std::normal_distribution<double> d(static_cast<double>(o.mean.count()), static_cast<double>(o.sd.count()));
  return Duration(std::llround(d(rng)));
}

/// Perception delay (blink) plus modality offset for a visual or other stimulus.
struct ModalityDelay {
  Timestamp perceived;
  Duration offset;
  bool blinked = false;
};

inline ModalityDelay draw_modality_delay(Rng& rng, const AthleteProfile& p, Modality m, Timestamp onset) {
  ModalityDelay d{onset, draw_offset(rng, p, m), false};
  if (m == Modality::visual_led && p.blink.rate_hz > 0.0) {
    auto schedule = poisson_blink_schedule(rng, p.blink.rate_hz, onset - p.blink.blackout, onset + from_ms(1000));
    d.perceived = apply_blink(onset, schedule, p.blink.blackout);
    d.blinked = d.perceived != onset;
  }
  return d;
}

}  // namespace detail

inline ReactionSample sample_reaction(const AthleteProfile& profile, Modality modality, Timestamp onset, Rng& rng) {
  auto delay = detail::draw_modality_delay(rng, profile, modality, onset);
  const Duration base = detail::draw_base(rng, profile);
  const Duration total = std::max(Duration::zero(), base + delay.offset);
  return ReactionSample{delay.perceived, delay.perceived + total, modality, delay.blinked};
}

struct RecordGapResult {
  Decimal auditory_record;
  std::vector<Decimal> recorded;
  /// Recorded time (two decimals) -> count.
  std::map<Decimal, std::size_t> distribution;
  double mean_s = 0.0;
  Decimal min{};
  Decimal max{};
};

/// Official 100 m times for an athlete whose run time equals a hearing
/// sprinter's, but who starts on `modality` instead of sound. The base reaction
/// is shared by both, so only the modality-specific delay separates them.
inline RecordGapResult simulate_record_gap(const AthleteProfile& profile, Modality modality, std::size_t n, Rng& rng) {
  if (!profile.run_time_s) throw Error(ErrorKind::InvalidProfile, "run_time_s is required");
  profile.validate();
  RecordGapResult r;
  r.auditory_record = round_photo_finish(*profile.run_time_s);
  r.recorded.reserve(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Timestamp onset{};
    auto mod = detail::draw_modality_delay(rng, profile, modality, onset);
    auto aud = detail::draw_offset(rng, profile, Modality::auditory);
    const Duration delta = (mod.perceived - onset) + mod.offset - aud;
    auto rec = round_photo_finish(*profile.run_time_s + Decimal::from_duration(delta));
    r.recorded.push_back(rec);
    ++r.distribution[rec];
    sum += rec.to_double();
  }
  if (n > 0) {
    r.mean_s = sum / static_cast<double>(n);
    r.min = r.distribution.begin()->first;
    r.max = r.distribution.rbegin()->first;
  }
  return r;
}

}  // namespace haptstart
