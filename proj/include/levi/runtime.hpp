#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "levi/table.hpp"

namespace levi::runtime {

/// True iff all 12 edges of the cell enclosing `q` pass the pi criterion.
bool smooth_neighborhood(const LookupTable& table, const Vec3& q);

/// Gated trilinear interpolation on shortest-arc liftings, nearest grid
/// point otherwise. Writes N phases into `out`; returns whether the
/// interpolating branch was taken.
bool sample_phases_into(const LookupTable& table, const Vec3& q, std::span<double> out);
acoustics::PhaseVector sample_phases(const LookupTable& table, const Vec3& q);

/// Moves straight toward `target` by at most `max_step`.
Vec3 stabilize_tick(const Vec3& trap, const Vec3& target, double max_step);

struct StepperConfig {
  double tick_rate = 1000.0;  // Hz
  double max_step = 0.2e-3;   // m per tick
  double cd_ratio = 3.0;      // cursor displacement / target displacement

  void validate() const;
};

struct CursorInput {
  std::uint64_t seq = 0;
  Vec3 cursor = Vec3::Zero();  // m, cursor space
  double t_client = 0.0;
};

struct RuntimeState {
  Vec3 trap = Vec3::Zero();
  acoustics::PhaseVector phases;
  Vec3 target = Vec3::Zero();
  std::uint64_t tick = 0;
  bool placement_mode = true;
  bool target_clamped = false;
  bool interpolated = false;
  std::optional<Vec3> cursor_ref;  // cursor position matching target_ref
  Vec3 target_ref = Vec3::Zero();
  std::uint64_t last_seq = 0;
};

using PhaseSink = std::function<void(std::uint64_t tick, const acoustics::PhaseVector& phases)>;

/// Single-owner 1 kHz stepper over a lookup table.
class Stepper {
 public:
  Stepper(const LookupTable& table, StepperConfig config);

  /// Puts the trap on the measured particle position.
  const RuntimeState& place_particle(const Vec3& measured);

  /// One tick: applies the CD ratio to the cursor delta since the first
  /// sample after placement, clamps the target to the volume, advances the
  /// trap by at most max_step and samples phases there. No input holds the
  /// last target.
  const RuntimeState& tick(const std::optional<CursorInput>& input);

  /// Sets the target directly, bypassing the cursor mapping.
  void set_target(const Vec3& target);

  const RuntimeState& state() const { return state_; }
  const StepperConfig& config() const { return config_; }
  const LookupTable& table() const { return table_; }

  void set_sink(PhaseSink sink) { sink_ = std::move(sink); }
  void record_timing(bool on) { record_ = on; }
  /// Wall-clock seconds spent in each recorded tick.
  const std::vector<double>& tick_durations() const { return durations_; }

 private:
  const LookupTable& table_;
  StepperConfig config_;
  RuntimeState state_;
  PhaseSink sink_;
  bool record_ = false;
  std::vector<double> durations_;
  std::vector<double> scratch_;
};

/// tick,duration_us
void write_timing_csv(std::ostream& out, const std::vector<double>& durations);

struct TimingStats {
  double mean = 0.0;
  double p50 = 0.0;
  double p99 = 0.0;
  double max = 0.0;
};
TimingStats timing_stats(std::vector<double> durations);

/// Latest-value mailbox: a new post overwrites an unread one.
template <class T>
class Mailbox {
 public:
  void post(T value) {
    std::lock_guard lock(mutex_);
    value_ = std::move(value);
  }
  std::optional<T> take() {
    std::lock_guard lock(mutex_);
    std::optional<T> out = std::move(value_);
    value_.reset();
    return out;
  }

 private:
  std::mutex mutex_;
  std::optional<T> value_;
};

/// Read-only snapshots published by the loop owner.
template <class T>
class SnapshotBoard {
 public:
  void publish(T value) {
    auto p = std::make_shared<const T>(std::move(value));
    std::lock_guard lock(mutex_);
    latest_ = std::move(p);
  }
  std::shared_ptr<const T> latest() const {
    std::lock_guard lock(mutex_);
    return latest_;
  }

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const T> latest_;
};

}  // namespace levi::runtime
