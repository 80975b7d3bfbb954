#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "levi/runtime.hpp"

namespace levi::sim {

struct SimConfig {
  double dt = 1e-4;                        // s
  Vec3 gravity = Vec3(0.0, -9.81, 0.0);    // m/s^2, -y is down
  double viscosity = 1.81e-5;              // Pa s, air
  double capture_radius = 0.0;             // m, 0 = wavelength / 4
  double escape_radius = 0.0;              // m, 0 = wavelength / 2
  double force_step = 0.0;                 // m, central-difference step for F, 0 = wavelength / 100

  /// Fills zero radii/steps from the wavelength and validates.
  SimConfig resolved(const acoustics::WaveParams& wave, double tick_rate) const;
};

struct ParticleState {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  bool alive = true;
};

enum class Retention { held, strayed, dropped };
std::string to_string(Retention r);

/// Radius-based proxy for "fell off or switched to a secondary trap".
Retention classify_retention(const ParticleState& p, const Vec3& trap, const SimConfig& cfg,
                             const VolumeSpec& volume);

class Simulator {
 public:
  Simulator(const acoustics::AcousticModel& model, const acoustics::ParticleParams& particle,
            const SimConfig& config, double tick_rate = 1000.0);

  const SimConfig& config() const { return cfg_; }
  const acoustics::AcousticModel& model() const { return model_; }
  double mass() const { return mass_; }
  double drag_coefficient() const { return drag_; }

  /// Radiation force plus weight.
  Vec3 static_force(std::span<const Complex> emission, const Vec3& x) const;

  /// Semi-implicit Euler: v += dt F/m, x += dt v. A particle that reaches
  /// the singular region of a transducer is marked dropped.
  void step(ParticleState& p, std::span<const Complex> emission) const;
  void step(ParticleState& p, std::span<const Complex> emission, double dt) const;

  /// 1/2 m v^2 + U + m |g| height, with height measured along -g.
  double energy(const ParticleState& p, std::span<const Complex> emission) const;

  /// Rest position where radiation force balances gravity, by Newton
  /// iteration with a central-difference Jacobian from `guess`.
  Vec3 equilibrium(std::span<const Complex> emission, const Vec3& guess) const;

 private:
  const acoustics::AcousticModel& model_;
  SimConfig cfg_;
  double mass_;
  double drag_;
};

class EquilibriumError : public Error {
 public:
  using Error::Error;
};

/// Trapezoidal profile along a straight segment: constant-acceleration
/// ramps over `ramp_fraction` of the duration at each end.
class TrapezoidPath {
 public:
  TrapezoidPath(const Vec3& from, const Vec3& to, double average_speed, double ramp_fraction);
  double duration() const { return duration_; }
  Vec3 at(double t) const;
  double peak_speed() const { return peak_; }

 private:
  Vec3 from_;
  Vec3 dir_;
  double length_;
  double duration_;
  double ramp_;
  double peak_;
};

struct SweepConfig {
  Vec3 path_start = Vec3(-9e-3, 0.0, 0.0);
  Vec3 path_end = Vec3(9e-3, 0.0, 0.0);
  std::vector<double> speeds{0.01, 0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.2, 0.3, 0.4, 0.6};
  int repeats = 5;
  std::uint64_t seed = 1;
  double ramp_fraction = 0.1;
  double settle_time = 0.3;     // s, before and after the movement
  double success_radius = 0.5e-3;
  double start_jitter = 50e-6;  // m, uniform per-axis perturbation of the start
  int workers = 1;

  void validate(const VolumeSpec& volume) const;
};

struct RunOutcome {
  double speed = 0.0;
  int repeat = 0;
  bool success = false;
  Retention worst = Retention::held;
  double failure_time_fraction = -1.0;  // of the movement duration, -1 if none
  double final_error = 0.0;             // m, to the end-point equilibrium
  double max_lag = 0.0;                 // m, particle to trap during movement
};

struct SweepRow {
  double speed = 0.0;
  int successes = 0;
  int repeats = 0;
  double rate() const { return repeats ? double(successes) / repeats : 0.0; }
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<RunOutcome> runs;
  /// Share of failures inside the first or last 10% of the movement.
  double edge_failure_share = 0.0;
  bool monotone() const;
};

struct TrajectorySample {
  double t;
  Vec3 particle;
  Vec3 trap;
};

/// Runs one movement there and back at `speed`. The trap follows the path
/// directly each tick; phases come from the table at the trap position.
RunOutcome run_movement(const Simulator& sim, const LookupTable& table, const SweepConfig& cfg,
                        double speed, int repeat, double tick_rate,
                        std::vector<TrajectorySample>* trajectory = nullptr);

SweepResult velocity_sweep(const Simulator& sim, const LookupTable& table,
                           const SweepConfig& cfg, double tick_rate = 1000.0);

/// speed_m_s,successes,repeats,rate
void write_sweep_csv(std::ostream& out, const SweepResult& r);
/// t,x,y,z,trap_x,trap_y,trap_z (m)
void write_trajectory_csv(std::ostream& out, const std::vector<TrajectorySample>& t);

}  // namespace levi::sim
