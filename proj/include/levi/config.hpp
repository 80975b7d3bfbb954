#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "levi/precompute.hpp"
#include "levi/runtime.hpp"
#include "levi/sim.hpp"
#include "levi/trap.hpp"

namespace levi {

/// Serial-pointing session parameters. Radii and distance are nominal;
/// sessions shrink both by one factor when the volume is too small.
struct SessionConfig {
  std::vector<double> radii{2e-3, 4e-3, 8e-3};  // m
  double distance = 68e-3;                      // m, between target centres
  int movements = 50;                           // per condition
  double cd_ratio = 3.0;
  std::uint64_t seed = 1;                       // condition order
  double frame_rate = 60.0;                     // Hz, state frames to the client
  double sim_dt = 5e-4;                         // s, particle substep in the live loop
  std::string participant = "p1";

  void validate() const;
};

struct Config {
  double frequency = 40e3;  // Hz
  acoustics::MediumParams medium;
  acoustics::ParticleParams particle;
  acoustics::ArrayLayout array;
  double h_deriv = 0.0;  // m, 0 = analytic field derivatives

  trap::SolveOptions solve;

  VolumeSpec volume;
  int fine_factor = 1;
  int workers = 0;  // 0 = hardware concurrency
  std::string work_dir;

  runtime::StepperConfig stepper;
  sim::SimConfig sim;
  sim::SweepConfig sweep;
  SessionConfig session;

  std::string serve_address = "127.0.0.1";
  int serve_port = 8765;

  acoustics::WaveParams wave() const;
  acoustics::AcousticModel model() const;
  void validate() const;
  /// Canonical text of every parameter that affects table contents.
  std::string table_fingerprint() const;
  int resolved_workers() const;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Sectioned key = value file (see write_config for the full schema).
/// Unknown keys are errors; absent keys keep their defaults.
Config parse_config(std::istream& in, const std::string& name = "<config>");
Config load_config(const std::string& path);
/// Every key with its current value, SI units.
void write_config(std::ostream& out, const Config& c);

}  // namespace levi
