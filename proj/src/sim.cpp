#include "levi/sim.hpp"

#include <Eigen/LU>
#include <atomic>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>
#include <mutex>
#include <numbers>
#include <cmath>
#include <array>

namespace levi::sim {

SimConfig SimConfig::resolved(const acoustics::WaveParams& wave, double tick_rate) const {
  SimConfig c = *this;
  const double lambda = wave.wavelength();
  if (c.capture_radius == 0.0) c.capture_radius = lambda / 4.0;
  if (c.escape_radius == 0.0) c.escape_radius = lambda / 2.0;
  if (c.force_step == 0.0) c.force_step = lambda / 100.0;
  if (!(c.dt > 0.0)) throw InvalidParameter("sim dt must be positive");
  if (!(tick_rate > 0.0)) throw InvalidParameter("tick rate must be positive");
  if (c.dt > 1.0 / (2.0 * tick_rate) * (1.0 + 1e-12)) {
    throw InvalidParameter("sim dt must not exceed half a runtime tick");
  }
  if (!(c.viscosity >= 0.0)) throw InvalidParameter("viscosity must be non-negative");
  if (!(c.capture_radius > 0.0) || !(c.escape_radius > c.capture_radius)) {
    throw InvalidParameter("need 0 < capture radius < escape radius");
  }
  if (!(c.force_step > 0.0)) throw InvalidParameter("force step must be positive");
  if (!c.gravity.allFinite()) throw InvalidParameter("gravity must be finite");
  return c;
}

std::string to_string(Retention r) {
  switch (r) {
    case Retention::held:
      return "held";
    case Retention::strayed:
      return "strayed";
    case Retention::dropped:
      return "dropped";
  }
  return "unknown";
}

Retention classify_retention(const ParticleState& p, const Vec3& trap, const SimConfig& cfg,
                             const VolumeSpec& volume) {
  if (!p.alive || !p.position.allFinite() || !volume.contains(p.position, 1e-12)) {
    return Retention::dropped;
  }
  const double d = (p.position - trap).norm();
  if (d <= cfg.capture_radius) return Retention::held;
  if (d <= cfg.escape_radius) return Retention::strayed;
  return Retention::dropped;
}

Simulator::Simulator(const acoustics::AcousticModel& model,
                     const acoustics::ParticleParams& particle, const SimConfig& config,
                     double tick_rate)
    : model_(model), cfg_(config.resolved(model.array.wave(), tick_rate)) {
  particle.validate();
  mass_ = particle.mass();
  drag_ = 6.0 * std::numbers::pi * cfg_.viscosity * particle.radius;
}

Vec3 Simulator::static_force(std::span<const Complex> emission, const Vec3& x) const {
  return acoustics::radiation_force(model_, emission, x, cfg_.force_step) + mass_ * cfg_.gravity;
}

void Simulator::step(ParticleState& p, std::span<const Complex> emission) const {
  step(p, emission, cfg_.dt);
}

void Simulator::step(ParticleState& p, std::span<const Complex> emission, double dt) const {
  if (!p.alive) return;
  Vec3 f;
  try {
    f = static_force(emission, p.position);
  } catch (const SingularPoint&) {
    p.alive = false;
    return;
  }
  f -= drag_ * p.velocity;
  p.velocity += dt * f / mass_;
  p.position += dt * p.velocity;
  if (!p.position.allFinite()) p.alive = false;
}

double Simulator::energy(const ParticleState& p, std::span<const Complex> emission) const {
  return 0.5 * mass_ * p.velocity.squaredNorm() + model_.potential(emission, p.position) -
         mass_ * cfg_.gravity.dot(p.position);
}

Vec3 Simulator::equilibrium(std::span<const Complex> emission, const Vec3& guess) const {
  const double weight = mass_ * cfg_.gravity.norm();
  const double tol = 1e-10 * std::max(weight, 1e-30);
  const double h = 1e-6;
  const double max_move = model_.array.wave().wavelength() / 8.0;
  Vec3 x = guess;
  for (int it = 0; it < 60; ++it) {
    const Vec3 f = static_force(emission, x);
    if (f.norm() <= tol) return x;
    Eigen::Matrix3d j;
    for (int a = 0; a < 3; ++a) {
      Vec3 e = Vec3::Zero();
      e[a] = h;
      j.col(a) = (static_force(emission, x + e) - static_force(emission, x - e)) / (2.0 * h);
    }
    Vec3 dx = -j.partialPivLu().solve(f);
    if (!dx.allFinite()) break;
    if (dx.norm() > max_move) dx *= max_move / dx.norm();
    x += dx;
  }
  const Vec3 f = static_force(emission, x);
  if (f.norm() <= 1e3 * tol) return x;
  std::ostringstream msg;
  msg << "no force balance near (" << guess.transpose() << "); residual " << f.norm() << " N";
  throw EquilibriumError(msg.str());
}

TrapezoidPath::TrapezoidPath(const Vec3& from, const Vec3& to, double average_speed,
                             double ramp_fraction)
    : from_(from) {
  if (!(average_speed > 0.0)) throw InvalidParameter("path speed must be positive");
  if (!(ramp_fraction > 0.0 && ramp_fraction <= 0.5)) {
    throw InvalidParameter("ramp fraction must lie in (0, 0.5]");
  }
  const Vec3 d = to - from;
  length_ = d.norm();
  dir_ = length_ > 0.0 ? Vec3(d / length_) : Vec3::Zero();
  duration_ = length_ / average_speed;
  ramp_ = ramp_fraction * duration_;
  peak_ = duration_ > 0.0 ? length_ / (duration_ - ramp_) : 0.0;
}

Vec3 TrapezoidPath::at(double t) const {
  if (duration_ <= 0.0) return from_;
  t = std::clamp(t, 0.0, duration_);
  const double a = peak_ / ramp_;
  double s;
  if (t < ramp_) {
    s = 0.5 * a * t * t;
  } else if (t <= duration_ - ramp_) {
    s = 0.5 * peak_ * ramp_ + peak_ * (t - ramp_);
  } else {
    const double r = duration_ - t;
    s = length_ - 0.5 * a * r * r;
  }
  return from_ + std::min(s, length_) * dir_;
}

void SweepConfig::validate(const VolumeSpec& volume) const {
  if (repeats < 1) throw InvalidParameter("sweep repeats must be >= 1");
  if (speeds.empty()) throw InvalidParameter("sweep needs at least one speed");
  for (std::size_t i = 0; i < speeds.size(); ++i) {
    if (!(speeds[i] > 0.0)) throw InvalidParameter("sweep speeds must be positive");
    if (i > 0 && !(speeds[i] > speeds[i - 1])) {
      throw InvalidParameter("sweep speeds must be strictly increasing");
    }
  }
  if (!volume.contains(path_start) || !volume.contains(path_end)) {
    throw OutOfVolume("sweep path leaves the table volume");
  }
  if ((path_end - path_start).norm() <= 0.0) throw InvalidParameter("sweep path has zero length");
  if (!(ramp_fraction > 0.0 && ramp_fraction <= 0.5)) {
    throw InvalidParameter("ramp fraction must lie in (0, 0.5]");
  }
  if (!(settle_time >= 0.0)) throw InvalidParameter("settle time must be non-negative");
  if (!(success_radius > 0.0)) throw InvalidParameter("success radius must be positive");
  if (!(start_jitter >= 0.0)) throw InvalidParameter("start jitter must be non-negative");
  if (workers < 1) throw InvalidParameter("worker count must be >= 1");
}

namespace {

std::uint64_t run_seed(std::uint64_t seed, double speed, int repeat) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32),
                    std::uint32_t(std::llround(speed * 1e6)), std::uint32_t(repeat)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (std::uint64_t(out[0]) << 32) | out[1];
}

}  // namespace

RunOutcome run_movement(const Simulator& sim, const LookupTable& table, const SweepConfig& cfg,
                        double speed, int repeat, double tick_rate,
                        std::vector<TrajectorySample>* trajectory) {
  const auto& vol = table.volume();
  const int substeps = std::max(1, static_cast<int>(std::lround(1.0 / (tick_rate * sim.config().dt))));
  const double dt = 1.0 / (tick_rate * substeps);
  const double tick = 1.0 / tick_rate;

  std::vector<double> phases(table.transducers());
  std::vector<Complex> emission(table.transducers());
  auto emit_at = [&](const Vec3& trap) {
    runtime::sample_phases_into(table, trap, phases);
    for (std::size_t j = 0; j < phases.size(); ++j) emission[j] = std::polar(1.0, phases[j]);
  };

  RunOutcome out;
  out.speed = speed;
  out.repeat = repeat;

  emit_at(cfg.path_start);
  const Vec3 rest = sim.equilibrium(emission, cfg.path_start);
  std::mt19937_64 rng(run_seed(cfg.seed, speed, repeat));
  std::uniform_real_distribution<double> jitter(-cfg.start_jitter, cfg.start_jitter);
  ParticleState p;
  p.position = rest + Vec3(jitter(rng), jitter(rng), jitter(rng));

  double t = 0.0;
  bool failed = false;
  auto advance = [&](const Vec3& trap, double leg_time, double leg_duration) {
    emit_at(trap);
    for (int s = 0; s < substeps; ++s) {
      sim.step(p, emission, dt);
      const Retention r = classify_retention(p, trap, sim.config(), vol);
      if (r != Retention::held && !failed) {
        failed = true;
        out.failure_time_fraction = leg_duration > 0.0 ? leg_time / leg_duration : -1.0;
      }
      if (static_cast<int>(r) > static_cast<int>(out.worst)) out.worst = r;
      if (r == Retention::dropped) return false;
    }
    t += tick;
    if (trajectory) trajectory->push_back({t, p.position, trap});
    return true;
  };

  const auto settle_ticks = static_cast<long>(std::lround(cfg.settle_time * tick_rate));
  for (long k = 0; k < settle_ticks; ++k) {
    if (!advance(cfg.path_start, -1.0, 0.0)) return out;
  }
  // Warm-up settling does not count as a movement failure.
  failed = false;
  out.failure_time_fraction = -1.0;
  out.worst = Retention::held;

  const TrapezoidPath there(cfg.path_start, cfg.path_end, speed, cfg.ramp_fraction);
  const TrapezoidPath back(cfg.path_end, cfg.path_start, speed, cfg.ramp_fraction);
  for (const TrapezoidPath* leg : {&there, &back}) {
    const auto ticks = static_cast<long>(std::ceil(leg->duration() * tick_rate - 1e-9));
    for (long k = 1; k <= ticks; ++k) {
      const double lt = std::min(k * tick, leg->duration());
      const Vec3 trap = leg->at(lt);
      const double lag = (p.position - trap).norm();
      out.max_lag = std::max(out.max_lag, lag);
      if (!advance(trap, lt, leg->duration())) return out;
    }
  }
  for (long k = 0; k < settle_ticks; ++k) {
    if (!advance(cfg.path_start, -1.0, 0.0)) return out;
  }
  out.final_error = (p.position - rest).norm();
  out.success = !failed && out.worst == Retention::held && out.final_error <= cfg.success_radius;
  return out;
}

SweepResult velocity_sweep(const Simulator& sim, const LookupTable& table,
                           const SweepConfig& cfg, double tick_rate) {
  cfg.validate(table.volume());
  const std::size_t n = cfg.speeds.size() * std::size_t(cfg.repeats);
  SweepResult res;
  res.runs.resize(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        const std::size_t s = i / std::size_t(cfg.repeats);
        const int r = static_cast<int>(i % std::size_t(cfg.repeats));
        res.runs[i] = run_movement(sim, table, cfg, cfg.speeds[s], r, tick_rate);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < cfg.workers; ++w) pool.emplace_back(worker);
    worker();
  }
  if (error) std::rethrow_exception(error);

  int failures = 0;
  int edge = 0;
  for (std::size_t s = 0; s < cfg.speeds.size(); ++s) {
    SweepRow row;
    row.speed = cfg.speeds[s];
    row.repeats = cfg.repeats;
    for (int r = 0; r < cfg.repeats; ++r) {
      const auto& o = res.runs[s * std::size_t(cfg.repeats) + std::size_t(r)];
      row.successes += o.success;
      if (!o.success && o.failure_time_fraction >= 0.0) {
        ++failures;
        edge += o.failure_time_fraction <= 0.1 || o.failure_time_fraction >= 0.9;
      }
    }
    res.rows.push_back(row);
  }
  res.edge_failure_share = failures ? double(edge) / failures : 0.0;
  return res;
}

bool SweepResult::monotone() const {
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].rate() > rows[i - 1].rate()) return false;
  }
  return true;
}

void write_sweep_csv(std::ostream& out, const SweepResult& r) {
  out << "speed_m_s,successes,repeats,rate\n";
  for (const auto& row : r.rows) {
    out << row.speed << ',' << row.successes << ',' << row.repeats << ',' << row.rate() << '\n';
  }
}

void write_trajectory_csv(std::ostream& out, const std::vector<TrajectorySample>& traj) {
  out << "t,x,y,z,trap_x,trap_y,trap_z\n";
  out.precision(9);
  for (const auto& s : traj) {
    out << s.t << ',' << s.particle[0] << ',' << s.particle[1] << ',' << s.particle[2] << ','
        << s.trap[0] << ',' << s.trap[1] << ',' << s.trap[2] << '\n';
  }
}

}  // namespace levi::sim
