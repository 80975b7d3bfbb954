#include "levi/runtime.hpp"

#include <ostream>
#include <sstream>

namespace levi::runtime {

namespace {

struct Cell {
  GridIndex lo{};
  GridIndex hi{};
  Vec3 t = Vec3::Zero();  // fractional position inside the cell
};

Cell locate(const LookupTable& table, const Vec3& q) {
  const auto& vol = table.volume();
  if (!vol.contains(q, 1e-12)) {
    std::ostringstream msg;
    msg << "query (" << q.transpose() << ") m is outside the table volume";
    throw OutOfVolume(msg.str());
  }
  const auto d = table.dims();
  Cell c;
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 1) continue;
    const double u = std::clamp((q[a] - vol.origin[a]) / vol.resolution[a], 0.0, double(d[a] - 1));
    const int i = std::min(static_cast<int>(std::floor(u)), d[a] - 2);
    c.lo[a] = i;
    c.hi[a] = i + 1;
    c.t[a] = u - i;
  }
  return c;
}

GridIndex corner(const Cell& c, int k) {
  return {(k & 1) ? c.hi[0] : c.lo[0], (k & 2) ? c.hi[1] : c.lo[1], (k & 4) ? c.hi[2] : c.lo[2]};
}

bool cell_smooth(const LookupTable& table, const Cell& c) {
  // Edges join corners differing in exactly one bit.
  for (int k = 0; k < 8; ++k) {
    for (int bit : {1, 2, 4}) {
      if (k & bit) continue;
      if (!smooth_pair(table.phases(corner(c, k)), table.phases(corner(c, k | bit)))) return false;
    }
  }
  return true;
}

}  // namespace

bool smooth_neighborhood(const LookupTable& table, const Vec3& q) {
  return cell_smooth(table, locate(table, q));
}

bool sample_phases_into(const LookupTable& table, const Vec3& q, std::span<double> out) {
  const Cell c = locate(table, q);
  const std::size_t n = table.transducers();
  if (out.size() != n) throw InvalidParameter("output span does not match the transducer count");
  if (!cell_smooth(table, c)) {
    GridIndex nearest{};
    for (int a = 0; a < 3; ++a) nearest[a] = c.t[a] < 0.5 ? c.lo[a] : c.hi[a];
    const auto p = table.phases(nearest);
    std::copy(p.begin(), p.end(), out.begin());
    return false;
  }
  std::array<std::span<const float>, 8> corners;
  std::array<double, 8> w{};
  for (int k = 0; k < 8; ++k) {
    corners[k] = table.phases(corner(c, k));
    w[k] = ((k & 1) ? c.t[0] : 1.0 - c.t[0]) * ((k & 2) ? c.t[1] : 1.0 - c.t[1]) *
           ((k & 4) ? c.t[2] : 1.0 - c.t[2]);
  }
  for (std::size_t j = 0; j < n; ++j) {
    const double base = corners[0][j];
    double acc = 0.0;
    for (int k = 1; k < 8; ++k) acc += w[k] * wrap_signed(corners[k][j] - base);
    out[j] = wrap_phase(base + acc);
  }
  return true;
}

acoustics::PhaseVector sample_phases(const LookupTable& table, const Vec3& q) {
  std::vector<double> out(table.transducers());
  sample_phases_into(table, q, out);
  return acoustics::PhaseVector(std::move(out));
}

Vec3 stabilize_tick(const Vec3& trap, const Vec3& target, double max_step) {
  const Vec3 delta = target - trap;
  const double dist = delta.norm();
  if (dist <= max_step) return target;
  return trap + delta * (max_step / dist);
}

void StepperConfig::validate() const {
  if (!(tick_rate > 0.0)) throw InvalidParameter("tick rate must be positive");
  if (!(max_step > 0.0)) throw InvalidParameter("max step must be positive");
  if (!(cd_ratio > 0.0)) throw InvalidParameter("control-display ratio must be positive");
}

Stepper::Stepper(const LookupTable& table, StepperConfig config)
    : table_(table), config_(config), scratch_(table.transducers()) {
  config_.validate();
}

const RuntimeState& Stepper::place_particle(const Vec3& measured) {
  if (!table_.volume().contains(measured, 1e-12)) {
    throw OutOfVolume("measured particle position is outside the table volume");
  }
  state_.trap = measured;
  state_.target = measured;
  state_.target_ref = measured;
  state_.cursor_ref.reset();
  state_.target_clamped = false;
  state_.interpolated = sample_phases_into(table_, measured, scratch_);
  state_.phases = acoustics::PhaseVector(scratch_);
  state_.placement_mode = false;
  return state_;
}

void Stepper::set_target(const Vec3& target) {
  const Vec3 clamped = table_.volume().clamp(target);
  state_.target_clamped = clamped != target;
  state_.target = clamped;
}

const RuntimeState& Stepper::tick(const std::optional<CursorInput>& input) {
  if (state_.placement_mode) throw Error("stepper ticked before particle placement");
  const auto start = std::chrono::steady_clock::now();
  if (input) {
    if (!state_.cursor_ref) {
      state_.cursor_ref = input->cursor;
      state_.target_ref = state_.target;
    }
    set_target(state_.target_ref + (input->cursor - *state_.cursor_ref) / config_.cd_ratio);
    state_.last_seq = input->seq;
  }
  state_.trap = stabilize_tick(state_.trap, state_.target, config_.max_step);
  state_.interpolated = sample_phases_into(table_, state_.trap, scratch_);
  state_.phases = acoustics::PhaseVector(scratch_);
  ++state_.tick;
  if (sink_) sink_(state_.tick, state_.phases);
  if (record_) {
    durations_.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return state_;
}

void write_timing_csv(std::ostream& out, const std::vector<double>& durations) {
  out << "tick,duration_us\n";
  for (std::size_t i = 0; i < durations.size(); ++i) {
    out << i + 1 << ',' << durations[i] * 1e6 << '\n';
  }
}

TimingStats timing_stats(std::vector<double> d) {
  TimingStats s;
  if (d.empty()) return s;
  std::sort(d.begin(), d.end());
  double sum = 0.0;
  for (double x : d) sum += x;
  s.mean = sum / double(d.size());
  auto q = [&](double p) {
    const auto k = static_cast<std::size_t>(std::ceil(p * double(d.size()))) - 1;
    return d[std::min(k, d.size() - 1)];
  };
  s.p50 = q(0.5);
  s.p99 = q(0.99);
  s.max = d.back();
  return s;
}

}  // namespace levi::runtime
