#include "levi/session.hpp"

#include <algorithm>
#include <chrono>

namespace levi::session {

std::string to_string(EventKind k) {
  switch (k) {
    case EventKind::target_entered:
      return "target_entered";
    case EventKind::condition_started:
      return "condition_started";
    case EventKind::condition_finished:
      return "condition_finished";
    case EventKind::calibration_point:
      return "calibration_point";
    case EventKind::aborted:
      return "aborted";
  }
  return "unknown";
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::calibrating:
      return "calibrating";
    case Phase::running:
      return "running";
    case Phase::finished:
      return "finished";
    case Phase::aborted:
      return "aborted";
  }
  return "unknown";
}

Geometry session_geometry(const VolumeSpec& volume, const SessionConfig& cfg) {
  cfg.validate();
  volume.validate();
  Geometry g;
  g.centre = volume.center();
  int axis = 0;
  for (int a = 1; a < 3; ++a) {
    if (volume.extents[a] > volume.extents[axis]) axis = a;
  }
  g.axis = Vec3::Unit(axis);
  const double half = 0.5 * volume.extents[axis];
  const double r_max = *std::max_element(cfg.radii.begin(), cfg.radii.end());
  // Keep a fifth of the half-extent free beyond the outer target surface
  // for overshoot.
  g.scale = std::min(1.0, 0.8 * half / (0.5 * cfg.distance + r_max));
  if (!(g.scale > 0.0)) throw InvalidParameter("session targets do not fit in the volume");
  g.distance = g.scale * cfg.distance;
  for (double r : cfg.radii) g.radii.push_back(g.scale * r);
  g.targets[0] = g.centre - 0.5 * g.distance * g.axis;
  g.targets[1] = g.centre + 0.5 * g.distance * g.axis;
  return g;
}

namespace {

sim::SimConfig live_sim(const Config& cfg) {
  sim::SimConfig s = cfg.sim;
  s.dt = cfg.session.sim_dt;
  return s;
}

runtime::StepperConfig live_stepper(const Config& cfg) {
  runtime::StepperConfig s = cfg.stepper;
  s.cd_ratio = cfg.session.cd_ratio;
  return s;
}

nlohmann::json mm(const Vec3& v) { return {v[0] * 1e3, v[1] * 1e3, v[2] * 1e3}; }

}  // namespace

SessionEngine::SessionEngine(const LookupTable& table, const acoustics::AcousticModel& model,
                             const Config& cfg)
    : table_(table),
      cfg_(cfg.session),
      geometry_(session_geometry(table.volume(), cfg.session)),
      stepper_(table, live_stepper(cfg)),
      sim_(model, cfg.particle, live_sim(cfg), cfg.stepper.tick_rate),
      volume_(table.volume()),
      emission_(table.transducers()) {
  if (model.array.size() != table.transducers()) {
    throw InvalidParameter("table and acoustic model disagree on the transducer count");
  }
  for (const auto& t : geometry_.targets) {
    if (!volume_.contains(t)) throw OutOfVolume("session target outside the table volume");
  }
  const double tick_rate = stepper_.config().tick_rate;
  substeps_ = std::max(1, static_cast<int>(std::lround(1.0 / (tick_rate * sim_.config().dt))));
  substep_dt_ = 1.0 / (tick_rate * substeps_);

  order_.resize(cfg_.radii.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  std::mt19937_64 rng(cfg_.seed);
  std::shuffle(order_.begin(), order_.end(), rng);
  for (std::size_t i : order_) {
    status_.push_back({geometry_.radii[i], cfg_.radii[i], 0, false});
  }

  // The bead starts resting (sagged) in a trap at the volume centre, which
  // is where the stepper is placed.
  auto phases = runtime::sample_phases(table, geometry_.centre);
  for (std::size_t j = 0; j < emission_.size(); ++j) emission_[j] = std::polar(1.0, phases[j]);
  particle_.position = sim_.equilibrium(emission_, geometry_.centre);
  stepper_.place_particle(geometry_.centre);
}

double SessionEngine::radius() const {
  return status_[std::min(cond_, status_.size() - 1)].radius;
}

void SessionEngine::emit(EventKind kind, nlohmann::json payload) {
  SessionEvent e{kind, time(), std::move(payload)};
  queue_.push_back(e);
  history_.push_back(std::move(e));
}

void SessionEngine::calibrate(int index, const Vec3& position) {
  if (phase_ != Phase::calibrating) throw Error("calibration is only possible before start");
  if (index != 0 && index != 1) throw InvalidParameter("calibration index must be 0 or 1");
  if (!volume_.contains(position)) throw OutOfVolume("calibration point outside the volume");
  const Vec3 other = geometry_.targets[1 - index];
  if ((position - other).norm() <= 0.0) throw InvalidParameter("calibrated targets coincide");
  geometry_.targets[index] = position;
  geometry_.distance = (geometry_.targets[1] - geometry_.targets[0]).norm();
  geometry_.axis = (geometry_.targets[1] - geometry_.targets[0]) / geometry_.distance;
  emit(EventKind::calibration_point, {{"index", index}, {"position", mm(position)}});
}

void SessionEngine::start() {
  if (phase_ != Phase::calibrating) return;
  phase_ = Phase::running;
}

void SessionEngine::abort(const std::string& reason) {
  if (phase_ == Phase::finished || phase_ == Phase::aborted) return;
  phase_ = Phase::aborted;
  abort_reason_ = reason;
  nlohmann::json p{{"reason", reason}};
  if (cond_ < status_.size()) {
    p["condition"] = cond_;
    p["movements"] = status_[cond_].movements;
  }
  emit(EventKind::aborted, std::move(p));
}

void SessionEngine::on_entry() {
  close_movement();
  const double t = time();
  const double r = radius();
  auto& st = status_[cond_];
  if (!cond_open_) {
    cond_open_ = true;
    move_index_ = 0;
    emit(EventKind::condition_started,
         {{"condition", cond_}, {"radius_mm", r * 1e3}, {"nominal_radius_mm", st.nominal_radius * 1e3}});
    emit(EventKind::target_entered, {{"target", aim_}, {"tone", true}, {"counted", false}});
  } else {
    fitts::MovementRecord m;
    m.participant = cfg_.participant;
    m.condition_radius = r;
    m.move_index = move_index_++;
    m.t_start = last_entry_t_;
    m.t_end = t;
    m.endpoint = particle_.position;
    m.from = geometry_.targets[1 - aim_];
    m.to = geometry_.targets[aim_];
    pending_.push_back(m);
    open_ = true;
    best_progress_ = (m.endpoint - m.from).dot(m.task_axis());
    ++st.movements;
    emit(EventKind::target_entered,
         {{"target", aim_}, {"tone", true}, {"counted", true}, {"move_index", m.move_index}});
  }
  last_entry_t_ = t;
  aim_ = 1 - aim_;
  inside_ = false;
}

void SessionEngine::track_movement() {
  if (!open_) return;
  auto& m = pending_.back();
  const double progress = (particle_.position - m.from).dot(m.task_axis());
  if (progress > best_progress_) {
    best_progress_ = progress;
    m.endpoint = particle_.position;
  } else if (best_progress_ - progress > kTurnaround || time() - m.t_end > kMaxSettle) {
    close_movement();
  }
}

void SessionEngine::close_movement() {
  if (!open_) return;
  open_ = false;
  auto& st = status_[cond_];
  if (st.movements < cfg_.movements) return;
  st.finished = true;
  emit(EventKind::condition_finished, {{"condition", cond_}, {"movements", st.movements}});
  log_.insert(log_.end(), pending_.begin(), pending_.end());
  if (sink_) sink_(pending_);
  pending_.clear();
  cond_open_ = false;
  if (++cond_ == status_.size()) phase_ = Phase::finished;
}

void SessionEngine::tick(const std::optional<runtime::CursorInput>& input) {
  const auto start = std::chrono::steady_clock::now();
  const auto& st = stepper_.tick(input);
  for (std::size_t j = 0; j < emission_.size(); ++j) emission_[j] = std::polar(1.0, st.phases[j]);
  for (int s = 0; s < substeps_; ++s) sim_.step(particle_, emission_, substep_dt_);

  if (phase_ == Phase::calibrating || phase_ == Phase::running) {
    if (sim::classify_retention(particle_, st.trap, sim_.config(), volume_) == sim::Retention::dropped) {
      abort("particle dropped");
    }
  }
  if (phase_ == Phase::running) track_movement();
  if (phase_ == Phase::running) {
    const bool in = (particle_.position - geometry_.targets[aim_]).norm() <= radius();
    if (in && !inside_) on_entry();
    else inside_ = in;
  }
  durations_.push_back(
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
}

Frame SessionEngine::frame() {
  const auto& st = stepper_.state();
  Frame f;
  f.tick = st.tick;
  f.t = time();
  f.ack_seq = st.last_seq;
  f.particle = particle_.position;
  f.trap = st.trap;
  f.target = st.target;
  f.aim = aim_;
  f.condition = phase_ == Phase::running && cond_open_ ? static_cast<int>(cond_) : -1;
  if (phase_ == Phase::finished) f.condition = static_cast<int>(status_.size());
  f.radius = radius();
  f.targets = geometry_.targets;
  f.phase = phase_;
  for (const auto& t : geometry_.targets) {
    f.in_target = f.in_target || (particle_.position - t).norm() <= f.radius;
  }
  if (!queue_.empty()) {
    f.event = queue_.front();
    queue_.pop_front();
  }
  return f;
}

ScriptedPointer::ScriptedPointer(const Geometry& geometry, const SessionConfig& cfg, Vec3 placement,
                                 std::uint64_t seed)
    : cfg_(cfg), placement_(placement), rng_(seed), from_(placement), goal_(placement),
      desired_(placement) {
  (void)geometry;
}

void ScriptedPointer::plan(const ClientView& view) {
  planned_aim_ = view.aim;
  from_ = desired_;
  const Vec3 target = view.targets[view.aim];
  const Vec3 axis = (view.targets[1] - view.targets[0]).normalized();
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 noise(n(rng_), n(rng_), n(rng_));
  noise = 0.1 * view.radius * (noise - noise.dot(axis) * axis) + 0.3 * view.radius * n(rng_) * axis;
  goal_ = target - sag_ + noise;
  // Fitts-like pace: MT = 0.15 s + 0.1 s/bit * ID.
  const double d = (view.targets[1] - view.targets[0]).norm();
  duration_ = 0.15 + 0.1 * std::log2(d / (2.0 * view.radius) + 1.0);
  elapsed_ = 0.0;
  dwell_ = 0.0;
}

Vec3 ScriptedPointer::next(const ClientView& view, double dt) {
  // Track the vertical sag of the bead below the trap while roughly at rest.
  const Vec3 offset = view.particle - view.trap;
  if (!sag_known_) {
    sag_ = offset;
    sag_known_ = true;
  } else if (elapsed_ >= duration_) {
    const double w = std::min(1.0, dt / 0.5);
    sag_ = (1.0 - w) * sag_ + w * offset;
  }
  if (view.aim != planned_aim_) plan(view);

  elapsed_ += dt;
  if (elapsed_ >= duration_) {
    dwell_ += dt;
    if (dwell_ > 0.3) {
      // Missed: re-aim at the centre with a short corrective movement.
      from_ = desired_;
      goal_ = view.targets[view.aim] - sag_;
      duration_ = 0.2;
      elapsed_ = 0.0;
      dwell_ = 0.0;
    }
  }
  const double tau = std::clamp(elapsed_ / duration_, 0.0, 1.0);
  const double s = tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
  desired_ = from_ + s * (goal_ - from_);
  return cfg_.cd_ratio * (desired_ - placement_);
}

OfflineResult run_scripted_session(const LookupTable& table, const acoustics::AcousticModel& model,
                                   const Config& cfg, double max_time, std::uint64_t pointer_seed) {
  SessionEngine engine(table, model, cfg);
  ScriptedPointer pointer(engine.geometry(), cfg.session, engine.runtime_state().trap, pointer_seed);
  engine.start();
  const double tick_rate = cfg.stepper.tick_rate;
  const double dt = 1.0 / tick_rate;
  const auto frame_every =
      std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::lround(tick_rate / cfg.session.frame_rate)));
  OfflineResult out;
  std::uint64_t seq = 0;
  while (engine.phase() == Phase::running && engine.time() < max_time) {
    const auto& st = engine.runtime_state();
    const ClientView view{engine.time(), engine.particle().position, st.trap, engine.aim(),
                          engine.radius(), engine.geometry().targets};
    runtime::CursorInput in;
    in.seq = ++seq;
    in.t_client = engine.time();
    in.cursor = pointer.next(view, dt);
    engine.tick(in);
    if (engine.runtime_state().tick % frame_every == 0) out.frames.push_back(engine.frame());
  }
  if (engine.phase() == Phase::running) engine.abort("time limit");
  out.frames.push_back(engine.frame());
  out.log = engine.log();
  out.events = engine.events();
  out.phase = engine.phase();
  out.abort_reason = engine.abort_reason();
  out.duration = engine.time();
  return out;
}

nlohmann::json session_report(const SessionEngine& engine) {
  const auto& g = engine.geometry();
  nlohmann::json j;
  j["phase"] = to_string(engine.phase());
  if (!engine.abort_reason().empty()) j["abort_reason"] = engine.abort_reason();
  j["duration_s"] = engine.time();
  j["geometry"] = {{"scale", g.scale},
                   {"distance_mm", g.distance * 1e3},
                   {"nominal_distance_mm", engine.config().distance * 1e3},
                   {"targets_mm", {mm(g.targets[0]), mm(g.targets[1])}}};
  auto& conds = j["conditions"] = nlohmann::json::array();
  for (const auto& c : engine.conditions()) {
    conds.push_back({{"radius_mm", c.radius * 1e3},
                     {"nominal_radius_mm", c.nominal_radius * 1e3},
                     {"movements", c.movements},
                     {"finished", c.finished}});
  }
  auto& events = j["events"] = nlohmann::json::array();
  for (const auto& e : engine.events()) {
    events.push_back({{"kind", to_string(e.kind)}, {"t", e.t}, {"payload", e.payload}});
  }
  const auto stats = runtime::timing_stats(engine.tick_durations());
  j["tick_timing_us"] = {{"mean", stats.mean * 1e6}, {"p50", stats.p50 * 1e6},
                         {"p99", stats.p99 * 1e6}, {"max", stats.max * 1e6}};
  if (!engine.log().empty()) {
    try {
      const auto summaries = fitts::summarize_all(engine.log());
      const auto fit = fitts::fit_fitts(summaries);
      const auto tp = fitts::throughput(summaries);
      j["fitts"] = fitts::report_json(summaries, fit, tp, fitts::SigmaMode::task_axis);
    } catch (const fitts::FittsError& e) {
      j["fitts_error"] = e.what();
    }
  }
  return j;
}

}  // namespace levi::session
