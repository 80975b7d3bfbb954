#pragma once

#include <array>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "levi/config.hpp"
#include "levi/fitts.hpp"

namespace levi::session {

enum class EventKind { target_entered, condition_started, condition_finished, calibration_point, aborted };
std::string to_string(EventKind k);

struct SessionEvent {
  EventKind kind = EventKind::target_entered;
  double t = 0.0;  // s, session clock
  nlohmann::json payload = nlohmann::json::object();
};

/// Two targets on the volume's longest axis, symmetric about its centre.
/// `scale` < 1 when the nominal layout does not fit.
struct Geometry {
  Vec3 centre = Vec3::Zero();
  Vec3 axis = Vec3::UnitX();
  double scale = 1.0;
  double distance = 0.0;           // m, scaled
  std::vector<double> radii;       // m, scaled, config order
  std::array<Vec3, 2> targets{};
};
Geometry session_geometry(const VolumeSpec& volume, const SessionConfig& cfg);

enum class Phase { calibrating, running, finished, aborted };
std::string to_string(Phase p);

struct Frame {
  std::uint64_t tick = 0;
  double t = 0.0;
  std::uint64_t ack_seq = 0;
  Vec3 particle = Vec3::Zero();
  Vec3 trap = Vec3::Zero();
  Vec3 target = Vec3::Zero();  // stepper target after the CD mapping
  bool in_target = false;
  int aim = 0;                 // index of the target to reach next
  int condition = -1;          // position in the condition order, -1 before start
  double radius = 0.0;         // m, current target radius
  std::array<Vec3, 2> targets{};
  Phase phase = Phase::calibrating;
  std::optional<SessionEvent> event;
};

struct ConditionStatus {
  double radius = 0.0;          // m, scaled
  double nominal_radius = 0.0;  // m
  int movements = 0;
  bool finished = false;
};

/// Runtime stepper and particle simulator in lockstep, plus the serial
/// pointing protocol. One call to tick() is one runtime tick.
class SessionEngine {
 public:
  using LogSink = std::function<void(const std::vector<fitts::MovementRecord>&)>;

  SessionEngine(const LookupTable& table, const acoustics::AcousticModel& model, const Config& cfg);

  const Geometry& geometry() const { return geometry_; }
  const SessionConfig& config() const { return cfg_; }
  Phase phase() const { return phase_; }
  double time() const { return double(stepper_.state().tick) / stepper_.config().tick_rate; }
  const std::vector<std::size_t>& condition_order() const { return order_; }
  const std::vector<ConditionStatus>& conditions() const { return status_; }
  const std::vector<fitts::MovementRecord>& log() const { return log_; }
  const std::vector<SessionEvent>& events() const { return history_; }
  const sim::ParticleState& particle() const { return particle_; }
  const runtime::RuntimeState& runtime_state() const { return stepper_.state(); }
  const std::string& abort_reason() const { return abort_reason_; }
  /// Index of the target to reach next.
  int aim() const { return aim_; }
  /// Target radius of the current (or first) condition, m.
  double radius() const;

  /// Called with the rows of each condition as it completes.
  void set_log_sink(LogSink sink) { sink_ = std::move(sink); }

  /// Redefines target `index` (0 or 1) during calibration.
  void calibrate(int index, const Vec3& position);
  /// Ends calibration; the next entry into target 0 starts the first condition.
  void start();
  void abort(const std::string& reason);

  void tick(const std::optional<runtime::CursorInput>& input);
  /// Snapshot for the client; pops at most one queued event.
  Frame frame();

  const std::vector<double>& tick_durations() const { return durations_; }
  bool has_pending_events() const { return !queue_.empty(); }

 private:
  void emit(EventKind kind, nlohmann::json payload);
  void on_entry();
  void track_movement();
  void close_movement();

  // A movement's endpoint is its furthest progress along the task axis
  // after entering the target; it closes once the bead has come back by
  // kTurnaround or after kMaxSettle seconds.
  static constexpr double kTurnaround = 0.05e-3;
  static constexpr double kMaxSettle = 1.0;

  const LookupTable& table_;
  SessionConfig cfg_;
  Geometry geometry_;
  runtime::Stepper stepper_;
  sim::Simulator sim_;
  sim::ParticleState particle_;
  VolumeSpec volume_;
  std::vector<Complex> emission_;
  int substeps_ = 1;
  double substep_dt_ = 0.0;

  Phase phase_ = Phase::calibrating;
  std::vector<std::size_t> order_;
  std::vector<ConditionStatus> status_;
  std::size_t cond_ = 0;
  bool cond_open_ = false;  // first entry seen in the current condition
  int aim_ = 0;
  bool inside_ = false;     // particle currently inside the aimed target
  double last_entry_t_ = 0.0;
  int move_index_ = 0;
  bool open_ = false;       // last record still tracking its endpoint
  double best_progress_ = 0.0;
  std::vector<fitts::MovementRecord> pending_;
  std::vector<fitts::MovementRecord> log_;
  std::deque<SessionEvent> queue_;
  std::vector<SessionEvent> history_;
  std::string abort_reason_;
  LogSink sink_;
  std::vector<double> durations_;
};

/// What a client sees of the session, enough to steer.
struct ClientView {
  double t = 0.0;
  Vec3 particle = Vec3::Zero();
  Vec3 trap = Vec3::Zero();
  int aim = 0;
  double radius = 0.0;
  std::array<Vec3, 2> targets{};
};

/// Deterministic stand-in for a participant: drives the cursor so the trap
/// moves along a straight line to the aimed target at a Fitts-like pace,
/// with seeded aiming noise and a corrective re-aim when it misses.
class ScriptedPointer {
 public:
  ScriptedPointer(const Geometry& geometry, const SessionConfig& cfg, Vec3 placement,
                  std::uint64_t seed = 7);
  /// Cursor position (m, cursor space) for the current view.
  Vec3 next(const ClientView& view, double dt);

 private:
  void plan(const ClientView& view);

  SessionConfig cfg_;
  Vec3 placement_;
  std::mt19937_64 rng_;
  int planned_aim_ = -1;
  Vec3 from_ = Vec3::Zero();
  Vec3 goal_ = Vec3::Zero();
  double elapsed_ = 0.0;
  double duration_ = 0.0;
  double dwell_ = 0.0;
  Vec3 desired_ = Vec3::Zero();
  Vec3 sag_ = Vec3::Zero();
  bool sag_known_ = false;
};

struct OfflineResult {
  std::vector<fitts::MovementRecord> log;
  std::vector<SessionEvent> events;
  std::vector<Frame> frames;
  Phase phase = Phase::calibrating;
  std::string abort_reason;
  double duration = 0.0;
};

/// Runs a whole session headless with the scripted pointer. Frames are
/// sampled at the configured frame rate. Stops after `max_time` seconds.
OfflineResult run_scripted_session(const LookupTable& table, const acoustics::AcousticModel& model,
                                   const Config& cfg, double max_time = 600.0,
                                   std::uint64_t pointer_seed = 7);

/// Session summary: geometry, conditions, events, optional analysis.
nlohmann::json session_report(const SessionEngine& engine);

}  // namespace levi::session
