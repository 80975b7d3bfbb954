#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "levi/table.hpp"
#include "levi/trap.hpp"

namespace levi::precompute {

enum class SweepPhase { seed, vertical, width, depth };

std::string to_string(SweepPhase phase);
SweepPhase phase_from_string(const std::string& s);

/// Where a solve takes its starting phases from. task < 0 means random.
struct WarmRef {
  int task = -1;
  int point = -1;
  bool random() const { return task < 0; }
  friend bool operator==(const WarmRef&, const WarmRef&) = default;
};

struct PlanPoint {
  Vec3 position = Vec3::Zero();
  std::optional<GridIndex> grid;  // empty for fine-seed waypoints
  int warm_from = -1;             // index within the task, -1 = task parent
  friend bool operator==(const PlanPoint&, const PlanPoint&) = default;
};

struct SweepTask {
  int id = 0;
  SweepPhase phase = SweepPhase::seed;
  WarmRef parent;
  std::vector<PlanPoint> points;
  friend bool operator==(const SweepTask&, const SweepTask&) = default;
};

struct SweepPlan {
  VolumeSpec volume;
  int fine_factor = 1;
  std::vector<SweepTask> tasks;  // task i has id i; parents precede children
};

/// Seed at the grid centre, vertical line up and down, width sweep along
/// each row of the centre depth plane, then one depth column per plane
/// point. fine_factor > 1 inserts fine_factor - 1 waypoints between grid
/// points on the line and plane sweeps.
SweepPlan plan_sweep(const VolumeSpec& volume, int fine_factor = 1);

/// Throws InvalidParameter if the plan is not a forest rooted at one seed
/// with resolvable warm-start references.
void validate_plan(const SweepPlan& plan);

struct PointResult {
  std::optional<GridIndex> grid;
  std::vector<double> phases;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  std::string status;
  WarmRef warm_source;  // the point actually used as starting phases
};

struct TaskResult {
  int task = 0;
  std::vector<PointResult> points;
};

void to_json(nlohmann::json& j, const SweepTask& t);
void from_json(const nlohmann::json& j, SweepTask& t);
void to_json(nlohmann::json& j, const PointResult& r);
void from_json(const nlohmann::json& j, PointResult& r);
void to_json(nlohmann::json& j, const TaskResult& r);
void from_json(const nlohmann::json& j, TaskResult& r);

struct RunOptions {
  int workers = 1;
  /// Empty: results are kept in memory only.
  std::filesystem::path work_dir;
  /// Identifies model and solver settings; a work dir written under a
  /// different fingerprint is rejected.
  std::string fingerprint;
  /// Stop dispatching after this many newly computed tasks (0 = no limit).
  std::size_t stop_after = 0;
  std::function<void(std::size_t done, std::size_t total)> progress;
  /// Replaces solve_trap when set.
  std::function<trap::SolveReport(const Vec3& target,
                                  const std::optional<acoustics::PhaseVector>& warm)>
      solver;
};

struct RunSummary {
  std::vector<std::shared_ptr<const TaskResult>> results;  // by task id, null if not run
  std::size_t computed = 0;
  std::size_t reused = 0;
  bool complete = false;
};

class WorkDirError : public Error {
 public:
  using Error::Error;
};

/// Executes the plan. Each task runs sequentially; tasks whose parent is
/// done run concurrently. With a work dir, results are written atomically
/// to results/<id>.json and reused on restart.
RunSummary run_tasks(const SweepPlan& plan, const acoustics::AcousticModel& model,
                     const trap::SolveOptions& solve, const RunOptions& options = {});

struct AuditEntry {
  GridIndex point{};
  std::string reason;  // "not_converged" or "missing"
  GridIndex source{};
};

struct Assembly {
  LookupTable table;
  std::vector<AuditEntry> audit;
};

/// Builds the dense table from grid-point results. Failed or missing
/// points copy the nearest converged grid point and are listed in the audit.
Assembly assemble_table(const std::vector<std::shared_ptr<const TaskResult>>& results,
                        const VolumeSpec& volume, std::size_t transducers);

nlohmann::json audit_json(const Assembly& assembly);

}  // namespace levi::precompute
