#include "levi/precompute.hpp"

#include <condition_variable>
#include <fstream>
#include <limits>
#include <mutex>
#include <queue>
#include <sstream>
#include <thread>

namespace levi::precompute {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(SweepPhase phase) {
  switch (phase) {
    case SweepPhase::seed:
      return "seed";
    case SweepPhase::vertical:
      return "vertical";
    case SweepPhase::width:
      return "width";
    case SweepPhase::depth:
      return "depth";
  }
  return "unknown";
}

SweepPhase phase_from_string(const std::string& s) {
  if (s == "seed") return SweepPhase::seed;
  if (s == "vertical") return SweepPhase::vertical;
  if (s == "width") return SweepPhase::width;
  if (s == "depth") return SweepPhase::depth;
  throw InvalidParameter("unknown sweep phase '" + s + "'");
}

namespace {

class PlanBuilder {
 public:
  PlanBuilder(SweepPlan& plan, int fine) : plan_(plan), fine_(fine) {}

  int add(SweepPhase phase, WarmRef parent) {
    SweepTask t;
    t.id = static_cast<int>(plan_.tasks.size());
    t.phase = phase;
    t.parent = parent;
    plan_.tasks.push_back(std::move(t));
    return plan_.tasks.back().id;
  }

  /// Appends waypoints from `from` towards grid point `to`, ending on it.
  void line_step(int task, const GridIndex& from, const GridIndex& to) {
    auto& pts = plan_.tasks[task].points;
    const Vec3 a = plan_.volume.point(from);
    const Vec3 b = plan_.volume.point(to);
    for (int k = 1; k < fine_; ++k) {
      const double s = double(k) / fine_;
      push(pts, PlanPoint{a + s * (b - a), std::nullopt, 0});
    }
    push(pts, PlanPoint{b, to, 0});
  }

  void point(int task, const GridIndex& g, bool restart) {
    auto& pts = plan_.tasks[task].points;
    push(pts, PlanPoint{plan_.volume.point(g), g, 0}, restart);
  }

  WarmRef last(int task) const {
    return {task, static_cast<int>(plan_.tasks[task].points.size()) - 1};
  }

 private:
  static void push(std::vector<PlanPoint>& pts, PlanPoint p, bool restart = false) {
    p.warm_from = (pts.empty() || restart) ? -1 : static_cast<int>(pts.size()) - 1;
    pts.push_back(std::move(p));
  }

  SweepPlan& plan_;
  int fine_;
};

}  // namespace

SweepPlan plan_sweep(const VolumeSpec& volume, int fine_factor) {
  volume.validate();
  if (fine_factor < 1) throw InvalidParameter("fine-seed factor must be >= 1");
  SweepPlan plan;
  plan.volume = volume;
  plan.fine_factor = fine_factor;
  PlanBuilder b(plan, fine_factor);
  const auto d = volume.dims();
  const auto c = volume.center_index();

  // plane_task[ix + nx*iy] = task holding grid point (ix, iy, c_z)
  std::vector<int> plane_task(std::size_t(d[0]) * std::size_t(d[1]), -1);
  auto plane_at = [&](int ix, int iy) -> int& { return plane_task[std::size_t(iy) * d[0] + ix]; };

  const int seed = b.add(SweepPhase::seed, {});
  b.point(seed, c, false);
  plane_at(c[0], c[1]) = seed;

  for (int dir : {+1, -1}) {
    int prev = seed;
    for (int iy = c[1] + dir; iy >= 0 && iy < d[1]; iy += dir) {
      const int t = b.add(SweepPhase::vertical, b.last(prev));
      b.line_step(t, {c[0], iy - dir, c[2]}, {c[0], iy, c[2]});
      plane_at(c[0], iy) = t;
      prev = t;
    }
  }
  for (int iy = 0; iy < d[1]; ++iy) {
    for (int dir : {+1, -1}) {
      int prev = plane_at(c[0], iy);
      for (int ix = c[0] + dir; ix >= 0 && ix < d[0]; ix += dir) {
        const int t = b.add(SweepPhase::width, b.last(prev));
        b.line_step(t, {ix - dir, iy, c[2]}, {ix, iy, c[2]});
        plane_at(ix, iy) = t;
        prev = t;
      }
    }
  }
  if (d[2] > 1) {
    for (int iy = 0; iy < d[1]; ++iy) {
      for (int ix = 0; ix < d[0]; ++ix) {
        const int t = b.add(SweepPhase::depth, b.last(plane_at(ix, iy)));
        for (int dir : {+1, -1}) {
          bool first = true;
          for (int iz = c[2] + dir; iz >= 0 && iz < d[2]; iz += dir) {
            b.point(t, {ix, iy, iz}, first);
            first = false;
          }
        }
      }
    }
  }
  return plan;
}

void validate_plan(const SweepPlan& plan) {
  int seeds = 0;
  for (std::size_t i = 0; i < plan.tasks.size(); ++i) {
    const auto& t = plan.tasks[i];
    if (t.id != static_cast<int>(i)) throw InvalidParameter("task ids must equal their position");
    if (t.points.empty()) throw InvalidParameter("task " + std::to_string(t.id) + " is empty");
    if (t.parent.random()) {
      ++seeds;
    } else {
      if (t.parent.task >= t.id) {
        throw InvalidParameter("task " + std::to_string(t.id) + " depends on a later task");
      }
      const auto& p = plan.tasks[std::size_t(t.parent.task)];
      if (t.parent.point < 0 || t.parent.point >= static_cast<int>(p.points.size())) {
        throw InvalidParameter("task " + std::to_string(t.id) + " has a dangling warm start");
      }
    }
    for (std::size_t k = 0; k < t.points.size(); ++k) {
      if (t.points[k].warm_from >= static_cast<int>(k) || t.points[k].warm_from < -1) {
        throw InvalidParameter("task " + std::to_string(t.id) + " point order is not causal");
      }
    }
  }
  if (!plan.tasks.empty() && seeds != 1) {
    throw InvalidParameter("plan must contain exactly one randomly seeded task");
  }
}

void to_json(json& j, const SweepTask& t) {
  json pts = json::array();
  for (const auto& p : t.points) {
    json q{{"p", {p.position[0], p.position[1], p.position[2]}}, {"warm", p.warm_from}};
    q["grid"] = p.grid ? json(*p.grid) : json(nullptr);
    pts.push_back(std::move(q));
  }
  j = json{{"id", t.id},
           {"phase", to_string(t.phase)},
           {"parent", t.parent.random() ? json("random") : json{t.parent.task, t.parent.point}},
           {"points", std::move(pts)}};
}

void from_json(const json& j, SweepTask& t) {
  t.id = j.at("id").get<int>();
  t.phase = phase_from_string(j.at("phase").get<std::string>());
  const auto& parent = j.at("parent");
  t.parent = parent.is_string() ? WarmRef{} : WarmRef{parent.at(0).get<int>(), parent.at(1).get<int>()};
  t.points.clear();
  for (const auto& q : j.at("points")) {
    PlanPoint p;
    const auto& xyz = q.at("p");
    p.position = Vec3(xyz.at(0).get<double>(), xyz.at(1).get<double>(), xyz.at(2).get<double>());
    p.warm_from = q.at("warm").get<int>();
    if (!q.at("grid").is_null()) p.grid = q.at("grid").get<GridIndex>();
    t.points.push_back(std::move(p));
  }
}

void to_json(json& j, const PointResult& r) {
  j = json{{"grid", r.grid ? json(*r.grid) : json(nullptr)},
           {"phases", r.phases},
           {"objective", r.objective},
           {"iterations", r.iterations},
           {"converged", r.converged},
           {"status", r.status},
           {"warm_source", r.warm_source.random() ? json("random")
                                                  : json{r.warm_source.task, r.warm_source.point}}};
}

void from_json(const json& j, PointResult& r) {
  r.grid.reset();
  if (!j.at("grid").is_null()) r.grid = j.at("grid").get<GridIndex>();
  r.phases = j.at("phases").get<std::vector<double>>();
  r.objective = j.at("objective").get<double>();
  r.iterations = j.at("iterations").get<int>();
  r.converged = j.at("converged").get<bool>();
  r.status = j.at("status").get<std::string>();
  const auto& w = j.at("warm_source");
  r.warm_source = w.is_string() ? WarmRef{} : WarmRef{w.at(0).get<int>(), w.at(1).get<int>()};
}

void to_json(json& j, const TaskResult& r) { j = json{{"task", r.task}, {"points", r.points}}; }

void from_json(const json& j, TaskResult& r) {
  r.task = j.at("task").get<int>();
  r.points = j.at("points").get<std::vector<PointResult>>();
}

namespace {

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << text;
    out.flush();
    if (!out) throw WorkDirError("cannot write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw WorkDirError("cannot move result into " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string plan_text(const SweepPlan& plan, const std::string& fingerprint) {
  std::string out = json{{"format", "levicursor-tasks"},
                         {"version", 1},
                         {"fingerprint", fingerprint},
                         {"fine_factor", plan.fine_factor},
                         {"tasks", plan.tasks.size()}}
                        .dump();
  out += '\n';
  for (const auto& t : plan.tasks) {
    out += json(t).dump();
    out += '\n';
  }
  return out;
}

std::shared_ptr<const TaskResult> load_result(const fs::path& path, const SweepTask& task) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return nullptr;
  try {
    auto r = std::make_shared<TaskResult>(json::parse(read_file(path)).get<TaskResult>());
    if (r->task != task.id || r->points.size() != task.points.size()) return nullptr;
    return r;
  } catch (const json::exception&) {
    // Unreadable result files are recomputed.
    return nullptr;
  }
}

class Executor {
 public:
  Executor(const SweepPlan& plan, const acoustics::AcousticModel& model,
           const trap::SolveOptions& solve, const RunOptions& options)
      : plan_(plan), model_(model), solve_(solve), options_(options) {
    summary_.results.resize(plan.tasks.size());
    children_.resize(plan.tasks.size());
    for (const auto& t : plan.tasks) {
      if (!t.parent.random()) children_[std::size_t(t.parent.task)].push_back(t.id);
    }
  }

  RunSummary run() {
    prepare_work_dir();
    for (const auto& t : plan_.tasks) {
      if (summary_.results[t.id]) continue;
      if (t.parent.random() || summary_.results[std::size_t(t.parent.task)]) ready_.push(t.id);
    }
    done_ = summary_.reused;
    const int workers = std::max(1, options_.workers);
    {
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back([this] { work(); });
    }
    if (error_) std::rethrow_exception(error_);
    summary_.complete = done_ == plan_.tasks.size();
    return std::move(summary_);
  }

 private:
  void prepare_work_dir() {
    if (options_.work_dir.empty()) return;
    const fs::path dir = options_.work_dir;
    fs::create_directories(dir / "results");
    const fs::path tasks = dir / "tasks.jsonl";
    const std::string text = plan_text(plan_, options_.fingerprint);
    if (fs::exists(tasks)) {
      if (read_file(tasks) != text) {
        throw WorkDirError("work directory " + dir.string() +
                           " holds a different plan or configuration; use a fresh directory");
      }
    } else {
      write_atomic(tasks, text);
    }
    for (const auto& t : plan_.tasks) {
      auto r = load_result(result_path(t.id), t);
      if (r) {
        summary_.results[t.id] = std::move(r);
        ++summary_.reused;
      }
    }
  }

  fs::path result_path(int id) const {
    return options_.work_dir / "results" / (std::to_string(id) + ".json");
  }

  void work() {
    for (;;) {
      int id;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || !ready_.empty() || in_flight_ == 0; });
        if (stop_ || ready_.empty()) {
          cv_.notify_all();
          return;
        }
        id = ready_.top();
        ready_.pop();
        ++in_flight_;
      }
      try {
        auto result = std::make_shared<const TaskResult>(execute(plan_.tasks[id]));
        if (!options_.work_dir.empty()) write_atomic(result_path(id), json(*result).dump());
        std::lock_guard lock(mutex_);
        summary_.results[id] = std::move(result);
        ++summary_.computed;
        ++done_;
        --in_flight_;
        for (int child : children_[id]) {
          if (!summary_.results[child]) ready_.push(child);
        }
        if (options_.stop_after && summary_.computed >= options_.stop_after) stop_ = true;
        if (options_.progress) options_.progress(done_, plan_.tasks.size());
      } catch (...) {
        std::lock_guard lock(mutex_);
        if (!error_) error_ = std::current_exception();
        stop_ = true;
        --in_flight_;
      }
      cv_.notify_all();
    }
  }

  const PointResult& lookup(const WarmRef& ref, const TaskResult& current) const {
    if (ref.task == current.task) return current.points.at(std::size_t(ref.point));
    std::shared_ptr<const TaskResult> r;
    {
      std::lock_guard lock(mutex_);
      r = summary_.results.at(std::size_t(ref.task));
    }
    if (!r) throw Error("unresolvable warm-start dependency on task " + std::to_string(ref.task));
    return r->points.at(std::size_t(ref.point));
  }

  WarmRef source_of(const WarmRef& ref) const {
    const auto& p = plan_.tasks[std::size_t(ref.task)].points[std::size_t(ref.point)];
    return p.warm_from >= 0 ? WarmRef{ref.task, p.warm_from} : plan_.tasks[std::size_t(ref.task)].parent;
  }

  /// Nearest converged ancestor along the warm-start chain; the direct
  /// source when nothing upstream converged.
  WarmRef resolve(const WarmRef& direct, const TaskResult& current) const {
    for (WarmRef ref = direct; !ref.random(); ref = source_of(ref)) {
      if (lookup(ref, current).converged) return ref;
    }
    return direct;
  }

  TaskResult execute(const SweepTask& task) const {
    TaskResult out;
    out.task = task.id;
    out.points.reserve(task.points.size());
    for (std::size_t k = 0; k < task.points.size(); ++k) {
      const auto& p = task.points[k];
      const WarmRef direct =
          p.warm_from >= 0 ? WarmRef{task.id, p.warm_from} : task.parent;
      std::optional<acoustics::PhaseVector> warm;
      WarmRef used;
      if (!direct.random()) {
        used = resolve(direct, out);
        warm = acoustics::PhaseVector(lookup(used, out).phases);
      }
      const auto rep = options_.solver ? options_.solver(p.position, warm)
                                       : trap::solve_trap(model_, p.position, warm, solve_);
      PointResult r;
      r.grid = p.grid;
      r.phases.assign(rep.phases.values().begin(), rep.phases.values().end());
      r.objective = rep.objective;
      r.iterations = rep.iterations;
      r.converged = rep.converged;
      r.status = rep.status;
      r.warm_source = used;
      out.points.push_back(std::move(r));
    }
    return out;
  }

  const SweepPlan& plan_;
  const acoustics::AcousticModel& model_;
  const trap::SolveOptions& solve_;
  const RunOptions& options_;
  RunSummary summary_;
  std::vector<std::vector<int>> children_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::priority_queue<int, std::vector<int>, std::greater<>> ready_;
  std::size_t done_ = 0;
  int in_flight_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

}  // namespace

RunSummary run_tasks(const SweepPlan& plan, const acoustics::AcousticModel& model,
                     const trap::SolveOptions& solve, const RunOptions& options) {
  validate_plan(plan);
  if (options.workers < 1) throw InvalidParameter("worker count must be >= 1");
  Executor ex(plan, model, solve, options);
  return ex.run();
}

Assembly assemble_table(const std::vector<std::shared_ptr<const TaskResult>>& results,
                        const VolumeSpec& volume, std::size_t transducers) {
  Assembly out{LookupTable(volume, transducers), {}};
  const std::size_t n_points = volume.point_count();
  std::vector<const PointResult*> at(n_points, nullptr);
  for (const auto& r : results) {
    if (!r) continue;
    for (const auto& p : r->points) {
      if (!p.grid) continue;
      if (p.phases.size() != transducers) {
        throw InvalidParameter("result phase count does not match the transducer count");
      }
      at[volume.linear(*p.grid)] = &p;
    }
  }
  std::vector<std::size_t> good;
  for (std::size_t k = 0; k < n_points; ++k) {
    if (at[k] && at[k]->converged) good.push_back(k);
  }
  for (std::size_t k = 0; k < n_points; ++k) {
    if (at[k] && at[k]->converged) {
      out.table.set(k, at[k]->phases);
      continue;
    }
    if (good.empty()) {
      throw Error("cannot fill table point: no converged grid point available");
    }
    const Vec3 here = volume.point(volume.unlinear(k));
    std::size_t best = good.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t g : good) {
      const double dist = (volume.point(volume.unlinear(g)) - here).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = g;
      }
    }
    out.table.set(k, at[best]->phases);
    out.audit.push_back({volume.unlinear(k), at[k] ? "not_converged" : "missing", volume.unlinear(best)});
  }
  return out;
}

json audit_json(const Assembly& assembly) {
  json entries = json::array();
  for (const auto& e : assembly.audit) {
    entries.push_back({{"point", e.point}, {"reason", e.reason}, {"filled_from", e.source}});
  }
  return json{{"filled_points", std::move(entries)}};
}

}  // namespace levi::precompute
