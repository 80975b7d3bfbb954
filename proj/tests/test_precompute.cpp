#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "levi/precompute.hpp"
#include "test_support.hpp"

using namespace levi;
using namespace levi::precompute;
namespace fs = std::filesystem;

namespace {

VolumeSpec grid(int nx, int ny, int nz, double res = 1e-3) {
  VolumeSpec v;
  v.resolution = Vec3(res, res, res);
  v.extents = Vec3((nx - 1) * res, (ny - 1) * res, (nz - 1) * res);
  v.origin = -0.5 * v.extents;
  return v;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("levi_test_" + name);
  fs::remove_all(dir);
  return dir;
}

const Vec3& position_of(const SweepPlan& plan, const WarmRef& ref) {
  return plan.tasks[std::size_t(ref.task)].points[std::size_t(ref.point)].position;
}

WarmRef warm_source(const SweepPlan& plan, int task, int point) {
  const auto& t = plan.tasks[std::size_t(task)];
  const int w = t.points[std::size_t(point)].warm_from;
  return w >= 0 ? WarmRef{task, w} : t.parent;
}

// Fake solver: phases encode the target, convergence controlled per point.
trap::SolveReport fake_solve(const Vec3& q, const std::optional<acoustics::PhaseVector>& warm,
                             const std::set<std::pair<long, long>>& failing) {
  trap::SolveReport r;
  r.phases = acoustics::PhaseVector(std::vector<double>{q[0] * 1e3 + 1.0, q[1] * 1e3 + 1.0,
                                                        warm ? warm->values()[0] : -1.0});
  const std::pair<long, long> key{std::lround(q[0] * 1e6), std::lround(q[1] * 1e6)};
  r.converged = !failing.count(key) || std::abs(q[2]) > 1e-9;
  r.status = r.converged ? "converged" : "max_iterations";
  r.warm_started = warm.has_value();
  return r;
}

}  // namespace

TEST_CASE("plan_sweep structure") {
  SUBCASE("1x1x1 is a single seed") {
    const auto plan = plan_sweep(grid(1, 1, 1));
    REQUIRE(plan.tasks.size() == 1);
    CHECK(plan.tasks[0].parent.random());
    CHECK(plan.tasks[0].phase == SweepPhase::seed);
    CHECK(plan.tasks[0].points.size() == 1);
  }
  SUBCASE("1x5x1 is a seed plus an up chain and a down chain") {
    const auto plan = plan_sweep(grid(1, 5, 1));
    REQUIRE(plan.tasks.size() == 5);
    CHECK(plan.tasks[0].points[0].grid == GridIndex{0, 2, 0});
    CHECK(plan.tasks[1].parent == WarmRef{0, 0});
    CHECK(plan.tasks[2].parent == WarmRef{1, 0});
    CHECK(plan.tasks[3].parent == WarmRef{0, 0});
    CHECK(plan.tasks[4].parent == WarmRef{3, 0});
    CHECK(plan.tasks[1].points[0].grid == GridIndex{0, 3, 0});
    CHECK(plan.tasks[2].points[0].grid == GridIndex{0, 4, 0});
    CHECK(plan.tasks[3].points[0].grid == GridIndex{0, 1, 0});
    CHECK(plan.tasks[4].points[0].grid == GridIndex{0, 0, 0});
    for (int t = 1; t < 5; ++t) CHECK(plan.tasks[t].phase == SweepPhase::vertical);
  }
  SUBCASE("desk volume: graph properties by traversal") {
    const VolumeSpec v;
    const auto plan = plan_sweep(v);
    CHECK_NOTHROW(validate_plan(plan));
    const auto d = v.dims();
    std::size_t depth = 0;
    std::size_t plane = 0;
    for (const auto& t : plan.tasks) (t.phase == SweepPhase::depth ? depth : plane)++;
    CHECK(depth == std::size_t(d[0] * d[1]));
    CHECK(plane == std::size_t(d[0] * d[1]));
    CHECK(plan.tasks.size() == depth + plane);

    std::map<std::size_t, int> seen;
    int roots = 0;
    for (const auto& t : plan.tasks) {
      if (t.parent.random()) {
        ++roots;
      } else {
        CHECK(t.parent.task < t.id);
      }
      for (std::size_t k = 0; k < t.points.size(); ++k) {
        const auto& p = t.points[k];
        REQUIRE(p.grid);
        ++seen[v.linear(*p.grid)];
        CHECK((p.position - v.point(*p.grid)).norm() < 1e-15);
        const WarmRef src = warm_source(plan, t.id, int(k));
        if (!src.random()) {
          // Warm starts always come from an adjacent grid point.
          CHECK(std::abs((position_of(plan, src) - p.position).norm() - 1e-3) < 1e-12);
        }
      }
    }
    CHECK(roots == 1);
    CHECK(seen.size() == v.point_count());
    for (const auto& [k, n] : seen) CHECK(n == 1);
    // Depth columns start from the plane at the centre depth.
    for (const auto& t : plan.tasks) {
      if (t.phase != SweepPhase::depth) continue;
      const auto& parent = plan.tasks[std::size_t(t.parent.task)];
      CHECK(parent.phase != SweepPhase::depth);
      CHECK((*parent.points[std::size_t(t.parent.point)].grid)[2] == v.center_index()[2]);
      CHECK(t.points.size() == std::size_t(d[2] - 1));
    }
  }
  SUBCASE("fine-seed mode inserts waypoints on line and plane sweeps only") {
    const VolumeSpec v = grid(3, 3, 3, 0.5e-3);
    const auto plan = plan_sweep(v, 5);
    CHECK_NOTHROW(validate_plan(plan));
    std::size_t grid_points = 0;
    for (const auto& t : plan.tasks) {
      for (std::size_t k = 0; k < t.points.size(); ++k) {
        const auto& p = t.points[k];
        grid_points += p.grid.has_value();
        const WarmRef src = warm_source(plan, t.id, int(k));
        if (src.random()) continue;
        const double step = (position_of(plan, src) - p.position).norm();
        if (t.phase == SweepPhase::depth) {
          CHECK(p.grid);
          CHECK(step == doctest::Approx(0.5e-3).epsilon(1e-9));
        } else {
          CHECK(step == doctest::Approx(0.1e-3).epsilon(1e-9));
        }
      }
      if (t.phase == SweepPhase::vertical || t.phase == SweepPhase::width) {
        CHECK(t.points.size() == 5);
        CHECK(t.points.back().grid);
      }
    }
    CHECK(grid_points == v.point_count());
  }
  SUBCASE("invalid inputs") {
    CHECK_THROWS_AS(plan_sweep(grid(3, 3, 3), 0), InvalidParameter);
    SweepPlan broken = plan_sweep(grid(1, 3, 1));
    broken.tasks[1].parent = WarmRef{2, 0};
    CHECK_THROWS_AS(validate_plan(broken), InvalidParameter);
  }
  SUBCASE("tasks round trip through JSON") {
    const auto plan = plan_sweep(grid(3, 3, 3), 2);
    for (const auto& t : plan.tasks) {
      const SweepTask back = nlohmann::json::parse(nlohmann::json(t).dump()).get<SweepTask>();
      CHECK(back == t);
    }
  }
}

TEST_CASE("run_tasks with a fake solver") {
  const auto model = levi::testing::desk_model();
  const trap::SolveOptions solve;

  SUBCASE("empty plan") {
    SweepPlan empty;
    const auto s = run_tasks(empty, model, solve);
    CHECK(s.results.empty());
    CHECK(s.complete);
  }
  SUBCASE("non-converged points are flagged and skipped as warm starts") {
    // Point (x=1 mm, y=0) in the centre plane fails; its width successor at
    // x=2 mm must warm start from x=0 instead.
    const VolumeSpec v = grid(5, 3, 1);
    const auto plan = plan_sweep(v);
    RunOptions opt;
    const std::set<std::pair<long, long>> failing{{1000, 0}};
    opt.solver = [&](const Vec3& q, const std::optional<acoustics::PhaseVector>& w) {
      return fake_solve(q, w, failing);
    };
    const auto s = run_tasks(plan, model, solve, opt);
    REQUIRE(s.complete);
    const PointResult* at1 = nullptr;
    const PointResult* at2 = nullptr;
    for (const auto& r : s.results) {
      for (const auto& p : r->points) {
        if (p.grid == GridIndex{3, 1, 0}) at1 = &p;
        if (p.grid == GridIndex{4, 1, 0}) at2 = &p;
      }
    }
    REQUIRE(at1);
    REQUIRE(at2);
    CHECK_FALSE(at1->converged);
    CHECK(at2->converged);
    CHECK(position_of(plan, at2->warm_source).isApprox(Vec3::Zero()));
    // phases[2] records the warm start's first phase: x = 0 mm encodes as 1.
    CHECK(at2->phases[2] == doctest::Approx(1.0));

    const auto assembled = assemble_table(s.results, v, 3);
    REQUIRE(assembled.audit.size() == 1);
    CHECK(assembled.audit[0].point == GridIndex{3, 1, 0});
    CHECK(assembled.audit[0].reason == "not_converged");
    const auto src = assembled.audit[0].source;
    CHECK((v.point(src) - v.point({3, 1, 0})).norm() == doctest::Approx(1e-3));
    const auto filled = assembled.table.phases(GridIndex{3, 1, 0});
    const auto from = assembled.table.phases(src);
    CHECK(std::equal(filled.begin(), filled.end(), from.begin()));
  }
  SUBCASE("failure everywhere cannot be assembled") {
    const VolumeSpec v = grid(1, 1, 1);
    RunOptions opt;
    opt.solver = [&](const Vec3& q, const std::optional<acoustics::PhaseVector>& w) {
      return fake_solve(q, w, {{0, 0}});
    };
    const auto s = run_tasks(plan_sweep(v), model, solve, opt);
    CHECK_THROWS_AS(assemble_table(s.results, v, 3), Error);
  }
  SUBCASE("missing points are filled and audited") {
    const VolumeSpec v = grid(3, 1, 1);
    RunOptions opt;
    opt.solver = [&](const Vec3& q, const std::optional<acoustics::PhaseVector>& w) {
      return fake_solve(q, w, {});
    };
    auto s = run_tasks(plan_sweep(v), model, solve, opt);
    const auto complete = assemble_table(s.results, v, 3);
    CHECK(complete.audit.empty());
    s.results[2].reset();
    const auto partial = assemble_table(s.results, v, 3);
    REQUIRE(partial.audit.size() == 1);
    CHECK(partial.audit[0].reason == "missing");
    CHECK(audit_json(partial)["filled_points"].size() == 1);
  }
}

TEST_CASE("run_tasks determinism with the trap solver") {
  const auto model = levi::testing::desk_model();
  trap::SolveOptions solve;
  solve.seed = 7;
  const VolumeSpec v = grid(5, 5, 3);
  const auto plan = plan_sweep(v);
  auto table_bytes_of = [&](const RunSummary& s) {
    return serialize(assemble_table(s.results, v, model.array.size()).table);
  };

  RunOptions one;
  one.workers = 1;
  const auto a = run_tasks(plan, model, solve, one);
  REQUIRE(a.complete);
  const auto bytes = table_bytes_of(a);
  for (const auto& r : a.results) {
    for (const auto& p : r->points) CHECK(p.converged);
  }

  RunOptions three;
  three.workers = 3;
  CHECK(table_bytes_of(run_tasks(plan, model, solve, three)) == bytes);

  SUBCASE("interrupted run resumes to the same bytes") {
    RunOptions part;
    part.workers = 2;
    part.work_dir = fresh_dir("resume");
    part.fingerprint = "test";
    part.stop_after = 10;
    const auto first = run_tasks(plan, model, solve, part);
    CHECK_FALSE(first.complete);
    CHECK(first.computed >= 10);
    CHECK(first.computed < plan.tasks.size());
    part.stop_after = 0;
    const auto second = run_tasks(plan, model, solve, part);
    CHECK(second.complete);
    CHECK(second.reused == first.computed);
    CHECK(second.reused + second.computed == plan.tasks.size());
    CHECK(table_bytes_of(second) == bytes);
    // A third run recomputes nothing.
    const auto third = run_tasks(plan, model, solve, part);
    CHECK(third.computed == 0);
    CHECK(table_bytes_of(third) == bytes);

    RunOptions other = part;
    other.fingerprint = "different";
    CHECK_THROWS_AS(run_tasks(plan, model, solve, other), WorkDirError);
    fs::remove_all(part.work_dir);
  }
  SUBCASE("corrupt result files are recomputed") {
    RunOptions opt;
    opt.work_dir = fresh_dir("corrupt");
    run_tasks(plan, model, solve, opt);
    {
      std::ofstream broken(opt.work_dir / "results" / "3.json", std::ios::trunc);
      broken << "{\"task\": 3, \"poi";
    }
    const auto again = run_tasks(plan, model, solve, opt);
    CHECK(again.computed == 1);
    CHECK(table_bytes_of(again) == bytes);
    fs::remove_all(opt.work_dir);
  }
}
