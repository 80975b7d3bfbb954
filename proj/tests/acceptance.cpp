// Acceptance run: one PASS/FAIL line per primary criterion, plus the
// end-to-end session as a secondary line. Soft criteria are reported but do
// not change the exit status.

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "levi/config.hpp"
#include "levi/fitts.hpp"
#include "levi/optimizer.hpp"
#include "levi/precompute.hpp"
#include "levi/session.hpp"
#include "levi/sim.hpp"
#include "levi/trap.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace levi;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failed = 0;

void criterion(const std::string& name, bool soft, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!o.pass && !soft) ++g_failed;
  std::cout << (o.pass ? "PASS" : "FAIL") << (soft ? " (soft)" : "") << "  " << name << "  ["
            << std::fixed << std::setprecision(1) << s << " s]  " << o.detail << std::endl;
}

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

const acoustics::AcousticModel& model() {
  static const auto m = Config{}.model();
  return m;
}

// ---- physics --------------------------------------------------------------

Complex fd_pressure(const acoustics::PhaseVector& ph, const Vec3& x, int axis, double h) {
  Vec3 e = Vec3::Zero();
  e[axis] = h;
  return (acoustics::field_pressure(model().array, ph, x + e) -
          acoustics::field_pressure(model().array, ph, x - e)) /
         (2.0 * h);
}

Outcome physics_oracles() {
  const auto& m = model();
  const double lambda = m.array.wave().wavelength();
  const std::size_t n = m.array.size();
  std::ostringstream d;
  bool ok = true;

  // Assembled gradient against central differences of the objective
  // evaluated through the acoustics module.
  trap::TrapObjectiveConfig oc;
  oc.target = Vec3(-1e-3, 3e-3, 2e-3);
  oc.h = trap::default_stencil_step(m);
  const trap::TrapObjective obj(m, oc);
  double worst_grad = 0.0;
  for (unsigned seed = 0; seed < 20; ++seed) {
    const auto ph = testing::seeded_phases(n, 500 + seed);
    std::vector<double> g(n);
    obj.value_and_gradient(ph.values(), g);
    double gmax = 0.0;
    for (double v : g) gmax = std::max(gmax, std::abs(v));
    std::vector<double> x(ph.values().begin(), ph.values().end());
    const double step = 1e-5;
    for (std::size_t j = 0; j < n; ++j) {
      const double keep = x[j];
      x[j] = keep + step;
      const double fp = trap::unweighted_objective(acoustics::PhaseVector(x), oc.target, oc.h, m);
      x[j] = keep - step;
      const double fm = trap::unweighted_objective(acoustics::PhaseVector(x), oc.target, oc.h, m);
      x[j] = keep;
      worst_grad = std::max(worst_grad, std::abs((fp - fm) / (2 * step) - g[j]) / gmax);
    }
  }
  ok &= worst_grad < 1e-5;
  d << "grad rel err " << fmt(worst_grad);

  // Global phase invariance.
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> shift(-10.0, 10.0);
  double worst_inv = 0.0;
  for (unsigned trial = 0; trial < 20; ++trial) {
    const auto ph = testing::seeded_phases(n, 900 + trial);
    const auto sh = ph.shifted(shift(rng));
    const Vec3 x(0.4e-3 * trial - 4e-3, -2e-3, 1e-3);
    worst_inv = std::max(worst_inv, testing::rel_diff(obj.value(ph.values()), obj.value(sh.values())));
    worst_inv = std::max(worst_inv, testing::rel_diff(m.potential(ph, x), m.potential(sh, x)));
  }
  ok &= worst_inv < 1e-9;
  d << "; phase invariance " << fmt(worst_inv);

  // Convergence order of central differences of p over one decade of h.
  const auto ph = testing::seeded_phases(n, 11);
  const Vec3 x(1e-3, 2e-3, -2e-3);
  double lo_order = 1e9, hi_order = -1e9;
  for (int axis = 0; axis < 3; ++axis) {
    const double hr = lambda / 1000.0;
    const Complex ref = (4.0 * fd_pressure(ph, x, axis, hr / 2) - fd_pressure(ph, x, axis, hr)) / 3.0;
    std::vector<double> lh, le;
    for (double div : {20.0, 28.0, 40.0, 56.0, 80.0, 113.0, 160.0, 200.0}) {
      lh.push_back(std::log(lambda / div));
      le.push_back(std::log(std::abs(fd_pressure(ph, x, axis, lambda / div) - ref)));
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lh.size(); ++i) {
      mx += lh[i] / lh.size();
      my += le[i] / lh.size();
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lh.size(); ++i) {
      sxy += (lh[i] - mx) * (le[i] - my);
      sxx += (lh[i] - mx) * (lh[i] - mx);
    }
    lo_order = std::min(lo_order, sxy / sxx);
    hi_order = std::max(hi_order, sxy / sxx);
  }
  ok &= lo_order >= 1.8 && hi_order <= 2.2;
  d << "; FD order " << fmt(lo_order) << ".." << fmt(hi_order);

  // Laplacian Richardson agreement.
  double worst_lap = 0.0;
  for (unsigned seed : {5u, 6u, 7u}) {
    const auto p = testing::seeded_phases(n, seed);
    const Vec3 q(1e-3, -1e-3, 2e-3);
    const double h = lambda / 40.0;
    const double l1 = acoustics::gorkov_laplacian(m, p, q, h);
    const double l2 = acoustics::gorkov_laplacian(m, p, q, h / 2);
    const double ex = (4 * l2 - l1) / 3;
    worst_lap = std::max(worst_lap, std::abs(l2 - ex) / std::abs(ex));
  }
  ok &= worst_lap < 5e-3;
  d << "; Laplacian Richardson " << fmt(100 * worst_lap) << "%";
  return {ok, d.str()};
}

// ---- trap synthesis -------------------------------------------------------

/// U minimiser near `q`: coarse scan of +-2 mm, refined +-0.2 mm.
Vec3 u_argmin(const std::vector<Complex>& emission, const Vec3& q) {
  auto scan = [&](const Vec3& c, double half, int steps) {
    double best = std::numeric_limits<double>::infinity();
    Vec3 arg = c;
    const double h = half / steps;
    for (int i = -steps; i <= steps; ++i) {
      for (int j = -steps; j <= steps; ++j) {
        for (int k = -steps; k <= steps; ++k) {
          const Vec3 x = c + h * Vec3(i, j, k);
          const double u = model().potential(emission, x);
          if (u < best) {
            best = u;
            arg = x;
          }
        }
      }
    }
    return arg;
  };
  const Vec3 coarse = scan(q, 2e-3, 10);
  return scan(coarse, 0.2e-3, 10);
}

Outcome trap_synthesis() {
  const auto& m = model();
  const Vec3 q = Config{}.volume.center();
  const auto r = trap::solve_trap(m, q, std::nullopt, trap::SolveOptions{});
  const double lap = acoustics::gorkov_laplacian(m, r.phases, q, m.array.wave().wavelength() / 40);
  const Vec3 arg = u_argmin(acoustics::phasors(r.phases), q);
  const double off = (arg - q).norm();
  std::ostringstream d;
  d << "converged " << r.converged << " in " << r.iterations << " iterations; laplacian(U) "
    << fmt(lap) << "; U minimum " << fmt(off * 1e3) << " mm from the request";
  return {r.converged && lap > 0 && off <= 0.1e-3, d.str()};
}

// ---- BFGS -----------------------------------------------------------------

Outcome bfgs_regression() {
  using optim::Vector;
  Eigen::MatrixXd a(4, 4);
  a << 5, 1, 0, 0, 1, 4, 1, 0, 0, 1, 3, 1, 0, 0, 1, 2;
  Vector b(4);
  b << 1, -1, 2, 0.5;
  const Vector exact = a.ldlt().solve(b);
  optim::BfgsOptions opt;
  opt.grad_tol = 1e-10;
  const auto quad = optim::bfgs_minimize(
      [&](const Vector& x) { return 0.5 * x.dot(a * x) - b.dot(x); },
      [&](const Vector& x) -> Vector { return a * x - b; }, Vector::Zero(4), opt);
  const double eq = (quad.x - exact).cwiseAbs().maxCoeff();

  Vector x0(2);
  x0 << -1.2, 1.0;
  const auto rb = optim::bfgs_minimize(
      [](const Vector& x) { return 100 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1 - x[0], 2); },
      [](const Vector& x) -> Vector {
        Vector g(2);
        g << -400 * x[0] * (x[1] - x[0] * x[0]) - 2 * (1 - x[0]), 200 * (x[1] - x[0] * x[0]);
        return g;
      },
      x0, opt);
  const double er = (rb.x - Vector::Ones(2)).cwiseAbs().maxCoeff();
  std::ostringstream d;
  d << "quadratic err " << fmt(eq) << " (" << quad.iterations << " it); Rosenbrock err " << fmt(er)
    << " (" << rb.iterations << " it)";
  return {quad.converged && rb.converged && eq < 1e-6 && er < 1e-6, d.str()};
}

// ---- precompute -----------------------------------------------------------

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::vector<std::string>& args, const std::string& workdir, double kill_after) {
  const pid_t pid = fork();
  if (pid == 0) {
    setenv("LEVICURSOR_WORKDIR", workdir.c_str(), 1);
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>(LEVICURSOR_BIN));
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const int devnull = ::open("/dev/null", O_WRONLY);
    dup2(devnull, 1);
    dup2(devnull, 2);
    execv(LEVICURSOR_BIN, argv.data());
    _exit(127);
  }
  if (kill_after > 0) {
    std::this_thread::sleep_for(std::chrono::duration<double>(kill_after));
    kill(pid, SIGKILL);
  }
  int status = 0;
  waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -WTERMSIG(status);
}

LookupTable g_desk_table;

Outcome precompute_determinism() {
  const Config cfg;
  const auto& m = model();
  const auto plan = precompute::plan_sweep(cfg.volume, cfg.fine_factor);
  auto build = [&](int workers) {
    precompute::RunOptions o;
    o.workers = workers;
    const auto t0 = Clock::now();
    const auto run = precompute::run_tasks(plan, m, cfg.solve, o);
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    return std::pair{precompute::assemble_table(run.results, cfg.volume, m.array.size()), s};
  };
  const auto [one, t_one] = build(1);
  const auto [three, t_three] = build(3);
  const auto bytes = serialize(one.table);
  const bool same_workers = serialize(three.table) == bytes;

  // Restart: the CLI is killed mid-sweep, then rerun on the same work dir.
  const auto dir = fs::temp_directory_path() / "levi_acceptance_precompute";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream c(dir / "desk.cfg");
    write_config(c, cfg);
  }
  const std::vector<std::string> args{"precompute", "--config", (dir / "desk.cfg").string(),
                                      "--workers", "1"};
  const int killed = run_cli(args, (dir / "wd").string(), 0.4 * t_one);
  std::size_t partial = 0;
  if (fs::exists(dir / "wd" / "sweep" / "results")) {
    for (const auto& e : fs::directory_iterator(dir / "wd" / "sweep" / "results")) {
      partial += e.path().extension() == ".json";
    }
  }
  const int resumed = run_cli(args, (dir / "wd").string(), 0);
  const bool same_restart = resumed == 0 && read_bytes(dir / "wd" / "table.lvct") == bytes;
  fs::remove_all(dir);

  const auto rep = smoothness_report(one.table);
  const std::size_t nonsmooth = rep.edges - rep.smooth_edges;
  // Boundary concentration: the outer shell is no smoother than the interior.
  const bool concentrated = rep.outer_fraction() <= rep.interior_fraction();
  g_desk_table = one.table;

  std::ostringstream d;
  d << "build " << fmt(t_one) << " s (1 worker, 1 core); bytes equal across 1/3 workers: "
    << same_workers << "; killed run (signal " << -killed << ") left " << partial << "/"
    << plan.tasks.size() << " results, resume identical: " << same_restart
    << "; interior smooth " << fmt(100 * rep.interior_fraction(), 4) << "%, outer "
    << fmt(100 * rep.outer_fraction(), 4) << "%, non-smooth edges " << nonsmooth << "/" << rep.edges
    << "; fallback points " << one.audit.size();
  const bool ok = same_workers && killed < 0 && partial > 0 && partial < plan.tasks.size() &&
                  same_restart && rep.interior_fraction() >= 0.90 && concentrated && t_one < 1800;
  return {ok, d.str()};
}

// ---- interpolation --------------------------------------------------------

Outcome interpolation_fidelity() {
  const auto& table = g_desk_table;
  const auto& vol = table.volume();
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int queries = 0, rejected = 0;
  while (queries < 50) {
    const Vec3 q = vol.origin + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(vol.extents);
    if (!runtime::smooth_neighborhood(table, q)) {
      ++rejected;
      continue;
    }
    ++queries;
    const auto emission = acoustics::phasors(runtime::sample_phases(table, q));
    worst = std::max(worst, (u_argmin(emission, q) - q).norm());
  }

  // Stabiliser clamp over 10 s of random input at 1 kHz.
  runtime::Stepper st(table, runtime::StepperConfig{});
  st.place_particle(vol.center());
  std::uniform_real_distribution<double> jump(-0.04, 0.04);
  double max_step = 0.0;
  Vec3 prev = st.state().trap;
  for (int i = 0; i < 10000; ++i) {
    std::optional<runtime::CursorInput> in;
    if (i % 5 != 0) in = runtime::CursorInput{std::uint64_t(i + 1), Vec3(jump(rng), jump(rng), jump(rng)), 0};
    const auto& s = st.tick(in);
    max_step = std::max(max_step, (s.trap - prev).norm());
    prev = s.trap;
  }
  const double limit = st.config().max_step;
  std::ostringstream d;
  d << "worst U-minimum offset " << fmt(worst * 1e3) << " mm over 50 queries (" << rejected
    << " non-smooth rejected); largest trap step in 10000 ticks " << fmt(max_step * 1e3, 6)
    << " mm (limit " << limit * 1e3 << ")";
  return {worst <= 0.5e-3 && max_step <= limit * (1 + 1e-12), d.str()};
}

// ---- velocity sweep -------------------------------------------------------

Outcome velocity_sweep() {
  const Config cfg;
  const sim::Simulator s(model(), cfg.particle, cfg.sim, cfg.stepper.tick_rate);
  const auto r = sim::velocity_sweep(s, g_desk_table, cfg.sweep, cfg.stepper.tick_rate);
  // Regression values pinned from the first desk run.
  constexpr double kLastHeld = 0.075, kFirstLost = 0.1;
  bool pinned = true;
  std::ostringstream rates;
  for (const auto& row : r.rows) {
    rates << row.speed << ":" << row.rate() << " ";
    if (row.speed <= kLastHeld && row.rate() != 1.0) pinned = false;
    if (row.speed >= kFirstLost && row.rate() != 0.0) pinned = false;
  }
  const bool ends = r.rows.front().rate() == 1.0 && r.rows.back().rate() == 0.0;
  std::ostringstream d;
  d << "rates (m/s:rate) " << rates.str() << "; monotone " << r.monotone() << "; pinned 1.0 up to "
    << kLastHeld << " m/s, 0.0 from " << kFirstLost << " m/s: " << pinned
    << "; failures near path ends " << fmt(100 * r.edge_failure_share) << "%";
  return {ends && r.monotone() && pinned, d.str()};
}

// ---- loop timing ----------------------------------------------------------

Outcome loop_timing() {
  Config cfg;
  session::SessionEngine e(g_desk_table, model(), cfg);
  session::ScriptedPointer p(e.geometry(), cfg.session, e.runtime_state().trap);
  e.start();
  std::uint64_t seq = 0;
  for (int i = 0; i < 10000 && e.phase() == session::Phase::running; ++i) {
    const session::ClientView v{e.time(), e.particle().position, e.runtime_state().trap, e.aim(),
                                e.radius(), e.geometry().targets};
    e.tick(runtime::CursorInput{++seq, p.next(v, 1e-3), e.time()});
  }
  const auto st = runtime::timing_stats(e.tick_durations());
  std::ostringstream d;
  d << e.tick_durations().size() << " ticks (stepper + particle sim): p50 " << fmt(st.p50 * 1e6)
    << " us, p99 " << fmt(st.p99 * 1e6) << " us, max " << fmt(st.max * 1e6) << " us";
  return {st.p99 < 1e-3, d.str()};
}

// ---- Fitts ----------------------------------------------------------------

std::vector<fitts::MovementRecord> synthetic_condition(double radius, double sigma, double mt,
                                                       int moves, std::mt19937_64* rng,
                                                       double* t) {
  const Vec3 a(-34e-3, 0, 0), b(34e-3, 0, 0);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<fitts::MovementRecord> out;
  for (int i = 0; i < moves; ++i) {
    fitts::MovementRecord m;
    m.participant = "p";
    m.condition_radius = radius;
    m.move_index = i;
    m.from = i % 2 ? b : a;
    m.to = i % 2 ? a : b;
    // Deterministic +-sigma pattern when no rng: population SD exactly sigma.
    const double dev = rng ? sigma * n(*rng) : (i % 4 < 2 ? sigma : -sigma);
    m.endpoint = m.to + dev * (m.to - m.from).normalized();
    m.t_start = *t;
    *t += mt;
    m.t_end = *t;
    out.push_back(m);
  }
  return out;
}

Outcome fitts_pipeline() {
  std::ostringstream d;
  bool ok = true;

  // W_e = 4.133 sigma.
  {
    double t = 0;
    const auto log = synthetic_condition(4e-3, 1e-3, 0.5, 8, nullptr, &t);
    const auto s = fitts::summarize_all(log).at(0);
    const bool exact = std::abs(s.sigma - 1e-3) < 1e-13 && s.we == 4.133 * s.sigma;
    ok &= exact;
    d << "sigma " << fmt(s.sigma, 15) << ", W_e = 4.133 sigma exact: " << exact;
  }
  // Exact-linear: MT = a + b ID_e per condition.
  {
    const double a = 0.12, b = 0.17;
    std::vector<fitts::MovementRecord> log;
    double t = 0;
    for (double r : {1e-3, 2e-3, 4e-3, 8e-3, 16e-3}) {
      double scratch = 0;
      const auto probe = fitts::summarize_all(synthetic_condition(r, r / 4, 1.0, 8, nullptr, &scratch));
      const auto rows = synthetic_condition(r, r / 4, a + b * probe.at(0).ide, 8, nullptr, &t);
      log.insert(log.end(), rows.begin(), rows.end());
    }
    // Through the CSV round trip, as the CLI sees it.
    std::stringstream csv;
    fitts::write_log(csv, log);
    const auto fit = fitts::fit_fitts(fitts::summarize_all(fitts::parse_log(csv)));
    const bool exact = std::abs(fit.a - a) < 1e-9 && std::abs(fit.b - b) < 1e-9 &&
                       std::abs(fit.r2 - 1.0) < 1e-12;
    ok &= exact;
    d << "; exact-linear a " << fmt(fit.a, 10) << " b " << fmt(fit.b, 10) << " R2 " << fmt(fit.r2, 15);
  }
  // Monte-Carlo recovery.
  {
    const double a = 0.4, b = 0.2;
    std::mt19937_64 rng(77);
    double sa = 0, sb = 0;
    double worst_b = 0;
    const int reps = 100;
    for (int rep = 0; rep < reps; ++rep) {
      std::vector<fitts::IdMt> pts;
      std::uniform_real_distribution<double> id(1.0, 7.0);
      std::normal_distribution<double> noise(0.0, 1.0);
      for (int i = 0; i < 300; ++i) {
        const double x = id(rng);
        const double mean = a + b * x;
        pts.push_back({x, mean + 0.05 * mean * noise(rng)});
      }
      const auto fit = fitts::fit_fitts(pts);
      sa += fit.a / reps;
      sb += fit.b / reps;
      worst_b = std::max(worst_b, std::abs(fit.b - b) / b);
    }
    const bool within = std::abs(sa - a) / a < 0.05 && std::abs(sb - b) / b < 0.05;
    ok &= within;
    d << "; Monte-Carlo mean a " << fmt(sa) << " b " << fmt(sb) << " (worst single b "
      << fmt(100 * worst_b) << "%)";
  }
  return {ok, d.str()};
}

Outcome end_to_end_session() {
  const auto r = session::run_scripted_session(g_desk_table, model(), Config{}, 600.0);
  std::stringstream csv;
  fitts::write_log(csv, r.log);
  const auto summaries = fitts::summarize_all(fitts::parse_log(csv));
  const auto fit = fitts::fit_fitts(summaries);
  const auto tp = fitts::throughput(summaries);
  // CD ratio in frames: first running frames after a cursor step.
  std::ostringstream d;
  d << "phase " << session::to_string(r.phase) << ", " << r.log.size() << " movements in "
    << fmt(r.duration) << " s simulated; a " << fmt(fit.a) << " s, b " << fmt(fit.b) << " s/bit, R2 "
    << fmt(fit.r2) << ", TP_ea " << fmt(tp.tp_ea) << ", TP_emax " << fmt(tp.tp_emax) << " bits/s";
  return {r.phase == session::Phase::finished && r.log.size() == 150 && summaries.size() == 3, d.str()};
}

}  // namespace

int main() {
  std::cout << "levicursor acceptance (desk setup: two opposed 6x6 arrays, 40 kHz, 80 mm gap)\n";
  criterion("physics oracle suite", false, physics_oracles);
  criterion("trap synthesis", false, trap_synthesis);
  criterion("BFGS regression", false, bfgs_regression);
  criterion("precompute determinism and smoothness", false, precompute_determinism);
  if (g_desk_table.point_count() == 0) {
    std::cout << "desk table unavailable; table-dependent criteria not run\n";
    return 1;
  }
  criterion("interpolation fidelity and stabiliser clamp", false, interpolation_fidelity);
  criterion("velocity sweep", false, velocity_sweep);
  criterion("loop timing p99 < 1 ms", true, loop_timing);
  criterion("Fitts pipeline", false, fitts_pipeline);
  criterion("end-to-end scripted session (secondary)", true, end_to_end_session);
  std::cout << (g_failed ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED") << " (" << g_failed
            << " failing criteria)\n";
  return g_failed ? 1 : 0;
}
