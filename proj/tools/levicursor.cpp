// levicursor: precompute | simulate | fitts | serve
// Exit codes: 0 success, 1 runtime error, 2 usage or invalid configuration.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "levi/config.hpp"
#include "levi/fitts.hpp"
#include "levi/precompute.hpp"
#include "levi/serve.hpp"
#include "levi/sim.hpp"

namespace fs = std::filesystem;
using namespace levi;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;
constexpr const char* kWorkDirEnv = "LEVICURSOR_WORKDIR";

// Thrown for problems the user must fix in the invocation or config.
struct UsageError : Error {
  using Error::Error;
};

struct Common {
  std::string config_path;
  std::string work_dir;  // --work-dir, beats the environment and the config
};

Config load(const Common& c) {
  Config cfg;
  try {
    cfg = load_config(c.config_path);
    if (const char* env = std::getenv(kWorkDirEnv); env && *env) cfg.work_dir = env;
    if (!c.work_dir.empty()) cfg.work_dir = c.work_dir;
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  } catch (const InvalidParameter& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

/// `name` inside the work dir when it is set, else in the current directory.
std::string default_path(const Config& cfg, const std::string& name) {
  if (cfg.work_dir.empty()) return name;
  fs::create_directories(cfg.work_dir);
  return (fs::path(cfg.work_dir) / name).string();
}

LookupTable load_table(const std::string& path, const Config& cfg) {
  auto table = read_table(path);
  if (table.transducers() != cfg.model().array.size()) {
    throw Error("table " + path + " has " + std::to_string(table.transducers()) +
                " transducers, the configured array has " +
                std::to_string(cfg.model().array.size()));
  }
  return table;
}

// ---- precompute -----------------------------------------------------------

struct PrecomputeArgs {
  std::string out;
  int workers = -1;
  std::size_t stop_after = 0;
};

int cmd_precompute(const Common& common, const PrecomputeArgs& a) {
  Config cfg = load(common);
  if (a.workers >= 0) cfg.workers = a.workers;
  const auto model = cfg.model();
  try {
    check_volume_in_field(cfg.volume, model.array, cfg.particle.radius);
  } catch (const OutOfVolume& e) {
    throw UsageError(e.what());
  }
  const auto plan = precompute::plan_sweep(cfg.volume, cfg.fine_factor);
  const std::string out = a.out.empty() ? default_path(cfg, "table.lvct") : a.out;

  precompute::RunOptions opt;
  opt.workers = cfg.resolved_workers();
  if (!cfg.work_dir.empty()) opt.work_dir = fs::path(cfg.work_dir) / "sweep";
  opt.fingerprint = cfg.table_fingerprint();
  opt.stop_after = a.stop_after;
  std::size_t next_report = 0;
  opt.progress = [&](std::size_t done, std::size_t total) {
    if (done >= next_report || done == total) {
      std::cerr << "precompute: " << done << "/" << total << " tasks\n";
      next_report = done + std::max<std::size_t>(1, total / 10);
    }
  };
  std::cerr << "precompute: " << plan.tasks.size() << " tasks, " << opt.workers << " worker(s)"
            << (opt.work_dir.empty() ? "" : ", work dir " + opt.work_dir.string()) << "\n";
  const auto run = precompute::run_tasks(plan, model, cfg.solve, opt);
  std::cerr << "precompute: computed " << run.computed << ", reused " << run.reused << "\n";
  if (!run.complete) {
    std::cerr << "precompute: sweep incomplete; rerun with the same work dir to resume\n";
    return kRuntime;
  }

  const auto assembly = precompute::assemble_table(run.results, cfg.volume, model.array.size());
  write_table(out, assembly.table);
  {
    std::ofstream audit(out + ".audit.json");
    audit << precompute::audit_json(assembly).dump(2) << "\n";
  }
  const auto rep = smoothness_report(assembly.table);
  {
    std::ofstream csv(out + ".smoothness.csv");
    write_smoothness_csv(csv, assembly.table, rep);
  }
  std::cout << std::setprecision(4) << "table " << out << "\n"
            << "points " << assembly.table.point_count() << ", fallback " << assembly.audit.size()
            << "\n"
            << "smooth edges " << rep.smooth_edges << "/" << rep.edges << " (" << 100 * rep.fraction()
            << "%)\n"
            << "interior " << 100 * rep.interior_fraction() << "%, outer " << 100 * rep.outer_fraction()
            << "%\n";
  return kOk;
}

// ---- simulate -------------------------------------------------------------

struct SimulateArgs {
  std::string table;
  std::string experiment = "velocity-sweep";
  std::string out;
  int repeats = -1;
  int workers = -1;
  bool check_monotone = false;
};

int cmd_simulate(const Common& common, const SimulateArgs& a) {
  Config cfg = load(common);
  if (a.repeats >= 0) cfg.sweep.repeats = a.repeats;
  if (a.workers >= 0) cfg.sweep.workers = a.workers;
  const auto table = load_table(a.table, cfg);
  try {
    cfg.sweep.validate(table.volume());
  } catch (const InvalidParameter& e) {
    throw UsageError(std::string("invalid sweep: ") + e.what());
  }
  const auto model = cfg.model();
  const sim::Simulator simulator(model, cfg.particle, cfg.sim, cfg.stepper.tick_rate);
  const auto result = sim::velocity_sweep(simulator, table, cfg.sweep, cfg.stepper.tick_rate);

  const std::string out = a.out.empty() ? default_path(cfg, "sweep.csv") : a.out;
  {
    std::ofstream csv(out);
    if (!csv) throw Error("cannot write " + out);
    sim::write_sweep_csv(csv, result);
  }
  // Per-speed means for plotting.
  const std::string means = fs::path(out).replace_extension().string() + "_means.csv";
  {
    std::ofstream csv(means);
    csv << "speed_m_s,rate,mean_max_lag_mm,mean_final_error_mm,failures,mean_failure_time_fraction\n";
    for (const auto& row : result.rows) {
      double lag = 0, err = 0, ftf = 0;
      int n = 0, failed = 0;
      for (const auto& r : result.runs) {
        if (r.speed != row.speed) continue;
        ++n;
        lag += r.max_lag;
        err += r.final_error;
        if (r.failure_time_fraction >= 0) {
          ++failed;
          ftf += r.failure_time_fraction;
        }
      }
      csv << row.speed << ',' << row.rate() << ',' << 1e3 * lag / n << ',' << 1e3 * err / n << ','
          << failed << ',';
      if (failed) csv << ftf / failed;
      csv << '\n';
    }
  }
  sim::write_sweep_csv(std::cout, result);
  std::cerr << "simulate: wrote " << out << " and " << means << "; failures near the path ends: "
            << 100 * result.edge_failure_share << "%\n";
  if (a.check_monotone && !result.monotone()) {
    std::cerr << "simulate: success rate increases with speed\n";
    return kRuntime;
  }
  return kOk;
}

// ---- fitts ----------------------------------------------------------------

struct FittsArgs {
  std::string log;
  std::string sigma = "task_axis";
  std::string bins_out;
};

int cmd_fitts(const Common& common, const FittsArgs& a) {
  load(common);
  fitts::SigmaMode mode;
  try {
    mode = fitts::sigma_mode_from_string(a.sigma);
  } catch (const InvalidParameter& e) {
    throw UsageError(e.what());
  }
  std::vector<fitts::MovementRecord> log;
  try {
    log = fitts::parse_log_file(a.log);
  } catch (const fitts::ParseError& e) {
    std::cerr << a.log << ": " << e.what() << "\n";
    return kRuntime;
  }
  const auto summaries = fitts::summarize_all(log, mode);
  const auto fit = fitts::fit_fitts(summaries);
  const auto tp = fitts::throughput(summaries);
  std::cout << fitts::report_json(summaries, fit, tp, mode).dump(2) << "\n";
  if (!a.bins_out.empty()) {
    std::ofstream csv(a.bins_out);
    if (!csv) throw Error("cannot write " + a.bins_out);
    fitts::write_bins_csv(csv, fit);
  }
  return kOk;
}

// ---- serve ----------------------------------------------------------------

struct ServeArgs {
  std::string table;
  int port = -1;
  std::string log;
  std::string report;
  bool exit_when_done = false;
};

std::atomic<serve::SessionServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

int cmd_serve(const Common& common, const ServeArgs& a) {
  Config cfg = load(common);
  if (a.port >= 0) cfg.serve_port = a.port;
  if (cfg.serve_port > 65535) throw UsageError("port out of range");
  const auto table = load_table(a.table, cfg);
  const auto model = cfg.model();
  serve::ServeOptions opt;
  opt.address = cfg.serve_address;
  opt.port = static_cast<unsigned short>(cfg.serve_port);
  const std::string stem = "session_" + cfg.session.participant;
  opt.log_path = a.log.empty() ? default_path(cfg, stem + ".csv") : a.log;
  opt.report_path = a.report.empty() ? default_path(cfg, stem + "_report.json") : a.report;
  opt.exit_when_done = a.exit_when_done;
  serve::SessionServer server(table, model, cfg, opt);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serve: listening on ws://" << opt.address << ":" << server.port() << "/\n"
            << "serve: log " << opt.log_path << ", report " << opt.report_path << "\n";
  server.run();
  g_server = nullptr;
  const auto rep = server.report();
  std::cerr << "serve: session " << rep.value("phase", "unknown") << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LeviCursor: acoustic levitation pointing pipeline"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "configuration file")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--work-dir", common.work_dir,
                    std::string("work directory (overrides $") + kWorkDirEnv + " and the config)");
  };

  PrecomputeArgs pa;
  auto* pre = app.add_subcommand("precompute", "build the phase lookup table");
  add_common(pre);
  pre->add_option("-o,--out", pa.out, "table path (default <work dir>/table.lvct)");
  pre->add_option("--workers", pa.workers, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
  pre->add_option("--stop-after", pa.stop_after, "stop after computing this many tasks");

  SimulateArgs sa;
  auto* simc = app.add_subcommand("simulate", "particle experiments on a table");
  add_common(simc);
  simc->add_option("--table", sa.table, "lookup table")->required()->check(CLI::ExistingFile);
  simc->add_option("--experiment", sa.experiment, "experiment")->check(CLI::IsMember({"velocity-sweep"}));
  simc->add_option("-o,--out", sa.out, "success-rate CSV (default <work dir>/sweep.csv)");
  simc->add_option("--repeats", sa.repeats, "runs per speed");
  simc->add_option("--workers", sa.workers, "threads");
  simc->add_flag("--check-monotone", sa.check_monotone, "exit 1 if the rate increases with speed");

  FittsArgs fa;
  auto* fit = app.add_subcommand("fitts", "Fitts' law analysis of a movement log");
  add_common(fit);
  fit->add_option("log", fa.log, "movement log CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--sigma", fa.sigma, "endpoint spread: task_axis or radial");
  fit->add_option("--bins-out", fa.bins_out, "write the ID bin means as CSV");

  ServeArgs va;
  auto* srv = app.add_subcommand("serve", "host a pointing session over websocket");
  add_common(srv);
  srv->add_option("--table", va.table, "lookup table")->required()->check(CLI::ExistingFile);
  srv->add_option("--port", va.port, "port (overrides the config), 0 = any");
  srv->add_option("--log", va.log, "movement log CSV");
  srv->add_option("--report", va.report, "session report JSON");
  srv->add_flag("--exit-when-done", va.exit_when_done, "stop once the session finishes or aborts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*pre) return cmd_precompute(common, pa);
    if (*simc) return cmd_simulate(common, sa);
    if (*fit) return cmd_fitts(common, fa);
    if (*srv) return cmd_serve(common, va);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
