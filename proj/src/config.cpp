#include "levi/config.hpp"

#include <boost/program_options.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <thread>

namespace levi {

namespace po = boost::program_options;

void SessionConfig::validate() const {
  if (radii.empty()) throw InvalidParameter("session needs at least one target radius");
  for (double r : radii) {
    if (!(r > 0.0)) throw InvalidParameter("target radii must be positive");
  }
  if (!(distance > 0.0)) throw InvalidParameter("target distance must be positive");
  if (movements < 1) throw InvalidParameter("movements per condition must be >= 1");
  if (!(cd_ratio > 0.0)) throw InvalidParameter("control-display ratio must be positive");
  if (!(frame_rate > 0.0)) throw InvalidParameter("frame rate must be positive");
  if (!(sim_dt > 0.0)) throw InvalidParameter("session sim dt must be positive");
  if (participant.empty() || participant.find_first_of(",\n") != std::string::npos) {
    throw InvalidParameter("participant id must be non-empty without commas");
  }
}

acoustics::WaveParams Config::wave() const { return acoustics::WaveParams(frequency, medium.speed); }

acoustics::AcousticModel Config::model() const {
  const auto w = wave();
  return acoustics::AcousticModel{acoustics::make_opposed_arrays(array, w),
                                  acoustics::derive_constants(medium, particle, w), h_deriv};
}

void Config::validate() const {
  medium.validate();
  particle.validate();
  if (!(frequency > 0.0)) throw InvalidParameter("frequency must be positive");
  if (!(h_deriv >= 0.0)) throw InvalidParameter("h_deriv must be >= 0");
  if (array.columns < 1 || array.rows < 1) throw InvalidParameter("array needs >= 1 column and row");
  if (!(array.pitch > 0.0) || !(array.separation > 0.0) || !(array.piston_radius > 0.0) ||
      !(array.p0 > 0.0)) {
    throw InvalidParameter("array pitch, separation, piston radius and p0 must be positive");
  }
  solve.weights.validate();
  volume.validate();
  if (fine_factor < 1) throw InvalidParameter("fine_factor must be >= 1");
  if (workers < 0) throw InvalidParameter("workers must be >= 0");
  stepper.validate();
  sim.resolved(wave(), stepper.tick_rate);
  sweep.validate(volume);
  session.validate();
  if (serve_port < 0 || serve_port > 65535) throw InvalidParameter("serve port out of range");
}

int Config::resolved_workers() const {
  if (workers > 0) return workers;
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

namespace {

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double to_double(const std::string& s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ConfigError("not a number: '" + s + "'");
  }
  return v;
}

long long to_int(const std::string& s) {
  const std::string t = trim(s);
  long long v = 0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size()) {
    throw ConfigError("not an integer: '" + s + "'");
  }
  return v;
}

std::vector<double> to_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_double(item));
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + num(v[i]);
  return s;
}

Vec3 to_vec(const std::string& s) {
  const auto v = to_list(s);
  if (v.size() != 3) throw ConfigError("expected x,y,z: '" + s + "'");
  return Vec3(v[0], v[1], v[2]);
}

std::string vec(const Vec3& v) { return list({v[0], v[1], v[2]}); }

struct Key {
  std::string name;
  std::string doc;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

#define LEVI_DOUBLE(key, doc, field) \
  Key{key, doc, [](const Config& c) { return num(c.field); }, \
      [](Config& c, const std::string& v) { c.field = to_double(v); }}
#define LEVI_INT(key, doc, field) \
  Key{key, doc, [](const Config& c) { return std::to_string(c.field); }, \
      [](Config& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(to_int(v)); }}
#define LEVI_VEC(key, doc, field) \
  Key{key, doc, [](const Config& c) { return vec(c.field); }, \
      [](Config& c, const std::string& v) { c.field = to_vec(v); }}
#define LEVI_LIST(key, doc, field) \
  Key{key, doc, [](const Config& c) { return list(c.field); }, \
      [](Config& c, const std::string& v) { c.field = to_list(v); }}
#define LEVI_STRING(key, doc, field) \
  Key{key, doc, [](const Config& c) { return c.field; }, \
      [](Config& c, const std::string& v) { c.field = trim(v); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> k{
      LEVI_DOUBLE("acoustics.frequency", "Hz", frequency),
      LEVI_DOUBLE("acoustics.speed_of_sound", "m/s, medium", medium.speed),
      LEVI_DOUBLE("acoustics.medium_density", "kg/m^3", medium.density),
      LEVI_DOUBLE("acoustics.particle_density", "kg/m^3", particle.density),
      LEVI_DOUBLE("acoustics.particle_speed_of_sound", "m/s", particle.speed),
      LEVI_DOUBLE("acoustics.particle_radius", "m", particle.radius),
      LEVI_DOUBLE("acoustics.h_deriv", "m, field derivative step, 0 = analytic", h_deriv),
      LEVI_INT("array.columns", "transducers along x per array", array.columns),
      LEVI_INT("array.rows", "transducers along z per array", array.rows),
      LEVI_DOUBLE("array.pitch", "m, element + gap", array.pitch),
      LEVI_DOUBLE("array.separation", "m, face-to-face", array.separation),
      LEVI_DOUBLE("array.piston_radius", "m", array.piston_radius),
      LEVI_DOUBLE("array.p0", "Pa m, transducer power (calibrated)", array.p0),
      LEVI_DOUBLE("trap.w_pressure", "objective weight on |p|^2", solve.weights.pressure),
      LEVI_DOUBLE("trap.w_x", "Laplacian weight", solve.weights.x),
      LEVI_DOUBLE("trap.w_y", "Laplacian weight", solve.weights.y),
      LEVI_DOUBLE("trap.w_z", "Laplacian weight", solve.weights.z),
      LEVI_DOUBLE("trap.stencil_step", "m, 0 = wavelength / 40", solve.h),
      LEVI_INT("trap.max_iter", "BFGS iterations", solve.bfgs.max_iter),
      LEVI_DOUBLE("trap.grad_tol", "0 = 1e-6 (1 + |f(x0)|)", solve.bfgs.grad_tol),
      LEVI_DOUBLE("trap.line_search_shrink", "Armijo step multiplier", solve.bfgs.line_search.shrink),
      LEVI_DOUBLE("trap.armijo_c", "sufficient decrease constant", solve.bfgs.line_search.sufficient_decrease),
      LEVI_INT("trap.seed", "random start of the seed point", solve.seed),
      LEVI_VEC("volume.origin", "m, x,y,z", volume.origin),
      LEVI_VEC("volume.extents", "m, x,y,z", volume.extents),
      LEVI_VEC("volume.resolution", "m, x,y,z", volume.resolution),
      LEVI_INT("precompute.fine_factor", "waypoints per cell on line/plane, 1 = off", fine_factor),
      LEVI_INT("precompute.workers", "0 = all cores", workers),
      LEVI_STRING("precompute.work_dir", "task/result directory, empty = none", work_dir),
      LEVI_DOUBLE("runtime.tick_rate", "Hz", stepper.tick_rate),
      LEVI_DOUBLE("runtime.max_step", "m per tick", stepper.max_step),
      LEVI_DOUBLE("sim.dt", "s", sim.dt),
      LEVI_VEC("sim.gravity", "m/s^2", sim.gravity),
      LEVI_DOUBLE("sim.viscosity", "Pa s", sim.viscosity),
      LEVI_DOUBLE("sim.capture_radius", "m, 0 = wavelength / 4", sim.capture_radius),
      LEVI_DOUBLE("sim.escape_radius", "m, 0 = wavelength / 2", sim.escape_radius),
      LEVI_DOUBLE("sim.force_step", "m, 0 = wavelength / 100", sim.force_step),
      LEVI_VEC("sweep.path_start", "m", sweep.path_start),
      LEVI_VEC("sweep.path_end", "m", sweep.path_end),
      LEVI_LIST("sweep.speeds", "m/s, increasing", sweep.speeds),
      LEVI_INT("sweep.repeats", "runs per speed", sweep.repeats),
      LEVI_INT("sweep.seed", "start jitter seed", sweep.seed),
      LEVI_DOUBLE("sweep.ramp_fraction", "of path time, each end", sweep.ramp_fraction),
      LEVI_DOUBLE("sweep.settle_time", "s, before and after", sweep.settle_time),
      LEVI_DOUBLE("sweep.success_radius", "m", sweep.success_radius),
      LEVI_DOUBLE("sweep.start_jitter", "m", sweep.start_jitter),
      LEVI_INT("sweep.workers", "threads", sweep.workers),
      LEVI_LIST("session.radii", "m", session.radii),
      LEVI_DOUBLE("session.distance", "m", session.distance),
      LEVI_INT("session.movements", "per condition", session.movements),
      LEVI_DOUBLE("session.cd_ratio", "cursor / target displacement", session.cd_ratio),
      LEVI_INT("session.seed", "condition order", session.seed),
      LEVI_DOUBLE("session.frame_rate", "Hz", session.frame_rate),
      LEVI_DOUBLE("session.sim_dt", "s", session.sim_dt),
      LEVI_STRING("session.participant", "id written to the log", session.participant),
      LEVI_STRING("serve.address", "bind address", serve_address),
      LEVI_INT("serve.port", "TCP port", serve_port),
  };
  return k;
}

#undef LEVI_DOUBLE
#undef LEVI_INT
#undef LEVI_VEC
#undef LEVI_LIST
#undef LEVI_STRING

}  // namespace

Config parse_config(std::istream& in, const std::string& name) {
  po::options_description desc;
  for (const auto& k : keys()) desc.add_options()(k.name.c_str(), po::value<std::string>(), k.doc.c_str());
  po::variables_map vm;
  try {
    po::store(po::parse_config_file(in, desc, false), vm);
  } catch (const po::error& e) {
    throw ConfigError(name + ": " + e.what());
  }
  Config c;
  for (const auto& k : keys()) {
    if (!vm.count(k.name)) continue;
    try {
      k.set(c, vm[k.name].as<std::string>());
    } catch (const ConfigError& e) {
      throw ConfigError(name + ": " + k.name + ": " + e.what());
    }
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(name + ": " + e.what());
  }
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in, path);
}

void write_config(std::ostream& out, const Config& c) {
  std::string section;
  for (const auto& k : keys()) {
    const auto dot = k.name.find('.');
    const std::string s = k.name.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    out << k.name.substr(dot + 1) << " = " << k.get(c) << "  # " << k.doc << '\n';
  }
}

std::string Config::table_fingerprint() const {
  std::ostringstream s;
  for (const auto& k : keys()) {
    if (k.name.rfind("acoustics.", 0) == 0 || k.name.rfind("array.", 0) == 0 ||
        k.name.rfind("trap.", 0) == 0 || k.name.rfind("volume.", 0) == 0 ||
        k.name == "precompute.fine_factor") {
      s << k.name << '=' << k.get(*this) << ';';
    }
  }
  return s.str();
}

}  // namespace levi
