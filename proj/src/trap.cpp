#include "levi/trap.hpp"

#include <array>
#include <cmath>
#include <random>

namespace levi::trap {

using acoustics::transducer_response;

void TrapWeights::validate() const {
  for (double w : {pressure, x, y, z}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidParameter("trap weights must be >= 0");
  }
  if (pressure == 0.0 && x == 0.0 && y == 0.0 && z == 0.0) {
    throw InvalidParameter("at least one trap weight must be positive");
  }
}

void TrapObjectiveConfig::validate() const {
  weights.validate();
  if (!(h > 0.0)) throw InvalidParameter("trap stencil step must be positive");
}

TrapObjective::TrapObjective(const AcousticModel& model, const TrapObjectiveConfig& config)
    : config_(config) {
  config_.validate();
  const auto& array = model.array;
  const auto& wave = array.wave();
  const std::size_t n = array.size();
  const double h = config_.h;
  const double hd = model.h_deriv;
  const Vec3& q = config_.target;
  acoustics::check_field_point(array, q, h + hd);

  double amplitude = 0.0;
  for (std::size_t j = 0; j < n; ++j) amplitude += std::abs(transducer_response(array[j], wave, q));
  pressure_scale_ = amplitude * amplitude;
  const double k = wave.wavenumber();
  const auto& c = model.constants;
  laplacian_scale_ = (std::abs(c.k1) * k * k + std::abs(c.k2) * k * k * k * k) * pressure_scale_;
  if (!(laplacian_scale_ > 0.0)) laplacian_scale_ = 1.0;

  // Stencil: centre, then +/- h along x, y, z. U at each stencil point
  // enters O with coefficient u_s.
  const std::array<double, 3> w_axis{config_.weights.x, config_.weights.y, config_.weights.z};
  std::array<Vec3, 7> stencil;
  std::array<double, 7> u_coeff;
  stencil[0] = q;
  u_coeff[0] = 2.0 * (w_axis[0] + w_axis[1] + w_axis[2]) / (laplacian_scale_ * h * h);
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    stencil[1 + 2 * a] = q + e;
    stencil[2 + 2 * a] = q - e;
    u_coeff[1 + 2 * a] = -w_axis[a] / (laplacian_scale_ * h * h);
    u_coeff[2 + 2 * a] = u_coeff[1 + 2 * a];
  }

  coeffs_.resize(7 * 4, static_cast<Eigen::Index>(n));
  weights_.resize(7 * 4);
  for (int s = 0; s < 7; ++s) {
    const int row = 4 * s;
    for (std::size_t j = 0; j < n; ++j) {
      const auto col = static_cast<Eigen::Index>(j);
      const auto m = acoustics::transducer_sample(array[j], wave, stencil[s], hd);
      coeffs_(row, col) = m.p;
      for (int b = 0; b < 3; ++b) coeffs_(row + 1 + b, col) = m.grad[b];
    }
    weights_[row] = u_coeff[s] * c.k1;
    for (int b = 0; b < 3; ++b) weights_[row + 1 + b] = -u_coeff[s] * c.k2;
  }
  weights_[0] += config_.weights.pressure / pressure_scale_;
}

void TrapObjective::functionals(std::span<const double> phases, Eigen::VectorXcd& emission,
                                Eigen::VectorXcd& values) const {
  if (phases.size() != size()) {
    throw InvalidParameter("phase vector length does not match transducer count");
  }
  emission.resize(static_cast<Eigen::Index>(phases.size()));
  for (std::size_t j = 0; j < phases.size(); ++j) {
    emission[static_cast<Eigen::Index>(j)] = std::polar(1.0, phases[j]);
  }
  values.noalias() = coeffs_ * emission;
}

double TrapObjective::value(std::span<const double> phases) const {
  Eigen::VectorXcd emission;
  Eigen::VectorXcd values;
  functionals(phases, emission, values);
  return (weights_.array() * values.array().abs2()).sum();
}

double TrapObjective::value_and_gradient(std::span<const double> phases,
                                         std::span<double> gradient) const {
  Eigen::VectorXcd emission;
  Eigen::VectorXcd values;
  functionals(phases, emission, values);
  // d|L_m|^2 / d phi_j = 2 Re(conj(L_m) i e^{i phi_j} A_mj)
  //                    = -2 Im(e^{i phi_j} A_mj conj(L_m))
  const Eigen::VectorXcd weighted = (weights_.array() * values.array().conjugate()).matrix();
  const Eigen::VectorXcd back = coeffs_.transpose() * weighted;
  for (std::size_t j = 0; j < gradient.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    gradient[j] = -2.0 * (emission[jj] * back[jj]).imag();
  }
  return (weights_.array() * values.array().abs2()).sum();
}

double objective(const PhaseVector& phases, const TrapObjectiveConfig& config,
                 const AcousticModel& model) {
  return TrapObjective(model, config).value(phases.values());
}

std::vector<double> objective_gradient(const PhaseVector& phases,
                                       const TrapObjectiveConfig& config,
                                       const AcousticModel& model) {
  TrapObjective obj(model, config);
  std::vector<double> g(phases.size());
  obj.value_and_gradient(phases.values(), g);
  return g;
}

double unweighted_objective(const PhaseVector& phases, const Vec3& target, double h,
                            const AcousticModel& model) {
  // Same reference scales as TrapObjective, computed independently.
  const auto& wave = model.array.wave();
  double amplitude = 0.0;
  for (const auto& t : model.array.elements()) {
    amplitude += std::abs(transducer_response(t, wave, target));
  }
  const double pressure_scale = amplitude * amplitude;
  const double k = wave.wavenumber();
  double laplacian_scale = (std::abs(model.constants.k1) * k * k +
                            std::abs(model.constants.k2) * k * k * k * k) *
                           pressure_scale;
  if (!(laplacian_scale > 0.0)) laplacian_scale = 1.0;
  const double p2 = std::norm(acoustics::field_pressure(model.array, phases, target));
  return p2 / pressure_scale - acoustics::gorkov_laplacian(model, phases, target, h) / laplacian_scale;
}

void to_json(nlohmann::json& j, const SolveReport& r) {
  j = nlohmann::json{{"phases", std::vector<double>(r.phases.values().begin(), r.phases.values().end())},
                     {"objective", r.objective},
                     {"initial_objective", r.initial_objective},
                     {"iterations", r.iterations},
                     {"grad_norm", r.grad_norm},
                     {"converged", r.converged},
                     {"status", r.status},
                     {"seed", r.seed},
                     {"warm_started", r.warm_started}};
}

void from_json(const nlohmann::json& j, SolveReport& r) {
  r.phases = PhaseVector(j.at("phases").get<std::vector<double>>());
  r.objective = j.at("objective").get<double>();
  r.initial_objective = j.value("initial_objective", r.objective);
  r.iterations = j.at("iterations").get<int>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.converged = j.at("converged").get<bool>();
  r.status = j.value("status", std::string{});
  r.seed = j.value("seed", std::uint64_t{0});
  r.warm_started = j.value("warm_started", false);
}

PhaseVector random_phases(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, kTwoPi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return PhaseVector(std::move(v));
}

double default_stencil_step(const AcousticModel& model) {
  return model.array.wave().wavelength() / 40.0;
}

SolveReport solve_trap(const AcousticModel& model, const Vec3& target,
                       const std::optional<PhaseVector>& warm_start, const SolveOptions& options) {
  TrapObjectiveConfig cfg;
  cfg.target = target;
  cfg.weights = options.weights;
  cfg.h = options.h > 0.0 ? options.h : default_stencil_step(model);
  const TrapObjective obj(model, cfg);

  const PhaseVector start =
      warm_start ? *warm_start : random_phases(model.array.size(), options.seed);
  if (start.size() != model.array.size()) {
    throw InvalidParameter("warm start length does not match transducer count");
  }
  optim::Vector x0(static_cast<Eigen::Index>(start.size()));
  for (std::size_t j = 0; j < start.size(); ++j) x0[static_cast<Eigen::Index>(j)] = start[j];

  auto f = [&](const optim::Vector& x) {
    return obj.value(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  };
  auto g = [&](const optim::Vector& x) {
    optim::Vector out(x.size());
    obj.value_and_gradient(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
                           std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
    return out;
  };
  const double initial = f(x0);
  const auto result = optim::bfgs_minimize(f, g, x0, options.bfgs);

  SolveReport report;
  report.phases = PhaseVector(std::vector<double>(result.x.data(), result.x.data() + result.x.size()));
  report.objective = result.value;
  report.initial_objective = initial;
  report.iterations = result.iterations;
  report.grad_norm = result.grad_norm;
  report.converged = result.converged;
  report.status = optim::to_string(result.status);
  report.seed = options.seed;
  report.warm_started = warm_start.has_value();
  return report;
}

}  // namespace levi::trap
