#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "levi/acoustics.hpp"
#include "levi/optimizer.hpp"

namespace levi::trap {

using acoustics::AcousticModel;
using acoustics::PhaseVector;

struct TrapWeights {
  double pressure = 1.0;
  double x = 1.0;
  double y = 1.0;
  double z = 1.0;

  void validate() const;
};

struct TrapObjectiveConfig {
  Vec3 target = Vec3::Zero();
  TrapWeights weights;
  double h = 0.0;  // Laplacian stencil step, m

  void validate() const;
};

/// Weighted trap objective
///
///   O = w_p |p(q)|^2 / P - (w_x U_xx + w_y U_yy + w_z U_zz)(q) / L
///
/// with U_aa taken by second differences of step h and the field
/// derivatives inside U from the model (analytic unless h_deriv > 0). P and L
/// are per-target reference scales (see pressure_scale / laplacian_scale)
/// that make both terms dimensionless and of comparable size.
///
/// Every term is |linear functional of e^{i phi}|^2, so the whole objective
/// is a fixed quadratic form in the emission phasors and is assembled once
/// per target.
class TrapObjective {
 public:
  TrapObjective(const AcousticModel& model, const TrapObjectiveConfig& config);

  std::size_t size() const { return static_cast<std::size_t>(coeffs_.cols()); }
  const TrapObjectiveConfig& config() const { return config_; }

  /// (sum_j |M_j(q)|)^2: the largest |p(q)|^2 any phase vector can reach.
  double pressure_scale() const { return pressure_scale_; }
  /// (|k1| k^2 + |k2| k^4) * pressure_scale(): the order of magnitude of a
  /// Laplacian of U for a field of that amplitude.
  double laplacian_scale() const { return laplacian_scale_; }

  /// Phases need not be wrapped.
  double value(std::span<const double> phases) const;
  double value_and_gradient(std::span<const double> phases, std::span<double> gradient) const;

 private:
  void functionals(std::span<const double> phases, Eigen::VectorXcd& emission,
                   Eigen::VectorXcd& values) const;

  TrapObjectiveConfig config_;
  double pressure_scale_ = 1.0;
  double laplacian_scale_ = 1.0;
  Eigen::MatrixXcd coeffs_;   // one row per linear functional
  Eigen::VectorXd weights_;   // O = sum_m weights_m |row_m . e^{i phi}|^2
};

double objective(const PhaseVector& phases, const TrapObjectiveConfig& config,
                 const AcousticModel& model);

std::vector<double> objective_gradient(const PhaseVector& phases,
                                       const TrapObjectiveConfig& config,
                                       const AcousticModel& model);

/// Unit-weight form |p(q)|^2 / P - laplacian(U)(q) / L, evaluated through the
/// acoustics module rather than the assembled quadratic form.
double unweighted_objective(const PhaseVector& phases, const Vec3& target, double h,
                            const AcousticModel& model);

struct SolveOptions {
  TrapWeights weights;
  double h = 0.0;  // stencil step; non-positive means wavelength / 40
  optim::BfgsOptions bfgs;
  std::uint64_t seed = 1;
};

struct SolveReport {
  PhaseVector phases;
  double objective = 0.0;
  double initial_objective = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
  bool converged = false;
  std::string status;
  std::uint64_t seed = 0;
  bool warm_started = false;
};

void to_json(nlohmann::json& j, const SolveReport& r);
void from_json(const nlohmann::json& j, SolveReport& r);

/// Uniform phases in [0, 2pi) from a seeded generator.
PhaseVector random_phases(std::size_t n, std::uint64_t seed);

double default_stencil_step(const AcousticModel& model);

/// Optimizes a trap at `target`, from `warm_start` when given, else from
/// random phases drawn with `options.seed`.
SolveReport solve_trap(const AcousticModel& model, const Vec3& target,
                       const std::optional<PhaseVector>& warm_start,
                       const SolveOptions& options = {});

}  // namespace levi::trap
