#pragma once

#include <array>
#include <span>
#include <vector>

#include "levi/common.hpp"

namespace levi::acoustics {

/// Single-frequency emission parameters. Wavelength, wavenumber and
/// angular frequency are derived once at construction.
class WaveParams {
 public:
  WaveParams(double frequency_hz, double speed_of_sound);

  double frequency() const { return frequency_; }
  double speed() const { return speed_; }
  double wavelength() const { return wavelength_; }
  double wavenumber() const { return wavenumber_; }
  double angular_frequency() const { return angular_frequency_; }

 private:
  double frequency_;
  double speed_;
  double wavelength_;
  double wavenumber_;
  double angular_frequency_;
};

struct MediumParams {
  double density = 1.2;  // kg/m^3, air at 20 C
  double speed = 343.0;  // m/s

  void validate() const;
};

struct ParticleParams {
  double density = 25.0;   // kg/m^3, expanded polystyrene
  double speed = 2400.0;   // m/s
  double radius = 1.0e-3;  // m

  double volume() const;
  double mass() const;
  void validate() const;
};

struct GorkovConstants {
  double k1 = 0.0;  // pressure coefficient
  double k2 = 0.0;  // velocity coefficient
};

GorkovConstants derive_constants(const MediumParams& medium, const ParticleParams& particle,
                                 const WaveParams& wave);

struct Transducer {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double piston_radius = 4.5e-3;  // m
  double p0 = 1.0;                // Pa*m
};

/// Ordered set of transducers sharing one emission frequency. The order is
/// the order of entries in every PhaseVector used with this array.
class TransducerArray {
 public:
  TransducerArray(std::vector<Transducer> elements, WaveParams wave);

  std::size_t size() const { return elements_.size(); }
  const Transducer& operator[](std::size_t j) const { return elements_[j]; }
  std::span<const Transducer> elements() const { return elements_; }
  const WaveParams& wave() const { return wave_; }

  /// Elements of `a` followed by elements of `b`; both must share a frequency.
  static TransducerArray concat(const TransducerArray& a, const TransducerArray& b);

 private:
  std::vector<Transducer> elements_;
  WaveParams wave_;
};

/// Layout of the two opposed planar arrays. Arrays face each other along
/// the y axis, centered on the origin.
struct ArrayLayout {
  int columns = 6;              // along x
  int rows = 6;                 // along z
  double pitch = 10.3e-3;       // 10 mm element + 0.3 mm gap
  double separation = 80.0e-3;  // face-to-face gap
  double piston_radius = 4.5e-3;
  double p0 = 3.5;
};

TransducerArray make_planar_array(int columns, int rows, double pitch, const Vec3& center,
                                  const Vec3& normal, double piston_radius, double p0,
                                  const WaveParams& wave);

/// Bottom array (y = -separation/2, facing +y) followed by the top array
/// (y = +separation/2, facing -y), each row-major with x fastest.
TransducerArray make_opposed_arrays(const ArrayLayout& layout, const WaveParams& wave);

/// One phase per transducer, stored in [0, 2pi).
class PhaseVector {
 public:
  PhaseVector() = default;
  explicit PhaseVector(std::size_t n, double value = 0.0);
  explicit PhaseVector(std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t j) const { return values_[j]; }
  void set(std::size_t j, double phi) { values_[j] = wrap_phase(phi); }
  std::span<const double> values() const { return values_; }

  /// Adds `delta` to every phase.
  PhaseVector shifted(double delta) const;

  friend bool operator==(const PhaseVector&, const PhaseVector&) = default;

 private:
  std::vector<double> values_;
};

/// Unit phasors e^{i phi_j}.
std::vector<Complex> phasors(const PhaseVector& phases);

/// M^j: complex pressure of one transducer at zero phase (far-field piston).
Complex transducer_response(const Transducer& t, const WaveParams& wave, const Vec3& point);

/// e^{i phi} M^j.
Complex transducer_pressure(const Transducer& t, const WaveParams& wave, double phi,
                            const Vec3& point);

/// Throws SingularPoint when `point` is within one piston radius (plus
/// `margin`) of any transducer.
void check_field_point(const TransducerArray& array, const Vec3& point, double margin = 0.0);

struct FieldSample {
  Complex p;
  std::array<Complex, 3> grad;  // p_x, p_y, p_z
};

/// M^j and its spatial gradient. h_deriv == 0 differentiates the piston
/// model analytically; h_deriv > 0 uses central differences of that step.
FieldSample transducer_sample(const Transducer& t, const WaveParams& wave, const Vec3& point,
                              double h_deriv = 0.0);

/// Superposed complex pressure.
Complex field_pressure(const TransducerArray& array, std::span<const Complex> emission,
                       const Vec3& point);
Complex field_pressure(const TransducerArray& array, const PhaseVector& phases, const Vec3& point);

/// Pressure and its spatial derivatives; h_deriv as in transducer_sample.
FieldSample field_sample(const TransducerArray& array, std::span<const Complex> emission,
                         const Vec3& point, double h_deriv);
FieldSample field_sample(const TransducerArray& array, const PhaseVector& phases,
                         const Vec3& point, double h_deriv);

double gorkov_potential(const FieldSample& sample, const GorkovConstants& c);

/// Everything needed to evaluate U at a point: geometry, particle constants
/// and the derivative step (0 = analytic).
struct AcousticModel {
  TransducerArray array;
  GorkovConstants constants;
  double h_deriv = 0.0;

  double potential(std::span<const Complex> emission, const Vec3& point) const;
  double potential(const PhaseVector& phases, const Vec3& point) const;
};

/// 7-point Laplacian of an arbitrary scalar field.
template <class F>
double laplacian_7pt(F&& u, const Vec3& q, double h) {
  const double centre = u(q);
  double sum = 0.0;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    sum += u(q + e) - 2.0 * centre + u(q - e);
  }
  return sum / (h * h);
}

/// Second difference along one axis.
template <class F>
double second_difference(F&& u, const Vec3& q, int axis, double h) {
  Vec3 e = Vec3::Zero();
  e[axis] = h;
  return (u(q + e) - 2.0 * u(q) + u(q - e)) / (h * h);
}

template <class F>
Vec3 central_gradient(F&& u, const Vec3& q, double h) {
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    g[a] = (u(q + e) - u(q - e)) / (2.0 * h);
  }
  return g;
}

double gorkov_laplacian(const AcousticModel& model, const PhaseVector& phases, const Vec3& point,
                        double h);

/// F = -grad U by central differences of spacing h.
Vec3 radiation_force(const AcousticModel& model, std::span<const Complex> emission,
                     const Vec3& point, double h);
Vec3 radiation_force(const AcousticModel& model, const PhaseVector& phases, const Vec3& point,
                     double h);

}  // namespace levi::acoustics
