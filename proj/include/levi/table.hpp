#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "levi/acoustics.hpp"
#include "levi/common.hpp"

namespace levi {

using GridIndex = std::array<int, 3>;

/// Axis-aligned grid of trap positions.
struct VolumeSpec {
  Vec3 origin = Vec3(-10e-3, -10e-3, -5e-3);
  Vec3 extents = Vec3(20e-3, 20e-3, 10e-3);  // width, height, depth
  Vec3 resolution = Vec3(1e-3, 1e-3, 1e-3);

  /// Throws InvalidParameter unless extents >= 0, resolution > 0 and every
  /// extent is an integer number of cells.
  void validate() const;
  /// Points per axis (cells + 1).
  GridIndex dims() const;
  std::size_t point_count() const;
  Vec3 point(const GridIndex& i) const;
  Vec3 center() const { return origin + 0.5 * extents; }
  Vec3 upper() const { return origin + extents; }
  bool contains(const Vec3& p, double tol = 1e-12) const;
  Vec3 clamp(const Vec3& p) const;
  GridIndex center_index() const;
  std::size_t linear(const GridIndex& i) const;
  GridIndex unlinear(std::size_t k) const;

  friend bool operator==(const VolumeSpec& a, const VolumeSpec& b);
};

/// Throws OutOfVolume if any grid point lies outside the inter-array gap or
/// within `margin` of a transducer face.
void check_volume_in_field(const VolumeSpec& volume, const acoustics::TransducerArray& array,
                           double margin);

/// Dense float32 phase table, index ((iz*ny + iy)*nx + ix)*N + j.
class LookupTable {
 public:
  LookupTable() = default;
  LookupTable(VolumeSpec volume, std::size_t transducers);

  const VolumeSpec& volume() const { return volume_; }
  const GridIndex& dims() const { return dims_; }
  std::size_t transducers() const { return n_; }
  std::size_t point_count() const { return volume_.point_count(); }

  std::span<const float> phases(const GridIndex& i) const;
  std::span<const float> phases(std::size_t point) const;
  acoustics::PhaseVector phase_vector(const GridIndex& i) const;
  void set(const GridIndex& i, const acoustics::PhaseVector& phases);
  void set(std::size_t point, std::span<const double> phases);

  std::span<const float> data() const { return data_; }
  std::vector<float>& mutable_data() { return data_; }

  friend bool operator==(const LookupTable& a, const LookupTable& b) = default;

 private:
  VolumeSpec volume_;
  GridIndex dims_{0, 0, 0};
  std::size_t n_ = 0;
  std::vector<float> data_;
};

inline constexpr std::uint32_t kTableVersion = 1;
inline constexpr std::size_t kTableHeaderBytes = 4 + 4 * 5 + 8 * 6;

class TableFormatError : public Error {
 public:
  enum class Code { bad_magic = 1, bad_version, truncated, bad_header, trailing_data, io };
  TableFormatError(Code code, const std::string& what) : Error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

std::size_t table_bytes(const GridIndex& dims, std::size_t transducers);

std::vector<std::uint8_t> serialize(const LookupTable& table);
LookupTable deserialize(std::span<const std::uint8_t> bytes);

void write_table(const std::string& path, const LookupTable& table);
LookupTable read_table(const std::string& path);

inline constexpr double kWrapEpsilon = 1e-6;

/// True when every transducer's circular phase difference is at most
/// pi - eps.
bool smooth_pair(std::span<const float> a, std::span<const float> b,
                 double eps = kWrapEpsilon);

struct SmoothnessReport {
  std::size_t edges = 0;
  std::size_t smooth_edges = 0;
  std::size_t interior_edges = 0;  // both ends inside the central half box
  std::size_t interior_smooth = 0;
  std::size_t outer_edges = 0;
  std::size_t outer_smooth = 0;
  /// Non-smooth incident edges per grid point, in table point order.
  std::vector<int> nonsmooth_incident;

  double fraction() const { return edges ? double(smooth_edges) / double(edges) : 1.0; }
  double interior_fraction() const {
    return interior_edges ? double(interior_smooth) / double(interior_edges) : 1.0;
  }
  double outer_fraction() const {
    return outer_edges ? double(outer_smooth) / double(outer_edges) : 1.0;
  }
};

SmoothnessReport smoothness_report(const LookupTable& table, double eps = kWrapEpsilon);

/// Per-point map: ix,iy,iz,x_mm,y_mm,z_mm,nonsmooth_edges.
void write_smoothness_csv(std::ostream& out, const LookupTable& table,
                          const SmoothnessReport& report);

}  // namespace levi
