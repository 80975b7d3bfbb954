#include "levi/table.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

namespace levi {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'L', 'V', 'C', 'T'};

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out_.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t(in_[pos_ + b]) << (8 * b);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= std::uint64_t(in_[pos_ + b]) << (8 * b);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw TableFormatError(TableFormatError::Code::truncated, "table data is truncated");
    }
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

float store_phase(double phi) {
  float f = static_cast<float>(wrap_phase(phi));
  // Values just below 2pi round up to float(2pi).
  if (f >= static_cast<float>(kTwoPi)) f = 0.0f;
  return f;
}

}  // namespace

void VolumeSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(origin[a])) throw InvalidParameter("volume origin must be finite");
    if (!(extents[a] >= 0.0) || !std::isfinite(extents[a])) {
      throw InvalidParameter("volume extents must be non-negative");
    }
    if (!(resolution[a] > 0.0) || !std::isfinite(resolution[a])) {
      throw InvalidParameter("volume resolution must be positive");
    }
    const double cells = extents[a] / resolution[a];
    if (std::abs(cells - std::round(cells)) > 1e-6) {
      std::ostringstream msg;
      msg << "resolution " << resolution[a] << " does not divide extent " << extents[a]
          << " on axis " << a;
      throw InvalidParameter(msg.str());
    }
  }
}

GridIndex VolumeSpec::dims() const {
  GridIndex d{};
  for (int a = 0; a < 3; ++a) d[a] = static_cast<int>(std::lround(extents[a] / resolution[a])) + 1;
  return d;
}

std::size_t VolumeSpec::point_count() const {
  const auto d = dims();
  return std::size_t(d[0]) * std::size_t(d[1]) * std::size_t(d[2]);
}

Vec3 VolumeSpec::point(const GridIndex& i) const {
  return origin + Vec3(i[0] * resolution[0], i[1] * resolution[1], i[2] * resolution[2]);
}

bool VolumeSpec::contains(const Vec3& p, double tol) const {
  const Vec3 hi = upper();
  for (int a = 0; a < 3; ++a) {
    if (!(p[a] >= origin[a] - tol && p[a] <= hi[a] + tol)) return false;
  }
  return true;
}

Vec3 VolumeSpec::clamp(const Vec3& p) const {
  return p.cwiseMax(origin).cwiseMin(upper());
}

GridIndex VolumeSpec::center_index() const {
  const auto d = dims();
  return {(d[0] - 1) / 2, (d[1] - 1) / 2, (d[2] - 1) / 2};
}

std::size_t VolumeSpec::linear(const GridIndex& i) const {
  const auto d = dims();
  return (std::size_t(i[2]) * std::size_t(d[1]) + std::size_t(i[1])) * std::size_t(d[0]) +
         std::size_t(i[0]);
}

GridIndex VolumeSpec::unlinear(std::size_t k) const {
  const auto d = dims();
  GridIndex i{};
  i[0] = static_cast<int>(k % std::size_t(d[0]));
  k /= std::size_t(d[0]);
  i[1] = static_cast<int>(k % std::size_t(d[1]));
  i[2] = static_cast<int>(k / std::size_t(d[1]));
  return i;
}

bool operator==(const VolumeSpec& a, const VolumeSpec& b) {
  return a.origin == b.origin && a.extents == b.extents && a.resolution == b.resolution;
}

void check_volume_in_field(const VolumeSpec& volume, const acoustics::TransducerArray& array,
                           double margin) {
  volume.validate();
  const auto d = volume.dims();
  for (int iz = 0; iz < d[2]; ++iz) {
    for (int iy = 0; iy < d[1]; ++iy) {
      for (int ix = 0; ix < d[0]; ++ix) {
        const Vec3 p = volume.point({ix, iy, iz});
        for (const auto& t : array.elements()) {
          const Vec3 r = p - t.position;
          if (!(t.normal.dot(r) > 0.0) || !(r.norm() > t.piston_radius + margin)) {
            std::ostringstream msg;
            msg << "volume point (" << p.transpose() << ") m lies outside the valid field "
                << "region between the arrays";
            throw OutOfVolume(msg.str());
          }
        }
      }
    }
  }
}

LookupTable::LookupTable(VolumeSpec volume, std::size_t transducers)
    : volume_(std::move(volume)), n_(transducers) {
  volume_.validate();
  if (n_ == 0) throw InvalidParameter("lookup table needs at least one transducer");
  dims_ = volume_.dims();
  data_.assign(volume_.point_count() * n_, 0.0f);
}

std::span<const float> LookupTable::phases(const GridIndex& i) const {
  return phases(volume_.linear(i));
}

std::span<const float> LookupTable::phases(std::size_t point) const {
  return std::span<const float>(data_).subspan(point * n_, n_);
}

acoustics::PhaseVector LookupTable::phase_vector(const GridIndex& i) const {
  const auto p = phases(i);
  return acoustics::PhaseVector(std::vector<double>(p.begin(), p.end()));
}

void LookupTable::set(const GridIndex& i, const acoustics::PhaseVector& phases) {
  set(volume_.linear(i), phases.values());
}

void LookupTable::set(std::size_t point, std::span<const double> phases) {
  if (phases.size() != n_) throw InvalidParameter("phase vector length does not match table");
  if (point >= volume_.point_count()) throw InvalidParameter("table point index out of range");
  for (std::size_t j = 0; j < n_; ++j) data_[point * n_ + j] = store_phase(phases[j]);
}

std::size_t table_bytes(const GridIndex& dims, std::size_t transducers) {
  return kTableHeaderBytes +
         4 * std::size_t(dims[0]) * std::size_t(dims[1]) * std::size_t(dims[2]) * transducers;
}

std::vector<std::uint8_t> serialize(const LookupTable& table) {
  std::vector<std::uint8_t> out;
  out.reserve(table_bytes(table.dims(), table.transducers()));
  for (auto c : kMagic) out.push_back(c);
  Writer w(out);
  w.u32(kTableVersion);
  w.u32(static_cast<std::uint32_t>(table.transducers()));
  for (int a = 0; a < 3; ++a) w.u32(static_cast<std::uint32_t>(table.dims()[a]));
  for (int a = 0; a < 3; ++a) w.f64(table.volume().origin[a]);
  for (int a = 0; a < 3; ++a) w.f64(table.volume().resolution[a]);
  for (float f : table.data()) w.f32(f);
  return out;
}

LookupTable deserialize(std::span<const std::uint8_t> bytes) {
  using Code = TableFormatError::Code;
  if (bytes.size() < kMagic.size()) throw TableFormatError(Code::truncated, "table data is truncated");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw TableFormatError(Code::bad_magic, "not a phase table (bad magic)");
  }
  Reader r(bytes.subspan(kMagic.size()));
  const std::uint32_t version = r.u32();
  if (version != kTableVersion) {
    throw TableFormatError(Code::bad_version,
                           "unsupported table version " + std::to_string(version));
  }
  const std::uint32_t n = r.u32();
  GridIndex dims{};
  for (auto& d : dims) d = static_cast<int>(r.u32());
  VolumeSpec volume;
  for (int a = 0; a < 3; ++a) volume.origin[a] = r.f64();
  for (int a = 0; a < 3; ++a) volume.resolution[a] = r.f64();
  if (n == 0 || dims[0] < 1 || dims[1] < 1 || dims[2] < 1) {
    throw TableFormatError(Code::bad_header, "table header declares an empty table");
  }
  for (int a = 0; a < 3; ++a) {
    if (!(volume.resolution[a] > 0.0) || !std::isfinite(volume.origin[a])) {
      throw TableFormatError(Code::bad_header, "table header has invalid geometry");
    }
    volume.extents[a] = (dims[a] - 1) * volume.resolution[a];
  }
  const std::size_t expected = table_bytes(dims, n) - kTableHeaderBytes;
  if (r.remaining() < expected) {
    std::ostringstream msg;
    msg << "table payload is truncated: header declares " << expected << " bytes, found "
        << r.remaining();
    throw TableFormatError(Code::truncated, msg.str());
  }
  if (r.remaining() > expected) {
    throw TableFormatError(Code::trailing_data, "unexpected bytes after table payload");
  }
  LookupTable table(volume, n);
  if (table.dims() != dims) {
    throw TableFormatError(Code::bad_header, "table header geometry is inconsistent");
  }
  for (float& f : table.mutable_data()) f = r.f32();
  return table;
}

void write_table(const std::string& path, const LookupTable& table) {
  const auto bytes = serialize(table);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw TableFormatError(TableFormatError::Code::io, "cannot write " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw TableFormatError(TableFormatError::Code::io, "cannot move table into " + path);
  }
}

LookupTable read_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TableFormatError(TableFormatError::Code::io, "cannot open table " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

bool smooth_pair(std::span<const float> a, std::span<const float> b, double eps) {
  const double limit = std::numbers::pi - eps;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (circular_distance(a[j], b[j]) > limit) return false;
  }
  return true;
}

SmoothnessReport smoothness_report(const LookupTable& table, double eps) {
  const auto& vol = table.volume();
  const auto d = table.dims();
  SmoothnessReport rep;
  rep.nonsmooth_incident.assign(table.point_count(), 0);
  const Vec3 lo = vol.origin + 0.25 * vol.extents;
  const Vec3 hi = vol.origin + 0.75 * vol.extents;
  auto central = [&](const GridIndex& i) {
    const Vec3 p = vol.point(i);
    for (int a = 0; a < 3; ++a) {
      if (p[a] < lo[a] - 1e-12 || p[a] > hi[a] + 1e-12) return false;
    }
    return true;
  };
  for (int iz = 0; iz < d[2]; ++iz) {
    for (int iy = 0; iy < d[1]; ++iy) {
      for (int ix = 0; ix < d[0]; ++ix) {
        const GridIndex i{ix, iy, iz};
        for (int a = 0; a < 3; ++a) {
          GridIndex k = i;
          if (++k[a] >= d[a]) continue;
          const bool ok = smooth_pair(table.phases(i), table.phases(k), eps);
          const bool inner = central(i) && central(k);
          ++rep.edges;
          rep.smooth_edges += ok;
          if (inner) {
            ++rep.interior_edges;
            rep.interior_smooth += ok;
          } else {
            ++rep.outer_edges;
            rep.outer_smooth += ok;
          }
          if (!ok) {
            ++rep.nonsmooth_incident[vol.linear(i)];
            ++rep.nonsmooth_incident[vol.linear(k)];
          }
        }
      }
    }
  }
  return rep;
}

void write_smoothness_csv(std::ostream& out, const LookupTable& table,
                          const SmoothnessReport& report) {
  const auto& vol = table.volume();
  out << "ix,iy,iz,x_mm,y_mm,z_mm,nonsmooth_edges\n";
  for (std::size_t k = 0; k < table.point_count(); ++k) {
    const auto i = vol.unlinear(k);
    const Vec3 p = vol.point(i) * 1e3;
    out << i[0] << ',' << i[1] << ',' << i[2] << ',' << p[0] << ',' << p[1] << ',' << p[2] << ','
        << report.nonsmooth_incident[k] << '\n';
  }
}

}  // namespace levi
