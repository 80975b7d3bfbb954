#include "levi/fitts.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace levi::fitts {

namespace {

constexpr double kMm = 1e-3;

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double parse_number(const std::string& field, std::size_t line, const char* name) {
  const std::string t = trim(field);
  double v = 0.0;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size() || !std::isfinite(v)) {
    throw ParseError(line, std::string("bad number in ") + name + ": '" + field + "'");
  }
  return v;
}

Vec3 parse_centre(const std::string& field, std::size_t line, const char* name) {
  const auto parts = split(field, ';');
  if (parts.size() != 3) {
    throw ParseError(line, std::string(name) + " must be x;y;z in mm, got '" + field + "'");
  }
  return kMm * Vec3(parse_number(parts[0], line, name), parse_number(parts[1], line, name),
                    parse_number(parts[2], line, name));
}

std::string centre_string(const Vec3& c) {
  return fmt(c[0] / kMm) + ';' + fmt(c[1] / kMm) + ';' + fmt(c[2] / kMm);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

Vec3 MovementRecord::task_axis() const {
  const Vec3 d = to - from;
  const double n = d.norm();
  if (!(n > 0.0)) throw FittsError("movement " + std::to_string(move_index) + " has coincident targets");
  return d / n;
}

double MovementRecord::axis_deviation() const { return (endpoint - to).dot(task_axis()); }

double MovementRecord::amplitude() const { return (endpoint - from).dot(task_axis()); }

ParseError::ParseError(std::size_t line, const std::string& what)
    : FittsError("line " + std::to_string(line) + ": " + what), line_(line) {}

std::vector<MovementRecord> parse_log(std::istream& in) {
  std::vector<MovementRecord> out;
  std::string text;
  std::size_t line = 0;
  bool header = false;
  std::map<std::pair<std::string, double>, std::size_t> last;  // index of the previous row
  while (std::getline(in, text)) {
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (trim(text).empty()) continue;
    if (!header) {
      if (trim(text) != kLogHeader) throw ParseError(line, "expected header '" + std::string(kLogHeader) + "'");
      header = true;
      continue;
    }
    const auto f = split(text, ',');
    if (f.size() != 10) {
      throw ParseError(line, "expected 10 fields, got " + std::to_string(f.size()));
    }
    MovementRecord r;
    r.participant = trim(f[0]);
    if (r.participant.empty()) throw ParseError(line, "empty participant");
    r.condition_radius = parse_number(f[1], line, "condition_radius_mm") * kMm;
    if (!(r.condition_radius > 0.0)) throw ParseError(line, "condition radius must be positive");
    const double idx = parse_number(f[2], line, "move_index");
    if (idx < 0 || idx != std::floor(idx) || idx > 1e9) {
      throw ParseError(line, "move_index must be a non-negative integer");
    }
    r.move_index = static_cast<int>(idx);
    r.t_start = parse_number(f[3], line, "t_start_s");
    r.t_end = parse_number(f[4], line, "t_end_s");
    if (!(r.t_end > r.t_start)) throw ParseError(line, "t_end_s must exceed t_start_s");
    r.endpoint = kMm * Vec3(parse_number(f[5], line, "end_x_mm"), parse_number(f[6], line, "end_y_mm"),
                            parse_number(f[7], line, "end_z_mm"));
    r.from = parse_centre(f[8], line, "target_from");
    r.to = parse_centre(f[9], line, "target_to");
    if (r.from == r.to) throw ParseError(line, "target_from equals target_to");
    out.push_back(r);
    const auto key = std::pair{r.participant, r.condition_radius};
    if (auto it = last.find(key); it != last.end()) {
      const auto& prev = out[it->second];
      if (r.move_index <= prev.move_index) {
        throw ParseError(line, "move_index not increasing within the condition");
      }
      if (r.t_start < prev.t_start) {
        throw ParseError(line, "timestamps go backwards within the condition");
      }
    }
    last[key] = out.size() - 1;
  }
  return out;
}

std::vector<MovementRecord> parse_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FittsError("cannot open log '" + path + "'");
  return parse_log(in);
}

void append_log_rows(std::ostream& out, const std::vector<MovementRecord>& records) {
  for (const auto& r : records) {
    out << r.participant << ',' << fmt(r.condition_radius / kMm) << ',' << r.move_index << ','
        << fmt(r.t_start) << ',' << fmt(r.t_end) << ',' << fmt(r.endpoint[0] / kMm) << ','
        << fmt(r.endpoint[1] / kMm) << ',' << fmt(r.endpoint[2] / kMm) << ','
        << centre_string(r.from) << ',' << centre_string(r.to) << '\n';
  }
}

void write_log(std::ostream& out, const std::vector<MovementRecord>& records) {
  out << kLogHeader << '\n';
  append_log_rows(out, records);
}

std::string to_string(SigmaMode m) { return m == SigmaMode::radial ? "radial" : "task_axis"; }

SigmaMode sigma_mode_from_string(const std::string& s) {
  if (s == "task_axis") return SigmaMode::task_axis;
  if (s == "radial") return SigmaMode::radial;
  throw InvalidParameter("unknown sigma mode '" + s + "' (task_axis|radial)");
}

ConditionSummary summarize_condition(const std::vector<MovementRecord>& records, SigmaMode mode) {
  if (records.size() < 2) throw FittsError("need at least 2 movements to estimate sigma");
  ConditionSummary s;
  s.participant = records.front().participant;
  s.condition_radius = records.front().condition_radius;
  s.movements = static_cast<int>(records.size());

  std::vector<double> axis;
  std::vector<double> mts;
  for (const auto& r : records) {
    axis.push_back(r.axis_deviation());
    mts.push_back(r.movement_time());
  }
  const double centroid = mean(axis);
  double ss = 0.0;
  if (mode == SigmaMode::task_axis) {
    for (double e : axis) ss += (e - centroid) * (e - centroid);
  } else {
    // 3D spread about each target's own endpoint centroid.
    std::map<std::array<double, 3>, std::pair<Vec3, int>> centroids;
    auto key = [](const Vec3& c) { return std::array<double, 3>{c[0], c[1], c[2]}; };
    for (const auto& r : records) {
      auto& [sum, n] = centroids[key(r.to)];
      if (n == 0) sum = Vec3::Zero();
      sum += r.endpoint;
      ++n;
    }
    for (const auto& r : records) {
      const auto& [sum, n] = centroids[key(r.to)];
      ss += (r.endpoint - sum / n).squaredNorm();
    }
  }
  s.sigma = std::sqrt(ss / double(records.size()));
  if (!(s.sigma > 0.0)) throw FittsError("degenerate condition: all endpoints coincide (sigma = 0)");
  s.we = 4.133 * s.sigma;

  double sum_d = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (std::abs(axis[i] - centroid) <= 0.5 * s.we) {
      sum_d += records[i].amplitude();
      ++s.effective_movements;
    }
  }
  if (s.effective_movements == 0) throw FittsError("no movement ends within the effective target");
  s.de = sum_d / s.effective_movements;
  s.ide = std::log2(std::max(s.de, 0.0) / s.we + 1.0);
  s.mean_mt = mean(mts);
  s.nominal_id = std::log2(records.front().nominal_amplitude() / (2.0 * s.condition_radius) + 1.0);
  return s;
}

std::vector<ConditionSummary> summarize_all(const std::vector<MovementRecord>& records,
                                            SigmaMode mode) {
  std::vector<std::pair<std::string, double>> order;
  std::map<std::pair<std::string, double>, std::vector<MovementRecord>> cells;
  for (const auto& r : records) {
    const auto key = std::pair{r.participant, r.condition_radius};
    auto [it, fresh] = cells.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.push_back(r);
  }
  std::vector<ConditionSummary> out;
  for (const auto& key : order) {
    try {
      out.push_back(summarize_condition(cells[key], mode));
    } catch (const FittsError& e) {
      throw FittsError("participant " + key.first + ", radius " + fmt(key.second / kMm) +
                       " mm: " + e.what());
    }
  }
  return out;
}

FittsFit fit_fitts(const std::vector<IdMt>& points) {
  if (points.empty()) throw FittsError("no data to fit");
  double lo = points.front().id;
  double hi = lo;
  for (const auto& p : points) {
    if (!std::isfinite(p.id) || !std::isfinite(p.mt)) throw FittsError("non-finite ID or MT");
    lo = std::min(lo, p.id);
    hi = std::max(hi, p.id);
  }
  const double width = (hi - lo) / kFitBins;
  std::vector<FitBin> bins(kFitBins);
  for (int k = 0; k < kFitBins; ++k) {
    bins[k].id_lo = lo + k * width;
    bins[k].id_hi = k + 1 == kFitBins ? hi : lo + (k + 1) * width;
  }
  for (const auto& p : points) {
    int k = width > 0.0 ? static_cast<int>((p.id - lo) / width) : 0;
    k = std::clamp(k, 0, kFitBins - 1);
    bins[k].count++;
    bins[k].id_mean += p.id;
    bins[k].mt_mean += p.mt;
  }
  FittsFit fit;
  for (auto& b : bins) {
    if (b.count == 0) continue;
    b.id_mean /= b.count;
    b.mt_mean /= b.count;
    fit.bins.push_back(b);
  }
  if (fit.bins.size() < 2) throw FittsError("need at least 2 non-empty ID bins to fit");

  const double n = double(fit.bins.size());
  double mx = 0.0, my = 0.0;
  for (const auto& b : fit.bins) {
    mx += b.id_mean;
    my += b.mt_mean;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& b : fit.bins) {
    sxx += (b.id_mean - mx) * (b.id_mean - mx);
    sxy += (b.id_mean - mx) * (b.mt_mean - my);
    syy += (b.mt_mean - my) * (b.mt_mean - my);
  }
  fit.b = sxy / sxx;
  fit.a = my - fit.b * mx;
  double ss_res = 0.0;
  for (const auto& b : fit.bins) {
    const double r = b.mt_mean - (fit.a + fit.b * b.id_mean);
    ss_res += r * r;
  }
  fit.r2 = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 0.0;
  return fit;
}

FittsFit fit_fitts(const std::vector<ConditionSummary>& summaries) {
  std::vector<IdMt> pts;
  for (const auto& s : summaries) pts.push_back({s.ide, s.mean_mt});
  return fit_fitts(pts);
}

ThroughputReport throughput(const std::vector<ConditionSummary>& summaries) {
  if (summaries.empty()) throw FittsError("no condition summaries");
  std::set<std::string> participants;
  std::set<double> conditions;
  std::map<std::pair<std::string, double>, double> cell;
  for (const auto& s : summaries) {
    participants.insert(s.participant);
    conditions.insert(s.condition_radius);
    if (!cell.emplace(std::pair{s.participant, s.condition_radius}, s.throughput()).second) {
      throw FittsError("duplicate cell for participant " + s.participant);
    }
  }
  std::string missing;
  for (const auto& p : participants) {
    for (double c : conditions) {
      if (!cell.count({p, c})) missing += " (" + p + ", " + fmt(c / kMm) + " mm)";
    }
  }
  if (!missing.empty()) throw FittsError("missing participant/condition cells:" + missing);

  ThroughputReport r;
  r.participants = static_cast<int>(participants.size());
  r.conditions = static_cast<int>(conditions.size());
  r.tp_emax = -std::numeric_limits<double>::infinity();
  for (const auto& p : participants) {
    double sum = 0.0;
    for (double c : conditions) {
      const double tp = cell.at({p, c});
      sum += tp;
      r.tp_emax = std::max(r.tp_emax, tp);
    }
    r.tp_ea += sum / r.conditions;
  }
  r.tp_ea /= r.participants;
  return r;
}

nlohmann::json report_json(const std::vector<ConditionSummary>& summaries, const FittsFit& fit,
                           const ThroughputReport& tp, SigmaMode mode) {
  nlohmann::json j;
  j["fit"] = {{"a_s", fit.a}, {"b_s_per_bit", fit.b}, {"r2", fit.r2}};
  auto& bins = j["fit"]["bins"] = nlohmann::json::array();
  for (const auto& b : fit.bins) {
    bins.push_back({{"id_lo", b.id_lo}, {"id_hi", b.id_hi}, {"count", b.count},
                    {"id_mean", b.id_mean}, {"mt_mean_s", b.mt_mean}});
  }
  j["throughput"] = {{"tp_ea_bits_per_s", tp.tp_ea},
                     {"tp_emax_bits_per_s", tp.tp_emax},
                     {"participants", tp.participants},
                     {"conditions", tp.conditions}};
  auto& cells = j["summaries"] = nlohmann::json::array();
  for (const auto& s : summaries) {
    cells.push_back({{"participant", s.participant},
                     {"condition_radius_mm", s.condition_radius / kMm},
                     {"movements", s.movements},
                     {"effective_movements", s.effective_movements},
                     {"sigma_mm", s.sigma / kMm},
                     {"we_mm", s.we / kMm},
                     {"de_mm", s.de / kMm},
                     {"ide_bits", s.ide},
                     {"nominal_id_bits", s.nominal_id},
                     {"mean_mt_s", s.mean_mt},
                     {"tp_bits_per_s", s.throughput()}});
  }
  j["metadata"] = {{"sigma_mode", to_string(mode)},
                   {"sigma_estimator", "population"},
                   {"binning", "pooled across participants, equal-width ID ranges"},
                   {"bin_count", kFitBins},
                   {"de_filter", "endpoint within We/2 of the effective centroid along the task axis"}};
  return j;
}

void write_bins_csv(std::ostream& out, const FittsFit& fit) {
  out << "bin,id_lo,id_hi,count,id_mean,mt_mean\n";
  for (std::size_t i = 0; i < fit.bins.size(); ++i) {
    const auto& b = fit.bins[i];
    out << i << ',' << fmt(b.id_lo) << ',' << fmt(b.id_hi) << ',' << b.count << ','
        << fmt(b.id_mean) << ',' << fmt(b.mt_mean) << '\n';
  }
}

}  // namespace levi::fitts
