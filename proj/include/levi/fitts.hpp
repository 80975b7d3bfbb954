#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "levi/common.hpp"

namespace levi::fitts {

/// One aimed movement between two target centres. SI units.
struct MovementRecord {
  std::string participant;
  double condition_radius = 0.0;  // m
  int move_index = 0;
  double t_start = 0.0;  // s
  double t_end = 0.0;    // s
  Vec3 endpoint = Vec3::Zero();
  Vec3 from = Vec3::Zero();  // start target centre
  Vec3 to = Vec3::Zero();    // aimed target centre

  double movement_time() const { return t_end - t_start; }
  double nominal_amplitude() const { return (to - from).norm(); }
  Vec3 task_axis() const;
  /// Endpoint deviation from the aimed centre, signed along the movement.
  double axis_deviation() const;
  /// Amplitude of this movement: from the start centre to the endpoint,
  /// projected on the task axis.
  double amplitude() const;
};

class FittsError : public Error {
 public:
  using Error::Error;
};

class ParseError : public FittsError {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline constexpr const char* kLogHeader =
    "participant,condition_radius_mm,move_index,t_start_s,t_end_s,end_x_mm,end_y_mm,end_z_mm,"
    "target_from,target_to";

/// CSV with the header above; target centres are "x;y;z" in mm.
std::vector<MovementRecord> parse_log(std::istream& in);
std::vector<MovementRecord> parse_log_file(const std::string& path);
void write_log(std::ostream& out, const std::vector<MovementRecord>& records);
void append_log_rows(std::ostream& out, const std::vector<MovementRecord>& records);

enum class SigmaMode { task_axis, radial };
std::string to_string(SigmaMode m);
SigmaMode sigma_mode_from_string(const std::string& s);

struct ConditionSummary {
  std::string participant;
  double condition_radius = 0.0;
  int movements = 0;
  int effective_movements = 0;  // inside the effective target, used for D_e
  double sigma = 0.0;
  double we = 0.0;
  double de = 0.0;
  double ide = 0.0;
  double mean_mt = 0.0;
  double nominal_id = 0.0;  // log2(D / (2 r) + 1)

  double throughput() const { return ide / mean_mt; }
};

/// Population standard deviation of the endpoint deviations; W_e = 4.133
/// sigma; D_e averages amplitudes of movements ending within W_e / 2 of
/// the effective centroid along the task axis.
ConditionSummary summarize_condition(const std::vector<MovementRecord>& records,
                                     SigmaMode mode = SigmaMode::task_axis);

/// Summaries for every (participant, condition) cell, in first-seen order.
std::vector<ConditionSummary> summarize_all(const std::vector<MovementRecord>& records,
                                            SigmaMode mode = SigmaMode::task_axis);

inline constexpr int kFitBins = 6;

struct FitBin {
  double id_lo = 0.0;
  double id_hi = 0.0;
  int count = 0;
  double id_mean = 0.0;
  double mt_mean = 0.0;
};

struct FittsFit {
  double a = 0.0;   // s
  double b = 0.0;   // s/bit
  double r2 = 0.0;
  std::vector<FitBin> bins;  // non-empty bins only
};

struct IdMt {
  double id;
  double mt;
};

/// Six equal-width ID bins over the observed range, OLS on bin means.
FittsFit fit_fitts(const std::vector<IdMt>& points);
FittsFit fit_fitts(const std::vector<ConditionSummary>& summaries);

struct ThroughputReport {
  double tp_ea = 0.0;    // bits/s
  double tp_emax = 0.0;  // bits/s
  int participants = 0;
  int conditions = 0;
};

ThroughputReport throughput(const std::vector<ConditionSummary>& summaries);

nlohmann::json report_json(const std::vector<ConditionSummary>& summaries, const FittsFit& fit,
                           const ThroughputReport& tp, SigmaMode mode);
/// bin,id_lo,id_hi,count,id_mean,mt_mean
void write_bins_csv(std::ostream& out, const FittsFit& fit);

}  // namespace levi::fitts
