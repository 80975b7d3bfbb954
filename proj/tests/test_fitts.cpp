#include <doctest.h>

#include <random>
#include <sstream>

#include "levi/fitts.hpp"

using namespace levi;
using namespace levi::fitts;

namespace {

const Vec3 kA(-34e-3, 0, 0);
const Vec3 kB(34e-3, 0, 0);

// Serial A<->B movements whose endpoints deviate by devs[i] along the
// movement direction.
std::vector<MovementRecord> serial(const std::vector<double>& devs, double radius = 2e-3,
                                   const std::string& who = "p1", double mt = 0.5) {
  std::vector<MovementRecord> out;
  double t = 0.0;
  for (std::size_t i = 0; i < devs.size(); ++i) {
    MovementRecord r;
    r.participant = who;
    r.condition_radius = radius;
    r.move_index = static_cast<int>(i);
    r.from = i % 2 ? kB : kA;
    r.to = i % 2 ? kA : kB;
    r.t_start = t;
    r.t_end = t + mt;
    t = r.t_end;
    r.endpoint = r.to + devs[i] * r.task_axis();
    out.push_back(r);
  }
  return out;
}

ConditionSummary cell(const std::string& who, double radius, double ide, double mt) {
  ConditionSummary s;
  s.participant = who;
  s.condition_radius = radius;
  s.ide = ide;
  s.mean_mt = mt;
  return s;
}

}  // namespace

TEST_CASE("effective width is 4.133 sigma") {
  // Deviations +-1 (unit sigma, population estimator).
  const auto recs = serial({1.0, -1.0, 1.0, -1.0});
  const auto s = summarize_condition(recs);
  CHECK(s.sigma == 1.0);
  CHECK(s.we == 4.133);
}

TEST_CASE("hand-computed condition") {
  std::vector<double> devs;
  for (int i = 0; i < 50; ++i) devs.push_back(i % 2 ? -1e-3 : 1e-3);
  const auto s = summarize_condition(serial(devs));
  CHECK(s.sigma == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(s.we == doctest::Approx(4.133e-3).epsilon(1e-12));
  CHECK(s.de == doctest::Approx(68e-3).epsilon(1e-12));
  CHECK(s.effective_movements == 50);
  CHECK(s.ide == doctest::Approx(std::log2(68.0 / 4.133 + 1.0)).epsilon(1e-12));
  CHECK(s.mean_mt == doctest::Approx(0.5));
  CHECK(s.nominal_id == doctest::Approx(std::log2(68.0 / 4.0 + 1.0)));
}

TEST_CASE("summary errors") {
  CHECK_THROWS_AS(summarize_condition(serial({1e-3})), FittsError);
  CHECK_THROWS_AS(summarize_condition(serial({0.0, 0.0, 0.0})), FittsError);
  CHECK_THROWS_AS(summarize_condition(serial({2e-4, 2e-4})), FittsError);
}

TEST_CASE("D_e excludes movements outside the effective target") {
  // One far outlier: stays in sigma, drops out of D_e.
  std::vector<double> devs(20, 0.0);
  for (int i = 0; i < 20; ++i) devs[i] = (i % 2 ? -0.5e-3 : 0.5e-3);
  devs[7] = 20e-3;
  const auto s = summarize_condition(serial(devs));
  CHECK(s.effective_movements == 19);
  double centroid = 0.0;
  for (double d : devs) centroid += d;
  centroid /= 20.0;
  double ss = 0.0;
  for (double d : devs) ss += (d - centroid) * (d - centroid);
  CHECK(s.sigma == doctest::Approx(std::sqrt(ss / 20.0)));
  double sum = 0.0;
  for (int i = 0; i < 20; ++i) {
    if (i != 7) sum += 68e-3 + devs[i];
  }
  CHECK(s.de == doctest::Approx(sum / 19.0));
}

TEST_CASE("radial sigma") {
  auto recs = serial({1e-3, 1e-3, -1e-3, -1e-3});
  CHECK(summarize_condition(recs, SigmaMode::radial).sigma == doctest::Approx(1e-3));
  // Off-axis scatter counts radially but not along the task axis.
  recs = serial({0.0, 0.0, 0.0, 0.0});
  recs[0].endpoint[1] += 1e-3;
  recs[2].endpoint[1] -= 1e-3;
  CHECK_THROWS_AS(summarize_condition(recs, SigmaMode::task_axis), FittsError);
  CHECK(summarize_condition(recs, SigmaMode::radial).sigma ==
        doctest::Approx(std::sqrt(2e-6 / 4.0)));
  CHECK(sigma_mode_from_string("radial") == SigmaMode::radial);
  CHECK_THROWS_AS(sigma_mode_from_string("polar"), InvalidParameter);
}

TEST_CASE("ID_e is scale invariant") {
  std::mt19937 rng(7);
  std::normal_distribution<double> n(0.0, 1.5e-3);
  std::vector<double> devs(40);
  for (auto& d : devs) d = n(rng);
  const auto base = summarize_condition(serial(devs));
  auto scaled = serial(devs);
  for (auto& r : scaled) {
    r.from *= 2.5;
    r.to *= 2.5;
    r.endpoint *= 2.5;
  }
  const auto s = summarize_condition(scaled);
  CHECK(s.ide == doctest::Approx(base.ide).epsilon(1e-12));
  CHECK(s.we == doctest::Approx(2.5 * base.we).epsilon(1e-12));
}

TEST_CASE("exact linear fit") {
  std::vector<IdMt> pts;
  for (int i = 0; i < 60; ++i) {
    const double id = 1.5 + 0.07 * i;
    pts.push_back({id, 0.1 + 0.2 * id});
  }
  const auto f = fit_fitts(pts);
  CHECK(f.bins.size() == 6);
  CHECK(std::abs(f.a - 0.1) < 1e-12);
  CHECK(std::abs(f.b - 0.2) < 1e-12);
  CHECK(std::abs(f.r2 - 1.0) < 1e-12);
}

TEST_CASE("constant MT gives zero slope and zero R2") {
  std::vector<IdMt> pts;
  for (int i = 0; i < 30; ++i) pts.push_back({1.0 + 0.1 * i, 0.7});
  const auto f = fit_fitts(pts);
  CHECK(std::abs(f.b) < 1e-15);
  CHECK(f.r2 == 0.0);
  CHECK(f.a == doctest::Approx(0.7));
}

TEST_CASE("fit needs two bins") {
  CHECK_THROWS_AS(fit_fitts(std::vector<IdMt>{{3.0, 1.0}, {3.0, 1.1}}), FittsError);
  CHECK_THROWS_AS(fit_fitts(std::vector<IdMt>{}), FittsError);
  // Two distinct IDs land in the first and last bins.
  const auto f = fit_fitts(std::vector<IdMt>{{2.0, 0.5}, {4.0, 0.9}});
  CHECK(f.bins.size() == 2);
  CHECK(f.b == doctest::Approx(0.2));
}

TEST_CASE("binning and regression properties") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> id(1.0, 6.0);
  std::normal_distribution<double> noise(0.0, 0.08);
  std::vector<IdMt> pts;
  for (int i = 0; i < 200; ++i) {
    const double x = id(rng);
    pts.push_back({x, 0.3 + 0.15 * x + noise(rng)});
  }
  const auto f = fit_fitts(pts);
  REQUIRE(f.bins.size() == 6);
  int total = 0;
  for (const auto& b : f.bins) {
    total += b.count;
    CHECK(b.id_mean >= b.id_lo - 1e-12);
    CHECK(b.id_mean <= b.id_hi + 1e-12);
    CHECK(b.id_hi - b.id_lo == doctest::Approx((f.bins.back().id_hi - f.bins.front().id_lo) / 6));
  }
  CHECK(total == 200);

  // Residuals orthogonal to the regressor and to the constant.
  double dot_x = 0.0, dot_1 = 0.0;
  for (const auto& b : f.bins) {
    const double r = b.mt_mean - (f.a + f.b * b.id_mean);
    dot_x += r * b.id_mean;
    dot_1 += r;
  }
  CHECK(std::abs(dot_x) < 1e-9);
  CHECK(std::abs(dot_1) < 1e-9);

  // Two-pass R2 with a separately solved normal system.
  const double n = double(f.bins.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& b : f.bins) {
    sx += b.id_mean;
    sy += b.mt_mean;
    sxx += b.id_mean * b.id_mean;
    sxy += b.id_mean * b.mt_mean;
  }
  const double det = n * sxx - sx * sx;
  const double b_ref = (n * sxy - sx * sy) / det;
  const double a_ref = (sy * sxx - sx * sxy) / det;
  const double ybar = sy / n;
  double ss_tot = 0, ss_res = 0;
  for (const auto& b : f.bins) {
    ss_tot += (b.mt_mean - ybar) * (b.mt_mean - ybar);
    const double r = b.mt_mean - a_ref - b_ref * b.id_mean;
    ss_res += r * r;
  }
  CHECK(f.a == doctest::Approx(a_ref).epsilon(1e-12));
  CHECK(f.b == doctest::Approx(b_ref).epsilon(1e-12));
  CHECK(f.r2 == doctest::Approx(1.0 - ss_res / ss_tot).epsilon(1e-12));
}

TEST_CASE("Monte-Carlo recovery of a and b") {
  const double a = 0.4, b = 0.2;
  const double mean_id = 4.5;
  const double sd = 0.05 * (a + b * mean_id);
  double sum_a = 0.0, sum_b = 0.0;
  int slope_within = 0;
  const int reps = 100;
  for (int rep = 0; rep < reps; ++rep) {
    std::mt19937_64 rng(1000 + rep);
    std::uniform_real_distribution<double> id(2.0, 7.0);
    std::normal_distribution<double> noise(0.0, sd);
    std::vector<IdMt> pts;
    for (int i = 0; i < 300; ++i) {
      const double x = id(rng);
      pts.push_back({x, a + b * x + noise(rng)});
    }
    const auto f = fit_fitts(pts);
    sum_a += f.a;
    sum_b += f.b;
    slope_within += std::abs(f.b - b) <= 0.05 * b;
  }
  CHECK(std::abs(sum_a / reps - a) <= 0.05 * a);
  CHECK(std::abs(sum_b / reps - b) <= 0.05 * b);
  CHECK(slope_within == reps);
}

TEST_CASE("throughput") {
  SUBCASE("single cell") {
    const auto r = throughput({cell("p", 2e-3, 4.0, 0.8)});
    CHECK(r.tp_ea == doctest::Approx(5.0));
    CHECK(r.tp_emax == doctest::Approx(5.0));
    CHECK(r.participants == 1);
    CHECK(r.conditions == 1);
  }
  SUBCASE("two participants") {
    const auto r = throughput({cell("p", 2e-3, 4.0, 1.0), cell("q", 2e-3, 6.0, 1.0)});
    CHECK(r.tp_ea == doctest::Approx(5.0));
    CHECK(r.tp_emax == doctest::Approx(6.0));
  }
  SUBCASE("mean of means") {
    const auto r = throughput({cell("p", 2e-3, 2.0, 1.0), cell("p", 4e-3, 4.0, 1.0),
                               cell("q", 2e-3, 9.0, 1.0), cell("q", 4e-3, 3.0, 1.0)});
    CHECK(r.tp_ea == doctest::Approx(0.5 * (3.0 + 6.0)));
    CHECK(r.tp_emax == doctest::Approx(9.0));
    CHECK(r.tp_emax >= r.tp_ea);
  }
  SUBCASE("missing cell is named") {
    try {
      throughput({cell("p", 2e-3, 2.0, 1.0), cell("p", 4e-3, 4.0, 1.0), cell("q", 2e-3, 9.0, 1.0)});
      FAIL("expected an error");
    } catch (const FittsError& e) {
      CHECK(std::string(e.what()).find("(q, 4 mm)") != std::string::npos);
    }
  }
}

TEST_CASE("log parsing") {
  SUBCASE("empty log") {
    std::istringstream in("");
    CHECK(parse_log(in).empty());
    std::istringstream header_only(std::string(kLogHeader) + "\n");
    CHECK(parse_log(header_only).empty());
  }
  SUBCASE("one movement") {
    std::istringstream in(std::string(kLogHeader) +
                          "\np1,4,0,1.25,2,33.5,0.5,-0.25,-34;0;0,34;0;0\n");
    const auto r = parse_log(in);
    REQUIRE(r.size() == 1);
    CHECK(r[0].participant == "p1");
    CHECK(r[0].condition_radius == doctest::Approx(4e-3));
    CHECK(r[0].movement_time() == doctest::Approx(0.75));
    CHECK(r[0].endpoint.isApprox(Vec3(33.5e-3, 0.5e-3, -0.25e-3)));
    CHECK(r[0].to.isApprox(kB));
    CHECK(r[0].axis_deviation() == doctest::Approx(-0.5e-3));
    CHECK(r[0].amplitude() == doctest::Approx(67.5e-3));
  }
  SUBCASE("round trip") {
    std::vector<double> devs;
    for (int i = 0; i < 10; ++i) devs.push_back(0.1e-3 * (i - 4.5));
    auto recs = serial(devs, 4e-3, "p7", 0.613);
    std::ostringstream out;
    write_log(out, recs);
    std::istringstream in(out.str());
    const auto back = parse_log(in);
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      CHECK(back[i].endpoint.isApprox(recs[i].endpoint, 1e-12));
      CHECK(back[i].t_end == recs[i].t_end);
      CHECK(back[i].move_index == recs[i].move_index);
    }
  }
  auto error_line = [](const std::string& body) -> std::size_t {
    std::istringstream in(std::string(kLogHeader) + "\n" + body);
    try {
      parse_log(in);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(error_line("p1,4,0,1,2,0,0,0,-34;0;0,34;0;0\np1,4,1,2,3,0,0\n") == 3);
  CHECK(error_line("p1,4,0,1,2,0,x,0,-34;0;0,34;0;0\n") == 2);
  CHECK(error_line("p1,4,0,2,1,0,0,0,-34;0;0,34;0;0\n") == 2);
  CHECK(error_line("p1,4,0,1,2,0,0,0,-34;0,34;0;0\n") == 2);
  CHECK(error_line("p1,4,0,1,2,0,0,0,34;0;0,34;0;0\n") == 2);
  CHECK(error_line("p1,-4,0,1,2,0,0,0,-34;0;0,34;0;0\n") == 2);
  CHECK(error_line("p1,4,0.5,1,2,0,0,0,-34;0;0,34;0;0\n") == 2);
  CHECK(error_line("p1,4,1,1,2,0,0,0,-34;0;0,34;0;0\np1,4,0,3,4,0,0,0,34;0;0,-34;0;0\n") == 3);
  CHECK(error_line("p1,4,0,5,6,0,0,0,-34;0;0,34;0;0\n\np1,4,1,3,4,0,0,0,34;0;0,-34;0;0\n") == 4);
  std::istringstream bad_header("participant,radius\n");
  CHECK_THROWS_AS(parse_log(bad_header), ParseError);
}

TEST_CASE("report and bins CSV") {
  std::vector<MovementRecord> all;
  for (const char* who : {"p1", "p2"}) {
    for (double radius : {2e-3, 4e-3, 8e-3}) {
      std::mt19937 rng(static_cast<unsigned>(radius * 1e4) + who[1]);
      std::normal_distribution<double> n(0.0, radius / 2);
      std::vector<double> devs(50);
      for (auto& d : devs) d = n(rng);
      const double mt = 0.3 + 0.15 * std::log2(68e-3 / (2 * radius) + 1);
      auto recs = serial(devs, radius, who, mt);
      all.insert(all.end(), recs.begin(), recs.end());
    }
  }
  const auto summaries = summarize_all(all);
  REQUIRE(summaries.size() == 6);
  const auto fit = fit_fitts(summaries);
  const auto tp = throughput(summaries);
  CHECK(tp.participants == 2);
  CHECK(tp.conditions == 3);
  CHECK(tp.tp_emax >= tp.tp_ea);
  const auto j = report_json(summaries, fit, tp, SigmaMode::task_axis);
  CHECK(j["metadata"]["sigma_mode"] == "task_axis");
  CHECK(j["summaries"].size() == 6);
  CHECK(j["fit"]["r2"].get<double>() >= 0.0);
  std::ostringstream csv;
  write_bins_csv(csv, fit);
  CHECK(csv.str().rfind("bin,id_lo,id_hi,count,id_mean,mt_mean\n0,", 0) == 0);
}
