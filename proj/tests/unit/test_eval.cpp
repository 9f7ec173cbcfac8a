#include <numeric>
#include <sstream>

#include "doctest.h"
#include "lmpt/errors.hpp"
#include "lmpt/eval.hpp"
#include "lmpt/synth.hpp"
#include "unit/oracles.hpp"

using namespace lmpt;

namespace {

std::vector<ErrorMap> random_errors(Rng& rng, std::size_t samples) {
  static const char* names[] = {"A", "B", "C", "D", "E", "F"};
  std::vector<ErrorMap> out(samples);
  for (auto& m : out) {
    for (const char* n : names) {
      if (uniform01(rng) < 0.3) continue;
      // Quarter-millimetre steps so some errors land exactly on thresholds.
      m[n] = uniform01(rng) < 0.5 ? 0.25 * static_cast<double>(uniform_index(rng, 40)) : uniform(rng, 0, 10);
    }
    if (m.empty()) m["A"] = 1.0;
  }
  return out;
}

std::vector<std::string> split_lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("landmark_errors") {
  const LandmarkSet gt{{"A", {1, 2, 3}}, {"B", {0, 0, 0}}, {"C", {5, 5, 5}}};
  for (const auto& [n, e] : landmark_errors(gt, gt)) CHECK(e == 0.0);
  LandmarkSet pred = gt;
  pred["B"] = {3, 4, 0};
  pred.erase("C");
  pred["Z"] = {0, 0, 0};
  const auto e = landmark_errors(pred, gt);
  CHECK(e.size() == 2);
  CHECK(e.at("B") == 5.0);
  CHECK(landmark_errors(gt, pred) == e);
  CHECK_THROWS_AS(landmark_errors({{"Q", {0, 0, 0}}}, gt), EmptyEval);

  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const auto a = oracle::random_points(rng, 2, -50, 50);
    CHECK(std::abs(landmark_errors({{"X", a[0]}}, {{"X", a[1]}}).at("X") - oracle::dist(a[0], a[1])) <= 1e-12);
  }
}

TEST_CASE("aggregate_mae on the published rows") {
  const std::vector<std::string> human{"SGT", "LT", "PITC", "PLC", "PMC", "PPLC", "PPMC", "LEC", "MEC", "ICN"};
  const std::vector<double> human_v{1.58, 1.57, 2.98, 3.05, 2.33, 3.67, 2.40, 2.90, 3.31, 1.62};
  ErrorMap h;
  for (std::size_t i = 0; i < human.size(); ++i) h[human[i]] = human_v[i];
  const auto hs = aggregate_mae({h}, human);
  CHECK(std::abs(hs.mean - 2.54) <= 0.005);
  CHECK(hs.landmarks == human);

  const std::vector<std::string> dog{"MFH", "IFH", "SGT", "LT", "PLC", "PMC", "LEC", "MEC", "ICN", "DLC", "DMC"};
  const std::vector<double> dog_v{2.72, 1.23, 1.69, 1.41, 1.53, 1.79, 1.43, 3.37, 0.98, 1.45, 1.20};
  ErrorMap d;
  for (std::size_t i = 0; i < dog.size(); ++i) d[dog[i]] = dog_v[i];
  CHECK(std::abs(aggregate_mae({d}, dog).mean - 1.71) <= 0.005);

  CHECK(aggregate_mae({{{"A", 0.7}}}).mean == 0.7);
  const auto mixed = aggregate_mae({{{"A", 1.0}, {"B", 3.0}}, {{"A", 3.0}}}, {"B"});
  CHECK(mixed.landmarks == std::vector<std::string>{"B", "A"});
  CHECK(mixed.mae == std::vector<double>{3.0, 2.0});
  CHECK(mixed.mean == 2.5);
}

TEST_CASE("aggregate_mae and pck against brute force") {
  Rng rng(2);
  const auto th = EvalConfig::default_thresholds();
  for (int trial = 0; trial < 100; ++trial) {
    const auto errs = random_errors(rng, 1 + uniform_index(rng, 12));
    const auto [per, mean] = oracle::mae(errs);
    const auto got = aggregate_mae(errs);
    REQUIRE(got.landmarks.size() == per.size());
    for (std::size_t i = 0; i < got.landmarks.size(); ++i) CHECK(std::abs(got.mae[i] - per.at(got.landmarks[i])) <= 1e-12);
    CHECK(std::abs(got.mean - mean) <= 1e-12);
    const double own = std::accumulate(got.mae.begin(), got.mae.end(), 0.0) / static_cast<double>(got.mae.size());
    CHECK(std::abs(got.mean - own) <= 1e-12);

    const auto curve = pck_curve(errs, th);
    const auto ref = oracle::pck(errs, th);
    for (std::size_t i = 0; i < th.size(); ++i) {
      CHECK(std::abs(curve[i] - ref[i]) <= 1e-9);
      CHECK(curve[i] >= 0.0);
      CHECK(curve[i] <= 100.0);
      if (i) CHECK(curve[i] >= curve[i - 1]);
    }
    CHECK(pck_curve(errs, {1e9})[0] == 100.0);
  }
}

TEST_CASE("pck_curve") {
  const auto th = EvalConfig::default_thresholds();
  REQUIRE(th.size() == 10);
  CHECK(th.front() == 1.0);
  CHECK(th.back() == 8.0);
  CHECK(th[1] == doctest::Approx(1.0 + 7.0 / 9.0));
  for (double v : pck_curve({{{"A", 0.0}, {"B", 0.0}}}, th)) CHECK(v == 100.0);
  CHECK(pck_curve({{{"A", 0.5}, {"B", 2.0}, {"C", 9.0}}}, {1.0})[0] == doctest::Approx(100.0 / 3).epsilon(1e-12));
  CHECK(pck_curve({{{"A", 1.0}}}, {1.0})[0] == 100.0);  // inclusive
  CHECK_THROWS_AS(pck_curve({}, th), EmptyEval);

  // Per-landmark averaging differs from pooling when coverage is uneven.
  const std::vector<ErrorMap> uneven{{{"A", 0.0}, {"B", 5.0}}, {{"A", 0.0}}, {{"A", 0.0}}};
  CHECK(pck_curve(uneven, {1.0})[0] == 75.0);
  CHECK(pck_curve(uneven, {1.0}, true)[0] == 50.0);

  EvalConfig bad;
  bad.thresholds = {2.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.thresholds = {0.0, 1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("quantization errors") {
  PointCloud c{{{0, 0, 0}, {10, 0, 0}}};
  const auto q = quantization_errors(c, {{"A", {3, 4, 0}}, {"B", {10, 0, 0}}});
  CHECK(q.at("A") == 5.0);
  CHECK(q.at("B") == 0.0);
}

TEST_CASE("baseline_mean_position") {
  const auto params = SynthParams::human();
  const auto reg = synth_registry({params});
  const auto one = synth_generate(params, 1, 5);
  const auto pred = baseline_mean_position(one, reg)(one[0]);
  for (const auto& [n, p] : one[0].landmarks) CHECK(oracle::dist(pred.at(n), p) <= 1e-9);

  // Identical training shapes reproduce that shape exactly.
  const std::vector<Sample> same{one[0], one[0], one[0]};
  const auto pred2 = baseline_mean_position(same, reg)(one[0]);
  for (const auto& [n, p] : one[0].landmarks) CHECK(oracle::dist(pred2.at(n), p) <= 1e-9);

  // Recompute the MAE by hand from normalized-frame means.
  const auto data = synth_generate(params, 10, 6);
  const std::vector<Sample> train(data.begin(), data.begin() + 7), test(data.begin() + 7, data.end());
  std::map<std::string, Vec3> mean;
  for (const auto& s : train) {
    Vec3 c{0, 0, 0};
    for (const auto& p : s.cloud.points) c = c + p;
    c = c * (1.0 / static_cast<double>(s.cloud.size()));
    double r = 0;
    for (const auto& p : s.cloud.points) r = std::max(r, oracle::dist(p, c));
    for (const auto& [n, p] : s.landmarks) mean[n] = mean[n] + (p - c) * (1.0 / r / 7.0);
  }
  std::vector<ErrorMap> hand;
  for (const auto& s : test) {
    Vec3 c{0, 0, 0};
    for (const auto& p : s.cloud.points) c = c + p;
    c = c * (1.0 / static_cast<double>(s.cloud.size()));
    double r = 0;
    for (const auto& p : s.cloud.points) r = std::max(r, oracle::dist(p, c));
    ErrorMap e;
    for (const auto& [n, p] : s.landmarks) e[n] = oracle::dist(mean[n] * r + c, p);
    hand.push_back(e);
  }
  const auto report = evaluate(test, baseline_mean_position(train, reg), EvalConfig{}, reg.classes());
  CHECK(std::abs(report.mae.mean - oracle::mae(hand).second) <= 1e-9);
}

TEST_CASE("evaluate and reports") {
  const auto params = SynthParams::dog();
  const auto reg = synth_registry({params});
  const auto data = synth_generate(params, 4, 9);
  auto truth = [](const Sample& s) { return s.landmarks; };
  const auto perfect = evaluate(data, truth, EvalConfig{}, reg.classes());
  CHECK(perfect.mae.mean == 0.0);
  for (double v : perfect.pck) CHECK(v == 100.0);
  CHECK(perfect.mae.landmarks == reg.schema("dog").classes);
  CHECK(perfect.sample_ids.size() == 4);
  CHECK(perfect.quantization.mean >= 0.0);
  CHECK_THROWS_AS(evaluate({}, truth, EvalConfig{}), EmptyEval);

  const auto base = baseline_mean_position({data[0], data[1]}, reg);
  auto report = evaluate(data, base, EvalConfig{}, reg.classes(), 1);
  const auto threaded = evaluate(data, base, EvalConfig{}, reg.classes(), 3);
  report.meta["seed"] = 9;
  auto threaded_meta = threaded;
  threaded_meta.meta["seed"] = 9;
  CHECK(render_report(report, ReportFormat::Csv) == render_report(threaded_meta, ReportFormat::Csv));
  CHECK(render_report(report, ReportFormat::Markdown) == render_report(report, ReportFormat::Markdown));

  const auto md = split_lines(render_report(report, ReportFormat::Markdown));
  std::size_t rows = 0;
  bool in_table = false;
  for (const auto& l : md) {
    if (l.rfind("| Landmark", 0) == 0) in_table = true;
    if (in_table && l.empty()) break;
    if (in_table && l.rfind("|---", 0) != 0) ++rows;
  }
  CHECK(rows == report.mae.landmarks.size() + 2);

  // CSV reparse.
  const auto csv = split_lines(render_report(report, ReportFormat::Csv));
  CHECK(csv[0].rfind("# ", 0) == 0);
  CHECK(csv[0].find("seed") != std::string::npos);
  std::size_t i = 1;
  REQUIRE(csv[i++] == "landmark,mae_mm");
  for (std::size_t k = 0; k < report.mae.landmarks.size(); ++k, ++i) {
    const auto comma = csv[i].find(',');
    CHECK(csv[i].substr(0, comma) == report.mae.landmarks[k]);
    CHECK(std::abs(std::stod(csv[i].substr(comma + 1)) - report.mae.mae[k]) <= 1e-9);
  }
  CHECK(std::abs(std::stod(csv[i++].substr(5)) - report.mae.mean) <= 1e-9);
  CHECK(csv[i++].empty());
  REQUIRE(csv[i++] == "threshold_mm,pck_pct");
  std::size_t pck_rows = 0;
  for (; i < csv.size() && !csv[i].empty(); ++i, ++pck_rows) {
    const auto comma = csv[i].find(',');
    CHECK(std::abs(std::stod(csv[i].substr(0, comma)) - report.thresholds[pck_rows]) <= 1e-9);
    CHECK(std::abs(std::stod(csv[i].substr(comma + 1)) - report.pck[pck_rows]) <= 1e-9);
  }
  CHECK(pck_rows == 10);
  CHECK(csv[i + 1] == "landmark,quantization_mm");
}
