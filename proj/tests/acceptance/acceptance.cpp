// Acceptance run: one PASS/FAIL line per criterion. `--only 4,6` restricts the
// run; exit status is non-zero if any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "lmpt/checkpoint.hpp"
#include "lmpt/eval.hpp"
#include "lmpt/gradcheck.hpp"
#include "lmpt/runtime.hpp"
#include "lmpt/synth.hpp"
#include "lmpt/training.hpp"
#include "unit/oracles.hpp"

using namespace lmpt;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---- shared fixture helpers -----------------------------------------------

SynthParams restrict_landmarks(SynthParams p, const std::set<std::string>& keep) {
  std::vector<LandmarkRule> rules;
  for (const auto& r : p.landmarks)
    if (keep.count(r.name)) rules.push_back(r);
  p.landmarks = rules;
  return p;
}

ModelConfig fixture_model(const LabelRegistry& reg) {
  ModelConfig m = ModelConfig::tiny(reg.num_classes(), reg.num_conditions());
  m.blocks = {1, 1, 1};
  m.channels = {16, 32, 64};
  m.neighbors = {8, 8, 8};
  m.pool_cells = {0.06, 0.15, 0.4};
  return m;
}

TrainConfig fixture_train(std::size_t epochs, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 4;
  t.peak_lr = 0.005;
  t.num_points = 512;
  t.seed = seed;
  t.augment = true;
  t.augmentation.full_turn = false;
  t.augmentation.tilt_deg = 10.0;
  t.augmentation.scale_min = 0.85;
  t.augmentation.scale_max = 1.15;
  t.augmentation.flip_prob = 0.5;
  // Mirror of a left femur is a right femur with unchanged labels.
  t.augmentation.swap_labels_on_flip = false;
  return t;
}

Predictor model_predictor(const Checkpoint& c) {
  return [&c](const Sample& s) {
    const auto prepared = prepare_sample(s, c.train.num_points, c.train.seed, c.registry);
    const auto logits = forward(prepared.cloud, prepared.condition, c.params, c.model);
    return predict_landmarks(logits, prepared.cloud, prepared.transform, c.registry, s.species);
  };
}

double mae_of(const std::vector<Sample>& samples, const Predictor& p, const LabelRegistry& reg) {
  return evaluate(samples, p, EvalConfig{}, reg.classes()).mae.mean;
}

std::vector<Sample> pick(const std::vector<Sample>& all, std::size_t from, std::size_t to) {
  return {all.begin() + static_cast<std::ptrdiff_t>(from), all.begin() + static_cast<std::ptrdiff_t>(to)};
}

// ---- criteria ---------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto results = run_gradcheck_suite(0, 1e-4);
  const double secs = seconds_since(t0);
  Outcome o;
  std::size_t passed = 0;
  double worst = 0.0;
  std::string failed;
  for (const auto& r : results) {
    passed += r.pass;
    worst = std::max(worst, r.error);
    if (!r.pass) failed += " " + r.name;
  }
  o.pass = passed == results.size() && secs < 60.0;
  o.detail = std::to_string(passed) + "/" + std::to_string(results.size()) + " checks below 1e-4 (worst " +
             fmt("%.2e", worst) + "), " + fmt("%.1f", secs) + " s" + (failed.empty() ? "" : "; failed:" + failed);
  return o;
}

Outcome oracle_equivalence() {
  Rng rng(2024);
  const int trials = 100;
  int bad_knn = 0, bad_medoid = 0, bad_serial = 0, bad_mae = 0, bad_pck = 0;
  for (int t = 0; t < trials; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 499);
    // Half the instances sit on an integer grid to force distance ties.
    const auto pts = t % 2 ? oracle::random_points(rng, n) : oracle::grid_points(rng, n, 6);
    const auto query = t % 2 ? oracle::random_points(rng, 1 + uniform_index(rng, 60)) : oracle::grid_points(rng, 40, 6);
    const std::size_t k = 1 + uniform_index(rng, std::min<std::size_t>(n, 16));
    const auto table = knn(std::span<const Vec3>(query), std::span<const Vec3>(pts), k);
    for (std::size_t i = 0; i < query.size(); ++i) {
      const auto ref = oracle::knn_row(query[i], pts, k);
      for (std::size_t j = 0; j < k; ++j) {
        if (table.row_indices(i)[j] != ref[j].first || std::abs(table.row_distances(i)[j] - ref[j].second) > 1e-9) {
          ++bad_knn;
          i = query.size();
          break;
        }
      }
    }

    const std::size_t m = 1 + uniform_index(rng, 120);
    const auto cand = t % 2 ? oracle::random_points(rng, m) : oracle::grid_points(rng, m, 3);
    if (medoid_index(cand) != oracle::medoid_index(cand)) ++bad_medoid;

    const int bits = 1 + static_cast<int>(uniform_index(rng, 10));
    if (serialize_order(pts, bits) != oracle::serialize_order(pts, bits)) ++bad_serial;

    std::vector<ErrorMap> errs(1 + uniform_index(rng, 20));
    for (auto& e : errs) {
      for (const char* name : {"A", "B", "C", "D", "E"})
        if (uniform01(rng) < 0.7) e[name] = uniform01(rng) < 0.3 ? 0.5 * static_cast<double>(uniform_index(rng, 18)) : uniform(rng, 0, 9);
      if (e.empty()) e["C"] = 2.0;
    }
    const auto [per, mean] = oracle::mae(errs);
    const auto got = aggregate_mae(errs);
    bool same = got.landmarks.size() == per.size() && std::abs(got.mean - mean) <= 1e-9;
    for (std::size_t i = 0; same && i < got.landmarks.size(); ++i) same = std::abs(got.mae[i] - per.at(got.landmarks[i])) <= 1e-9;
    if (!same) ++bad_mae;
    const auto th = EvalConfig::default_thresholds();
    const auto curve = pck_curve(errs, th), ref = oracle::pck(errs, th);
    for (std::size_t i = 0; i < th.size(); ++i) {
      if (std::abs(curve[i] - ref[i]) > 1e-9) {
        ++bad_pck;
        break;
      }
    }
  }
  Outcome o;
  o.pass = bad_knn + bad_medoid + bad_serial + bad_mae + bad_pck == 0;
  o.detail = std::to_string(trials) + " instances each; mismatches knn " + std::to_string(bad_knn) + ", medoid " +
             std::to_string(bad_medoid) + ", serialize_order " + std::to_string(bad_serial) + ", aggregate_mae " +
             std::to_string(bad_mae) + ", pck_curve " + std::to_string(bad_pck);
  return o;
}

Outcome table_consistency() {
  const std::vector<double> human{1.58, 1.57, 2.98, 3.05, 2.33, 3.67, 2.40, 2.90, 3.31, 1.62};
  const std::vector<double> dog{2.72, 1.23, 1.69, 1.41, 1.53, 1.79, 1.43, 3.37, 0.98, 1.45, 1.20};
  auto mean_of = [](const std::vector<double>& v) {
    ErrorMap m;
    for (std::size_t i = 0; i < v.size(); ++i) m["L" + std::to_string(100 + i)] = v[i];
    return aggregate_mae({m}).mean;
  };
  const double h = mean_of(human), d = mean_of(dog);
  Outcome o;
  o.pass = std::abs(h - 2.54) <= 0.005 && std::abs(d - 1.71) <= 0.005;
  o.detail = "human row mean " + fmt("%.4f", h) + " (2.54), dog row mean " + fmt("%.4f", d) + " (1.71)";
  return o;
}

Outcome overfit_fixture() {
  const auto t0 = Clock::now();
  auto params = restrict_landmarks(SynthParams::human(), {"MFH", "SGT", "LEC", "MEC", "DLC", "DMC"});
  params.points_per_shape = 512;
  const auto reg = synth_registry({params});
  const auto data = synth_generate(params, 2, 41);
  const ModelConfig model = ModelConfig::tiny(reg.num_classes(), reg.num_conditions());
  TrainConfig tc;
  tc.epochs = 300;
  tc.batch_size = 2;
  tc.peak_lr = 0.01;
  tc.augment = false;
  tc.num_points = 512;
  tc.seed = 41;
  const auto result = train(tc, model, data, reg);
  const double mae = mae_of(data, model_predictor(result.checkpoint), reg);
  double spacing = 0.0;
  for (const auto& s : data) spacing += mean_nearest_neighbor_spacing(s.cloud.points) / static_cast<double>(data.size());
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = mae <= 2.0 * spacing && secs < 600.0;
  o.detail = "train MAE " + fmt("%.2f", mae) + " mm vs limit " + fmt("%.2f", 2.0 * spacing) + " mm (2 x spacing " +
             fmt("%.2f", spacing) + "), final loss " + fmt("%.4f", result.log.back().mean_loss) + ", " +
             fmt("%.0f", secs) + " s";
  return o;
}

Outcome generalization_fixture() {
  const auto t0 = Clock::now();
  const auto params = SynthParams::human();
  const auto reg = synth_registry({params});
  const auto data = synth_generate(params, 40, 7);
  const auto train_set = pick(data, 0, 32), test_set = pick(data, 32, 40);
  const auto result = train(fixture_train(100, 1), fixture_model(reg), train_set, reg);
  const double model = mae_of(test_set, model_predictor(result.checkpoint), reg);
  const double base = mae_of(test_set, baseline_mean_position(train_set, reg), reg);
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = model <= 0.5 * base && secs < 1800.0;
  o.detail = "test MAE " + fmt("%.2f", model) + " mm vs baseline " + fmt("%.2f", base) + " mm (ratio " +
             fmt("%.2f", model / base) + ", limit 0.50), " + fmt("%.0f", secs) + " s";
  return o;
}

Outcome cross_species() {
  const auto t0 = Clock::now();
  const auto human = SynthParams::human(), dog = SynthParams::dog();
  const auto reg = synth_registry({human, dog});
  const auto h = synth_generate(human, 24, 11), d = synth_generate(dog, 24, 12);
  const auto h_train = pick(h, 0, 16), h_test = pick(h, 16, 24);
  const auto d_train = pick(d, 0, 16), d_test = pick(d, 16, 24);
  auto joint = h_train;
  joint.insert(joint.end(), d_train.begin(), d_train.end());

  const std::size_t epochs = 100;
  auto run = [&](const std::vector<Sample>& set, bool film) {
    ModelConfig m = fixture_model(reg);
    m.film = film;
    return train(fixture_train(epochs, 3), m, set, reg).checkpoint;
  };
  const auto single_h = run(h_train, true), single_d = run(d_train, true);
  const auto with_film = run(joint, true), without_film = run(joint, false);

  const double sh = mae_of(h_test, model_predictor(single_h), reg);
  const double sd = mae_of(d_test, model_predictor(single_d), reg);
  const double jh = mae_of(h_test, model_predictor(with_film), reg);
  const double jd = mae_of(d_test, model_predictor(with_film), reg);
  const double nh = mae_of(h_test, model_predictor(without_film), reg);
  const double nd = mae_of(d_test, model_predictor(without_film), reg);

  // Joint training may not degrade a species by more than 25% of its
  // single-species MAE; being better is fine.
  const bool within = jh <= 1.25 * sh && jd <= 1.25 * sd;
  const bool film_helps = nh > jh || nd > jd;
  Outcome o;
  o.pass = within && film_helps;
  o.detail = "human single/joint/no-FiLM " + fmt("%.2f", sh) + "/" + fmt("%.2f", jh) + "/" + fmt("%.2f", nh) +
             " mm, dog " + fmt("%.2f", sd) + "/" + fmt("%.2f", jd) + "/" + fmt("%.2f", nd) + " mm; joint/single " +
             fmt("%.2f", jh / sh) + ", " + fmt("%.2f", jd / sd) + " (limit 1.25); " + fmt("%.0f", seconds_since(t0)) +
             " s";
  return o;
}

// Criterion 7: each invariant runs on its own and reports by name.
Outcome invariant_suites() {
  std::vector<std::pair<std::string, std::function<bool()>>> suites;
  const auto reg = LabelRegistry::build({{"a", {"MID", "LEC", "MEC", "TIP"}}, {"b", {"LEC", "MEC"}}}, {{"LEC", "MEC"}});

  suites.emplace_back("film_identity_at_init", [&] {
    const auto cfg = ModelConfig::tiny(reg.num_classes(), 2);
    const auto params = build_model(cfg, 5);
    Rng rng(5);
    const PointCloud cloud = normalize_cloud(PointCloud{oracle::random_points(rng, 48)}).first;
    const auto a = forward(cloud, 0, params, cfg), b = forward(cloud, 1, params, cfg);
    return std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end());
  });

  suites.emplace_back("permutation_equivariance_10_seeds", [&] {
    const auto cfg = ModelConfig::tiny(reg.num_classes(), 2);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(derive_seed({seed, 77}));
      const PointCloud cloud = normalize_cloud(PointCloud{oracle::random_points(rng, 40)}).first;
      std::vector<std::size_t> perm(cloud.size());
      std::iota(perm.begin(), perm.end(), 0);
      for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
      PointCloud shuffled;
      shuffled.points.resize(cloud.size());
      for (std::size_t i = 0; i < cloud.size(); ++i) shuffled.points[perm[i]] = cloud[i];
      const auto params = build_model(cfg, seed);
      const auto a = forward(cloud, 1, params, cfg), b = forward(shuffled, 1, params, cfg);
      const std::size_t C = a.cols();
      for (std::size_t i = 0; i < cloud.size(); ++i)
        for (std::size_t c = 0; c < C; ++c)
          if (std::abs(a.data()[i * C + c] - b.data()[perm[i] * C + c]) > 1e-9) return false;
    }
    return true;
  });

  suites.emplace_back("flip_involution_and_label_swap", [&] {
    Rng rng(6);
    AugmentSample s{PointCloud{oracle::random_points(rng, 30)}, {}, Side::Left};
    s.landmarks = {{"LEC", s.cloud[1]}, {"MEC", s.cloud[2]}, {"MID", s.cloud[3]}};
    AugmentParams p;
    const auto once = mirror_flip(s, p, reg), twice = mirror_flip(once, p, reg);
    if (twice.cloud.points != s.cloud.points || twice.landmarks != s.landmarks || twice.side != s.side) return false;
    if (once.landmarks.at("MEC")[0] != -s.landmarks.at("LEC")[0]) return false;
    const auto perm = reg.mirror_permutation();
    for (std::size_t i = 0; i < perm.size(); ++i) {
      if (perm[perm[i]] != i) return false;
      if (reg.classes()[perm[i]] != reg.mirror_of(reg.classes()[i])) return false;
    }
    return true;
  });

  suites.emplace_back("ignore_channel_zero_gradients", [&] {
    Rng rng(7);
    std::vector<double> v(10 * 4);
    for (auto& x : v) x = uniform(rng, -3, 3);
    const auto logits = ad::Tensor::from({10, 4}, v, true);
    const std::vector<std::int64_t> targets{ad::kIgnore, 3, ad::kIgnore, 9};
    ad::backward(keypoint_loss(logits, targets));
    for (std::size_t i = 0; i < 10; ++i)
      if (logits.grad()[i * 4 + 0] != 0.0 || logits.grad()[i * 4 + 2] != 0.0) return false;
    return true;
  });

  suites.emplace_back("pck_monotonicity", [&] {
    Rng rng(8);
    for (int t = 0; t < 50; ++t) {
      std::vector<ErrorMap> errs(1 + uniform_index(rng, 10));
      for (auto& e : errs) e["A"] = uniform(rng, 0, 12), e["B"] = uniform(rng, 0, 12);
      const auto curve = pck_curve(errs, EvalConfig::default_thresholds());
      for (std::size_t i = 1; i < curve.size(); ++i)
        if (curve[i] < curve[i - 1]) return false;
      if (pck_curve(errs, {12.0})[0] != 100.0) return false;
    }
    return true;
  });

  suites.emplace_back("one_cycle_boundaries", [&] {
    const OneCycle s{3e-4, 0.3, 25.0, 1e4};
    return std::abs(one_cycle_lr(0, 100, s) - 3e-4 / 25.0) <= 1e-18 && one_cycle_lr(29, 100, s) == 3e-4 &&
           std::abs(one_cycle_lr(99, 100, s) - 3e-4 / 25e4) <= 1e-9;
  });

  suites.emplace_back("checkpoint_roundtrip_bit_exact", [&] {
    Checkpoint c;
    c.registry = reg;
    c.model = ModelConfig::tiny(reg.num_classes(), reg.num_conditions());
    c.params = build_model(c.model, 9);
    round_to_storage_precision(c.params);
    const auto bytes = encode_checkpoint(c);
    const auto back = decode_checkpoint(bytes);
    if (encode_checkpoint(back) != bytes) return false;
    Rng rng(9);
    const PointCloud cloud = normalize_cloud(PointCloud{oracle::random_points(rng, 32)}).first;
    const auto a = forward(cloud, 1, c.params, c.model), b = forward(cloud, 1, back.params, back.model);
    return std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end());
  });

  suites.emplace_back("full_run_determinism", [&] {
    auto params = restrict_landmarks(SynthParams::dog(), {"MFH", "SGT", "LT", "LEC", "MEC"});
    params.points_per_shape = 256;
    const auto sreg = synth_registry({params});
    const auto data = synth_generate(params, 4, 13);
    TrainConfig tc = fixture_train(3, 13);
    tc.batch_size = 2;
    tc.num_points = 256;
    const auto model = ModelConfig::tiny(sreg.num_classes(), sreg.num_conditions());
    return encode_checkpoint(train(tc, model, data, sreg).checkpoint) ==
           encode_checkpoint(train(tc, model, data, sreg).checkpoint);
  });

  Outcome o;
  std::size_t passed = 0;
  std::string failed;
  for (const auto& [name, fn] : suites) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      failed += " " + name + "(" + e.what() + ")";
      continue;
    }
    passed += ok;
    if (!ok) failed += " " + name;
  }
  o.pass = passed == suites.size();
  o.detail = std::to_string(passed) + "/" + std::to_string(suites.size()) + " suites hold" +
             (failed.empty() ? "" : "; failed:" + failed);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"oracle equivalence", oracle_equivalence},
      {"table consistency", table_consistency},
      {"overfit fixture", overfit_fixture},
      {"generalization fixture", generalization_fixture},
      {"cross-species conditioning", cross_species},
      {"invariant suites", invariant_suites},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
