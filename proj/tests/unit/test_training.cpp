#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "lmpt/checkpoint.hpp"
#include "lmpt/errors.hpp"
#include "lmpt/synth.hpp"
#include "lmpt/training.hpp"
#include "unit/oracles.hpp"

using namespace lmpt;
using ad::Tensor;

namespace {

LabelRegistry lr_registry() {
  return LabelRegistry::build({{"h", {"MID", "LEC", "MEC", "TIP"}}, {"d", {"LEC", "MEC"}}}, {{"LEC", "MEC"}});
}

SynthParams six_landmarks() {
  SynthParams p = SynthParams::human();
  std::vector<LandmarkRule> keep;
  for (const auto& r : p.landmarks) {
    if (r.name == "MFH" || r.name == "SGT" || r.name == "LEC" || r.name == "MEC" || r.name == "DLC" || r.name == "DMC") {
      keep.push_back(r);
    }
  }
  p.landmarks = keep;
  p.right_fraction = 0.0;
  return p;
}

ModelConfig fixture_model(const LabelRegistry& reg) {
  ModelConfig m = ModelConfig::tiny(reg.num_classes(), reg.num_conditions());
  m.channels = {16, 32};
  m.neighbors = {8, 8};
  m.pool_cells = {0.08, 0.2};
  return m;
}

}  // namespace

TEST_CASE("assign_targets") {
  const auto reg = lr_registry();
  Rng rng(1);
  PointCloud cloud{oracle::random_points(rng, 20)};
  auto t = assign_targets(cloud, {{"LEC", cloud[7]}}, reg);
  CHECK(t == TargetAssignment{ad::kIgnore, 7, ad::kIgnore, ad::kIgnore});

  PointCloud grid;
  for (int i = 0; i < 8; ++i) grid.points.push_back({static_cast<double>(i), 0, 0});
  grid.points[2] = {0, 0, 0};
  grid.points[5] = {2, 0, 0};
  // (1,0,0) is equidistant from points 2 and 5 (and from nothing closer).
  grid.points[0] = {9, 9, 9};
  grid.points[1] = {9, 9, 8};
  auto tie = assign_targets(grid, {{"MID", {1, 0, 0}}}, reg);
  CHECK(tie[0] == 2);

  for (int trial = 0; trial < 30; ++trial) {
    PointCloud c{oracle::random_points(rng, 1 + uniform_index(rng, 200))};
    LandmarkSet lm{{"MID", {uniform(rng, -1, 1), uniform(rng, -1, 1), 0.0}}, {"TIP", {0.0, uniform(rng, -1, 1), 1.0}}};
    auto got = assign_targets(c, lm, reg);
    CHECK(got[0] == static_cast<std::int64_t>(oracle::nearest(c.points, lm["MID"])));
    CHECK(got[3] == static_cast<std::int64_t>(oracle::nearest(c.points, lm["TIP"])));
  }
  CHECK_THROWS_AS(assign_targets(cloud, {{"NOPE", {0, 0, 0}}}, reg), SchemaError);
}

TEST_CASE("keypoint_loss values and gradients") {
  const std::vector<std::int64_t> none{ad::kIgnore, ad::kIgnore};
  auto z = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  auto l0 = keypoint_loss(z, none);
  CHECK(l0.item() == 0.0);
  ad::backward(l0);
  for (double g : z.grad()) CHECK(g == 0.0);

  const std::vector<std::int64_t> one{ad::kIgnore, 2};
  CHECK(keypoint_loss(Tensor::from({4, 2}, std::vector<double>(8, 0.3)), one).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Rng rng(2);
  std::vector<double> v(6 * 4);
  for (auto& x : v) x = uniform(rng, -2, 2);
  auto logits = Tensor::from({6, 4}, v, true);
  const std::vector<std::int64_t> tg{3, ad::kIgnore, 0, 5};
  ad::backward(keypoint_loss(logits, tg));
  for (std::size_t c = 0; c < 4; ++c) {
    double mx = -1e300, s = 0.0;
    for (std::size_t i = 0; i < 6; ++i) mx = std::max(mx, v[i * 4 + c]);
    for (std::size_t i = 0; i < 6; ++i) s += std::exp(v[i * 4 + c] - mx);
    for (std::size_t i = 0; i < 6; ++i) {
      const double g = logits.grad()[i * 4 + c];
      if (tg[c] == ad::kIgnore) {
        CHECK(g == 0.0);  // exactly zero in ignored channels
        continue;
      }
      const double p = std::exp(v[i * 4 + c] - mx) / s;
      const double expect = (p - (static_cast<std::int64_t>(i) == tg[c] ? 1.0 : 0.0)) / 3.0;
      CHECK(std::abs(g - expect) <= 1e-12);
    }
  }
  std::vector<Tensor> in{Tensor::from({6, 4}, v, true)};
  CHECK(ad::grad_check([&](std::span<const Tensor> t) { return keypoint_loss(t[0], tg); }, in) < 1e-6);

  auto shifted = v;
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 4; ++c) shifted[i * 4 + c] += 3.0 * static_cast<double>(c) - 7.5;
  CHECK(std::abs(keypoint_loss(Tensor::from({6, 4}, shifted), tg).item() -
                 keypoint_loss(Tensor::from({6, 4}, v), tg).item()) <= 1e-10);
}

TEST_CASE("augment: identity, involution, commutation with targets") {
  const auto reg = lr_registry();
  Rng rng(3);
  AugmentSample s{PointCloud{oracle::random_points(rng, 40)}, {}, Side::Left};
  s.landmarks = {{"LEC", s.cloud[3]}, {"MEC", s.cloud[11]}, {"MID", s.cloud[20]}};

  AugmentParams none;
  none.full_turn = false;
  none.tilt_deg = 0.0;
  none.scale_min = none.scale_max = 1.0;
  none.flip_prob = 0.0;
  const auto same = augment(s, none, 9, reg);
  CHECK(same.cloud.points == s.cloud.points);
  CHECK(same.landmarks == s.landmarks);
  CHECK(same.side == Side::Left);

  AugmentParams p;
  const auto once = mirror_flip(s, p, reg);
  CHECK(once.side == Side::Right);
  CHECK(once.landmarks.at("MEC")[0] == -s.landmarks.at("LEC")[0]);
  const auto twice = mirror_flip(once, p, reg);
  CHECK(twice.cloud.points == s.cloud.points);
  CHECK(twice.landmarks == s.landmarks);
  CHECK(twice.side == Side::Left);

  auto perm = reg.mirror_permutation();
  auto sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(perm[perm[i]] == i);

  p.flip_prob = 0.5;
  const auto before = assign_targets(s.cloud, s.landmarks, reg);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = augment(s, p, seed, reg);
    const auto after = assign_targets(a.cloud, a.landmarks, reg);
    const bool flipped = a.side != s.side;
    for (std::size_t c = 0; c < reg.num_classes(); ++c) {
      const std::size_t src = flipped ? perm[c] : c;
      CHECK(after[c] == before[src]);
    }
    // Identical transform on points and landmarks: a landmark sitting on a
    // point stays on the image of that point.
    CHECK(oracle::dist(a.landmarks.at("MID"), a.cloud[20]) <= 1e-12);
  }
  CHECK(augment(s, p, 4, reg).cloud.points == augment(s, p, 4, reg).cloud.points);

  const auto bare = LabelRegistry::build({{"h", {"MID", "LEC", "MEC"}}}, {});
  AugmentParams always;
  always.flip_prob = 1.0;
  CHECK_THROWS_AS(augment(s, always, 0, bare), SchemaError);
}

TEST_CASE("adamw closed forms") {
  AdamWHyper h{0.1, 0.9, 0.999, 1e-8, 0.0};
  std::vector<double> p{1.0}, m{0.0}, v{0.0};
  adamw_update(p, std::vector<double>{0.0}, m, v, 1, h);
  CHECK(p[0] == 1.0);

  p = {1.0}, m = {0.0}, v = {0.0};
  adamw_update(p, std::vector<double>{1.0}, m, v, 1, h);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(std::abs(p[0] - (1.0 - 0.1 * (1.0 / (1.0 + 1e-8)))) <= 1e-15);

  h.weight_decay = 0.01;
  p = {3.7}, m = {0.0}, v = {0.0};
  adamw_update(p, std::vector<double>{0.0}, m, v, 1, h);
  CHECK(p[0] == doctest::Approx(3.7 * (1.0 - 0.001)).epsilon(1e-15));

  // 20-step trace against the textbook recursion.
  AdamWHyper t{0.05, 0.8, 0.95, 1e-6, 0.02};
  double ref_p = 0.4, ref_m = 0.0, ref_v = 0.0;
  p = {0.4}, m = {0.0}, v = {0.0};
  for (int k = 1; k <= 20; ++k) {
    const double g = std::sin(0.7 * k) + 0.1 * k;
    adamw_update(p, std::vector<double>{g}, m, v, static_cast<std::uint64_t>(k), t);
    ref_m = 0.8 * ref_m + 0.2 * g;
    ref_v = 0.95 * ref_v + 0.05 * g * g;
    const double mh = ref_m / (1 - std::pow(0.8, k)), vh = ref_v / (1 - std::pow(0.95, k));
    ref_p = ref_p - 0.05 * (mh / (std::sqrt(vh) + 1e-6) + 0.02 * ref_p);
    CHECK(std::abs(p[0] - ref_p) <= 1e-12);
  }
}

TEST_CASE("adamw_step over tensors keeps moment shapes") {
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  auto b = Tensor::from({3}, {1, 1, 1}, true);
  ad::backward(ad::sum(ad::mul(a, a)));
  std::vector<Tensor> ps{a, b};
  OptimizerState st;
  adamw_step(ps, st, AdamWHyper{});
  CHECK(st.step == 1);
  CHECK(st.first_moment[0].size() == 4);
  CHECK(st.second_moment[1].size() == 3);
  CHECK(a.data()[0] < 1.0);
}

TEST_CASE("one_cycle_lr boundaries, continuity, single peak") {
  const OneCycle cfg{3e-4, 0.3, 25.0, 1e4};
  const std::size_t total = 100;
  CHECK(one_cycle_lr(0, total, cfg) == doctest::Approx(3e-4 / 25).epsilon(1e-15));
  CHECK(one_cycle_lr(29, total, cfg) == 3e-4);
  CHECK(std::abs(one_cycle_lr(99, total, cfg) - 3e-4 / (25 * 1e4)) <= 1e-9);
  CHECK_THROWS_AS(one_cycle_lr(100, total, cfg), RangeError);

  std::size_t peaks = 0;
  for (std::size_t s = 0; s < total; ++s) {
    const double lr = one_cycle_lr(s, total, cfg);
    peaks += lr == 3e-4 ? 1 : 0;
    if (s > 0) CHECK(std::abs(lr - one_cycle_lr(s - 1, total, cfg)) <= 2 * std::numbers::pi * 3e-4 / total);
  }
  CHECK(peaks == 1);
  for (std::size_t tiny : {1u, 2u, 3u}) {
    for (std::size_t s = 0; s < tiny; ++s) CHECK(std::isfinite(one_cycle_lr(s, tiny, cfg)));
  }
}

TEST_CASE("train: lr 0 leaves parameters at their initial values") {
  const auto params = six_landmarks();
  const auto reg = synth_registry({params});
  auto data = synth_generate(params, 2, 5);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 2;
  tc.peak_lr = 0.0;
  tc.augment = false;
  tc.num_points = 512;
  tc.seed = 3;
  const auto model = fixture_model(reg);
  const auto result = train(tc, model, data, reg);
  const auto init = build_model(model, derive_seed({tc.seed, 2}));
  round_to_storage_precision(init);  // checkpoints hold 32-bit values
  const auto a = result.checkpoint.params.named();
  const auto b = init.named();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::vector<double>(a[i].second.data().begin(), a[i].second.data().end()) ==
          std::vector<double>(b[i].second.data().begin(), b[i].second.data().end()));
  }
}

TEST_CASE("train: overfit fixture loss falls over the first 10 steps") {
  const auto params = six_landmarks();
  const auto reg = synth_registry({params});
  auto data = synth_generate(params, 2, 11);
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 2;
  tc.peak_lr = 0.01;
  tc.augment = false;
  tc.num_points = 512;
  std::vector<double> losses;
  TrainHooks hooks;
  hooks.on_step = [&](std::size_t, double l) { losses.push_back(l); };
  train(tc, fixture_model(reg), data, reg, hooks);
  REQUIRE(losses.size() >= 11);
  int rises = 0;
  for (std::size_t i = 1; i <= 10; ++i) rises += losses[i] >= losses[i - 1] ? 1 : 0;
  CHECK(rises <= 2);
  CHECK(losses[10] < losses[0]);
}

TEST_CASE("train: identical seeds give bit-identical checkpoints; schema errors") {
  const auto params = six_landmarks();
  const auto reg = synth_registry({params});
  auto data = synth_generate(params, 3, 2);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  tc.peak_lr = 0.005;
  tc.num_points = 256;
  tc.augmentation.swap_labels_on_flip = false;
  tc.seed = 8;
  const auto model = fixture_model(reg);
  const auto a = encode_checkpoint(train(tc, model, data, reg).checkpoint);
  const auto b = encode_checkpoint(train(tc, model, data, reg).checkpoint);
  CHECK(a == b);

  auto bad = data;
  bad[0].species = "cat";
  CHECK_THROWS_AS(train(tc, model, bad, reg), SchemaError);
  auto wrong = data;
  wrong[1].landmarks["IFH"] = {0, 0, 0};
  CHECK_THROWS_AS(train(tc, model, wrong, reg), SchemaError);
  CHECK_THROWS_AS(train(tc, model, {}, reg), SchemaError);
}

TEST_CASE("train config validation and json roundtrip") {
  TrainConfig tc;
  tc.epochs = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc.epochs = 3;
  tc.warmup_pct = 1.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc.warmup_pct = 0.25;
  tc.augmentation.ml_axis = 1;
  tc.augmentation.flip_prob = 0.1;
  const auto back = train_config_from_json(to_json(tc));
  CHECK(to_json(back) == to_json(tc));
}
