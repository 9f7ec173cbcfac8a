#include "lmpt/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include "lmpt/errors.hpp"
#include "lmpt/random.hpp"

namespace lmpt {

using ad::Tensor;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs: must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
  if (!(peak_lr >= 0.0)) throw ConfigError("train.peak_lr: must be non-negative");
  if (!(warmup_pct > 0.0 && warmup_pct < 1.0)) throw ConfigError("train.warmup_pct: must be in (0, 1)");
  if (!(div_factor > 0.0) || !(final_div_factor > 0.0)) throw ConfigError("train.div_factor: must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay: must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.betas: must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps: must be positive");
  const auto& a = augmentation;
  if (a.si_axis > 2 || a.ml_axis > 2 || a.si_axis == a.ml_axis) {
    throw ConfigError("train.augmentation: si_axis and ml_axis must be distinct axes in [0, 2]");
  }
  if (!(a.scale_min > 0.0 && a.scale_min <= a.scale_max)) throw ConfigError("train.augmentation.scale: bad range");
  if (!(a.flip_prob >= 0.0 && a.flip_prob <= 1.0)) throw ConfigError("train.augmentation.flip_prob: must be in [0, 1]");
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["peak_lr"] = c.peak_lr;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["warmup_pct"] = c.warmup_pct;
  j["div_factor"] = c.div_factor;
  j["final_div_factor"] = c.final_div_factor;
  j["augment"] = c.augment;
  const auto& a = c.augmentation;
  j["augmentation"] = {{"si_axis", a.si_axis},     {"ml_axis", a.ml_axis},         {"full_turn", a.full_turn},
                       {"tilt_deg", a.tilt_deg},   {"scale_min", a.scale_min},     {"scale_max", a.scale_max},
                       {"flip_prob", a.flip_prob}, {"swap_labels_on_flip", a.swap_labels_on_flip}};
  j["num_points"] = c.num_points;
  j["seed"] = c.seed;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.warmup_pct = j.value("warmup_pct", c.warmup_pct);
    c.div_factor = j.value("div_factor", c.div_factor);
    c.final_div_factor = j.value("final_div_factor", c.final_div_factor);
    c.augment = j.value("augment", c.augment);
    if (j.contains("augmentation")) {
      const auto& a = j.at("augmentation");
      auto& o = c.augmentation;
      o.si_axis = a.value("si_axis", o.si_axis);
      o.ml_axis = a.value("ml_axis", o.ml_axis);
      o.full_turn = a.value("full_turn", o.full_turn);
      o.tilt_deg = a.value("tilt_deg", o.tilt_deg);
      o.scale_min = a.value("scale_min", o.scale_min);
      o.scale_max = a.value("scale_max", o.scale_max);
      o.flip_prob = a.value("flip_prob", o.flip_prob);
      o.swap_labels_on_flip = a.value("swap_labels_on_flip", o.swap_labels_on_flip);
    }
    c.num_points = j.value("num_points", c.num_points);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

TargetAssignment assign_targets(const PointCloud& cloud, const LandmarkSet& landmarks, const LabelRegistry& registry) {
  if (cloud.empty()) throw InsufficientPoints("assign_targets: empty cloud");
  TargetAssignment targets(registry.num_classes(), ad::kIgnore);
  for (const auto& [name, position] : landmarks) {
    const auto c = registry.class_index(name);
    if (!c) throw SchemaError("assign_targets: landmark '" + name + "' is not a registered class");
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const double d = squared_distance(cloud[i], position);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    targets[*c] = static_cast<std::int64_t>(best);
  }
  return targets;
}

Tensor keypoint_loss(const Tensor& logits, std::span<const std::int64_t> targets) {
  if (logits.dim() != 2 || targets.size() != logits.cols()) {
    throw ShapeError("keypoint_loss: expected N x C logits with C targets");
  }
  return ad::cross_entropy(ad::transpose(logits), targets);
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 axis_rotation(std::size_t axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const std::size_t a = (axis + 1) % 3, b = (axis + 2) % 3;
  Mat3 r{};
  r[axis][axis] = 1.0;
  r[a][a] = c;
  r[a][b] = -s;
  r[b][a] = s;
  r[b][b] = c;
  return r;
}

Mat3 compose(const Mat3& x, const Mat3& y) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += x[i][k] * y[k][j];
  return r;
}

Vec3 rotate(const Mat3& r, const Vec3& p) {
  return {r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2], r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
          r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2]};
}

std::pair<std::size_t, std::size_t> tilt_axes(std::size_t si_axis) {
  std::size_t first = si_axis == 0 ? 1 : 0;
  std::size_t second = 3 - si_axis - first;
  return {first, second};
}

}  // namespace

AugmentDraw draw_augmentation(const AugmentParams& params, std::uint64_t seed) {
  Rng rng(seed);
  AugmentDraw d;
  const double tilt = params.tilt_deg * std::numbers::pi / 180.0;
  const double turn = uniform01(rng) * 2.0 * std::numbers::pi;
  const double ta = uniform(rng, -tilt, tilt);
  const double tb = uniform(rng, -tilt, tilt);
  const double sc = uniform(rng, params.scale_min, params.scale_max);
  const double fl = uniform01(rng);
  d.turn = params.full_turn ? turn : 0.0;
  d.tilt_a = ta;
  d.tilt_b = tb;
  d.scale = sc;
  d.flip = fl < params.flip_prob;
  return d;
}

AugmentSample mirror_flip(const AugmentSample& sample, const AugmentParams& params, const LabelRegistry& registry) {
  if (params.swap_labels_on_flip && !registry.has_mirror_metadata()) {
    throw SchemaError("augment: flip requested but the registry has no mirror pairs");
  }
  AugmentSample out;
  out.cloud.points.reserve(sample.cloud.size());
  for (auto p : sample.cloud.points) {
    p[params.ml_axis] = -p[params.ml_axis];
    out.cloud.points.push_back(p);
  }
  for (const auto& [name, pos] : sample.landmarks) {
    Vec3 p = pos;
    p[params.ml_axis] = -p[params.ml_axis];
    out.landmarks[params.swap_labels_on_flip ? registry.mirror_of(name) : name] = p;
  }
  out.side = other_side(sample.side);
  return out;
}

AugmentSample apply_augmentation(const AugmentSample& sample, const AugmentDraw& draw, const AugmentParams& params,
                                 const LabelRegistry& registry) {
  const auto [axis_a, axis_b] = tilt_axes(params.si_axis);
  const Mat3 rot = compose(axis_rotation(params.si_axis, draw.turn),
                           compose(axis_rotation(axis_a, draw.tilt_a), axis_rotation(axis_b, draw.tilt_b)));
  auto transform = [&](const Vec3& p) { return rotate(rot, p) * draw.scale; };
  AugmentSample out;
  out.side = sample.side;
  out.cloud.points.reserve(sample.cloud.size());
  for (const auto& p : sample.cloud.points) out.cloud.points.push_back(transform(p));
  for (const auto& [name, pos] : sample.landmarks) out.landmarks[name] = transform(pos);
  if (draw.flip) return mirror_flip(out, params, registry);
  return out;
}

AugmentSample augment(const AugmentSample& sample, const AugmentParams& params, std::uint64_t seed,
                      const LabelRegistry& registry) {
  return apply_augmentation(sample, draw_augmentation(params, seed), params, registry);
}

void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::uint64_t step, const AdamWHyper& h) {
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    param[i] -= h.lr * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * param[i]);
  }
}

void adamw_step(std::span<Tensor> params, OptimizerState& state, const AdamWHyper& hyper) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adamw_step: optimizer state does not match params");
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (state.first_moment[i].size() != p.numel()) throw ShapeError("adamw_step: moment shape mismatch");
    adamw_update(p.mutable_data(), p.grad(), state.first_moment[i], state.second_moment[i], state.step, hyper);
  }
}

double one_cycle_lr(std::size_t step, std::size_t total_steps, const OneCycle& s) {
  if (step >= total_steps) {
    throw RangeError("one_cycle_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + ")");
  }
  const double initial = s.peak_lr / s.div_factor;
  const double final_lr = initial / s.final_div_factor;
  auto cosine = [](double from, double to, double pct) {
    return to + (from - to) / 2.0 * (1.0 + std::cos(std::numbers::pi * pct));
  };
  const double t = static_cast<double>(step);
  const double up_end = s.warmup_pct * static_cast<double>(total_steps) - 1.0;
  const double down_end = static_cast<double>(total_steps) - 1.0;
  if (up_end > 0.0 && t <= up_end) return cosine(initial, s.peak_lr, t / up_end);
  const double start = std::max(up_end, 0.0);
  if (down_end <= start) return s.peak_lr;
  return cosine(s.peak_lr, final_lr, (t - start) / (down_end - start));
}

PreparedSample prepare_sample(const Sample& sample, std::size_t num_points, std::uint64_t seed,
                              const LabelRegistry& registry) {
  PreparedSample out;
  PointCloud cloud = sample.cloud;
  if (num_points > 0 && cloud.size() > num_points) {
    cloud = subsample_cloud(cloud, num_points, seed, SubsampleStrategy::Random).cloud;
  }
  auto [normalized, transform] = normalize_cloud(cloud);
  out.cloud = std::move(normalized);
  out.transform = transform;
  for (const auto& [name, pos] : sample.landmarks) out.landmarks[name] = transform.apply(pos);
  out.side = sample.side;
  out.condition = registry.condition_of(sample.species);
  return out;
}

void round_to_storage_precision(const ModelParams& params) {
  for (auto [name, t] : params.named()) {
    for (auto& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(v));
  }
}

TrainResult train(const TrainConfig& tc, const ModelConfig& mc, const std::vector<Sample>& dataset,
                  const LabelRegistry& registry, const TrainHooks& hooks) {
  tc.validate();
  mc.validate();
  if (dataset.empty()) throw SchemaError("train: dataset is empty");
  if (mc.num_classes != registry.num_classes()) throw SchemaError("train: model num_classes does not match registry");
  if (mc.num_conditions != registry.num_conditions()) {
    throw SchemaError("train: model num_conditions does not match registry");
  }
  if (tc.augment && tc.augmentation.flip_prob > 0.0 && tc.augmentation.swap_labels_on_flip &&
      !registry.has_mirror_metadata()) {
    throw SchemaError("train: flip augmentation requires mirror pairs in the registry");
  }

  std::vector<PreparedSample> prepared;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!registry.has_species(dataset[i].species)) {
      throw SchemaError("train: sample '" + dataset[i].id + "' has unregistered species '" + dataset[i].species + "'");
    }
    for (const auto& [name, pos] : dataset[i].landmarks) {
      (void)pos;
      if (!registry.schema_contains(dataset[i].species, name)) {
        throw SchemaError("train: sample '" + dataset[i].id + "' annotates '" + name + "' outside its species schema");
      }
    }
    prepared.push_back(prepare_sample(dataset[i], tc.num_points, derive_seed({tc.seed, 1, i}), registry));
  }

  // Without augmentation the per-sample geometry never changes; cache it.
  std::vector<ModelStructure> structures;
  std::vector<TargetAssignment> targets;
  if (!tc.augment) {
    for (const auto& p : prepared) {
      structures.push_back(build_structure(p.cloud, mc));
      targets.push_back(assign_targets(p.cloud, p.landmarks, registry));
    }
  }

  ModelParams params = build_model(mc, derive_seed({tc.seed, 2}));
  auto named = params.named();
  std::vector<Tensor> tensors;
  for (auto& [name, t] : named) tensors.push_back(t);
  OptimizerState state;

  const std::size_t n = prepared.size();
  const std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = tc.epochs * steps_per_epoch;
  const OneCycle schedule{tc.peak_lr, tc.warmup_pct, tc.div_factor, tc.final_div_factor};
  AdamWHyper hyper{0.0, tc.beta1, tc.beta2, tc.eps, tc.weight_decay};

  TrainResult result;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed({tc.seed, 3, epoch}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_rng, i)]);

    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < n; b += tc.batch_size) {
      const std::size_t end = std::min(n, b + tc.batch_size);
      const double weight = 1.0 / static_cast<double>(end - b);
      for (auto& t : tensors) t.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t j = b; j < end; ++j) {
        const std::size_t idx = order[j];
        const PreparedSample& ps = prepared[idx];
        Tensor loss;
        if (tc.augment) {
          AugmentSample aug =
              augment({ps.cloud, ps.landmarks, ps.side}, tc.augmentation, derive_seed({tc.seed, 4, epoch, idx}), registry);
          const auto structure = build_structure(aug.cloud, mc);
          const auto tgt = assign_targets(aug.cloud, aug.landmarks, registry);
          loss = keypoint_loss(forward(aug.cloud, structure, ps.condition, params, mc), tgt);
        } else {
          loss = keypoint_loss(forward(ps.cloud, structures[idx], ps.condition, params, mc), targets[idx]);
        }
        batch_loss += loss.item() * weight;
        epoch_loss += loss.item();
        ad::backward(ad::scale(loss, weight));
      }
      hyper.lr = one_cycle_lr(step, total_steps, schedule);
      adamw_step(tensors, state, hyper);
      if (hooks.on_step) hooks.on_step(step, batch_loss);
      ++step;
    }
    EpochMetrics m{epoch + 1, epoch_loss / static_cast<double>(n), hyper.lr};
    result.log.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
  }

  round_to_storage_precision(params);
  result.checkpoint = Checkpoint{mc, tc, registry, std::move(params)};
  return result;
}

void write_metrics_csv(const std::vector<EpochMetrics>& log, const std::string& path, std::uint64_t seed,
                       const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics log '" + path + "'");
  out << "# seed=" << seed << " config_hash=" << config_hash << "\n";
  out << "epoch,mean_loss,lr\n";
  char buf[128];
  for (const auto& m : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", m.epoch, m.mean_loss, m.lr);
    out << buf;
  }
}

}  // namespace lmpt
