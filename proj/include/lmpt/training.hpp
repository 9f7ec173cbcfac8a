#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "lmpt/autodiff.hpp"
#include "lmpt/dataset.hpp"
#include "lmpt/model.hpp"
#include "lmpt/registry.hpp"

namespace lmpt {

struct AugmentParams {
  std::size_t si_axis = 2;  // canonical superior-inferior axis
  std::size_t ml_axis = 0;  // canonical medio-lateral axis, negated by the flip
  bool full_turn = true;    // uniform angle in [0, 2pi) about the SI axis
  double tilt_deg = 15.0;   // uniform perturbation about the other two axes
  double scale_min = 0.8;
  double scale_max = 1.2;
  double flip_prob = 0.5;
  bool swap_labels_on_flip = true;
};

struct TrainConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 4;
  double peak_lr = 3e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup_pct = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  bool augment = true;
  AugmentParams augmentation;
  std::size_t num_points = 8192;  // clouds larger than this are subsampled
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Per-class target point index, or ad::kIgnore.
using TargetAssignment = std::vector<std::int64_t>;

/// Nearest cloud point per annotated class (ties to the smallest index).
TargetAssignment assign_targets(const PointCloud& cloud, const LandmarkSet& landmarks, const LabelRegistry& registry);

/// Channel-wise softmax over points, cross-entropy against the target
/// point, averaged over labelled classes.
ad::Tensor keypoint_loss(const ad::Tensor& logits, std::span<const std::int64_t> targets);

/// A normalized cloud with its landmarks in the same frame.
struct AugmentSample {
  PointCloud cloud;
  LandmarkSet landmarks;
  Side side = Side::Left;
};

struct AugmentDraw {
  double turn = 0.0;    // radians about the SI axis
  double tilt_a = 0.0;  // radians about the first remaining axis
  double tilt_b = 0.0;  // radians about the second remaining axis
  double scale = 1.0;
  bool flip = false;
};

AugmentDraw draw_augmentation(const AugmentParams& params, std::uint64_t seed);
/// Rotation, then isotropic scale, then (optionally) the mirror flip.
AugmentSample apply_augmentation(const AugmentSample& sample, const AugmentDraw& draw, const AugmentParams& params,
                                 const LabelRegistry& registry);
AugmentSample augment(const AugmentSample& sample, const AugmentParams& params, std::uint64_t seed,
                      const LabelRegistry& registry);
/// Mirror flip alone; an involution on geometry and labels.
AugmentSample mirror_flip(const AugmentSample& sample, const AugmentParams& params, const LabelRegistry& registry);

struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// One decoupled-weight-decay Adam update over raw arrays. `step` is the
/// 1-based step used for bias correction.
void adamw_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  std::uint64_t step, const AdamWHyper& hyper);
/// Updates every tensor from its accumulated gradient (missing = zero).
void adamw_step(std::span<ad::Tensor> params, OptimizerState& state, const AdamWHyper& hyper);

struct OneCycle {
  double peak_lr = 3e-4;
  double warmup_pct = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
};

/// Cosine warm-up from peak/div to peak, then cosine decay to
/// peak/(div*final_div). Throws RangeError outside [0, total_steps).
double one_cycle_lr(std::size_t step, std::size_t total_steps, const OneCycle& schedule);

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  LabelRegistry registry;
  ModelParams params;
};

struct TrainHooks {
  std::function<void(std::size_t step, double batch_loss)> on_step;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> log;
};

/// Shape-level preprocessing shared by training and inference: subsample to
/// the configured count, then normalize cloud and landmarks together.
struct PreparedSample {
  PointCloud cloud;
  NormTransform transform;
  LandmarkSet landmarks;
  Side side = Side::Left;
  std::size_t condition = 0;
};

PreparedSample prepare_sample(const Sample& sample, std::size_t num_points, std::uint64_t seed,
                              const LabelRegistry& registry);

TrainResult train(const TrainConfig& train_config, const ModelConfig& model_config, const std::vector<Sample>& dataset,
                  const LabelRegistry& registry, const TrainHooks& hooks = {});

/// Rounds every parameter to the nearest 32-bit float (checkpoint storage precision).
void round_to_storage_precision(const ModelParams& params);

void write_metrics_csv(const std::vector<EpochMetrics>& log, const std::string& path, std::uint64_t seed,
                       const std::string& config_hash);

}  // namespace lmpt
