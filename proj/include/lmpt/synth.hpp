#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmpt/dataset.hpp"
#include "lmpt/registry.hpp"

namespace lmpt {

/// Closed range drawn uniformly per shape.
struct Range {
  double min = 0.0;
  double max = 0.0;
};

/// Primitive a synthetic landmark sits on.
enum class Part { Shaft, Neck, Head, GreaterTrochanter, LesserTrochanter, LateralCondyle, MedialCondyle };

/// Landmark = extreme point of `part` in direction `dir`. Directions use the
/// left-femur frame (x medial, y anterior, z superior); x is mirrored for
/// right femurs.
struct LandmarkRule {
  std::string name;
  Part part = Part::Head;
  Vec3 dir{0.0, 0.0, 1.0};
};

/// Shape proportions. Lengths in mm; every other range is a fraction of the
/// drawn femur length.
struct SynthParams {
  std::string species = "human";
  Range length{380.0, 460.0};
  Range shaft_radius{0.030, 0.036};
  Range shaft_top{0.86, 0.90};
  Range neck_radius{0.030, 0.036};
  Range head_radius{0.052, 0.060};
  Range head_medial{0.10, 0.12};
  Range head_height{0.95, 0.97};
  Range gt_radius{0.040, 0.048};
  Range gt_lateral{0.035, 0.045};
  Range gt_height{0.90, 0.93};
  Range lt_radius{0.016, 0.020};
  Range lt_height{0.77, 0.80};
  Range condyle_height{0.050, 0.060};
  Range condyle_spacing{0.052, 0.058};  // half distance between condyle centres
  Range condyle_posterior{0.015, 0.025};
  Range condyle_axes_x{0.036, 0.042};
  Range condyle_axes_y{0.055, 0.065};
  Range condyle_axes_z{0.050, 0.058};
  Range medial_condyle_scale{1.10, 1.20};  // medial condyle is larger and reaches further distally
  double pose_jitter_deg = 5.0;
  double translation_jitter = 10.0;  // mm
  double right_fraction = 0.5;
  std::size_t points_per_shape = 512;
  std::size_t dense_factor = 8;  // surface candidates per output point
  std::vector<LandmarkRule> landmarks;

  void validate() const;
  std::vector<std::string> landmark_names() const;

  /// Preset with the ten-landmark human-like schema.
  static SynthParams human();
  /// Shorter, stouter preset; drops IFH and ICN and adds LT.
  static SynthParams dog();
};

/// Mirror pairs shared by the synthetic presets.
std::vector<LabelRegistry::MirrorPair> synth_mirror_pairs();
/// Registry over the given presets, conditions in argument order.
LabelRegistry synth_registry(const std::vector<SynthParams>& presets);

/// Shapes in the canonical frame before pose jitter, exposed for tests.
struct SynthShape {
  PointCloud cloud;
  LandmarkSet landmarks;
  Side side = Side::Left;
};

/// One shape; `side` selects the mirror image. Deterministic per seed.
SynthShape synth_shape(const SynthParams& params, Side side, std::uint64_t seed, bool jitter = true);

/// `count` shapes with ids "<species>_<index>". Throws RangeError if count < 1.
std::vector<Sample> synth_generate(const SynthParams& params, std::size_t count, std::uint64_t seed);

}  // namespace lmpt
