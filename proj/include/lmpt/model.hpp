#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lmpt/autodiff.hpp"
#include "lmpt/geometry.hpp"
#include "lmpt/registry.hpp"

namespace lmpt {

enum class AttentionMode { Knn, Serialized };

struct ModelConfig {
  std::vector<std::size_t> blocks;      // transformer blocks per stage
  std::vector<std::size_t> neighbors;   // attention window per stage
  std::vector<std::size_t> channels;    // feature width per stage
  std::vector<double> pool_cells;       // grid cell per stage, normalized units
  std::size_t num_classes = 1;
  std::size_t num_conditions = 1;
  AttentionMode attention_mode = AttentionMode::Knn;
  int serialize_bits = 10;
  std::size_t ffn_ratio = 2;
  bool film = true;

  std::size_t stages() const { return blocks.size(); }
  /// Throws ConfigError naming the offending field.
  void validate() const;

  /// S=3, N_s=(2,2,2), k=(8,12,16), widths (32,64,128), cells (0.06,0.15,0.4).
  static ModelConfig desk_default(std::size_t num_classes, std::size_t num_conditions);
  /// S=2, N_s=(1,1), k=(4,4), widths (8,16); used for gradient checks.
  static ModelConfig tiny(std::size_t num_classes, std::size_t num_conditions);
};

nlohmann::ordered_json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Linear {
  ad::Tensor weight;  // in x out
  ad::Tensor bias;    // out
  ad::Tensor operator()(const ad::Tensor& x) const { return ad::add_bias(ad::matmul(x, weight), bias); }
};

struct LayerNormParams {
  ad::Tensor gain;
  ad::Tensor bias;
  ad::Tensor operator()(const ad::Tensor& x) const { return ad::layer_norm(x, gain, bias, 1e-5); }
};

struct AttentionBlockParams {
  Linear query, key, value;
  Linear pos_hidden, pos_out;        // relative position encoding MLP
  Linear weight_hidden, weight_out;  // attention weight MLP
  LayerNormParams norm_attn;
  Linear ffn_hidden, ffn_out;
  LayerNormParams norm_ffn;
};

struct FiLMParams {
  ad::Tensor weight;  // num_conditions x 2C
  ad::Tensor bias;    // 2C
};

struct EncoderStageParams {
  Linear down;
  LayerNormParams norm;
  std::vector<AttentionBlockParams> blocks;
};

struct DecoderStageParams {
  Linear up;
  Linear skip;
  std::vector<AttentionBlockParams> blocks;
};

struct ModelParams {
  Linear embed_hidden, embed_out;
  std::vector<EncoderStageParams> encoder;
  FiLMParams film;
  std::vector<DecoderStageParams> decoder;  // indexed by stage, applied S-1 .. 0
  Linear head;

  /// Every parameter tensor with its canonical name, in a fixed order.
  std::vector<std::pair<std::string, ad::Tensor>> named() const;
  std::size_t parameter_count() const;
  /// Deep copy (fresh leaves, same values).
  ModelParams clone() const;
};

/// Fan-in uniform initialization; FiLM starts as the identity (gamma=1, beta=0).
ModelParams build_model(const ModelConfig& config, std::uint64_t seed);

/// One resolution level. Level 0 holds the input points; level s+1 is the
/// grid pooling of level s.
struct Level {
  std::vector<Vec3> coords;
  PoolMap pool;                     // maps level s-1 points onto this level (empty for level 0)
  NeighborTable encoder_neighbors;  // used by encoder stage s-1 (levels >= 1)
  NeighborTable decoder_neighbors;  // used by decoder stage s (levels < S)
};

struct ModelStructure {
  std::vector<Level> levels;  // S + 1 entries
};

/// Neighbourhoods of `k` points: kNN, or a window of k consecutive points in
/// Z-order (self first) in serialized mode.
NeighborTable attention_neighbors(std::span<const Vec3> coords, std::size_t k, const ModelConfig& config);

/// Pools and neighbourhoods for a normalized cloud. Throws KTooLarge when a
/// level has fewer points than its window.
ModelStructure build_structure(const PointCloud& cloud, const ModelConfig& config);

/// Grouped vector attention with subtraction relation, positional encoding on
/// weights and values, residual + layer-norm, then FFN + residual + layer-norm.
ad::Tensor attention_block(const ad::Tensor& features, std::span<const Vec3> coords, const NeighborTable& neighbors,
                           const AttentionBlockParams& params);

struct StageState {
  std::vector<Vec3> coords;
  ad::Tensor features;
};

/// Level 0 (embedding) through level S (bottleneck).
std::vector<StageState> encode(const PointCloud& cloud, const ModelStructure& structure, const ModelConfig& config,
                               const ModelParams& params);

/// Rows of the FiLM affine transform for one condition: gamma (1 x C), beta (1 x C).
std::pair<ad::Tensor, ad::Tensor> film_coefficients(std::size_t condition, const FiLMParams& film,
                                                    std::size_t num_conditions);
ad::Tensor film_modulate(const ad::Tensor& features, std::size_t condition, const FiLMParams& film,
                         std::size_t num_conditions);

/// Per-point features (N x channels[0]) from the encoder states.
ad::Tensor decode(const std::vector<StageState>& stages, const ModelStructure& structure, const ModelConfig& config,
                  const ModelParams& params);

ad::Tensor kp_head(const ad::Tensor& per_point, const Linear& head);

struct ForwardOptions {
  bool skip_film = false;
};

/// Logits (N x C) for a normalized cloud.
ad::Tensor forward(const PointCloud& cloud, std::size_t condition, const ModelParams& params,
                   const ModelConfig& config, ForwardOptions options = {});
ad::Tensor forward(const PointCloud& cloud, const ModelStructure& structure, std::size_t condition,
                   const ModelParams& params, const ModelConfig& config, ForwardOptions options = {});

/// Per-channel argmax (ties to the smallest point index) for the species
/// classes, mapped back to millimetres.
LandmarkSet predict_landmarks(const ad::Tensor& logits, const PointCloud& cloud, const NormTransform& transform,
                              const LabelRegistry& registry, const std::string& species);
/// Point index selected per class channel.
std::vector<std::size_t> argmax_per_channel(const ad::Tensor& logits);

}  // namespace lmpt
