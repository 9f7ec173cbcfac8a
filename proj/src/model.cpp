#include "lmpt/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lmpt/errors.hpp"
#include "lmpt/random.hpp"

namespace lmpt {

using ad::Tensor;

namespace {

template <class Params, class Fn>
void visit_linear(Params& lin, const std::string& name, Fn&& fn) {
  fn(name + ".weight", lin.weight);
  fn(name + ".bias", lin.bias);
}

template <class Params, class Fn>
void visit_norm(Params& norm, const std::string& name, Fn&& fn) {
  fn(name + ".gain", norm.gain);
  fn(name + ".bias", norm.bias);
}

template <class Block, class Fn>
void visit_block(Block& b, const std::string& name, Fn&& fn) {
  visit_linear(b.query, name + ".query", fn);
  visit_linear(b.key, name + ".key", fn);
  visit_linear(b.value, name + ".value", fn);
  visit_linear(b.pos_hidden, name + ".pos_hidden", fn);
  visit_linear(b.pos_out, name + ".pos_out", fn);
  visit_linear(b.weight_hidden, name + ".weight_hidden", fn);
  visit_linear(b.weight_out, name + ".weight_out", fn);
  visit_norm(b.norm_attn, name + ".norm_attn", fn);
  visit_linear(b.ffn_hidden, name + ".ffn_hidden", fn);
  visit_linear(b.ffn_out, name + ".ffn_out", fn);
  visit_norm(b.norm_ffn, name + ".norm_ffn", fn);
}

// Works for const and non-const ModelParams so named() and clone() share one walk.
template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
  visit_linear(p.embed_hidden, "embed.hidden", fn);
  visit_linear(p.embed_out, "embed.out", fn);
  for (std::size_t s = 0; s < p.encoder.size(); ++s) {
    const std::string prefix = "encoder." + std::to_string(s);
    visit_linear(p.encoder[s].down, prefix + ".down", fn);
    visit_norm(p.encoder[s].norm, prefix + ".norm", fn);
    for (std::size_t b = 0; b < p.encoder[s].blocks.size(); ++b) {
      visit_block(p.encoder[s].blocks[b], prefix + ".block." + std::to_string(b), fn);
    }
  }
  fn(std::string("film.weight"), p.film.weight);
  fn(std::string("film.bias"), p.film.bias);
  for (std::size_t s = p.decoder.size(); s-- > 0;) {
    const std::string prefix = "decoder." + std::to_string(s);
    visit_linear(p.decoder[s].up, prefix + ".up", fn);
    visit_linear(p.decoder[s].skip, prefix + ".skip", fn);
    for (std::size_t b = 0; b < p.decoder[s].blocks.size(); ++b) {
      visit_block(p.decoder[s].blocks[b], prefix + ".block." + std::to_string(b), fn);
    }
  }
  visit_linear(p.head, "head", fn);
}

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Linear linear(std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return {uniform_tensor({in, out}, bound), uniform_tensor({out}, bound)};
  }

  LayerNormParams norm(std::size_t width) {
    return {Tensor::from({width}, std::vector<double>(width, 1.0), true), Tensor::zeros({width}, true)};
  }

  AttentionBlockParams block(std::size_t c, std::size_t ffn_ratio) {
    AttentionBlockParams b;
    b.query = linear(c, c);
    b.key = linear(c, c);
    b.value = linear(c, c);
    b.pos_hidden = linear(3, c);
    b.pos_out = linear(c, c);
    b.weight_hidden = linear(c, c);
    b.weight_out = linear(c, c);
    b.norm_attn = norm(c);
    b.ffn_hidden = linear(c, ffn_ratio * c);
    b.ffn_out = linear(ffn_ratio * c, c);
    b.norm_ffn = norm(c);
    return b;
  }

 private:
  Tensor uniform_tensor(ad::Shape shape, double bound) {
    std::vector<double> v(ad::element_count(shape));
    for (auto& x : v) x = uniform(rng_, -bound, bound);
    return Tensor::from(std::move(shape), std::move(v), true);
  }

  Rng rng_;
};

// Input width of each encoder stage's down-projection and of the skip
// features stored at each level.
std::size_t level_width(const ModelConfig& c, std::size_t level) {
  return level == 0 ? c.channels[0] : c.channels[level - 1];
}

std::size_t decoder_input_width(const ModelConfig& c, std::size_t stage) {
  return stage + 1 == c.stages() ? c.channels.back() : c.channels[stage + 1];
}

std::string attention_mode_name(AttentionMode m) { return m == AttentionMode::Knn ? "knn" : "serialized"; }

}  // namespace

void ModelConfig::validate() const {
  const std::size_t S = blocks.size();
  if (S < 1) throw ConfigError("model.blocks: at least one stage is required");
  if (neighbors.size() != S) throw ConfigError("model.neighbors: expected one entry per stage");
  if (channels.size() != S) throw ConfigError("model.channels: expected one entry per stage");
  if (pool_cells.size() != S) throw ConfigError("model.pool_cells: expected one entry per stage");
  for (std::size_t s = 0; s < S; ++s) {
    if (blocks[s] < 1) throw ConfigError("model.blocks: every stage needs at least one block");
    if (neighbors[s] < 1) throw ConfigError("model.neighbors: must be >= 1");
    if (channels[s] < 1) throw ConfigError("model.channels: must be >= 1");
    if (!(pool_cells[s] > 0.0)) throw ConfigError("model.pool_cells: must be positive");
    if (s > 0 && channels[s] < channels[s - 1]) throw ConfigError("model.channels: must be non-decreasing");
  }
  if (num_classes < 1) throw ConfigError("model.num_classes: must be >= 1");
  if (num_conditions < 1) throw ConfigError("model.num_conditions: must be >= 1");
  if (serialize_bits < 1 || serialize_bits > 21) throw ConfigError("model.serialize_bits: must be in [1, 21]");
  if (ffn_ratio < 1) throw ConfigError("model.ffn_ratio: must be >= 1");
}

ModelConfig ModelConfig::desk_default(std::size_t num_classes, std::size_t num_conditions) {
  ModelConfig c;
  c.blocks = {2, 2, 2};
  c.neighbors = {8, 12, 16};
  c.channels = {32, 64, 128};
  c.pool_cells = {0.06, 0.15, 0.4};
  c.num_classes = num_classes;
  c.num_conditions = num_conditions;
  return c;
}

ModelConfig ModelConfig::tiny(std::size_t num_classes, std::size_t num_conditions) {
  ModelConfig c;
  c.blocks = {1, 1};
  c.neighbors = {4, 4};
  c.channels = {8, 16};
  c.pool_cells = {0.25, 0.6};
  c.num_classes = num_classes;
  c.num_conditions = num_conditions;
  return c;
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["blocks"] = c.blocks;
  j["neighbors"] = c.neighbors;
  j["channels"] = c.channels;
  j["pool_cells"] = c.pool_cells;
  j["num_classes"] = c.num_classes;
  j["num_conditions"] = c.num_conditions;
  j["attention_mode"] = attention_mode_name(c.attention_mode);
  j["serialize_bits"] = c.serialize_bits;
  j["ffn_ratio"] = c.ffn_ratio;
  j["film"] = c.film;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.blocks = j.at("blocks").get<std::vector<std::size_t>>();
    c.neighbors = j.at("neighbors").get<std::vector<std::size_t>>();
    c.channels = j.at("channels").get<std::vector<std::size_t>>();
    c.pool_cells = j.at("pool_cells").get<std::vector<double>>();
    c.num_classes = j.value("num_classes", std::size_t{1});
    c.num_conditions = j.value("num_conditions", std::size_t{1});
    const std::string mode = j.value("attention_mode", std::string("knn"));
    if (mode == "knn") {
      c.attention_mode = AttentionMode::Knn;
    } else if (mode == "serialized") {
      c.attention_mode = AttentionMode::Serialized;
    } else {
      throw ConfigError("model.attention_mode: expected 'knn' or 'serialized', got '" + mode + "'");
    }
    c.serialize_bits = j.value("serialize_bits", 10);
    c.ffn_ratio = j.value("ffn_ratio", std::size_t{2});
    c.film = j.value("film", true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  visit_params(*this, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit_params(*this, [&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams copy = *this;
  visit_params(copy, [](const std::string&, Tensor& t) {
    t = Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), true);
  });
  return copy;
}

ModelParams build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Initializer init(seed);
  ModelParams p;
  const std::size_t S = config.stages();
  p.embed_hidden = init.linear(3, config.channels[0]);
  p.embed_out = init.linear(config.channels[0], config.channels[0]);
  for (std::size_t s = 0; s < S; ++s) {
    EncoderStageParams stage;
    stage.down = init.linear(level_width(config, s), config.channels[s]);
    stage.norm = init.norm(config.channels[s]);
    for (std::size_t b = 0; b < config.blocks[s]; ++b) stage.blocks.push_back(init.block(config.channels[s], config.ffn_ratio));
    p.encoder.push_back(std::move(stage));
  }
  const std::size_t width = config.channels.back();
  std::vector<double> film_bias(2 * width, 0.0);
  std::fill(film_bias.begin(), film_bias.begin() + static_cast<std::ptrdiff_t>(width), 1.0);
  p.film.weight = Tensor::zeros({config.num_conditions, 2 * width}, true);
  p.film.bias = Tensor::from({2 * width}, std::move(film_bias), true);
  p.decoder.resize(S);
  for (std::size_t s = S; s-- > 0;) {
    DecoderStageParams stage;
    stage.up = init.linear(decoder_input_width(config, s), config.channels[s]);
    stage.skip = init.linear(level_width(config, s), config.channels[s]);
    for (std::size_t b = 0; b < config.blocks[s]; ++b) stage.blocks.push_back(init.block(config.channels[s], config.ffn_ratio));
    p.decoder[s] = std::move(stage);
  }
  p.head = init.linear(config.channels[0], config.num_classes);
  return p;
}

NeighborTable attention_neighbors(std::span<const Vec3> coords, std::size_t k, const ModelConfig& config) {
  if (k > coords.size()) {
    throw KTooLarge("attention window " + std::to_string(k) + " exceeds the " + std::to_string(coords.size()) +
                    " points at this level");
  }
  if (config.attention_mode == AttentionMode::Knn) return knn(coords, coords, k);

  const auto order = serialize_order(coords, config.serialize_bits);
  const std::size_t M = coords.size();
  NeighborTable table;
  table.rows = M;
  table.k = k;
  table.indices.resize(M * k);
  table.distances.resize(M * k);
  for (std::size_t r = 0; r < M; ++r) {
    const std::size_t start = std::min(r > k / 2 ? r - k / 2 : 0, M - k);
    const std::uint32_t self = order[r];
    std::size_t slot = 0;
    table.indices[self * k + slot++] = self;
    for (std::size_t w = start; w < start + k; ++w) {
      if (order[w] != self) table.indices[self * k + slot++] = order[w];
    }
    for (std::size_t j = 0; j < k; ++j) {
      table.distances[self * k + j] = distance(coords[self], coords[table.indices[self * k + j]]);
    }
  }
  return table;
}

ModelStructure build_structure(const PointCloud& cloud, const ModelConfig& config) {
  config.validate();
  const std::size_t S = config.stages();
  ModelStructure st;
  st.levels.resize(S + 1);
  st.levels[0].coords = cloud.points;
  for (std::size_t s = 0; s < S; ++s) {
    auto& next = st.levels[s + 1];
    next.pool = grid_pool_map(st.levels[s].coords, config.pool_cells[s]);
    next.coords = next.pool.centroids;
    st.levels[s].decoder_neighbors = attention_neighbors(st.levels[s].coords, config.neighbors[s], config);
    next.encoder_neighbors = attention_neighbors(next.coords, config.neighbors[s], config);
  }
  return st;
}

Tensor attention_block(const Tensor& features, std::span<const Vec3> coords, const NeighborTable& neighbors,
                       const AttentionBlockParams& p) {
  const std::size_t M = features.rows();
  const std::size_t k = neighbors.k;
  if (features.dim() != 2 || coords.size() != M || neighbors.rows != M) {
    throw ShapeError("attention_block: features, coords and neighbor table disagree on point count");
  }
  if (features.cols() != p.query.weight.shape()[0]) throw ShapeError("attention_block: feature width mismatch");

  std::vector<std::uint32_t> center(M * k);
  std::vector<double> rel(M * k * 3);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::uint32_t n = neighbors.indices[i * k + j];
      if (n >= M) throw IndexError("attention_block: neighbor index out of range");
      center[i * k + j] = static_cast<std::uint32_t>(i);
      for (int a = 0; a < 3; ++a) rel[(i * k + j) * 3 + a] = coords[i][a] - coords[n][a];
    }
  }
  const Tensor rel_pos = Tensor::from({M * k, 3}, std::move(rel));

  const Tensor q = p.query(features);
  const Tensor key = p.key(features);
  const Tensor val = p.value(features);
  const Tensor delta = p.pos_out(ad::relu(p.pos_hidden(rel_pos)));

  const Tensor q_g = ad::gather_rows(q, center);
  const Tensor k_g = ad::gather_rows(key, neighbors.indices);
  const Tensor v_g = ad::gather_rows(val, neighbors.indices);
  const Tensor relation = ad::add(ad::sub(q_g, k_g), delta);
  const Tensor logits = p.weight_out(ad::relu(p.weight_hidden(relation)));
  const Tensor weights = ad::grouped_softmax(logits, center, M);
  const Tensor aggregated = ad::segment_sum(ad::mul(weights, ad::add(v_g, delta)), center, M);

  const Tensor h = p.norm_attn(ad::add(features, aggregated));
  const Tensor ffn = p.ffn_out(ad::gelu(p.ffn_hidden(h)));
  return p.norm_ffn(ad::add(h, ffn));
}

std::vector<StageState> encode(const PointCloud& cloud, const ModelStructure& structure, const ModelConfig& config,
                               const ModelParams& params) {
  const std::size_t S = config.stages();
  if (structure.levels.size() != S + 1 || structure.levels[0].coords.size() != cloud.size()) {
    throw ShapeError("encode: structure does not match cloud/config");
  }
  std::vector<double> xyz;
  xyz.reserve(cloud.size() * 3);
  for (const auto& p : cloud.points) xyz.insert(xyz.end(), p.begin(), p.end());
  const Tensor coords = Tensor::from({cloud.size(), 3}, std::move(xyz));

  std::vector<StageState> stages;
  stages.push_back({cloud.points, params.embed_out(ad::gelu(params.embed_hidden(coords)))});
  for (std::size_t s = 0; s < S; ++s) {
    const Level& level = structure.levels[s + 1];
    const auto& stage = params.encoder[s];
    Tensor x = ad::gelu(stage.norm(stage.down(stages.back().features)));
    x = ad::segment_max(x, level.pool.assignment, level.pool.clusters());
    for (const auto& block : stage.blocks) x = attention_block(x, level.coords, level.encoder_neighbors, block);
    stages.push_back({level.coords, x});
  }
  return stages;
}

std::pair<Tensor, Tensor> film_coefficients(std::size_t condition, const FiLMParams& film,
                                            std::size_t num_conditions) {
  if (condition >= num_conditions) {
    throw ConditionError("condition id " + std::to_string(condition) + " not in [0, " +
                         std::to_string(num_conditions) + ")");
  }
  std::vector<double> one_hot(num_conditions, 0.0);
  one_hot[condition] = 1.0;
  const Tensor selector = Tensor::from({1, num_conditions}, std::move(one_hot));
  const Tensor coeffs = ad::add_bias(ad::matmul(selector, film.weight), film.bias);
  const std::size_t width = coeffs.cols() / 2;
  return {ad::slice_cols(coeffs, 0, width), ad::slice_cols(coeffs, width, 2 * width)};
}

Tensor film_modulate(const Tensor& features, std::size_t condition, const FiLMParams& film,
                     std::size_t num_conditions) {
  auto [gamma, beta] = film_coefficients(condition, film, num_conditions);
  if (features.dim() != 2 || features.cols() != gamma.cols()) throw ShapeError("film_modulate: width mismatch");
  const std::vector<std::uint32_t> broadcast(features.rows(), 0u);
  return ad::add(ad::mul(features, ad::gather_rows(gamma, broadcast)), ad::gather_rows(beta, broadcast));
}

Tensor decode(const std::vector<StageState>& stages, const ModelStructure& structure, const ModelConfig& config,
              const ModelParams& params) {
  const std::size_t S = config.stages();
  if (stages.size() != S + 1) throw ShapeError("decode: expected one state per level");
  Tensor y = stages[S].features;
  for (std::size_t s = S; s-- > 0;) {
    const auto& stage = params.decoder[s];
    const Level& coarse = structure.levels[s + 1];
    const Level& fine = structure.levels[s];
    if (y.rows() != coarse.pool.clusters()) throw ShapeError("decode: row count does not match pool map");
    Tensor x = ad::gather_rows(stage.up(y), coarse.pool.assignment);
    x = ad::add(x, stage.skip(stages[s].features));
    for (const auto& block : stage.blocks) x = attention_block(x, fine.coords, fine.decoder_neighbors, block);
    y = x;
  }
  return y;
}

Tensor kp_head(const Tensor& per_point, const Linear& head) {
  if (per_point.dim() != 2 || per_point.cols() != head.weight.shape()[0]) {
    throw ShapeError("kp_head: feature width does not match head input");
  }
  return head(per_point);
}

Tensor forward(const PointCloud& cloud, std::size_t condition, const ModelParams& params, const ModelConfig& config,
               ForwardOptions options) {
  return forward(cloud, build_structure(cloud, config), condition, params, config, options);
}

Tensor forward(const PointCloud& cloud, const ModelStructure& structure, std::size_t condition,
               const ModelParams& params, const ModelConfig& config, ForwardOptions options) {
  if (condition >= config.num_conditions) {
    throw ConditionError("condition id " + std::to_string(condition) + " not registered");
  }
  auto stages = encode(cloud, structure, config, params);
  if (config.film && !options.skip_film) {
    stages.back().features = film_modulate(stages.back().features, condition, params.film, config.num_conditions);
  }
  return kp_head(decode(stages, structure, config, params), params.head);
}

std::vector<std::size_t> argmax_per_channel(const Tensor& logits) {
  if (logits.dim() != 2) throw ShapeError("argmax_per_channel: expected N x C logits");
  const std::size_t N = logits.rows(), C = logits.cols();
  std::vector<std::size_t> best(C, 0);
  const auto v = logits.data();
  for (std::size_t i = 1; i < N; ++i)
    for (std::size_t c = 0; c < C; ++c)
      if (v[i * C + c] > v[best[c] * C + c]) best[c] = i;
  return best;
}

LandmarkSet predict_landmarks(const Tensor& logits, const PointCloud& cloud, const NormTransform& transform,
                              const LabelRegistry& registry, const std::string& species) {
  const auto& schema = registry.schema(species);
  if (schema.classes.empty()) throw SchemaError("predict_landmarks: empty schema for '" + species + "'");
  if (logits.dim() != 2 || logits.rows() != cloud.size() || logits.cols() != registry.num_classes()) {
    throw ShapeError("predict_landmarks: logits must be N x C");
  }
  const auto best = argmax_per_channel(logits);
  LandmarkSet out;
  for (const auto& name : schema.classes) {
    const std::size_t c = *registry.class_index(name);
    out[name] = transform.invert(cloud[best[c]]);
  }
  return out;
}

}  // namespace lmpt
