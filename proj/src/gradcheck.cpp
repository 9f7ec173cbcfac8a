#include "lmpt/gradcheck.hpp"

#include <functional>

#include "lmpt/autodiff.hpp"
#include "lmpt/model.hpp"
#include "lmpt/random.hpp"
#include "lmpt/training.hpp"

namespace lmpt {

namespace {

using ad::Tensor;

// Values in +-[0.1, 1] keep relu and max away from their kinks.
Tensor random_leaf(Rng& rng, ad::Shape shape) {
  std::vector<double> v(ad::element_count(shape));
  for (auto& x : v) x = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * uniform(rng, 0.1, 1.0);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Reduces any output to a scalar with fixed random weights, so every output
// entry contributes a distinct gradient.
Tensor weighted_sum(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(out.numel());
  for (auto& x : w) x = uniform(rng, -1.0, 1.0);
  return ad::sum(ad::mul(out, Tensor::from(out.shape(), std::move(w), false)));
}

struct Case {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<Tensor(std::span<const Tensor>)> fn;
};

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double tolerance) {
  Rng rng(derive_seed({seed, 0xC4EC}));
  std::vector<Case> cases;
  auto add_case = [&](std::string name, std::vector<Tensor> inputs, std::function<Tensor(std::span<const Tensor>)> fn) {
    cases.push_back({std::move(name), std::move(inputs), std::move(fn)});
  };
  auto ws = [](const Tensor& t) { return weighted_sum(t, 99); };

  const std::vector<std::uint32_t> groups = {0, 0, 1, 2, 1, 2, 2};
  const std::vector<std::uint32_t> gather = {3, 0, 0, 5, 2};

  add_case("matmul", {random_leaf(rng, {4, 3}), random_leaf(rng, {3, 5})},
           [=](auto in) { return ws(ad::matmul(in[0], in[1])); });
  add_case("add", {random_leaf(rng, {3, 4}), random_leaf(rng, {3, 4})},
           [=](auto in) { return ws(ad::add(in[0], in[1])); });
  add_case("sub", {random_leaf(rng, {3, 4}), random_leaf(rng, {3, 4})},
           [=](auto in) { return ws(ad::sub(in[0], in[1])); });
  add_case("mul", {random_leaf(rng, {3, 4}), random_leaf(rng, {3, 4})},
           [=](auto in) { return ws(ad::mul(in[0], in[1])); });
  add_case("scale", {random_leaf(rng, {3, 4})}, [=](auto in) { return ws(ad::scale(in[0], -1.7)); });
  add_case("relu", {random_leaf(rng, {5, 4})}, [=](auto in) { return ws(ad::relu(in[0])); });
  add_case("gelu", {random_leaf(rng, {5, 4})}, [=](auto in) { return ws(ad::gelu(in[0])); });
  add_case("transpose", {random_leaf(rng, {3, 5})}, [=](auto in) { return ws(ad::transpose(in[0])); });
  add_case("add_bias", {random_leaf(rng, {4, 3}), random_leaf(rng, {3})},
           [=](auto in) { return ws(ad::add_bias(in[0], in[1])); });
  add_case("layer_norm", {random_leaf(rng, {4, 6}), random_leaf(rng, {6}), random_leaf(rng, {6})},
           [=](auto in) { return ws(ad::layer_norm(in[0], in[1], in[2])); });
  add_case("softmax", {random_leaf(rng, {3, 5})}, [=](auto in) { return ws(ad::softmax(in[0])); });
  add_case("grouped_softmax", {random_leaf(rng, {7, 3})},
           [=](auto in) { return ws(ad::grouped_softmax(in[0], groups, 3)); });
  add_case("gather_rows", {random_leaf(rng, {6, 3})}, [=](auto in) { return ws(ad::gather_rows(in[0], gather)); });
  add_case("segment_sum", {random_leaf(rng, {7, 3})},
           [=](auto in) { return ws(ad::segment_sum(in[0], groups, 3)); });
  add_case("segment_mean", {random_leaf(rng, {7, 3})},
           [=](auto in) { return ws(ad::segment_mean(in[0], groups, 3)); });
  add_case("segment_max", {random_leaf(rng, {7, 3})},
           [=](auto in) { return ws(ad::segment_max(in[0], groups, 3)); });
  add_case("concat_cols", {random_leaf(rng, {4, 2}), random_leaf(rng, {4, 3})},
           [=](auto in) { return ws(ad::concat_cols(in[0], in[1])); });
  add_case("slice_cols", {random_leaf(rng, {4, 6})}, [=](auto in) { return ws(ad::slice_cols(in[0], 1, 4)); });
  add_case("sum", {random_leaf(rng, {4, 3})}, [](auto in) { return ad::sum(in[0]); });
  add_case("cross_entropy", {random_leaf(rng, {4, 5})}, [](auto in) {
    const std::vector<std::int64_t> t = {2, ad::kIgnore, 0, 4};
    return ad::cross_entropy(in[0], t);
  });
  add_case("keypoint_loss", {random_leaf(rng, {6, 3})}, [](auto in) {
    const std::vector<std::int64_t> t = {5, ad::kIgnore, 1};
    return keypoint_loss(in[0], t);
  });

  // Composite layers on a small random cloud.
  PointCloud cloud;
  for (int i = 0; i < 32; ++i) cloud.points.push_back({uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)});
  const ModelConfig config = ModelConfig::tiny(3, 2);
  ModelParams params = build_model(config, derive_seed({seed, 1}));
  {
    const auto table = knn(cloud, cloud, 4);
    const auto block = params.encoder[0].blocks[0];
    add_case("attention_block", {random_leaf(rng, {32, 8})},
             [=](auto in) { return ws(attention_block(in[0], cloud.points, table, block)); });
  }
  {
    FiLMParams film{random_leaf(rng, {2, 32}), random_leaf(rng, {32})};
    add_case("film_modulate", {random_leaf(rng, {5, 16}), film.weight, film.bias}, [](auto in) {
      return weighted_sum(film_modulate(in[0], 1, FiLMParams{in[1], in[2]}, 2), 99);
    });
  }
  {
    const auto structure = build_structure(cloud, config);
    const std::vector<std::int64_t> targets = {3, 17, 29};
    std::vector<Tensor> leaves;
    for (auto& [name, t] : params.named()) leaves.push_back(t);
    // Leaves are the live parameter tensors, so the closure reads perturbed values.
    add_case("model_end_to_end", leaves, [=](auto) {
      return keypoint_loss(forward(cloud, structure, 1, params, config), targets);
    });
  }

  std::vector<GradCheckResult> results;
  for (auto& c : cases) {
    const double err = ad::grad_check(c.fn, c.inputs);
    results.push_back({c.name, err, err < tolerance});
  }
  return results;
}

}  // namespace lmpt
