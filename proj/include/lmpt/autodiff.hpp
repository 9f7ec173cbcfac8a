#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lmpt::ad {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node;

/// Reference-counted handle onto a node of the eagerly recorded graph.
/// Copies share storage; leaves created with requires_grad accumulate
/// gradients across every graph they take part in until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  /// Rows/cols view a 1-D tensor as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Mutable access is intended for leaves (parameters, grad-check probes).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  /// Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// Sentinel target for ignored rows in cross_entropy.
inline constexpr std::int64_t kIgnore = -1;

// Differentiable operations. All shapes are explicit; the only broadcast is
// add_bias over rows. 2-D operands are row-major (rows x cols).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor transpose(const Tensor& x);
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// Per-row normalization over the channel axis with learnable gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor softmax(const Tensor& x);
/// Column-wise softmax among the rows that share a group id.
Tensor grouped_softmax(const Tensor& x, std::span<const std::uint32_t> groups, std::size_t num_groups);
Tensor gather_rows(const Tensor& x, std::span<const std::uint32_t> index);
Tensor segment_sum(const Tensor& x, std::span<const std::uint32_t> segments, std::size_t num_segments);
Tensor segment_mean(const Tensor& x, std::span<const std::uint32_t> segments, std::size_t num_segments);
/// Gradient flows to the per-column argmax of each segment; ties go to the
/// smallest row index. Empty segments produce 0.
Tensor segment_max(const Tensor& x, std::span<const std::uint32_t> segments, std::size_t num_segments);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor sum(const Tensor& x);
/// Mean over non-ignored rows of -log softmax(row)[target]; rows are logits.
/// Returns 0 (with zero gradient) when every row is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);
Tensor cross_entropy(const Tensor& logits, std::int64_t target);

/// Reverse sweep from a scalar. Accumulates into every reachable node that
/// requires grad; visits nodes in exact reverse topological order.
void backward(const Tensor& loss);

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

/// Max relative error between backward() and central differences, with
/// denominator max(1, |analytic|, |numeric|). Inputs must be leaves.
double grad_check(const ScalarFn& fn, std::span<Tensor> inputs, double epsilon = 1e-5);

namespace testing {
/// Corrupts the relu backward rule while enabled; exercises the checker.
void inject_relu_fault(bool enabled);
}  // namespace testing

}  // namespace lmpt::ad
