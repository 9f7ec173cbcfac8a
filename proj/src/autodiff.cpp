#include "lmpt/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_set>

#include "lmpt/errors.hpp"

namespace lmpt::ad {

namespace {

std::atomic<bool> g_relu_fault{false};

using NodePtr = std::shared_ptr<Node>;

Tensor make_result(Shape shape, std::vector<double> value, std::vector<NodePtr> parents, const char* op,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

void require_2d(const Tensor& t, const char* op) {
  if (t.dim() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void check_segments(std::span<const std::uint32_t> segments, std::size_t rows, std::size_t num_segments,
                    const char* op) {
  if (segments.size() != rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(segments.size()) + " segment ids for " +
                     std::to_string(rows) + " rows");
  }
  for (auto s : segments) {
    if (s >= num_segments) throw IndexError(std::string(op) + ": segment id " + std::to_string(s) + " out of range");
  }
}

// Segment ops treat a 1-D input as a column vector.
std::pair<std::size_t, std::size_t> segment_layout(const Tensor& x, const char* op) {
  if (x.dim() == 1) return {x.shape()[0], 1};
  if (x.dim() == 2) return {x.shape()[0], x.shape()[1]};
  throw ShapeError(std::string(op) + ": expected 1-D or 2-D tensor");
}

Shape segment_shape(const Tensor& x, std::size_t num_segments, std::size_t cols) {
  return x.dim() == 1 ? Shape{num_segments} : Shape{num_segments, cols};
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = element_count(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != element_count(shape)) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::size_t Tensor::rows() const { return dim() == 2 ? shape()[0] : 1; }
std::size_t Tensor::cols() const { return dim() == 2 ? shape()[1] : numel(); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }
double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}
bool Tensor::requires_grad() const { return node_->requires_grad; }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t R = a.shape()[0], K = a.shape()[1], C = b.shape()[1];
  if (b.shape()[0] != K) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(R * C, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < R; ++i) {
    double* o = out.data() + i * C;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = A[i * K + k];
      const double* brow = B + k * C;
      for (std::size_t j = 0; j < C; ++j) o[j] += av * brow[j];
    }
  }
  auto an = a.node(), bn = b.node();
  return make_result({R, C}, std::move(out), {an, bn}, "matmul", [an, bn, R, K, C](Node& self) {
    const double* G = self.grad.data();
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      const double* Bv = bn->value.data();
      for (std::size_t i = 0; i < R; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
          double acc = 0.0;
          const double* g = G + i * C;
          const double* brow = Bv + k * C;
          for (std::size_t j = 0; j < C; ++j) acc += g[j] * brow[j];
          ga[i * K + k] += acc;
        }
      }
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      const double* Av = an->value.data();
      for (std::size_t i = 0; i < R; ++i) {
        const double* g = G + i * C;
        for (std::size_t k = 0; k < K; ++k) {
          const double av = Av[i * K + k];
          double* gbrow = gb.data() + k * C;
          for (std::size_t j = 0; j < C; ++j) gbrow[j] += av * g[j];
        }
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {an, bn}, "add", [an, bn](Node& self) {
    for (auto* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {an, bn}, "sub", [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_result(a.shape(), std::move(out), {an, bn}, "mul", [an, bn](Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {an}, "scale", [an, s](Node& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {xn}, "relu", [xn](Node& self) {
    const double slope = g_relu_fault.load() ? 1.5 : 1.0;
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xn->value[i] > 0.0) g[i] += slope * self.grad[i];
    }
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = v * normal_cdf(v);
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {xn}, "gelu", [xn](Node& self) {
    constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xn->value[i];
      const double d = normal_cdf(v) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * d;
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_2d(x, "transpose");
  const std::size_t R = x.shape()[0], C = x.shape()[1];
  std::vector<double> out(R * C);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out[j * R + i] = x.data()[i * C + j];
  auto xn = x.node();
  return make_result({C, R}, std::move(out), {xn}, "transpose", [xn, R, C](Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < C; ++j) g[i * C + j] += self.grad[j * R + i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  const std::size_t R = x.shape()[0], C = x.shape()[1];
  if (bias.numel() != C || bias.dim() > 2 || (bias.dim() == 2 && bias.shape()[0] != 1)) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match " + shape_string(x.shape()));
  }
  std::vector<double> out(R * C);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out[i * C + j] = x.data()[i * C + j] + bias.data()[j];
  auto xn = x.node(), bn = bias.node();
  return make_result(x.shape(), std::move(out), {xn, bn}, "add_bias", [xn, bn, R, C](Node& self) {
    if (xn->requires_grad) {
      auto& g = xn->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) g[j] += self.grad[i * C + j];
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_2d(x, "layer_norm");
  const std::size_t R = x.shape()[0], C = x.shape()[1];
  if (gain.numel() != C || bias.numel() != C) throw ShapeError("layer_norm: gain/bias width mismatch");
  std::vector<double> out(R * C);
  std::vector<double> xhat(R * C);
  std::vector<double> inv_std(R);
  const double* X = x.data().data();
  for (std::size_t i = 0; i < R; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < C; ++j) mean += X[i * C + j];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      const double d = X[i * C + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(C);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < C; ++j) {
      xhat[i * C + j] = (X[i * C + j] - mean) * inv_std[i];
      out[i * C + j] = xhat[i * C + j] * gain.data()[j] + bias.data()[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_result(x.shape(), std::move(out), {xn, gn, bn}, "layer_norm",
                     [xn, gn, bn, R, C, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const double* G = self.grad.data();
                       if (gn->requires_grad) {
                         auto& gg = gn->grad_buffer();
                         for (std::size_t i = 0; i < R; ++i)
                           for (std::size_t j = 0; j < C; ++j) gg[j] += G[i * C + j] * xhat[i * C + j];
                       }
                       if (bn->requires_grad) {
                         auto& gb = bn->grad_buffer();
                         for (std::size_t i = 0; i < R; ++i)
                           for (std::size_t j = 0; j < C; ++j) gb[j] += G[i * C + j];
                       }
                       if (xn->requires_grad) {
                         auto& gx = xn->grad_buffer();
                         const double n = static_cast<double>(C);
                         for (std::size_t i = 0; i < R; ++i) {
                           double sum_d = 0.0, sum_dx = 0.0;
                           for (std::size_t j = 0; j < C; ++j) {
                             const double d = G[i * C + j] * gn->value[j];
                             sum_d += d;
                             sum_dx += d * xhat[i * C + j];
                           }
                           for (std::size_t j = 0; j < C; ++j) {
                             const double d = G[i * C + j] * gn->value[j];
                             gx[i * C + j] += inv_std[i] / n * (n * d - sum_d - xhat[i * C + j] * sum_dx);
                           }
                         }
                       }
                     });
}

Tensor softmax(const Tensor& x) {
  if (x.dim() != 1 && x.dim() != 2) throw ShapeError("softmax: expected 1-D or 2-D tensor");
  const std::size_t R = x.rows(), C = x.cols();
  std::vector<double> out(R * C);
  for (std::size_t i = 0; i < R; ++i) {
    const double* row = x.data().data() + i * C;
    const double m = *std::max_element(row, row + C);
    double s = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      out[i * C + j] = std::exp(row[j] - m);
      s += out[i * C + j];
    }
    for (std::size_t j = 0; j < C; ++j) out[i * C + j] /= s;
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {xn}, "softmax", [xn, R, C](Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < R; ++i) {
      double dotp = 0.0;
      for (std::size_t j = 0; j < C; ++j) dotp += self.grad[i * C + j] * self.value[i * C + j];
      for (std::size_t j = 0; j < C; ++j) g[i * C + j] += self.value[i * C + j] * (self.grad[i * C + j] - dotp);
    }
  });
}

Tensor grouped_softmax(const Tensor& x, std::span<const std::uint32_t> groups, std::size_t num_groups) {
  require_2d(x, "grouped_softmax");
  const std::size_t R = x.shape()[0], C = x.shape()[1];
  check_segments(groups, R, num_groups, "grouped_softmax");
  std::vector<double> mx(num_groups * C, -std::numeric_limits<double>::infinity());
  const double* X = x.data().data();
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) mx[groups[i] * C + j] = std::max(mx[groups[i] * C + j], X[i * C + j]);
  std::vector<double> out(R * C);
  std::vector<double> denom(num_groups * C, 0.0);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) {
      out[i * C + j] = std::exp(X[i * C + j] - mx[groups[i] * C + j]);
      denom[groups[i] * C + j] += out[i * C + j];
    }
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out[i * C + j] /= denom[groups[i] * C + j];
  auto xn = x.node();
  std::vector<std::uint32_t> ids(groups.begin(), groups.end());
  return make_result(x.shape(), std::move(out), {xn}, "grouped_softmax",
                     [xn, R, C, num_groups, ids = std::move(ids)](Node& self) {
                       std::vector<double> dotp(num_groups * C, 0.0);
                       for (std::size_t i = 0; i < R; ++i)
                         for (std::size_t j = 0; j < C; ++j)
                           dotp[ids[i] * C + j] += self.grad[i * C + j] * self.value[i * C + j];
                       auto& g = xn->grad_buffer();
                       for (std::size_t i = 0; i < R; ++i)
                         for (std::size_t j = 0; j < C; ++j)
                           g[i * C + j] += self.value[i * C + j] * (self.grad[i * C + j] - dotp[ids[i] * C + j]);
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::uint32_t> index) {
  require_2d(x, "gather_rows");
  const std::size_t R = x.shape()[0], C = x.shape()[1];
  for (auto r : index) {
    if (r >= R) throw IndexError("gather_rows: row " + std::to_string(r) + " out of range " + std::to_string(R));
  }
  const std::size_t M = index.size();
  std::vector<double> out(M * C);
  for (std::size_t i = 0; i < M; ++i) std::copy_n(x.data().data() + index[i] * C, C, out.data() + i * C);
  auto xn = x.node();
  std::vector<std::uint32_t> idx(index.begin(), index.end());
  return make_result({M, C}, std::move(out), {xn}, "gather_rows", [xn, C, idx = std::move(idx)](Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = g.data() + idx[i] * C;
      const double* src = self.grad.data() + i * C;
      for (std::size_t j = 0; j < C; ++j) dst[j] += src[j];
    }
  });
}

Tensor segment_sum(const Tensor& x, std::span<const std::uint32_t> segments, std::size_t num_segments) {
  const auto [R, C] = segment_layout(x, "segment_sum");
  check_segments(segments, R, num_segments, "segment_sum");
  std::vector<double> out(num_segments * C, 0.0);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out[segments[i] * C + j] += x.data()[i * C + j];
  auto xn = x.node();
  std::vector<std::uint32_t> ids(segments.begin(), segments.end());
  return make_result(segment_shape(x, num_segments, C), std::move(out), {xn}, "segment_sum",
                     [xn, C, ids = std::move(ids)](Node& self) {
                       auto& g = xn->grad_buffer();
                       for (std::size_t i = 0; i < ids.size(); ++i)
                         for (std::size_t j = 0; j < C; ++j) g[i * C + j] += self.grad[ids[i] * C + j];
                     });
}

Tensor segment_mean(const Tensor& x, std::span<const std::uint32_t> segments, std::size_t num_segments) {
  const auto [R, C] = segment_layout(x, "segment_mean");
  check_segments(segments, R, num_segments, "segment_mean");
  std::vector<double> counts(num_segments, 0.0);
  for (auto s : segments) counts[s] += 1.0;
  std::vector<double> out(num_segments * C, 0.0);
  for (std::size_t i = 0; i < R; ++i)
    for (std::size_t j = 0; j < C; ++j) out[segments[i] * C + j] += x.data()[i * C + j];
  for (std::size_t s = 0; s < num_segments; ++s)
    if (counts[s] > 0.0)
      for (std::size_t j = 0; j < C; ++j) out[s * C + j] /= counts[s];
  auto xn = x.node();
  std::vector<std::uint32_t> ids(segments.begin(), segments.end());
  return make_result(segment_shape(x, num_segments, C), std::move(out), {xn}, "segment_mean",
                     [xn, C, ids = std::move(ids), counts = std::move(counts)](Node& self) {
                       auto& g = xn->grad_buffer();
                       for (std::size_t i = 0; i < ids.size(); ++i)
                         for (std::size_t j = 0; j < C; ++j) g[i * C + j] += self.grad[ids[i] * C + j] / counts[ids[i]];
                     });
}

Tensor segment_max(const Tensor& x, std::span<const std::uint32_t> segments, std::size_t num_segments) {
  const auto [R, C] = segment_layout(x, "segment_max");
  check_segments(segments, R, num_segments, "segment_max");
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> arg(num_segments * C, kNone);
  const double* X = x.data().data();
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = 0; j < C; ++j) {
      auto& a = arg[segments[i] * C + j];
      if (a == kNone || X[i * C + j] > X[a * C + j]) a = i;
    }
  }
  std::vector<double> out(num_segments * C, 0.0);
  for (std::size_t s = 0; s < num_segments * C; ++s) {
    if (arg[s] != kNone) out[s] = X[arg[s] * C + s % C];
  }
  auto xn = x.node();
  return make_result(segment_shape(x, num_segments, C), std::move(out), {xn}, "segment_max",
                     [xn, C, arg = std::move(arg)](Node& self) {
                       auto& g = xn->grad_buffer();
                       for (std::size_t s = 0; s < arg.size(); ++s) {
                         if (arg[s] != kNone) g[arg[s] * C + s % C] += self.grad[s];
                       }
                     });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_2d(a, "concat_cols");
  require_2d(b, "concat_cols");
  const std::size_t R = a.shape()[0], Ca = a.shape()[1], Cb = b.shape()[1];
  if (b.shape()[0] != R) throw ShapeError("concat_cols: row counts differ");
  const std::size_t C = Ca + Cb;
  std::vector<double> out(R * C);
  for (std::size_t i = 0; i < R; ++i) {
    std::copy_n(a.data().data() + i * Ca, Ca, out.data() + i * C);
    std::copy_n(b.data().data() + i * Cb, Cb, out.data() + i * C + Ca);
  }
  auto an = a.node(), bn = b.node();
  return make_result({R, C}, std::move(out), {an, bn}, "concat_cols", [an, bn, R, Ca, Cb, C](Node& self) {
    if (an->requires_grad) {
      auto& g = an->grad_buffer();
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < Ca; ++j) g[i * Ca + j] += self.grad[i * C + j];
    }
    if (bn->requires_grad) {
      auto& g = bn->grad_buffer();
      for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < Cb; ++j) g[i * Cb + j] += self.grad[i * C + Ca + j];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.dim() != 1 && x.dim() != 2) throw ShapeError("slice_cols: expected 1-D or 2-D tensor");
  const std::size_t R = x.rows(), C = x.cols();
  if (begin > end || end > C) throw IndexError("slice_cols: range out of bounds");
  const std::size_t W = end - begin;
  std::vector<double> out(R * W);
  for (std::size_t i = 0; i < R; ++i) std::copy_n(x.data().data() + i * C + begin, W, out.data() + i * W);
  auto xn = x.node();
  Shape shape = x.dim() == 1 ? Shape{W} : Shape{R, W};
  return make_result(std::move(shape), std::move(out), {xn}, "slice_cols", [xn, R, C, W, begin](Node& self) {
    auto& g = xn->grad_buffer();
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < W; ++j) g[i * C + begin + j] += self.grad[i * W + j];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto xn = x.node();
  return make_result({}, {s}, {xn}, "sum", [xn](Node& self) {
    auto& g = xn->grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  if (logits.dim() != 1 && logits.dim() != 2) throw ShapeError("cross_entropy: expected 1-D or 2-D logits");
  const std::size_t R = logits.rows(), C = logits.cols();
  if (targets.size() != R) throw ShapeError("cross_entropy: one target per row required");
  for (double v : logits.data()) {
    if (!std::isfinite(v)) throw InvalidInput("cross_entropy: non-finite logit");
  }
  std::size_t labeled = 0;
  for (auto t : targets) {
    if (t == kIgnore) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= C) throw IndexError("cross_entropy: target out of range");
    ++labeled;
  }
  std::vector<double> probs(R * C, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < R; ++i) {
    if (targets[i] == kIgnore) continue;
    const double* row = logits.data().data() + i * C;
    const double m = *std::max_element(row, row + C);
    double s = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      probs[i * C + j] = std::exp(row[j] - m);
      s += probs[i * C + j];
    }
    for (std::size_t j = 0; j < C; ++j) probs[i * C + j] /= s;
    loss += (m + std::log(s)) - row[targets[i]];
  }
  if (labeled > 0) loss /= static_cast<double>(labeled);
  auto xn = logits.node();
  std::vector<std::int64_t> tg(targets.begin(), targets.end());
  return make_result({}, {loss}, {xn}, "cross_entropy",
                     [xn, C, labeled, tg = std::move(tg), probs = std::move(probs)](Node& self) {
                       if (labeled == 0) return;
                       auto& g = xn->grad_buffer();
                       const double w = self.grad[0] / static_cast<double>(labeled);
                       for (std::size_t i = 0; i < tg.size(); ++i) {
                         if (tg[i] == kIgnore) continue;
                         for (std::size_t j = 0; j < C; ++j) g[i * C + j] += w * probs[i * C + j];
                         g[i * C + static_cast<std::size_t>(tg[i])] -= w;
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::int64_t target) {
  const std::int64_t t[1] = {target};
  return cross_entropy(logits, std::span<const std::int64_t>(t, 1));
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(loss.shape()));
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS: parents finish before children.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

double grad_check(const ScalarFn& fn, std::span<Tensor> inputs, double epsilon) {
  for (auto& t : inputs) t.zero_grad();
  Tensor loss = fn(inputs);
  backward(loss);
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (!t.grad().empty()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double up = fn(inputs).item();
      values[i] = saved - epsilon;
      const double down = fn(inputs).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

namespace testing {
void inject_relu_fault(bool enabled) { g_relu_fault.store(enabled); }
}  // namespace testing

}  // namespace lmpt::ad
