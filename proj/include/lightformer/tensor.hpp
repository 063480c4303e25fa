#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lightformer/error.hpp"

namespace lightformer {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// One node of the reverse-mode graph. Values are 64-bit floats and are
// treated as immutable once produced by an operation; only leaf tensors
// (parameters, probe inputs) are mutated in place by the optimizer.
struct TensorNode {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // same length as values once allocated
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backward_fn;

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
  bool is_leaf() const { return !backward_fn; }
  void ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor wrap(std::shared_ptr<TensorNode> node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t dim(std::size_t i) const { return node_->shape[i]; }
  std::int64_t numel() const { return node_->numel(); }

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void ensure_grad() { node_->ensure_grad(); }
  void zero_grad();

  // Scalar read; ContractError unless numel() == 1.
  double item() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;
};

// Named trainable tensor. Names are unique within a model and enumeration
// order is deterministic.
struct Parameter {
  std::string name;
  Tensor value;
};

// Row-major [batch, n] block of token ids.
struct TokenBatch {
  std::vector<std::int64_t> ids;
  std::int64_t batch = 0;
  std::int64_t n = 0;

  std::int64_t at(std::int64_t b, std::int64_t t) const {
    return ids[static_cast<std::size_t>(b * n + t)];
  }
};

bool grad_enabled();

// Disables graph construction for the current thread while alive.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Reverse-mode sweep from a scalar loss. Accumulates into leaf grads;
// repeated calls without zeroing accumulate.
void backward(const Tensor& loss);

bool all_finite(const Tensor& t);

}  // namespace lightformer
