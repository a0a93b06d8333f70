#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lensnvs::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Storage and tape record behind a Tensor handle.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;  // accumulates this->grad into parents' grads

  /// Grad buffer, allocated (zero-filled) on first use.
  std::vector<double>& grad_buffer();
};

/// Shared handle to a dense row-major float64 tensor on the reverse-mode tape.
///
/// Copies alias the same storage. Operations record a backward closure only
/// when some input requires gradients and no NoGradGuard is active.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor scalar(double v);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  /// Gradient; all zeros if nothing has been accumulated yet.
  std::span<const double> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad();

  double item() const;

  /// Detached copy (no tape, no grad).
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Disables tape recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds the result node of an op. `parents` are recorded (and the closure
/// installed later by the caller) only if recording is on and one of them
/// requires grad; returns whether recording happens.
std::shared_ptr<Node> make_result(Shape shape, std::vector<double> value,
                                  std::initializer_list<Tensor> inputs, bool& record);
std::shared_ptr<Node> make_result(Shape shape, std::vector<double> value,
                                  const std::vector<Tensor>& inputs, bool& record);

/// Reverse-mode sweep from a scalar. Replays the tape in reverse topological
/// order; gradients accumulate (+=) into every reachable node requiring grad.
void backward(const Tensor& loss);

}  // namespace lensnvs::nn
