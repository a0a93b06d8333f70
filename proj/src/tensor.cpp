#include "lensnvs/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace lensnvs::nn {
namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  if (nn::numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_string(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = nn::numel(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return constant({}, {v}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

int Tensor::dim(int i) const {
  if (i < 0) i += rank();
  if (i < 0 || i >= rank()) throw std::out_of_range("Tensor::dim: axis out of range");
  return node_->shape[i];
}

std::span<const double> Tensor::grad() const {
  return node_->grad_buffer();
}

void Tensor::zero_grad() { node_->grad.clear(); }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
  return node_->value[0];
}

Tensor Tensor::detach() const { return constant(node_->shape, node_->value); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace {
template <typename Range>
std::shared_ptr<Node> make_result_impl(Shape shape, std::vector<double> value, const Range& inputs,
                                       bool& record) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  record = false;
  if (g_grad_enabled) {
    for (const Tensor& t : inputs) {
      if (t.defined() && t.requires_grad()) record = true;
    }
  }
  if (record) {
    node->requires_grad = true;
    for (const Tensor& t : inputs) {
      if (t.defined()) node->parents.push_back(t.node());
    }
  }
  return node;
}
}  // namespace

std::shared_ptr<Node> make_result(Shape shape, std::vector<double> value,
                                  std::initializer_list<Tensor> inputs, bool& record) {
  return make_result_impl(std::move(shape), std::move(value), inputs, record);
}

std::shared_ptr<Node> make_result(Shape shape, std::vector<double> value,
                                  const std::vector<Tensor>& inputs, bool& record) {
  return make_result_impl(std::move(shape), std::move(value), inputs, record);
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  }
  if (!std::isfinite(loss.item())) throw std::runtime_error("backward: non-finite loss");
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
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
    if ((*it)->backward && !(*it)->grad.empty()) (*it)->backward();
  }
}

}  // namespace lensnvs::nn
