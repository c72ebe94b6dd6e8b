#include "sqlformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace sqlformer {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape) {
  size_t n = shape_numel(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(n, 0.0f);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> data) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<float> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.impl_->requires_grad = true;
  return t;
}

std::span<const float> Tensor::grad() const {
  if (impl_->grad.empty()) throw TapeError("tensor has no gradient buffer");
  return impl_->grad;
}

std::span<float> Tensor::grad_mut() {
  ensure_grad();
  return impl_->grad;
}

void Tensor::ensure_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(impl_->shape));
  return impl_->data[0];
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor make_op_result(Shape shape, std::vector<float> data, const char* op_kind,
                      std::vector<Tensor> inputs, std::function<void(TensorImpl&)> backward_fn) {
  for (float v : data) {
    if (!std::isfinite(v)) {
      throw NumericsError(std::string(op_kind) + ": non-finite value in forward output");
    }
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);

  bool needs_grad = false;
  for (const Tensor& in : inputs) {
    if (in.requires_grad()) needs_grad = true;
  }
  if (needs_grad && g_grad_enabled) {
    impl->requires_grad = true;
    auto node = std::make_unique<TapeNode>();
    node->op_kind = op_kind;
    for (const Tensor& in : inputs) node->inputs.push_back(in.impl());
    node->backward = std::move(backward_fn);
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

void backward(const Tensor& root) {
  if (!root.defined()) throw TapeError("backward on undefined tensor");
  if (root.numel() != 1) {
    throw TapeError("backward requires a scalar root, got shape " + shape_str(root.shape()));
  }
  TensorImpl* root_impl = root.impl().get();
  if (root_impl->backward_done || root_impl->tape_consumed) {
    throw TapeError("backward called twice on the same graph (single-use tape)");
  }

  // Iterative post-order DFS over the recorded graph. `order` keeps shared
  // ownership: resetting a node drops the only other references to
  // intermediate results created as temporaries.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root_impl);
  while (!stack.empty()) {
    auto& [impl, next_child] = stack.back();
    if (impl->tape_consumed) {
      throw TapeError("graph references tape nodes consumed by an earlier backward()");
    }
    if (impl->node && next_child < impl->node->inputs.size()) {
      const std::shared_ptr<TensorImpl>& child = impl->node->inputs[next_child++];
      if (visited.insert(child.get()).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(impl);
      stack.pop_back();
    }
  }

  root_impl->grad.assign(1, 1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = it->get();
    impl->backward_done = true;
    if (!impl->node) continue;
    if (!impl->grad.empty()) {
      for (const auto& in : impl->node->inputs) {
        if (in->requires_grad && in->grad.empty()) in->grad.assign(in->data.size(), 0.0f);
      }
      impl->node->backward(*impl);
    }
    impl->node.reset();  // free saved activations as soon as they are consumed
    impl->tape_consumed = true;
  }
}

}  // namespace sqlformer
