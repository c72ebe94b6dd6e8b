#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sqlformer/common.hpp"

namespace sqlformer {

using Shape = std::vector<int>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TapeNode;

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool backward_done = false;
  bool tape_consumed = false;  // node was spent by a previous backward()
  std::unique_ptr<TapeNode> node;  // null for leaves
};

/// One recorded op on the gradient tape. `backward` reads the output's grad
/// buffer and accumulates into the inputs' grad buffers; any activations it
/// needs are captured in the closure. Nodes are destroyed as backward()
/// consumes them, so a graph can be walked exactly once.
struct TapeNode {
  const char* op_kind;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(TensorImpl&)> backward;
};

/// Dense row-major float32 tensor with optional reverse-mode gradient.
///
/// Copies share the underlying buffer (cheap handle semantics); use clone()
/// for an independent deep copy. Values are immutable after an op constructs
/// them except for the grad buffer and leaf parameters updated by the
/// optimizer between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, float value);
  static Tensor from(Shape shape, std::vector<float> data);
  static Tensor scalar(float value);
  /// Leaf tensor that participates in gradient computation.
  static Tensor parameter(Shape shape, std::vector<float> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  size_t numel() const { return impl_->data.size(); }

  std::span<const float> data() const { return impl_->data; }
  /// Mutable access to a leaf's values (optimizer updates). Mutating a
  /// non-leaf invalidates any tape that saved it; don't.
  std::span<float> data_mut() { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const float> grad() const;
  std::span<float> grad_mut();
  void ensure_grad();
  void zero_grad();

  /// Value of a single-element tensor.
  float item() const;

  /// Deep copy of shape + data (no grad, no tape).
  Tensor clone() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_op_result(Shape shape, std::vector<float> data, const char* op_kind,
                               std::vector<Tensor> inputs,
                               std::function<void(TensorImpl&)> backward_fn);
};

/// Whether ops currently record tape nodes (thread-local).
bool grad_enabled();

/// RAII guard disabling tape recording, for inference and metric paths.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Runs reverse-mode accumulation from a scalar root, visiting the recorded
/// graph in reverse topological order exactly once. The tape is consumed:
/// calling backward on the same graph again throws TapeError.
void backward(const Tensor& root);

/// Shared helper used by every op: validates finiteness of the forward
/// result, propagates requires_grad, and records a tape node when grad mode
/// is on. Throws NumericsError (naming op_kind) on non-finite outputs.
Tensor make_op_result(Shape shape, std::vector<float> data, const char* op_kind,
                      std::vector<Tensor> inputs,
                      std::function<void(TensorImpl&)> backward_fn);

}  // namespace sqlformer
