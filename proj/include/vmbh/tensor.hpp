#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace vmbh {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

// One recorded operation. `backward` reads the gradient of the output
// (out.grad) and accumulates into the gradients of `inputs`.
struct Node {
  using BackwardFn = std::function<void(const Node&, const TensorImpl& out)>;

  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;

  // Gradient buffer of input i, allocated on demand, or nullptr when that
  // input does not take part in differentiation.
  double* grad_of(std::size_t i) const;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t grad_epoch = 0;
  std::shared_ptr<Node> node;

  // Leaves reached by a completed backward() from this tensor together with
  // their grad epoch at that time.
  bool backward_done = false;
  std::vector<std::pair<std::weak_ptr<TensorImpl>, std::uint64_t>> backward_leaves;

  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major float64 tensor participating in a reverse-mode graph.
//
// Tensor is a shared handle: copies alias the same storage and graph node.
// Tensors without a graph node are immutable once handed to an op, except
// for leaves whose data is deliberately edited through mutable_data()
// (optimizers, finite-difference checks).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar. Leaves with requires_grad receive the
  // derivative accumulated over all uses. A second call on the same graph
  // throws ContractError unless every reached leaf had zero_grad() since.
  void backward() const;

  // Same data, detached from any graph.
  Tensor detach() const;
  Tensor clone() const;

  const detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  const detail::TensorImpl& checked() const;
  std::shared_ptr<detail::TensorImpl> impl_;
};

void zero_grads(std::span<Tensor> tensors);

// While alive, ops on this thread record no graph nodes.
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

namespace detail {

// Wraps freshly computed output data; records a graph node when gradients
// are enabled and some input requires them.
Tensor make_result(Shape shape, std::vector<double> data, const char* name,
                   std::initializer_list<Tensor> inputs, Node::BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data, const char* name,
                   std::span<const Tensor> inputs, Node::BackwardFn backward);

}  // namespace detail

// Test hook: while set, the backward rule of every node with this op name
// scales its incoming gradient by 1.5. Empty string disables.
void set_gradient_fault(std::string op_name);
const std::string& gradient_fault();

}  // namespace vmbh
