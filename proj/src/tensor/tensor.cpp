#include "vmbh/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "vmbh/error.hpp"

namespace vmbh {

namespace {
thread_local bool g_grad_enabled = true;
thread_local std::string g_fault_op;
}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<double>& TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

double* Node::grad_of(std::size_t i) const {
  auto& in = *inputs[i];
  if (!in.requires_grad) return nullptr;
  return in.grad_buffer().data();
}

namespace {

Tensor make_result_impl(Shape shape, std::vector<double> data, const char* name,
                        std::span<const Tensor> inputs, Node::BackwardFn backward) {
  if (numel_of(shape) != data.size()) {
    throw DimensionError(std::string(name) + ": result shape " + shape_str(shape) +
                         " does not match " + std::to_string(data.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (!g_grad_enabled) return Tensor(impl);
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!any) return Tensor(impl);
  auto node = std::make_shared<Node>();
  node->name = name;
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) {
    // Undefined optional inputs are recorded as an inert placeholder so
    // positional indices stay stable.
    node->inputs.push_back(t.defined() ? t.impl_ptr() : std::make_shared<TensorImpl>());
  }
  node->backward = std::move(backward);
  impl->requires_grad = true;
  impl->node = std::move(node);
  return Tensor(impl);
}

}  // namespace

Tensor make_result(Shape shape, std::vector<double> data, const char* name,
                   std::initializer_list<Tensor> inputs, Node::BackwardFn backward) {
  return make_result_impl(std::move(shape), std::move(data), name,
                          std::span<const Tensor>(inputs.begin(), inputs.size()),
                          std::move(backward));
}

Tensor make_result(Shape shape, std::vector<double> data, const char* name,
                   std::span<const Tensor> inputs, Node::BackwardFn backward) {
  return make_result_impl(std::move(shape), std::move(data), name, inputs, std::move(backward));
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }
Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = numel_of(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero dimension");
  }
  if (numel_of(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                         std::to_string(numel_of(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const detail::TensorImpl& Tensor::checked() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ContractError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().data.size(); }
std::span<const double> Tensor::data() const { return checked().data; }

std::span<double> Tensor::mutable_data() {
  checked();
  if (impl_->node) throw ContractError("mutable_data() on a non-leaf tensor");
  return impl_->data;
}

std::vector<double> Tensor::to_vector() const { return checked().data; }

double Tensor::item() const {
  const auto& t = checked();
  if (t.data.size() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(t.shape));
  }
  return t.data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& t = checked();
  if (index.size() != t.shape.size()) {
    throw ContractError("at(): index rank does not match shape " + shape_str(t.shape));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= t.shape[axis]) throw ContractError("at(): index out of range for " + shape_str(t.shape));
    flat = flat * t.shape[axis] + i;
    ++axis;
  }
  return t.data[flat];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  checked();
  if (impl_->node && !value) throw ContractError("cannot clear requires_grad on a non-leaf tensor");
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return checked().node == nullptr; }
bool Tensor::has_grad() const { return !checked().grad.empty(); }

std::span<const double> Tensor::grad() const {
  const auto& t = checked();
  if (t.grad.empty()) throw ContractError("tensor has no gradient");
  return t.grad;
}

Tensor Tensor::grad_tensor() const {
  auto g = grad();
  return from(shape(), std::vector<double>(g.begin(), g.end()));
}

void Tensor::zero_grad() {
  checked();
  impl_->grad.clear();
  ++impl_->grad_epoch;
}

Tensor Tensor::detach() const { return from(shape(), checked().data); }
Tensor Tensor::clone() const { return from(shape(), checked().data, checked().requires_grad && is_leaf()); }

void Tensor::backward() const {
  auto& root = const_cast<detail::TensorImpl&>(checked());
  if (root.data.size() != 1 || !root.shape.empty()) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw ContractError("backward() on a tensor that is not connected to a graph");
  if (root.backward_done) {
    bool all_reset = std::all_of(root.backward_leaves.begin(), root.backward_leaves.end(),
                                 [](const auto& rec) {
                                   auto leaf = rec.first.lock();
                                   return !leaf || leaf->grad_epoch != rec.second;
                                 });
    if (!all_reset) {
      throw ContractError("backward() called twice on the same graph without resetting leaf gradients");
    }
  }

  // Iterative post-order DFS yields a topological order (inputs first).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<const detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(&root, 0);
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      auto* child = t->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(t);
      stack.pop_back();
    }
  }

  std::vector<std::pair<std::weak_ptr<detail::TensorImpl>, std::uint64_t>> leaves;
  root.grad.assign(1, 1.0);
  const std::string& fault = g_fault_op;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* t = *it;
    if (!t->node) continue;
    if (!t->grad.empty()) {
      if (!fault.empty() && fault == t->node->name) {
        for (auto& g : t->grad) g *= 1.5;
      }
      t->node->backward(*t->node, *t);
    }
    for (const auto& in : t->node->inputs) {
      if (in->requires_grad && !in->node) leaves.emplace_back(in, in->grad_epoch);
    }
    if (t != &root) {
      t->grad.clear();
      t->grad.shrink_to_fit();
    }
  }
  root.backward_done = true;
  root.backward_leaves = std::move(leaves);
}

void zero_grads(std::span<Tensor> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void set_gradient_fault(std::string op_name) { g_fault_op = std::move(op_name); }
const std::string& gradient_fault() { return g_fault_op; }

}  // namespace vmbh
