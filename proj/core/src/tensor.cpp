#include "bl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "bl/error.hpp"

#ifndef BL_FINITE_CHECKS_DEFAULT
#define BL_FINITE_CHECKS_DEFAULT 1
#endif

namespace bl {

namespace {

thread_local bool tls_grad_mode = true;
thread_local bool tls_finite_checks = BL_FINITE_CHECKS_DEFAULT != 0;

detail::TensorImpl& require(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw Error(ErrorCode::ShapeMismatch, "use of an undefined tensor");
  return *impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

double* detail::TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad.data();
}

void detail::check_finite(const char* op, std::span<const double> values) {
  if (!tls_finite_checks) return;
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, std::string(op) + " produced a non-finite value");
  }
}

Tensor Tensor::create(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw Error(ErrorCode::ShapeMismatch, "shape " + shape_str(shape) + " holds " +
                                              std::to_string(shape_numel(shape)) + " values, got " +
                                              std::to_string(values.size()));
  }
  for (std::size_t d : shape) {
    if (d == 0) throw Error(ErrorCode::ShapeMismatch, "zero-sized dimension in " + shape_str(shape));
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "create() given a non-finite value");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return create(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return create({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return require(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw Error(ErrorCode::AxisOutOfRange, "axis " + std::to_string(axis) + " of " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return require(impl_).data.size(); }

std::span<const double> Tensor::data() const { return require(impl_).data; }

std::span<double> Tensor::mutable_data() { return require(impl_).data; }

double Tensor::item() const {
  const auto& impl = require(impl_);
  if (impl.data.size() != 1) throw Error(ErrorCode::NotScalar, "item() on shape " + shape_str(impl.shape));
  return impl.data[0];
}

double Tensor::operator[](std::size_t flat_index) const { return require(impl_).data.at(flat_index); }

bool Tensor::requires_grad() const { return require(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  auto& impl = require(impl_);
  if (impl.grad_fn && !flag) {
    throw Error(ErrorCode::ShapeMismatch, "cannot clear requires_grad on a non-leaf tensor");
  }
  impl.requires_grad = flag;
  if (!flag) impl.grad.clear();
  return *this;
}

bool Tensor::is_leaf() const { return require(impl_).grad_fn == nullptr; }

bool Tensor::has_grad() const { return !require(impl_).grad.empty(); }

std::span<const double> Tensor::grad() const { return require(impl_).grad; }

void Tensor::zero_grad() {
  auto& g = require(impl_).grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& impl = require(impl_);
  auto out = std::make_shared<detail::TensorImpl>();
  out->shape = impl.shape;
  out->data = impl.data;
  return Tensor(std::move(out));
}

Tensor Tensor::clone() const {
  Tensor out = detach();
  out.impl_->requires_grad = require(impl_).requires_grad && is_leaf();
  return out;
}

void Tensor::backward() const { bl::backward(*this); }

BackwardReport backward(const Tensor& loss) {
  auto& root = require(loss.impl());
  if (root.data.size() != 1) throw Error(ErrorCode::NotScalar, "backward() needs a scalar, got " + shape_str(root.shape));
  BackwardReport report;
  if (!root.requires_grad) return report;
  if (!root.grad_fn) {
    root.grad_buffer()[0] += 1.0;
    return report;
  }
  if (root.grad_fn->consumed) throw Error(ErrorCode::GraphConsumed, "graph already used by a previous backward()");

  // Iterative post-order DFS gives a topological order without recursion limits.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<const detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(&root, 0);
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->grad_fn.get();
    if (node && node->consumed) throw Error(ErrorCode::GraphConsumed, "graph shares nodes with a consumed graph");
    if (node && next < node->inputs.size()) {
      detail::TensorImpl* child = node->inputs[next++].get();
      if (child->requires_grad && child->grad_fn && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  root.grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* impl = *it;
    auto& node = *impl->grad_fn;
    if (!impl->grad.empty()) node.backward(*impl);
    ++report.nodes_visited;
  }
  for (detail::TensorImpl* impl : order) {
    auto& node = *impl->grad_fn;
    node.consumed = true;
    node.inputs.clear();
    node.backward = nullptr;
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
  return report;
}

NoGradGuard::NoGradGuard() : previous_(tls_grad_mode) { tls_grad_mode = false; }
NoGradGuard::~NoGradGuard() { tls_grad_mode = previous_; }

bool grad_mode_enabled() noexcept { return tls_grad_mode; }

void set_finite_checks(bool enabled) noexcept { tls_finite_checks = enabled; }
bool finite_checks_enabled() noexcept { return tls_finite_checks; }

Tensor detail::make_result(const char* name, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                           BackwardFn backward) {
  check_finite(name, data);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  const bool track = tls_grad_mode && std::any_of(inputs.begin(), inputs.end(),
                                                  [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    auto node = std::make_shared<Node>();
    node->name = name;
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
    node->backward = std::move(backward);
    impl->requires_grad = true;
    impl->grad_fn = std::move(node);
  }
  return Tensor(std::move(impl));
}

}  // namespace bl
