#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace bl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct TensorImpl;

// One recorded operation. Holds its inputs so the graph stays alive as long
// as any output does; the backward closure reads the output's grad buffer and
// accumulates into the inputs.
struct Node {
  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  double* grad_buffer();  // allocates zeros on first use
};

}  // namespace detail

/// Dense row-major float64 tensor handle. Copies share storage and autograd
/// state; use clone() for an independent leaf.
class Tensor {
 public:
  Tensor() = default;

  static Tensor create(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  [[nodiscard]] bool defined() const noexcept { return impl_ != nullptr; }
  [[nodiscard]] const Shape& shape() const;
  [[nodiscard]] std::size_t rank() const { return shape().size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const;
  [[nodiscard]] std::size_t numel() const;

  [[nodiscard]] std::span<const double> data() const;
  // Direct write access for optimizers and weight loading. Bypasses the graph.
  [[nodiscard]] std::span<double> mutable_data();
  [[nodiscard]] double item() const;
  [[nodiscard]] double operator[](std::size_t flat_index) const;

  [[nodiscard]] bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  [[nodiscard]] bool is_leaf() const;
  [[nodiscard]] bool has_grad() const;
  [[nodiscard]] std::span<const double> grad() const;
  void zero_grad();

  [[nodiscard]] Tensor detach() const;
  [[nodiscard]] Tensor clone() const;

  void backward() const;

  [[nodiscard]] const detail::TensorImpl* id() const noexcept { return impl_.get(); }

  // Internal: used by ops to build graph nodes.
  [[nodiscard]] const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

struct BackwardReport {
  std::size_t nodes_visited = 0;
};

/// Reverse-mode sweep from a scalar loss. Leaves with requires_grad accumulate
/// into grad(); tensors without it (frozen weights, data) are never touched.
/// The graph is released afterwards; a second call raises GraphConsumed.
BackwardReport backward(const Tensor& loss);

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

[[nodiscard]] bool grad_mode_enabled() noexcept;

/// NaN/Inf detection on op outputs. Defaults to the BL_FINITE_CHECKS build
/// option; thread-local so tests can toggle it without races.
void set_finite_checks(bool enabled) noexcept;
[[nodiscard]] bool finite_checks_enabled() noexcept;

namespace detail {

using BackwardFn = std::function<void(const TensorImpl& out)>;

// Wraps a freshly computed buffer as an op result, recording a node when
// grad mode is on and any input requires grad.
Tensor make_result(const char* name, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

void check_finite(const char* op, std::span<const double> values);

}  // namespace detail

}  // namespace bl
