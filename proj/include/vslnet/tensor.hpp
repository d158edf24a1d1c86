#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "vslnet/errors.hpp"

namespace vslnet {

enum class DType { kFloat32, kFloat64 };

std::string_view dtype_name(DType dtype);
DType parse_dtype(std::string_view name);

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

// One vertex of the autograd tape. Leaves have no backward rule; interior nodes
// keep references to their inputs until backward() releases them.
struct Node {
  Shape shape;
  Buffer values;
  std::optional<Buffer> grad;
  bool requires_grad = false;
  bool released = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  DType dtype() const {
    return std::holds_alternative<std::vector<float>>(values) ? DType::kFloat32
                                                             : DType::kFloat64;
  }
  std::size_t numel() const { return shape_numel(shape); }

  template <class T>
  std::vector<T>& vals() {
    return std::get<std::vector<T>>(values);
  }
  template <class T>
  const std::vector<T>& vals() const {
    return std::get<std::vector<T>>(values);
  }
  // Gradient buffer, allocated as zeros on first use.
  template <class T>
  std::vector<T>& grad_buf() {
    if (!grad) grad = Buffer(std::vector<T>(numel(), T(0)));
    return std::get<std::vector<T>>(*grad);
  }
};

}  // namespace detail

// Returns whether operations currently record onto the tape.
bool grad_enabled();

// Disables tape recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major tensor handle with value semantics for the metadata and
// shared ownership of the tape node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, DType dtype = DType::kFloat64);
  static Tensor full(Shape shape, double value, DType dtype = DType::kFloat64);
  static Tensor from_values(Shape shape, std::span<const double> values,
                            DType dtype = DType::kFloat64);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            DType dtype = DType::kFloat64);
  static Tensor scalar(double value, DType dtype = DType::kFloat64);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const;

  double item() const;
  double at(std::size_t flat) const;
  double at(std::size_t row, std::size_t col) const;
  std::vector<double> values() const;

  // In-place write to a leaf tensor (parameter updates, perturbations).
  void set(std::size_t flat, double value);
  void assign(std::span<const double> values);

  bool has_grad() const;
  std::vector<double> grad() const;
  double grad_at(std::size_t flat) const;
  void zero_grad();
  void clear_grad();

  template <class T>
  std::span<const T> data() const {
    return node_->vals<T>();
  }
  template <class T>
  std::span<T> mutable_data() {
    return node_->vals<T>();
  }
  template <class T>
  std::span<T> mutable_grad() {
    return node_->grad_buf<T>();
  }

  // Reverse-mode sweep from this scalar. May run once per recorded graph.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  void require_defined() const;
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

template <class F>
decltype(auto) visit_dtype(DType dtype, F&& f) {
  if (dtype == DType::kFloat32) return f(float{});
  return f(double{});
}

// Builds an op result, attaching the backward rule when any input is tracked.
template <class T>
Tensor make_result(const char* op, Shape shape, std::vector<T>&& values,
                   std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  if (grad_enabled()) {
    bool tracked = false;
    for (const auto& in : inputs) tracked = tracked || in.requires_grad();
    if (tracked) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) node->inputs.push_back(in.node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

// Whether input i of an interior node needs a gradient.
inline bool wants_grad(const Node& self, std::size_t i) {
  return i < self.inputs.size() && self.inputs[i]->requires_grad;
}

}  // namespace detail
}  // namespace vslnet
