#include "vslnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace vslnet {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string_view dtype_name(DType dtype) {
  return dtype == DType::kFloat32 ? "f32" : "f64";
}

DType parse_dtype(std::string_view name) {
  if (name == "f32" || name == "float32") return DType::kFloat32;
  if (name == "f64" || name == "float64") return DType::kFloat64;
  throw ConfigError("unknown dtype '" + std::string(name) + "' (expected f32 or f64)");
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

void check_shape(const Shape& shape) {
  for (auto s : shape) {
    if (s == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  check_shape(shape);
  auto node = std::make_shared<detail::Node>();
  const auto n = shape_numel(shape);
  node->shape = std::move(shape);
  if (dtype == DType::kFloat32) {
    node->values = std::vector<float>(n, static_cast<float>(value));
  } else {
    node->values = std::vector<double>(n, value);
  }
  return Tensor(std::move(node));
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  Tensor t = zeros(std::move(shape), dtype);
  t.assign(values);
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()),
                     dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

void Tensor::require_defined() const {
  if (!node_) throw ContractError("operation on an undefined tensor");
}

const Shape& Tensor::shape() const {
  require_defined();
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const {
  require_defined();
  return node_->dtype();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  require_defined();
  if (!is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return node_ && !node_->backward; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() needs a one-element tensor, got " + shape_str(shape()));
  return at(0);
}

double Tensor::at(std::size_t flat) const {
  require_defined();
  return std::visit([flat](const auto& v) { return static_cast<double>(v.at(flat)); },
                    node_->values);
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at(row, col) needs a matrix, got " + shape_str(shape()));
  if (row >= dim(0) || col >= dim(1)) throw ShapeError("index out of range");
  return at(row * dim(1) + col);
}

std::vector<double> Tensor::values() const {
  require_defined();
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                    node_->values);
}

void Tensor::set(std::size_t flat, double value) {
  require_defined();
  std::visit(
      [&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        v.at(flat) = static_cast<T>(value);
      },
      node_->values);
}

void Tensor::assign(std::span<const double> values) {
  require_defined();
  if (values.size() != numel()) throw ShapeError("assign: value count does not match shape");
  std::visit(
      [&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::transform(values.begin(), values.end(), v.begin(),
                       [](double x) { return static_cast<T>(x); });
      },
      node_->values);
}

bool Tensor::has_grad() const { return node_ && node_->grad.has_value(); }

std::vector<double> Tensor::grad() const {
  require_defined();
  if (!node_->grad) return std::vector<double>(numel(), 0.0);
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); },
                    *node_->grad);
}

double Tensor::grad_at(std::size_t flat) const {
  require_defined();
  if (!node_->grad) return 0.0;
  return std::visit([flat](const auto& v) { return static_cast<double>(v.at(flat)); },
                    *node_->grad);
}

void Tensor::zero_grad() {
  require_defined();
  detail::visit_dtype(dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto& g = node_->grad_buf<T>();
    std::fill(g.begin(), g.end(), T(0));
  });
}

void Tensor::clear_grad() {
  require_defined();
  node_->grad.reset();
}

void Tensor::backward() const {
  require_defined();
  if (numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  }
  if (node_->released) {
    throw ContractError("backward() already ran on this graph; re-run the forward pass");
  }
  if (!node_->requires_grad) {
    throw ContractError("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS gives a topological order of interior nodes.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->released) {
        throw ContractError("backward() reached a node whose graph was already released");
      }
      if (child->backward && child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  detail::visit_dtype(dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto& g = node_->grad_buf<T>();
    g[0] += T(1);
  });

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && node->grad) node->backward(*node);
  }

  for (detail::Node* node : order) {
    if (!node->backward) continue;
    node->grad.reset();
    node->backward = nullptr;
    node->inputs.clear();
    node->released = true;
  }
}

Tensor Tensor::detach() const {
  require_defined();
  auto node = std::make_shared<detail::Node>();
  node->shape = node_->shape;
  node->values = node_->values;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.node_->requires_grad = node_->requires_grad && is_leaf();
  return t;
}

Tensor Tensor::to(DType target) const {
  if (dtype() == target) return detach();
  auto v = values();
  return from_values(shape(), v, target);
}

}  // namespace vslnet
