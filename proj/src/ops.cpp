#include <algorithm>
#include <cmath>

#include "eigen_util.hpp"
#include "vslnet/ops.hpp"

namespace vslnet {

using detail::cmat;
using detail::mat;
using detail::Node;
using detail::wants_grad;

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  detail::require_same_dtype(a, b, "matmul");
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  return detail::visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> out(p * r);
    mat(out, p, r).noalias() = cmat(a.node()->vals<T>(), p, q) * cmat(b.node()->vals<T>(), q, r);
    return detail::make_result<T>("matmul", {p, r}, std::move(out), {a, b}, [p, q, r](Node& self) {
      const auto g = cmat(self.grad_buf<T>(), p, r);
      const auto& A = *self.inputs[0];
      const auto& B = *self.inputs[1];
      if (wants_grad(self, 0)) {
        mat(self.inputs[0]->grad_buf<T>(), p, q).noalias() += g * cmat(B.vals<T>(), q, r).transpose();
      }
      if (wants_grad(self, 1)) {
        mat(self.inputs[1]->grad_buf<T>(), q, r).noalias() += cmat(A.vals<T>(), p, q).transpose() * g;
      }
    });
  });
}

Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  return detail::visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> out(r * c);
    mat(out, c, r) = cmat(a.node()->vals<T>(), r, c).transpose();
    return detail::make_result<T>("transpose", {c, r}, std::move(out), {a}, [r, c](Node& self) {
      mat(self.inputs[0]->grad_buf<T>(), r, c) += cmat(self.grad_buf<T>(), c, r).transpose();
    });
  });
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  detail::require_same_dtype(a, b, op);
}

// Elementwise binary op with per-element partials.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  require_same_shape(a, b, op);
  return detail::visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& x = a.node()->vals<T>();
    const auto& y = b.node()->vals<T>();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
    return detail::make_result<T>(op, a.shape(), std::move(out), {a, b}, [da, db](Node& self) {
      const auto& g = self.grad_buf<T>();
      const auto& x = self.inputs[0]->vals<T>();
      const auto& y = self.inputs[1]->vals<T>();
      if (wants_grad(self, 0)) {
        auto& gx = self.inputs[0]->grad_buf<T>();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * da(x[i], y[i]);
      }
      if (wants_grad(self, 1)) {
        auto& gy = self.inputs[1]->grad_buf<T>();
        for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * db(x[i], y[i]);
      }
    });
  });
}

// Elementwise unary op; the derivative sees the input and the output.
template <class F, class D>
Tensor unary(const char* op, const Tensor& a, F f, D d) {
  return detail::visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& x = a.node()->vals<T>();
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    return detail::make_result<T>(op, a.shape(), std::move(out), {a}, [d](Node& self) {
      const auto& g = self.grad_buf<T>();
      const auto& x = self.inputs[0]->vals<T>();
      const auto& y = self.vals<T>();
      auto& gx = self.inputs[0]->grad_buf<T>();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(x[i], y[i]);
    });
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](auto x, auto y) { return x + y; },
      [](auto x, auto) { return decltype(x)(1); }, [](auto x, auto) { return decltype(x)(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](auto x, auto y) { return x - y; },
      [](auto x, auto) { return decltype(x)(1); }, [](auto x, auto) { return decltype(x)(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](auto x, auto y) { return x * y; }, [](auto, auto y) { return y; },
      [](auto x, auto) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](auto x) { return static_cast<decltype(x)>(x * factor); },
      [factor](auto x, auto) { return static_cast<decltype(x)>(factor); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](auto v) { return v > 0 ? v : decltype(v)(0); },
      [](auto v, auto) { return v > 0 ? decltype(v)(1) : decltype(v)(0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](auto v) {
        using T = decltype(v);
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](auto, auto y) { return y * (decltype(y)(1) - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](auto v) { return std::tanh(v); },
      [](auto, auto y) { return decltype(y)(1) - y * y; });
}

Tensor add_row_vector(const Tensor& x, const Tensor& row) {
  detail::require_rank(x, 2, "add_row_vector");
  detail::require_same_dtype(x, row, "add_row_vector");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (row.numel() != d) {
    throw ShapeError("add_row_vector: " + shape_str(x.shape()) + " + " + shape_str(row.shape()));
  }
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> out(n * d);
    mat(out, n, d) = cmat(x.node()->vals<T>(), n, d).rowwise() +
                     cmat(row.node()->vals<T>(), 1, d).row(0);
    return detail::make_result<T>("add_row_vector", x.shape(), std::move(out), {x, row},
                                  [n, d](Node& self) {
                                    const auto g = cmat(self.grad_buf<T>(), n, d);
                                    if (wants_grad(self, 0)) mat(self.inputs[0]->grad_buf<T>(), n, d) += g;
                                    if (wants_grad(self, 1)) {
                                      mat(self.inputs[1]->grad_buf<T>(), 1, d) += g.colwise().sum();
                                    }
                                  });
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& weights) {
  detail::require_rank(x, 2, "scale_rows");
  detail::require_same_dtype(x, weights, "scale_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (weights.numel() != n) {
    throw ShapeError("scale_rows: " + shape_str(x.shape()) + " by " + shape_str(weights.shape()));
  }
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& xv = x.node()->vals<T>();
    const auto& w = weights.node()->vals<T>();
    std::vector<T> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] * w[i];
    return detail::make_result<T>("scale_rows", x.shape(), std::move(out), {x, weights},
                                  [n, d](Node& self) {
                                    const auto& g = self.grad_buf<T>();
                                    const auto& xv = self.inputs[0]->vals<T>();
                                    const auto& w = self.inputs[1]->vals<T>();
                                    if (wants_grad(self, 0)) {
                                      auto& gx = self.inputs[0]->grad_buf<T>();
                                      for (std::size_t i = 0; i < n; ++i)
                                        for (std::size_t j = 0; j < d; ++j)
                                          gx[i * d + j] += g[i * d + j] * w[i];
                                    }
                                    if (wants_grad(self, 1)) {
                                      auto& gw = self.inputs[1]->grad_buf<T>();
                                      for (std::size_t i = 0; i < n; ++i) {
                                        T acc = 0;
                                        for (std::size_t j = 0; j < d; ++j)
                                          acc += g[i * d + j] * xv[i * d + j];
                                        gw[i] += acc;
                                      }
                                    }
                                  });
  });
}

Tensor mul_scalar(const Tensor& x, const Tensor& factor) {
  if (factor.numel() != 1) throw ShapeError("mul_scalar: factor must have one element");
  detail::require_same_dtype(x, factor, "mul_scalar");
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& xv = x.node()->vals<T>();
    const T s = factor.node()->vals<T>()[0];
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * s;
    return detail::make_result<T>("mul_scalar", x.shape(), std::move(out), {x, factor},
                                  [](Node& self) {
                                    const auto& g = self.grad_buf<T>();
                                    const auto& xv = self.inputs[0]->vals<T>();
                                    const T s = self.inputs[1]->vals<T>()[0];
                                    if (wants_grad(self, 0)) {
                                      auto& gx = self.inputs[0]->grad_buf<T>();
                                      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
                                    }
                                    if (wants_grad(self, 1)) {
                                      T acc = 0;
                                      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
                                      self.inputs[1]->grad_buf<T>()[0] += acc;
                                    }
                                  });
  });
}

Tensor repeat_rows(const Tensor& v, std::size_t n) {
  const std::size_t d = v.numel();
  if (!(v.rank() == 1 || (v.rank() == 2 && v.dim(0) == 1))) {
    throw ShapeError("repeat_rows: expected a vector, got " + shape_str(v.shape()));
  }
  if (n == 0) throw ShapeError("repeat_rows: n must be positive");
  return detail::visit_dtype(v.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& src = v.node()->vals<T>();
    std::vector<T> out(n * d);
    for (std::size_t i = 0; i < n; ++i) std::copy(src.begin(), src.end(), out.begin() + i * d);
    return detail::make_result<T>("repeat_rows", {n, d}, std::move(out), {v}, [n, d](Node& self) {
      const auto& g = self.grad_buf<T>();
      auto& gv = self.inputs[0]->grad_buf<T>();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gv[j] += g[i * d + j];
    });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> out = x.node()->vals<T>();
    return detail::make_result<T>("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
      const auto& g = self.grad_buf<T>();
      auto& gx = self.inputs[0]->grad_buf<T>();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_rows");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (begin >= end || end > n) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_str(x.shape()));
  }
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& src = x.node()->vals<T>();
    std::vector<T> out(src.begin() + begin * d, src.begin() + end * d);
    return detail::make_result<T>("slice_rows", {end - begin, d}, std::move(out), {x},
                                  [begin, d](Node& self) {
                                    const auto& g = self.grad_buf<T>();
                                    auto& gx = self.inputs[0]->grad_buf<T>();
                                    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * d + i] += g[i];
                                  });
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_cols");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (begin >= end || end > d) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> out(n * w);
    mat(out, n, w) = cmat(x.node()->vals<T>(), n, d).middleCols(begin, w);
    return detail::make_result<T>("slice_cols", {n, w}, std::move(out), {x},
                                  [n, d, begin, w](Node& self) {
                                    mat(self.inputs[0]->grad_buf<T>(), n, d).middleCols(begin, w) +=
                                        cmat(self.grad_buf<T>(), n, w);
                                  });
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = parts[0].dim(1);
  std::size_t n = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_rows");
    detail::require_same_dtype(p, parts[0], "concat_rows");
    if (p.dim(1) != d) {
      throw ShapeError("concat_rows: column counts differ, " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    }
    offsets.push_back(n);
    n += p.dim(0);
  }
  return detail::visit_dtype(parts[0].dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> out;
    out.reserve(n * d);
    for (const auto& p : parts) {
      const auto& v = p.node()->vals<T>();
      out.insert(out.end(), v.begin(), v.end());
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return detail::make_result<T>("concat_rows", {n, d}, std::move(out), std::move(inputs),
                                  [offsets, d](Node& self) {
                                    const auto& g = self.grad_buf<T>();
                                    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                      if (!wants_grad(self, k)) continue;
                                      auto& gp = self.inputs[k]->grad_buf<T>();
                                      const std::size_t base = offsets[k] * d;
                                      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[base + i];
                                    }
                                  });
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts[0].dim(0);
  std::size_t d = 0;
  std::vector<std::size_t> offsets, widths;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    detail::require_same_dtype(p, parts[0], "concat_cols");
    if (p.dim(0) != n) {
      throw ShapeError("concat_cols: row counts differ, " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    offsets.push_back(d);
    widths.push_back(p.dim(1));
    d += p.dim(1);
  }
  return detail::visit_dtype(parts[0].dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> out(n * d);
    auto o = mat(out, n, d);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      o.middleCols(offsets[k], widths[k]) = cmat(parts[k].node()->vals<T>(), n, widths[k]);
    }
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    return detail::make_result<T>("concat_cols", {n, d}, std::move(out), std::move(inputs),
                                  [offsets, widths, n, d](Node& self) {
                                    const auto g = cmat(self.grad_buf<T>(), n, d);
                                    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                      if (!wants_grad(self, k)) continue;
                                      mat(self.inputs[k]->grad_buf<T>(), n, widths[k]) +=
                                          g.middleCols(offsets[k], widths[k]);
                                    }
                                  });
  });
}

Tensor sum(const Tensor& x) {
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& v = x.node()->vals<T>();
    T acc = 0;
    for (T e : v) acc += e;
    return detail::make_result<T>("sum", {1}, std::vector<T>{acc}, {x}, [](Node& self) {
      const T g = self.grad_buf<T>()[0];
      for (auto& e : self.inputs[0]->grad_buf<T>()) e += g;
    });
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor element(const Tensor& x, std::size_t flat) {
  if (flat >= x.numel()) {
    throw ShapeError("element: index " + std::to_string(flat) + " out of range for " +
                     shape_str(x.shape()));
  }
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    return detail::make_result<T>("element", {1}, std::vector<T>{x.node()->vals<T>()[flat]}, {x},
                                  [flat](Node& self) {
                                    self.inputs[0]->grad_buf<T>()[flat] += self.grad_buf<T>()[0];
                                  });
  });
}

Tensor mask_tensor(std::span<const std::uint8_t> mask, DType dtype) {
  std::vector<double> v(mask.begin(), mask.end());
  for (auto& e : v) e = e != 0 ? 1.0 : 0.0;
  return Tensor::from_values({v.size()}, v, dtype);
}

Tensor mask_rows(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (std::all_of(mask.begin(), mask.end(), [](auto m) { return m != 0; }) &&
      mask.size() == x.dim(0)) {
    return x;
  }
  return scale_rows(x, mask_tensor(mask, x.dtype()));
}

}  // namespace vslnet
