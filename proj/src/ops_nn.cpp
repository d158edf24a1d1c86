#include <algorithm>
#include <cmath>
#include <limits>

#include "eigen_util.hpp"
#include "vslnet/ops.hpp"

namespace vslnet {

using detail::cmat;
using detail::mat;
using detail::Node;
using detail::wants_grad;

namespace {

// Strided description of the independent slices normalized by a softmax.
struct SliceLayout {
  std::size_t count;
  std::size_t length;
  std::size_t outer_stride;  // distance between slice starts
  std::size_t inner_stride;  // distance between elements within a slice
};

SliceLayout slice_layout(const Shape& shape, int axis, const char* op) {
  if (shape.size() == 1) {
    if (axis != -1 && axis != 0) throw ShapeError(std::string(op) + ": bad axis for a vector");
    return {1, shape[0], 0, 1};
  }
  if (shape.size() == 2) {
    const std::size_t r = shape[0], c = shape[1];
    if (axis == -1 || axis == 1) return {r, c, c, 1};
    if (axis == 0) return {c, r, 1, c};
    throw ShapeError(std::string(op) + ": axis must be -1, 0 or 1");
  }
  throw ShapeError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(shape));
}

template <class T>
void check_mask(const std::vector<T>& m, const SliceLayout& L, const char* op) {
  for (std::size_t s = 0; s < L.count; ++s) {
    bool any = false;
    for (std::size_t k = 0; k < L.length && !any; ++k) {
      any = m[s * L.outer_stride + k * L.inner_stride] != T(0);
    }
    if (!any) {
      throw ShapeError(std::string(op) + ": degenerate mask, slice " + std::to_string(s) +
                       " has no valid position");
    }
  }
}

template <class T>
std::vector<T> softmax_values(const std::vector<T>& x, const std::vector<T>& m,
                              const SliceLayout& L) {
  std::vector<T> out(x.size(), T(0));
  for (std::size_t s = 0; s < L.count; ++s) {
    const std::size_t base = s * L.outer_stride;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < L.length; ++k) {
      const std::size_t i = base + k * L.inner_stride;
      if (m[i] != T(0)) mx = std::max(mx, x[i]);
    }
    T z = 0;
    for (std::size_t k = 0; k < L.length; ++k) {
      const std::size_t i = base + k * L.inner_stride;
      if (m[i] != T(0)) {
        out[i] = std::exp(x[i] - mx);
        z += out[i];
      }
    }
    for (std::size_t k = 0; k < L.length; ++k) out[base + k * L.inner_stride] /= z;
  }
  return out;
}

}  // namespace

Tensor masked_softmax(const Tensor& logits, const Tensor& mask, int axis) {
  if (logits.shape() != mask.shape()) {
    throw ShapeError("masked_softmax: mask " + shape_str(mask.shape()) + " vs logits " +
                     shape_str(logits.shape()));
  }
  const auto L = slice_layout(logits.shape(), axis, "masked_softmax");
  return detail::visit_dtype(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto m = mask.to(logits.dtype()).node()->vals<T>();
    check_mask(m, L, "masked_softmax");
    auto out = softmax_values(logits.node()->vals<T>(), m, L);
    return detail::make_result<T>("masked_softmax", logits.shape(), std::move(out), {logits},
                                  [L](Node& self) {
                                    const auto& g = self.grad_buf<T>();
                                    const auto& y = self.vals<T>();
                                    auto& gx = self.inputs[0]->grad_buf<T>();
                                    for (std::size_t s = 0; s < L.count; ++s) {
                                      const std::size_t base = s * L.outer_stride;
                                      T dot = 0;
                                      for (std::size_t k = 0; k < L.length; ++k) {
                                        const std::size_t i = base + k * L.inner_stride;
                                        dot += g[i] * y[i];
                                      }
                                      for (std::size_t k = 0; k < L.length; ++k) {
                                        const std::size_t i = base + k * L.inner_stride;
                                        gx[i] += y[i] * (g[i] - dot);
                                      }
                                    }
                                  });
  });
}

// Masked positions hold 0 in the output and receive no gradient.
Tensor masked_log_softmax(const Tensor& logits, const Tensor& mask, int axis) {
  if (logits.shape() != mask.shape()) {
    throw ShapeError("masked_log_softmax: mask " + shape_str(mask.shape()) + " vs logits " +
                     shape_str(logits.shape()));
  }
  const auto L = slice_layout(logits.shape(), axis, "masked_log_softmax");
  return detail::visit_dtype(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto m = mask.to(logits.dtype()).node()->vals<T>();
    check_mask(m, L, "masked_log_softmax");
    const auto& x = logits.node()->vals<T>();
    std::vector<T> out(x.size(), T(0));
    for (std::size_t s = 0; s < L.count; ++s) {
      const std::size_t base = s * L.outer_stride;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < L.length; ++k) {
        const std::size_t i = base + k * L.inner_stride;
        if (m[i] != T(0)) mx = std::max(mx, x[i]);
      }
      T z = 0;
      for (std::size_t k = 0; k < L.length; ++k) {
        const std::size_t i = base + k * L.inner_stride;
        if (m[i] != T(0)) z += std::exp(x[i] - mx);
      }
      const T lse = mx + std::log(z);
      for (std::size_t k = 0; k < L.length; ++k) {
        const std::size_t i = base + k * L.inner_stride;
        if (m[i] != T(0)) out[i] = x[i] - lse;
      }
    }
    return detail::make_result<T>(
        "masked_log_softmax", logits.shape(), std::move(out), {logits},
        [L, m = std::move(m)](Node& self) {
          const auto& g = self.grad_buf<T>();
          const auto& y = self.vals<T>();
          auto& gx = self.inputs[0]->grad_buf<T>();
          for (std::size_t s = 0; s < L.count; ++s) {
            const std::size_t base = s * L.outer_stride;
            T gsum = 0;
            for (std::size_t k = 0; k < L.length; ++k) {
              const std::size_t i = base + k * L.inner_stride;
              if (m[i] != T(0)) gsum += g[i];
            }
            for (std::size_t k = 0; k < L.length; ++k) {
              const std::size_t i = base + k * L.inner_stride;
              if (m[i] != T(0)) gx[i] += g[i] - std::exp(y[i]) * gsum;
            }
          }
        });
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto [rows, d] = detail::as_matrix(x.shape());
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " for input " + shape_str(x.shape()));
  }
  detail::require_same_dtype(x, gain, "layer_norm");
  detail::require_same_dtype(x, bias, "layer_norm");
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& xv = x.node()->vals<T>();
    const auto& gv = gain.node()->vals<T>();
    const auto& bv = bias.node()->vals<T>();
    std::vector<T> xhat(xv.size()), inv_std(rows), out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = xv.data() + r * d;
      T mu = 0;
      for (std::size_t j = 0; j < d; ++j) mu += row[j];
      mu /= static_cast<T>(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<T>(d);
      inv_std[r] = T(1) / std::sqrt(var + static_cast<T>(eps));
      for (std::size_t j = 0; j < d; ++j) {
        xhat[r * d + j] = (row[j] - mu) * inv_std[r];
        out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
      }
    }
    return detail::make_result<T>(
        "layer_norm", x.shape(), std::move(out), {x, gain, bias},
        [rows = rows, d = d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
          const auto& g = self.grad_buf<T>();
          const auto& gv = self.inputs[1]->vals<T>();
          if (wants_grad(self, 0)) {
            auto& gx = self.inputs[0]->grad_buf<T>();
            for (std::size_t r = 0; r < rows; ++r) {
              T mean_dxhat = 0, mean_dxhat_xhat = 0;
              for (std::size_t j = 0; j < d; ++j) {
                const T dxh = g[r * d + j] * gv[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xhat[r * d + j];
              }
              mean_dxhat /= static_cast<T>(d);
              mean_dxhat_xhat /= static_cast<T>(d);
              for (std::size_t j = 0; j < d; ++j) {
                const T dxh = g[r * d + j] * gv[j];
                gx[r * d + j] +=
                    inv_std[r] * (dxh - mean_dxhat - xhat[r * d + j] * mean_dxhat_xhat);
              }
            }
          }
          if (wants_grad(self, 1)) {
            auto& gg = self.inputs[1]->grad_buf<T>();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
          }
          if (wants_grad(self, 2)) {
            auto& gb = self.inputs[2]->grad_buf<T>();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
          }
        });
  });
}

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  detail::require_rank(x, 2, "conv1d");
  detail::require_rank(kernels, 3, "conv1d");
  detail::require_same_dtype(x, kernels, "conv1d");
  detail::require_same_dtype(x, bias, "conv1d");
  const std::size_t n = x.dim(0), din = x.dim(1);
  const std::size_t w = kernels.dim(0), dout = kernels.dim(2);
  if (w % 2 == 0) {
    throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(w));
  }
  if (kernels.dim(1) != din || bias.numel() != dout) {
    throw ShapeError("conv1d: input " + shape_str(x.shape()) + ", kernels " +
                     shape_str(kernels.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(w / 2);
  // Output rows [t0, t0 + len) read input rows shifted by k - half.
  auto tap_range = [n, half](std::size_t k) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - half;
    const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n),
                                                       static_cast<std::ptrdiff_t>(n) - shift);
    return std::tuple{t0, t1 - t0, shift};
  };
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& xv = x.node()->vals<T>();
    const auto& kv = kernels.node()->vals<T>();
    std::vector<T> out(n * dout);
    auto o = mat(out, n, dout);
    o.rowwise() = cmat(bias.node()->vals<T>(), 1, dout).row(0);
    for (std::size_t k = 0; k < w; ++k) {
      auto [t0, len, shift] = tap_range(k);
      if (len <= 0) continue;
      o.middleRows(t0, len).noalias() +=
          cmat(xv, n, din).middleRows(t0 + shift, len) * cmat(kv.data() + k * din * dout, din, dout);
    }
    return detail::make_result<T>(
        "conv1d", {n, dout}, std::move(out), {x, kernels, bias},
        [n, din, dout, w, tap_range](Node& self) {
          const auto g = cmat(self.grad_buf<T>(), n, dout);
          const auto& xv = self.inputs[0]->vals<T>();
          const auto& kv = self.inputs[1]->vals<T>();
          for (std::size_t k = 0; k < w; ++k) {
            auto [t0, len, shift] = tap_range(k);
            if (len <= 0) continue;
            if (wants_grad(self, 0)) {
              mat(self.inputs[0]->grad_buf<T>(), n, din).middleRows(t0 + shift, len).noalias() +=
                  g.middleRows(t0, len) * cmat(kv.data() + k * din * dout, din, dout).transpose();
            }
            if (wants_grad(self, 1)) {
              mat(self.inputs[1]->grad_buf<T>().data() + k * din * dout, din, dout).noalias() +=
                  cmat(xv, n, din).middleRows(t0 + shift, len).transpose() * g.middleRows(t0, len);
            }
          }
          if (wants_grad(self, 2)) {
            mat(self.inputs[2]->grad_buf<T>(), 1, dout) += g.colwise().sum();
          }
        });
  });
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T scale_kept = static_cast<T>(1.0 / (1.0 - rate));
    const auto& xv = x.node()->vals<T>();
    std::vector<T> factor(xv.size()), out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      factor[i] = keep(rng) ? scale_kept : T(0);
      out[i] = xv[i] * factor[i];
    }
    return detail::make_result<T>("dropout", x.shape(), std::move(out), {x},
                                  [factor = std::move(factor)](Node& self) {
                                    const auto& g = self.grad_buf<T>();
                                    auto& gx = self.inputs[0]->grad_buf<T>();
                                    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor[i];
                                  });
  });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets, const Tensor& mask) {
  if (logits.numel() != targets.numel() || logits.numel() != mask.numel()) {
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) + ", targets " +
                     shape_str(targets.shape()) + ", mask " + shape_str(mask.shape()));
  }
  return detail::visit_dtype(logits.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& z = logits.node()->vals<T>();
    auto y = targets.to(logits.dtype()).node()->vals<T>();
    auto m = mask.to(logits.dtype()).node()->vals<T>();
    T count = 0, total = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (m[i] == T(0)) continue;
      count += 1;
      total += std::max(z[i], T(0)) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
    }
    if (count == 0) throw ShapeError("bce_with_logits: mask selects no position");
    return detail::make_result<T>(
        "bce_with_logits", {1}, std::vector<T>{total / count}, {logits},
        [y = std::move(y), m = std::move(m), count](Node& self) {
          const T g = self.grad_buf<T>()[0];
          const auto& z = self.inputs[0]->vals<T>();
          auto& gz = self.inputs[0]->grad_buf<T>();
          for (std::size_t i = 0; i < z.size(); ++i) {
            if (m[i] == T(0)) continue;
            const T s = z[i] >= 0 ? T(1) / (T(1) + std::exp(-z[i]))
                                  : std::exp(z[i]) / (T(1) + std::exp(z[i]));
            gz[i] += g * (s - y[i]) / count;
          }
        });
  });
}

Tensor normalize_by_max(const Tensor& scores, double eps) {
  return detail::visit_dtype(scores.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& s = scores.node()->vals<T>();
    const auto arg = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    const bool guarded = s[arg] < static_cast<T>(eps);
    const T denom = guarded ? static_cast<T>(eps) : s[arg];
    std::vector<T> out(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] / denom;
    return detail::make_result<T>(
        "normalize_by_max", scores.shape(), std::move(out), {scores},
        [arg, guarded, denom](Node& self) {
          const auto& g = self.grad_buf<T>();
          const auto& s = self.inputs[0]->vals<T>();
          auto& gs = self.inputs[0]->grad_buf<T>();
          T cross = 0;
          for (std::size_t i = 0; i < s.size(); ++i) {
            gs[i] += g[i] / denom;
            cross += g[i] * s[i];
          }
          if (!guarded) gs[arg] -= cross / (denom * denom);
        });
  });
}

Tensor lstm_sequence(const Tensor& x, const Tensor& w_input, const Tensor& w_hidden,
                     const Tensor& bias) {
  detail::require_rank(x, 2, "lstm_sequence");
  detail::require_rank(w_input, 2, "lstm_sequence");
  detail::require_rank(w_hidden, 2, "lstm_sequence");
  const std::size_t n = x.dim(0), din = x.dim(1), d = w_hidden.dim(0);
  if (w_input.dim(0) != din || w_input.dim(1) != 4 * d || w_hidden.dim(1) != 4 * d ||
      bias.numel() != 4 * d) {
    throw ShapeError("lstm_sequence: input " + shape_str(x.shape()) + ", w_input " +
                     shape_str(w_input.shape()) + ", w_hidden " + shape_str(w_hidden.shape()) +
                     ", bias " + shape_str(bias.shape()));
  }
  detail::require_same_dtype(x, w_input, "lstm_sequence");
  detail::require_same_dtype(x, w_hidden, "lstm_sequence");
  detail::require_same_dtype(x, bias, "lstm_sequence");
  return detail::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    using Vec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
    auto sigm = [](T v) {
      if (v >= 0) return T(1) / (T(1) + std::exp(-v));
      const T e = std::exp(v);
      return e / (T(1) + e);
    };
    std::vector<T> gates(n * 4 * d);  // activated i, f, g, o
    std::vector<T> cells(n * d), hidden(n * d);
    auto G = mat(gates, n, 4 * d);
    G.noalias() = cmat(x.node()->vals<T>(), n, din) * cmat(w_input.node()->vals<T>(), din, 4 * d);
    G.rowwise() += cmat(bias.node()->vals<T>(), 1, 4 * d).row(0);
    const auto Whh = cmat(w_hidden.node()->vals<T>(), d, 4 * d);
    Vec h = Vec::Zero(d), c = Vec::Zero(d), z(4 * d);
    for (std::size_t t = 0; t < n; ++t) {
      z = G.row(t) + h * Whh;
      for (std::size_t j = 0; j < d; ++j) {
        const T i_g = sigm(z[j]);
        const T f_g = sigm(z[d + j]);
        const T g_g = std::tanh(z[2 * d + j]);
        const T o_g = sigm(z[3 * d + j]);
        c[j] = f_g * c[j] + i_g * g_g;
        h[j] = o_g * std::tanh(c[j]);
        G(t, j) = i_g;
        G(t, d + j) = f_g;
        G(t, 2 * d + j) = g_g;
        G(t, 3 * d + j) = o_g;
      }
      mat(cells, n, d).row(t) = c;
      mat(hidden, n, d).row(t) = h;
    }
    std::vector<T> out = hidden;
    return detail::make_result<T>(
        "lstm_sequence", {n, d}, std::move(out), {x, w_input, w_hidden, bias},
        [n, din, d, gates = std::move(gates), cells = std::move(cells)](Node& self) {
          const auto dH = cmat(self.grad_buf<T>(), n, d);
          const auto G = cmat(gates, n, 4 * d);
          const auto C = cmat(cells, n, d);
          const auto H = cmat(self.vals<T>(), n, d);
          const auto Whh = cmat(self.inputs[2]->vals<T>(), d, 4 * d);
          std::vector<T> dz_store(n * 4 * d);
          auto dZ = mat(dz_store, n, 4 * d);
          Vec dh_next = Vec::Zero(d), dc_next = Vec::Zero(d);
          for (std::size_t step = n; step-- > 0;) {
            for (std::size_t j = 0; j < d; ++j) {
              const T i_g = G(step, j), f_g = G(step, d + j), g_g = G(step, 2 * d + j),
                      o_g = G(step, 3 * d + j);
              const T tc = std::tanh(C(step, j));
              const T dh = dH(step, j) + dh_next[j];
              const T d_o = dh * tc;
              const T dc = dc_next[j] + dh * o_g * (T(1) - tc * tc);
              const T c_prev = step > 0 ? C(step - 1, j) : T(0);
              dc_next[j] = dc * f_g;
              dZ(step, j) = dc * g_g * i_g * (T(1) - i_g);
              dZ(step, d + j) = dc * c_prev * f_g * (T(1) - f_g);
              dZ(step, 2 * d + j) = dc * i_g * (T(1) - g_g * g_g);
              dZ(step, 3 * d + j) = d_o * o_g * (T(1) - o_g);
            }
            dh_next = dZ.row(step) * Whh.transpose();
          }
          if (wants_grad(self, 0)) {
            mat(self.inputs[0]->grad_buf<T>(), n, din).noalias() +=
                dZ * cmat(self.inputs[1]->vals<T>(), din, 4 * d).transpose();
          }
          if (wants_grad(self, 1)) {
            mat(self.inputs[1]->grad_buf<T>(), din, 4 * d).noalias() +=
                cmat(self.inputs[0]->vals<T>(), n, din).transpose() * dZ;
          }
          if (wants_grad(self, 2) && n > 1) {
            mat(self.inputs[2]->grad_buf<T>(), d, 4 * d).noalias() +=
                H.topRows(n - 1).transpose() * dZ.bottomRows(n - 1);
          }
          if (wants_grad(self, 3)) {
            mat(self.inputs[3]->grad_buf<T>(), 1, 4 * d) += dZ.colwise().sum();
          }
        });
  });
}

}  // namespace vslnet
