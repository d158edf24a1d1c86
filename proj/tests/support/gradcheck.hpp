#pragma once

// Central finite-difference gradient checks for 64-bit tapes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vslnet/ops.hpp"

namespace vslnet::testing {

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Gradients smaller than this are compared against it instead of their own
// magnitude: central differences of an O(1) loss cannot resolve them better
// than about 1e-10 absolute.
inline constexpr double kRelativeFloor = 1e-3;

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t checked = 0;
  std::string worst;

  bool ok(double tol = 1e-4) const { return checked > 0 && max_error <= tol; }
};

// Projects an arbitrary output to a scalar with fixed pseudo-random weights so
// every output element contributes a distinct amount.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<double> w(y.numel());
  for (auto& v : w) v = u(rng) * (rng() % 2 ? 1.0 : -1.0);
  return sum(mul(y, Tensor::from_values(y.shape(), w, y.dtype())));
}

// `loss` rebuilds the graph from the current leaf values and returns a scalar.
// `max_per_leaf` > 0 samples that many elements per leaf instead of all.
inline GradCheckResult gradcheck(const std::function<Tensor()>& loss, std::vector<Tensor> leaves,
                                 double step = 1e-5, std::size_t max_per_leaf = 0,
                                 std::uint64_t seed = 5) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.clear_grad();
  }
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) analytic.push_back(l.grad());

  GradCheckResult r;
  std::mt19937_64 rng(seed);
  NoGradGuard no_grad;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    std::vector<std::size_t> idx(leaf.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_leaf && idx.size() > max_per_leaf) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_leaf);
    }
    for (auto i : idx) {
      const double x = leaf.at(i);
      leaf.set(i, x + step);
      const double fp = loss().item();
      leaf.set(i, x - step);
      const double fm = loss().item();
      leaf.set(i, x);
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[li][i];
      const double mag = std::max({std::abs(a), std::abs(numeric), kRelativeFloor});
      const double err = std::abs(a - numeric) / mag;
      ++r.checked;
      if (err > r.max_error || !std::isfinite(err)) {
        r.max_error = std::isfinite(err) ? err : INFINITY;
        r.worst = "leaf " + std::to_string(li) + " element " + std::to_string(i) +
                  ": analytic " + fmt_g(a) + " numeric " + fmt_g(numeric);
      }
    }
  }
  return r;
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0,
                            DType dtype = DType::kFloat64) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = g(rng);
  return Tensor::from_values(std::move(shape), v, dtype);
}

}  // namespace vslnet::testing
