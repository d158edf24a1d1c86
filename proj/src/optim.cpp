#include "vslnet/optim.hpp"

#include <algorithm>
#include <cmath>

namespace vslnet {

AdamState AdamState::create(const ParamStore& params, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto& [_, p] : params.entries()) {
    s.first_moment.push_back(Tensor::zeros(p.shape(), p.dtype()));
    s.second_moment.push_back(Tensor::zeros(p.shape(), p.dtype()));
  }
  return s;
}

double scheduled_learning_rate(const AdamConfig& config, std::size_t completed_steps) {
  if (config.total_steps == 0) return config.learning_rate;
  const double frac =
      static_cast<double>(completed_steps) / static_cast<double>(config.total_steps);
  return config.learning_rate * std::max(0.0, 1.0 - frac);
}

double global_grad_norm(std::span<const Tensor> tensors) {
  double sq = 0.0;
  for (const auto& t : tensors) {
    if (!t.has_grad()) continue;
    for (double g : t.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double global_grad_norm(const ParamStore& params) {
  std::vector<Tensor> ts;
  for (const auto& [_, t] : params.entries()) ts.push_back(t);
  return global_grad_norm(ts);
}

double clip_global_norm(std::span<Tensor> tensors, double max_norm) {
  const double norm = global_grad_norm(tensors);
  if (norm <= max_norm || norm == 0.0) return norm;
  const double factor = max_norm / norm;
  for (auto& t : tensors) {
    if (!t.has_grad()) continue;
    detail::visit_dtype(t.dtype(), [&](auto tag) {
      using T = decltype(tag);
      for (auto& g : t.mutable_grad<T>()) g = static_cast<T>(g * factor);
    });
  }
  return norm;
}

double clip_global_norm(ParamStore& params, double max_norm) {
  std::vector<Tensor> ts;
  for (auto& [_, t] : params.entries()) ts.push_back(t);
  return clip_global_norm(std::span<Tensor>(ts), max_norm);
}

AdamStepInfo adam_step(AdamState& state, ParamStore& params) {
  auto& entries = params.entries();
  if (state.first_moment.size() != entries.size()) {
    throw ContractError("adam_step: optimizer state does not match the parameter set");
  }
  const auto& cfg = state.config;
  AdamStepInfo info;
  info.learning_rate = scheduled_learning_rate(cfg, state.step);
  info.schedule_exhausted = cfg.total_steps > 0 && state.step >= cfg.total_steps;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);

  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor& p = entries[k].second;
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    if (m.shape() != p.shape() || v.shape() != p.shape()) {
      throw ContractError("adam_step: moment shape mismatch at '" + entries[k].first + "'");
    }
    if (!p.has_grad()) continue;
    detail::visit_dtype(p.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto pv = p.mutable_data<T>();
      auto gv = p.mutable_grad<T>();
      auto mv = m.mutable_data<T>();
      auto vv = v.mutable_data<T>();
      const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
      for (std::size_t i = 0; i < pv.size(); ++i) {
        mv[i] = b1 * mv[i] + (T(1) - b1) * gv[i];
        vv[i] = b2 * vv[i] + (T(1) - b2) * gv[i] * gv[i];
        const double m_hat = static_cast<double>(mv[i]) / correction1;
        const double v_hat = static_cast<double>(vv[i]) / correction2;
        pv[i] = static_cast<T>(static_cast<double>(pv[i]) -
                               info.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
      }
    });
  }
  return info;
}

}  // namespace vslnet
