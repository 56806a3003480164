#include "metaiqa/optimizer.hpp"

#include <cmath>

namespace metaiqa {

void AdamOptions::validate() const {
  require(mu1 >= 0.0 && mu1 < 1.0, "adam mu1 must lie in [0, 1), got " + std::to_string(mu1));
  require(mu2 >= 0.0 && mu2 < 1.0, "adam mu2 must lie in [0, 1), got " + std::to_string(mu2));
  require(epsilon > 0.0, "adam epsilon must be positive");
}

AdamState adam_init(const ParamSet& params, const AdamOptions& options) {
  options.validate();
  AdamState s;
  s.options = options;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& e : params.entries()) {
    s.m.emplace_back(e.tensor.numel(), 0.0);
    s.v.emplace_back(e.tensor.numel(), 0.0);
    s.shapes.push_back(e.tensor.shape());
  }
  return s;
}

AdamState adam_init(const ParamSet& params, double mu1, double mu2, double epsilon) {
  return adam_init(params, AdamOptions{mu1, mu2, epsilon, false});
}

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<double> m, std::span<double> v,
                 const AdamOptions& o, double alpha, std::uint64_t step) {
  const double c1 = o.bias_correction ? 1.0 - std::pow(o.mu1, static_cast<double>(step)) : 1.0;
  const double c2 = o.bias_correction ? 1.0 - std::pow(o.mu2, static_cast<double>(step)) : 1.0;
  T* __restrict p = param.data();
  const T* __restrict gp = grad.data();
  double* __restrict mp = m.data();
  double* __restrict vp = v.data();
  const double mu1 = o.mu1, mu2 = o.mu2, eps = o.epsilon;
  if (!o.bias_correction) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = static_cast<double>(gp[i]);
      mp[i] = mu1 * mp[i] + (1.0 - mu1) * g;
      vp[i] = mu2 * vp[i] + (1.0 - mu2) * g * g;
      p[i] = static_cast<T>(static_cast<double>(p[i]) - alpha * mp[i] / (std::sqrt(vp[i]) + eps));
    }
    return;
  }
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = static_cast<double>(gp[i]);
    mp[i] = mu1 * mp[i] + (1.0 - mu1) * g;
    vp[i] = mu2 * vp[i] + (1.0 - mu2) * g * g;
    const double update = alpha * (mp[i] / c1) / (std::sqrt(vp[i] / c2) + eps);
    p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
  }
}

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<double>, std::span<double>,
                                 const AdamOptions&, double, std::uint64_t);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>, std::span<double>,
                                  const AdamOptions&, double, std::uint64_t);

void adam_step(AdamState& state, ParamSet& params, const GradientSet& grads, double alpha) {
  require(alpha > 0.0, "adam learning rate must be positive");
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    fail(ErrorKind::ShapeMismatch, "adam_step: " + std::to_string(grads.size()) + " gradients and " +
                                       std::to_string(state.m.size()) + " moment buffers for " +
                                       std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& shape = params.tensor(i).shape();
    if (grads[i].shape() != shape || state.shapes[i] != shape) {
      fail(ErrorKind::ShapeMismatch, "adam_step: gradient for '" + params.name(i) + "' has shape " +
                                         shape_str(grads[i].shape()) + ", parameter is " + shape_str(shape));
    }
    if (!grads[i].all_finite()) fail(ErrorKind::NonFinite, "adam_step: non-finite gradient for '" + params.name(i) + "'");
  }
  ++state.step_count;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_update<float>(params.tensor(i).data(), grads[i].data(), state.m[i], state.v[i], state.options, alpha,
                       state.step_count);
  }
}

void apply_weight_decay(GradientSet& grads, const ParamSet& params, double lambda) {
  require(lambda >= 0.0, "weight decay must be non-negative");
  if (grads.size() != params.size()) fail(ErrorKind::ShapeMismatch, "weight decay: gradient count mismatch");
  if (lambda == 0.0) return;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = grads[i].data();
    auto p = params.tensor(i).data();
    if (g.size() != p.size()) fail(ErrorKind::ShapeMismatch, "weight decay: shape mismatch at '" + params.name(i) + "'");
    for (std::size_t j = 0; j < g.size(); ++j) {
      g[j] = static_cast<float>(static_cast<double>(g[j]) + lambda * static_cast<double>(p[j]));
    }
  }
}

void Schedule::validate() const {
  require(base_rate > 0.0, "schedule base rate must be positive");
  require(decay_factor > 0.0 && decay_factor <= 1.0, "schedule decay factor must lie in (0, 1]");
  require(decay_every >= 1, "schedule decay interval must be >= 1 epoch");
}

double scheduled_rate(const Schedule& schedule, std::size_t epoch) {
  schedule.validate();
  return schedule.base_rate * std::pow(schedule.decay_factor, static_cast<double>(epoch / schedule.decay_every));
}

}  // namespace metaiqa
