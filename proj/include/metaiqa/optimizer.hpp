#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "metaiqa/param_set.hpp"

namespace metaiqa {

struct AdamOptions {
  double mu1 = 0.9;
  double mu2 = 0.99;
  double epsilon = 1e-8;
  // Off by default: the recursions are applied exactly as
  //   m <- mu1 m + (1 - mu1) g,  v <- mu2 v + (1 - mu2) g^2,  p <- p - alpha m / (sqrt(v) + eps).
  bool bias_correction = false;

  void validate() const;
};

/// First and second raw moment buffers for one parameter set. Moments are kept
/// in double precision regardless of the parameter type.
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::vector<Shape> shapes;
  std::uint64_t step_count = 0;
};

AdamState adam_init(const ParamSet& params, const AdamOptions& options = {});
AdamState adam_init(const ParamSet& params, double mu1, double mu2, double epsilon);

void adam_step(AdamState& state, ParamSet& params, const GradientSet& grads, double alpha);

/// Single-buffer form of the same update, shared by `adam_step`.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<double> m, std::span<double> v,
                 const AdamOptions& options, double alpha, std::uint64_t step);

/// Coupled L2: grads += lambda * params.
void apply_weight_decay(GradientSet& grads, const ParamSet& params, double lambda);

struct Schedule {
  double base_rate = 1e-4;
  double decay_factor = 0.8;
  std::size_t decay_every = 5;

  void validate() const;
};

/// base_rate * decay_factor^floor(epoch / decay_every)
double scheduled_rate(const Schedule& schedule, std::size_t epoch);

}  // namespace metaiqa
