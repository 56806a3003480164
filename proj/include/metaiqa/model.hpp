#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "metaiqa/graph.hpp"
#include "metaiqa/param_set.hpp"

namespace metaiqa {

/// Fan-in scaled uniform weights (bound sqrt(6 / fan_in)), zero biases.
ParamSet build_model(const BackboneSpec& spec, std::uint64_t seed);

/// Network graph over a batch of images bound to `params` (read-only).
struct ModelGraph {
  Graph graph;
  NodeId images;
  NodeId scores;  // [batch, 1]
  NodeId targets;  // only when built with targets
  NodeId loss;
  std::vector<NodeId> params;
};

ModelGraph build_model_graph(const ParamSet& params, std::size_t batch, bool with_loss, bool image_grad = false);

/// Accepts [C,H,W] or [B,C,H,W]; returns one score per image.
std::vector<float> predict(const ParamSet& params, const Tensor& images);

/// Mean squared error (1/M) sum (prediction - target)^2.
double loss(std::span<const float> predictions, std::span<const float> targets);

struct LossAndGradients {
  double loss = 0.0;
  GradientSet grads;
};

/// Loss over the batch and its gradient with respect to every parameter.
LossAndGradients loss_and_gradients(const ParamSet& params, const Tensor& images, std::span<const float> targets);

/// Batch view [B,C,H,W] of an image tensor given as [C,H,W] or [B,C,H,W].
Tensor as_batch(const Tensor& images, const BackboneSpec& spec);

}  // namespace metaiqa
