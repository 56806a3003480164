#include "metaiqa/model.hpp"

#include <cmath>
#include <random>

namespace metaiqa {

ParamSet build_model(const BackboneSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<ParamSet::Entry> entries;

  auto uniform = [&](Shape shape, std::size_t fan_in) {
    const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
    std::uniform_real_distribution<float> dist(-bound, bound);
    Tensor t(std::move(shape), 0.0f, true);
    for (auto& x : t.data()) x = dist(rng);
    return t;
  };

  std::size_t in = spec.channels;
  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    const auto& l = spec.conv[i];
    const std::string prefix = "conv" + std::to_string(i + 1);
    entries.push_back({prefix + ".weight", uniform({l.out_channels, in, l.kernel, l.kernel}, in * l.kernel * l.kernel)});
    entries.push_back({prefix + ".bias", Tensor({l.out_channels}, 0.0f, true)});
    in = l.out_channels;
  }
  entries.push_back({"fc1.weight", uniform({in, spec.hidden}, in)});
  entries.push_back({"fc1.bias", Tensor({spec.hidden}, 0.0f, true)});
  entries.push_back({"fc2.weight", uniform({spec.hidden, 1}, spec.hidden)});
  entries.push_back({"fc2.bias", Tensor({1}, 0.0f, true)});
  return ParamSet(spec, std::move(entries));
}

Tensor as_batch(const Tensor& images, const BackboneSpec& spec) {
  const Shape expect = spec.image_shape();
  if (images.rank() == 3 && images.shape() == expect) {
    Tensor b = images;
    b.reshape({1, expect[0], expect[1], expect[2]});
    return b;
  }
  if (images.rank() == 4 && Shape(images.shape().begin() + 1, images.shape().end()) == expect) return images;
  fail(ErrorKind::ShapeMismatch, "image shape " + shape_str(images.shape()) + " does not match backbone input " +
                                     shape_str(expect));
}

ModelGraph build_model_graph(const ParamSet& params, std::size_t batch, bool with_loss, bool image_grad) {
  const BackboneSpec& spec = params.spec();
  const std::size_t layers = spec.conv.size();
  if (params.size() != 2 * layers + 4) {
    fail(ErrorKind::Incompatible, "parameter set has " + std::to_string(params.size()) + " tensors, backbone needs " +
                                      std::to_string(2 * layers + 4));
  }
  ModelGraph m;
  Graph& g = m.graph;
  m.images = g.input("images", {batch, spec.channels, spec.height, spec.width}, image_grad);
  if (with_loss) m.targets = g.input("targets", {batch, 1});
  for (std::size_t i = 0; i < params.size(); ++i) m.params.push_back(g.parameter(params.name(i), params.tensor(i)));

  NodeId h = m.images;
  for (std::size_t i = 0; i < layers; ++i) {
    const auto& l = spec.conv[i];
    h = g.conv2d(h, m.params[2 * i], Conv2dOptions{l.stride, l.kernel / 2});
    h = g.bias_add(h, m.params[2 * i + 1]);
    h = g.relu(h);
  }
  h = g.global_avg_pool(h);
  h = g.bias_add(g.matmul(h, m.params[2 * layers]), m.params[2 * layers + 1]);
  h = g.relu(h);
  m.scores = g.bias_add(g.matmul(h, m.params[2 * layers + 2]), m.params[2 * layers + 3]);
  if (with_loss) m.loss = g.mse(m.scores, m.targets);
  return m;
}

std::vector<float> predict(const ParamSet& params, const Tensor& images) {
  Tensor batch = as_batch(images, params.spec());
  ModelGraph m = build_model_graph(params, batch.dim(0), false);
  const Tensor& out = m.graph.forward({batch});
  return out.storage();
}

double loss(std::span<const float> predictions, std::span<const float> targets) {
  require(!predictions.empty(), "loss over an empty batch");
  if (predictions.size() != targets.size()) {
    fail(ErrorKind::ShapeMismatch, "loss: " + std::to_string(predictions.size()) + " predictions vs " +
                                       std::to_string(targets.size()) + " targets");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = static_cast<double>(predictions[i]) - static_cast<double>(targets[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(predictions.size());
}

LossAndGradients loss_and_gradients(const ParamSet& params, const Tensor& images, std::span<const float> targets) {
  Tensor batch = as_batch(images, params.spec());
  const std::size_t n = batch.dim(0);
  require(!targets.empty(), "loss over an empty batch");
  if (targets.size() != n) {
    fail(ErrorKind::ShapeMismatch, "loss: " + std::to_string(n) + " images vs " + std::to_string(targets.size()) +
                                       " targets");
  }
  ModelGraph m = build_model_graph(params, n, true);
  Tensor t({n, 1}, std::vector<float>(targets.begin(), targets.end()));
  const Tensor& l = m.graph.forward({batch, t});
  if (!l.all_finite()) fail(ErrorKind::NonFinite, "loss is not finite");
  m.graph.backward(m.loss);

  LossAndGradients out;
  out.loss = static_cast<double>(l[0]);
  out.grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = m.graph.gradient(m.params[i]);
    out.grads.emplace_back(params.tensor(i).shape(), std::vector<float>(g.begin(), g.end()));
  }
  return out;
}

}  // namespace metaiqa
