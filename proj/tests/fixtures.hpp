#pragma once

#include "metaiqa/taskgen.hpp"

namespace testing_support {

// Scaled-down backbone so training-loop tests run in well under a second.
inline metaiqa::BackboneSpec small_spec(std::size_t side = 16) {
  metaiqa::BackboneSpec s;
  s.conv = {{4, 3, 2}, {8, 3, 2}};
  s.hidden = 8;
  s.height = s.width = side;
  return s;
}

inline metaiqa::MetaTrainingSet small_meta_set(std::size_t families, std::uint64_t seed, std::size_t side = 16,
                                              std::size_t bases = 6) {
  using namespace metaiqa;
  const auto all = standard_families();
  const auto base = gen_base_images(bases, side, side, seed);
  MetaTrainingSet set;
  Rng rng(seed);
  for (std::size_t f = 0; f < families; ++f) set.tasks.push_back(build_task(all.at(f), base, 0.5, rng));
  return set;
}

// Model whose output is the fc2 bias for every input: the fc1 layer is driven
// below zero so no gradient reaches anything but that bias.
inline metaiqa::ParamSet bias_only_model(const metaiqa::BackboneSpec& spec, float bias) {
  using namespace metaiqa;
  ParamSet p = build_model(spec, 5);
  const std::size_t n = p.size();
  for (auto& v : p.tensor(n - 4).data()) v = 0.0f;   // fc1.weight
  for (auto& v : p.tensor(n - 3).data()) v = -1.0f;  // fc1.bias
  for (auto& v : p.tensor(n - 2).data()) v = 0.0f;   // fc2.weight
  p.tensor(n - 1)[0] = bias;
  return p;
}

inline metaiqa::SampleSet constant_targets(const metaiqa::BackboneSpec& spec, std::size_t n, float target,
                                           const std::string& prefix = "img") {
  using namespace metaiqa;
  std::vector<Tensor> images;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t(spec.image_shape());
    for (std::size_t j = 0; j < t.numel(); ++j) t[j] = static_cast<float>((i * 7 + j * 3) % 11) / 11.0f;
    images.push_back(std::move(t));
    ids.push_back(prefix + std::to_string(i));
  }
  return make_sample_set(images, std::vector<float>(n, target), ids);
}

}  // namespace testing_support
