#pragma once

#include <random>
#include <string>
#include <vector>

#include "metaiqa/param_set.hpp"
#include "metaiqa/tensor.hpp"

namespace metaiqa {

using Rng = std::mt19937_64;

/// A batch of labelled images: `images` is [n, C, H, W], one score and one
/// identifier per image. Identifiers are what disjointness is checked on.
struct SampleSet {
  Tensor images;
  std::vector<float> scores;
  std::vector<std::string> ids;

  std::size_t size() const { return scores.size(); }
  bool empty() const { return scores.empty(); }
  Shape image_shape() const;
  Tensor image(std::size_t i) const;

  void validate(std::string_view what) const;
};

/// Stacks [C,H,W] images into a SampleSet.
SampleSet make_sample_set(const std::vector<Tensor>& images, std::vector<float> scores, std::vector<std::string> ids);

SampleSet concat(const std::vector<const SampleSet*>& parts);

bool disjoint(const SampleSet& a, const SampleSet& b);

/// Uniformly placed h x w window of a [C,H,W] image.
Tensor crop_patch(const Tensor& pixels, std::size_t h, std::size_t w, Rng& rng);

/// The images the network sees for one optimisation step: the set itself when
/// its resolution matches the backbone, otherwise one random crop per image.
Tensor training_batch(const SampleSet& set, const BackboneSpec& spec, Rng& rng);

}  // namespace metaiqa
