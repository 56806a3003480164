#include "metaiqa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace metaiqa {

Shape SampleSet::image_shape() const {
  if (images.rank() != 4) fail(ErrorKind::State, "sample set has no images");
  return {images.dim(1), images.dim(2), images.dim(3)};
}

Tensor SampleSet::image(std::size_t i) const {
  const Shape s = image_shape();
  const std::size_t n = shape_numel(s);
  if (i >= size()) fail(ErrorKind::InvalidArgument, "image index out of range");
  auto d = images.data().subspan(i * n, n);
  return Tensor(s, std::vector<float>(d.begin(), d.end()));
}

void SampleSet::validate(std::string_view what) const {
  const std::string w(what);
  require(!empty(), w + " is empty");
  require(ids.size() == scores.size(), w + ": id count does not match score count");
  if (images.rank() != 4 || images.dim(0) != scores.size()) {
    fail(ErrorKind::ShapeMismatch, w + ": image batch " + shape_str(images.shape()) + " for " +
                                       std::to_string(scores.size()) + " scores");
  }
  for (float s : scores) {
    if (!(s >= 0.0f && s <= 1.0f)) fail(ErrorKind::InvalidArgument, w + ": score " + std::to_string(s) + " outside [0,1]");
  }
  std::unordered_set<std::string> seen(ids.begin(), ids.end());
  require(seen.size() == ids.size(), w + " contains duplicate image ids");
}

SampleSet make_sample_set(const std::vector<Tensor>& images, std::vector<float> scores, std::vector<std::string> ids) {
  require(!images.empty(), "cannot build an empty sample set");
  require(images.size() == scores.size() && ids.size() == scores.size(), "image, score and id counts differ");
  const Shape s = images.front().shape();
  require(s.size() == 3, "images must be [C,H,W]");
  const std::size_t n = shape_numel(s);
  std::vector<float> data;
  data.reserve(n * images.size());
  for (const auto& im : images) {
    if (im.shape() != s) fail(ErrorKind::ShapeMismatch, "images in one set must share a shape");
    data.insert(data.end(), im.data().begin(), im.data().end());
  }
  SampleSet out;
  out.images = Tensor({images.size(), s[0], s[1], s[2]}, std::move(data));
  out.scores = std::move(scores);
  out.ids = std::move(ids);
  return out;
}

SampleSet concat(const std::vector<const SampleSet*>& parts) {
  require(!parts.empty(), "concat of nothing");
  const Shape s = parts.front()->image_shape();
  std::vector<float> data;
  SampleSet out;
  for (const auto* p : parts) {
    if (p->image_shape() != s) fail(ErrorKind::ShapeMismatch, "concat of sample sets with different image shapes");
    data.insert(data.end(), p->images.data().begin(), p->images.data().end());
    out.scores.insert(out.scores.end(), p->scores.begin(), p->scores.end());
    out.ids.insert(out.ids.end(), p->ids.begin(), p->ids.end());
  }
  out.images = Tensor({out.scores.size(), s[0], s[1], s[2]}, std::move(data));
  return out;
}

bool disjoint(const SampleSet& a, const SampleSet& b) {
  std::unordered_set<std::string> left(a.ids.begin(), a.ids.end());
  return std::none_of(b.ids.begin(), b.ids.end(), [&](const std::string& id) { return left.count(id) > 0; });
}

Tensor crop_patch(const Tensor& pixels, std::size_t h, std::size_t w, Rng& rng) {
  require(pixels.rank() == 3, "crop_patch expects a [C,H,W] image");
  const std::size_t c = pixels.dim(0), H = pixels.dim(1), W = pixels.dim(2);
  require(h >= 1 && w >= 1, "patch size must be positive");
  if (h > H || w > W) {
    fail(ErrorKind::InvalidArgument, "patch " + std::to_string(h) + "x" + std::to_string(w) + " larger than image " +
                                         std::to_string(H) + "x" + std::to_string(W));
  }
  std::uniform_int_distribution<std::size_t> dy(0, H - h), dx(0, W - w);
  const std::size_t y0 = dy(rng), x0 = dx(rng);
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const float* src = pixels.data().data() + (ch * H + y0 + y) * W + x0;
      std::copy_n(src, w, out.data().data() + (ch * h + y) * w);
    }
  }
  return out;
}

Tensor training_batch(const SampleSet& set, const BackboneSpec& spec, Rng& rng) {
  const Shape s = set.image_shape();
  if (s == spec.image_shape()) return set.images;
  if (s[0] != spec.channels) fail(ErrorKind::ShapeMismatch, "sample channels do not match backbone");
  std::vector<float> data;
  data.reserve(set.size() * shape_numel(spec.image_shape()));
  for (std::size_t i = 0; i < set.size(); ++i) {
    Tensor patch = crop_patch(set.image(i), spec.height, spec.width, rng);
    data.insert(data.end(), patch.data().begin(), patch.data().end());
  }
  return Tensor({set.size(), spec.channels, spec.height, spec.width}, std::move(data));
}

}  // namespace metaiqa
