#include "metaiqa/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace metaiqa {

void TargetTask::validate() const {
  train.validate("target training set");
  test.validate("target test set");
  require(score_hi > score_lo, "target score range must have hi > lo");
  require(disjoint(train, test), "target training and test sets share images");
  if (train.image_shape() != test.image_shape()) {
    fail(ErrorKind::ShapeMismatch, "target training and test image shapes differ");
  }
}

void FineTuneConfig::validate() const {
  require(steps >= 1, "fine-tune steps P must be >= 1");
  require(alpha > 0.0, "fine-tune learning rate must be positive");
  require(weight_decay >= 0.0, "weight decay must be non-negative");
  adam.validate();
}

namespace {

void require_fits(const ParamSet& theta, const Shape& image) {
  const BackboneSpec& spec = theta.spec();
  if (image.size() != 3 || image[0] != spec.channels || image[1] < spec.height || image[2] < spec.width) {
    fail(ErrorKind::Incompatible, "images " + shape_str(image) + " cannot feed backbone input " +
                                      shape_str(spec.image_shape()));
  }
}

}  // namespace

ParamSet fine_tune(const ParamSet& prior, const TargetTask& task, const FineTuneConfig& config, std::uint64_t seed) {
  config.validate();
  task.validate();
  require_fits(prior, task.train.image_shape());
  Rng rng(seed);
  AdaptResult r = adapt(prior, task.train, {config.steps, config.alpha, config.adam, config.weight_decay}, rng);
  if (r.params.parameter_count() != prior.parameter_count()) {
    fail(ErrorKind::State, "fine-tuning changed the parameter count");
  }
  return std::move(r.params);
}

ParamSet fine_tune(const ParamSet& prior, const TargetTask& task, std::size_t steps, double alpha, std::uint64_t seed) {
  FineTuneConfig c;
  c.steps = steps;
  c.alpha = alpha;
  return fine_tune(prior, task, c, seed);
}

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    fail(ErrorKind::ShapeMismatch, std::string(what) + ": length " + std::to_string(a.size()) + " vs " +
                                       std::to_string(b.size()));
  }
  require(a.size() >= 2, std::string(what) + " needs at least 2 samples");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) fail(ErrorKind::NonFinite, std::string(what) + ": non-finite score");
  }
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

bool constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

}  // namespace

std::optional<double> plcc(std::span<const double> truth, std::span<const double> predicted) {
  check_pair(truth, predicted, "plcc");
  return pearson(truth, predicted);
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = r;
    i = j;
  }
  return ranks;
}

bool has_ties(std::span<const double> values) {
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  return std::adjacent_find(s.begin(), s.end()) != s.end();
}

double srocc_rank_difference(std::span<const double> truth, std::span<const double> predicted) {
  check_pair(truth, predicted, "srocc");
  require(!has_ties(truth) && !has_ties(predicted), "rank-difference form needs tie-free inputs");
  const auto rt = fractional_ranks(truth), rp = fractional_ranks(predicted);
  double d2 = 0.0;
  for (std::size_t i = 0; i < rt.size(); ++i) d2 += (rt[i] - rp[i]) * (rt[i] - rp[i]);
  const double n = static_cast<double>(rt.size());
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

std::optional<double> srocc_pearson_of_ranks(std::span<const double> truth, std::span<const double> predicted) {
  check_pair(truth, predicted, "srocc");
  const auto rt = fractional_ranks(truth), rp = fractional_ranks(predicted);
  return pearson(rt, rp);
}

std::optional<double> srocc(std::span<const double> truth, std::span<const double> predicted) {
  check_pair(truth, predicted, "srocc");
  if (constant(truth) || constant(predicted)) return std::nullopt;
  if (has_ties(truth) || has_ties(predicted)) return srocc_pearson_of_ranks(truth, predicted);
  return srocc_rank_difference(truth, predicted);
}

std::vector<std::size_t> patch_offsets(std::size_t extent, std::size_t patch) {
  require(patch >= 1 && patch <= extent, "patch larger than image");
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + patch <= extent; o += patch) out.push_back(o);
  if (out.back() + patch < extent) out.push_back(extent - patch);
  return out;
}

std::vector<double> predict_images(const ParamSet& theta, const Tensor& images) {
  require(images.rank() == 4, "predict_images expects [n,C,H,W]");
  const BackboneSpec& spec = theta.spec();
  const Shape one{images.dim(1), images.dim(2), images.dim(3)};
  require_fits(theta, one);
  const std::size_t n = images.dim(0), c = one[0], H = one[1], W = one[2];
  const auto ys = patch_offsets(H, spec.height), xs = patch_offsets(W, spec.width);
  const std::size_t per = ys.size() * xs.size();

  std::vector<float> scores;
  if (per == 1) {
    scores = predict(theta, images);
  } else {
    const std::size_t ph = spec.height, pw = spec.width;
    std::vector<float> data(n * per * c * ph * pw);
    float* dst = data.data();
    const float* src = images.data().data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t y0 : ys) {
        for (std::size_t x0 : xs) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t y = 0; y < ph; ++y) {
              std::copy_n(src + ((i * c + ch) * H + y0 + y) * W + x0, pw, dst);
              dst += pw;
            }
          }
        }
      }
    }
    scores = predict(theta, Tensor({n * per, c, ph, pw}, std::move(data)));
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < per; ++p) out[i] += static_cast<double>(scores[i * per + p]);
    out[i] /= static_cast<double>(per);
  }
  return out;
}

EvalReport evaluate_model(const ParamSet& theta, const TargetTask& task) {
  task.test.validate("target test set");
  require(task.test.size() >= 2, "evaluation needs at least 2 test images");
  EvalReport r;
  r.n = task.test.size();
  r.predictions = predict_images(theta, task.test.images);
  const std::vector<double> truth(task.test.scores.begin(), task.test.scores.end());
  r.plcc = plcc(truth, r.predictions);
  r.srocc = srocc(truth, r.predictions);
  return r;
}

Tensor normalized_gradient_map(const Tensor& gradient) {
  require(gradient.rank() == 3, "gradient map expects [C,H,W]");
  const std::size_t c = gradient.dim(0), h = gradient.dim(1), w = gradient.dim(2);
  Tensor map({h, w});
  auto g = gradient.data();
  auto m = map.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < h * w; ++i) m[i] = std::max(m[i], std::fabs(g[ch * h * w + i]));
  }
  const float peak = *std::max_element(m.begin(), m.end());
  if (peak > 0.0f) {
    for (auto& x : m) x /= peak;
  }
  return map;
}

Tensor saliency_map(const ParamSet& theta, const Tensor& image) {
  if (image.shape() != theta.spec().image_shape()) {
    fail(ErrorKind::ShapeMismatch, "saliency image " + shape_str(image.shape()) + " must match backbone input " +
                                       shape_str(theta.spec().image_shape()));
  }
  ModelGraph m = build_model_graph(theta, 1, false, true);
  const NodeId out = m.graph.sum(m.scores);
  m.graph.forward({as_batch(image, theta.spec())});
  m.graph.backward(out);
  auto g = m.graph.gradient(m.images);
  return normalized_gradient_map(Tensor(image.shape(), std::vector<float>(g.begin(), g.end())));
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  require(map.rank() == 2, "PGM export expects an [H,W] map");
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  f << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n255\n";
  for (float v : map.data()) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    f.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
  }
  if (!f) fail(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

}  // namespace metaiqa
