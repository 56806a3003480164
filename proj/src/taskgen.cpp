#include "metaiqa/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "metaiqa/hashing.hpp"

namespace metaiqa {

namespace {

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// One pass of the separable [1 2 1]/4 kernel with replicated borders.
void binomial_blur(std::vector<float>& img, std::size_t c, std::size_t h, std::size_t w) {
  std::vector<float> tmp(img.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    float* p = img.data() + ch * h * w;
    float* t = tmp.data() + ch * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const float l = p[y * w + (x == 0 ? 0 : x - 1)];
        const float r = p[y * w + (x + 1 == w ? x : x + 1)];
        t[y * w + x] = 0.25f * l + 0.5f * p[y * w + x] + 0.25f * r;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t up = y == 0 ? 0 : y - 1, down = y + 1 == h ? y : y + 1;
      for (std::size_t x = 0; x < w; ++x) {
        p[y * w + x] = 0.25f * t[up * w + x] + 0.5f * t[y * w + x] + 0.25f * t[down * w + x];
      }
    }
  }
}

}  // namespace

std::vector<BaseImage> gen_base_images(std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed,
                                       std::size_t channels) {
  require(count >= 1, "base image count must be >= 1");
  require(height >= 1 && width >= 1 && channels >= 1, "base image dimensions must be positive");
  std::vector<BaseImage> out;
  out.reserve(count);
  const std::size_t hw = height * width;
  for (std::size_t i = 0; i < count; ++i) {
    BaseImage b;
    b.generator = "proc";
    b.seed = derive_seed(seed, "base/" + std::to_string(i));
    Rng rng(b.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> px(channels * hw);

    // Smooth two-colour gradient.
    std::vector<double> c0(channels), c1(channels);
    for (auto& v : c0) v = 0.1 + 0.8 * u(rng);
    for (auto& v : c1) v = 0.1 + 0.8 * u(rng);
    const double angle = 2.0 * std::numbers::pi * u(rng);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double fx = (x + 0.5) / width - 0.5, fy = (y + 0.5) / height - 0.5;
        const double t = std::clamp(0.5 + (fx * ca + fy * sa), 0.0, 1.0);
        for (std::size_t ch = 0; ch < channels; ++ch) px[ch * hw + y * width + x] = c0[ch] + (c1[ch] - c0[ch]) * t;
      }
    }

    // Band-limited texture: a few plane waves plus smoothed white noise.
    const int waves = 2 + static_cast<int>(u(rng) * 3);
    for (int k = 0; k < waves; ++k) {
      const double fx = 1.0 + 5.0 * u(rng), fy = 1.0 + 5.0 * u(rng) - 3.0;
      const double phase = 2.0 * std::numbers::pi * u(rng);
      const double amp = 0.02 + 0.08 * u(rng);
      std::vector<double> tint(channels);
      for (auto& v : tint) v = 0.5 + 0.5 * u(rng);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const double s = std::sin(2.0 * std::numbers::pi * (fx * x / width + fy * y / height) + phase);
          for (std::size_t ch = 0; ch < channels; ++ch) px[ch * hw + y * width + x] += amp * tint[ch] * s;
        }
      }
    }
    std::vector<float> noise(channels * hw);
    for (auto& v : noise) v = static_cast<float>(u(rng) - 0.5);
    binomial_blur(noise, channels, height, width);
    const double grain = 0.1 + 0.3 * u(rng);
    for (std::size_t j = 0; j < px.size(); ++j) px[j] += grain * noise[j];

    // Flat shapes on top.
    const int shapes = 1 + static_cast<int>(u(rng) * 3);
    for (int k = 0; k < shapes; ++k) {
      const bool disc = u(rng) < 0.5;
      const double cx = u(rng) * width, cy = u(rng) * height;
      const double rx = (0.1 + 0.25 * u(rng)) * width, ry = (0.1 + 0.25 * u(rng)) * height;
      std::vector<double> col(channels);
      for (auto& v : col) v = 0.05 + 0.9 * u(rng);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
          const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::fabs(dx) <= 1.0 && std::fabs(dy) <= 1.0;
          if (!inside) continue;
          for (std::size_t ch = 0; ch < channels; ++ch) px[ch * hw + y * width + x] = col[ch];
        }
      }
    }

    std::vector<float> data(px.size());
    std::transform(px.begin(), px.end(), data.begin(), clamp01);
    b.pixels = Tensor({channels, height, width}, std::move(data));
    out.push_back(std::move(b));
  }
  return out;
}

void DistortionFamily::validate() const {
  require(levels.size() >= 3, "family '" + name + "' needs at least 3 severity levels");
  for (const auto& l : levels) require(!l.empty(), "family '" + name + "' has an empty level");
  const bool up = levels[1][0] > levels[0][0];
  for (std::size_t i = 1; i < levels.size(); ++i) {
    const bool ok = up ? levels[i][0] > levels[i - 1][0] : levels[i][0] < levels[i - 1][0];
    require(ok, "family '" + name + "' severity levels are not strictly ordered");
  }
}

const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names{"gaussian-noise", "gaussian-blur", "brighten",      "darken",
                                              "contrast-change", "quantization",  "impulse-noise", "jitter"};
  return names;
}

std::vector<DistortionFamily> standard_families() {
  return {
      {"gaussian-noise", {{0.02}, {0.05}, {0.08}, {0.12}, {0.2}}},
      {"gaussian-blur", {{1}, {2}, {4}, {8}, {16}}},
      {"brighten", {{0.03}, {0.07}, {0.12}, {0.18}, {0.26}}},
      {"darken", {{0.03}, {0.07}, {0.12}, {0.18}, {0.26}}},
      {"contrast-change", {{0.85}, {0.7}, {0.5}, {0.3}, {0.1}}},
      {"quantization", {{1.0 / 32}, {1.0 / 16}, {1.0 / 8}, {1.0 / 4}, {1.0 / 2}}},
      {"impulse-noise", {{0.01}, {0.03}, {0.06}, {0.12}, {0.2}}},
      {"jitter", {{0.05, 2}, {0.1, 2}, {0.2, 2}, {0.35, 2}, {0.5, 2}}},
  };
}

DistortionFamily find_family(const std::vector<DistortionFamily>& families, const std::string& name) {
  for (const auto& f : families) {
    if (f.name == name) return f;
  }
  fail(ErrorKind::InvalidArgument, "unknown distortion family '" + name + "'");
}

Tensor apply_distortion(const Tensor& image, const DistortionFamily& family, std::size_t level, std::uint64_t seed) {
  require(image.rank() == 3, "apply_distortion expects a [C,H,W] image");
  if (level >= family.levels.size()) {
    fail(ErrorKind::InvalidArgument, "level " + std::to_string(level) + " outside the " + std::to_string(family.levels.size()) +
                                         "-level grid of '" + family.name + "'");
  }
  const auto& p = family.levels[level];
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2), hw = h * w;
  auto src = image.data();
  std::vector<float> out(src.begin(), src.end());
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::string& f = family.name;

  if (f == "gaussian-noise") {
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamp01(src[i] + p[0] * n(rng));
  } else if (f == "gaussian-blur") {
    const auto passes = static_cast<std::size_t>(p[0]);
    for (std::size_t k = 0; k < passes; ++k) binomial_blur(out, c, h, w);
  } else if (f == "brighten" || f == "darken") {
    const double off = f == "brighten" ? p[0] : -p[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamp01(src[i] + off);
  } else if (f == "contrast-change") {
    double mean = 0.0;
    for (float v : src) mean += v;
    mean /= static_cast<double>(src.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamp01(mean + p[0] * (src[i] - mean));
  } else if (f == "quantization") {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = clamp01(std::round(src[i] / p[0]) * p[0]);
  } else if (f == "impulse-noise") {
    for (std::size_t i = 0; i < hw; ++i) {
      const double draw = u(rng);
      const float salt = u(rng) < 0.5 ? 0.0f : 1.0f;
      if (draw >= p[0]) continue;
      for (std::size_t ch = 0; ch < c; ++ch) out[ch * hw + i] = salt;
    }
  } else if (f == "jitter") {
    const auto r = static_cast<long>(p.size() > 1 ? p[1] : 1);
    std::uniform_int_distribution<long> off(-r, r);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double draw = u(rng);
        long dy = 0, dx = 0;
        while (dy == 0 && dx == 0) {
          dy = off(rng);
          dx = off(rng);
        }
        if (draw >= p[0]) continue;
        const auto sy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(h) - 1));
        const auto sx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(w) - 1));
        for (std::size_t ch = 0; ch < c; ++ch) out[ch * hw + y * w + x] = src[ch * hw + sy * w + sx];
      }
    }
  } else {
    fail(ErrorKind::InvalidArgument, "unknown distortion family '" + f + "'");
  }
  return Tensor(image.shape(), std::move(out));
}

double pseudo_mos(const Tensor& reference, const Tensor& distorted, double tau) {
  if (reference.shape() != distorted.shape()) {
    fail(ErrorKind::ShapeMismatch, "pseudo_mos: " + shape_str(reference.shape()) + " vs " + shape_str(distorted.shape()));
  }
  require(tau > 0.0, "pseudo_mos temperature must be positive");
  double acc = 0.0;
  auto a = reference.data(), b = distorted.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::exp(-(acc / static_cast<double>(a.size())) / tau);
}

std::vector<double> normalize_scores(const std::vector<double>& scores, double lo, double hi) {
  require(hi > lo, "score range needs hi > lo");
  std::vector<double> out;
  out.reserve(scores.size());
  for (double s : scores) {
    if (!(s >= lo && s <= hi)) {
      fail(ErrorKind::InvalidArgument, "score " + std::to_string(s) + " outside declared range [" + std::to_string(lo) +
                                           ", " + std::to_string(hi) + "]");
    }
    out.push_back((s - lo) / (hi - lo));
  }
  return out;
}

std::vector<ScoredImage> distort_all(const DistortionFamily& family, const std::vector<BaseImage>& bases, double tau,
                                     std::uint64_t seed) {
  family.validate();
  std::vector<ScoredImage> out;
  out.reserve(bases.size() * family.levels.size());
  for (std::size_t b = 0; b < bases.size(); ++b) {
    const std::uint64_t s = derive_seed(seed, family.name + "/" + bases[b].id());
    for (std::size_t l = 0; l < family.levels.size(); ++l) {
      ScoredImage im;
      im.pixels = apply_distortion(bases[b].pixels, family, l, s);
      im.score = pseudo_mos(bases[b].pixels, im.pixels, tau);
      im.id = family.name + "/" + bases[b].id() + "-l" + std::to_string(l);
      im.family = family.name;
      im.base = b;
      im.severity = l;
      out.push_back(std::move(im));
    }
  }
  return out;
}

SampleSet to_sample_set(const std::vector<const ScoredImage*>& images) {
  std::vector<Tensor> px;
  std::vector<float> scores;
  std::vector<std::string> ids;
  for (const auto* im : images) {
    px.push_back(im->pixels);
    scores.push_back(static_cast<float>(im->score));
    ids.push_back(im->id);
  }
  return make_sample_set(px, std::move(scores), std::move(ids));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_bases(std::size_t count, double fraction, Rng& rng) {
  require(fraction > 0.0 && fraction < 1.0, "split fraction must lie in (0, 1)");
  require(count >= 2, "need at least 2 base images to split, got " + std::to_string(count));
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  auto first = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(count)));
  first = std::clamp<std::size_t>(first, 1, count - 1);
  std::vector<std::size_t> a(order.begin(), order.begin() + first), b(order.begin() + first, order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {a, b};
}

namespace {

std::pair<SampleSet, SampleSet> split_images(const std::vector<ScoredImage>& images, std::size_t base_count,
                                             double fraction, Rng& rng) {
  auto [left, right] = split_bases(base_count, fraction, rng);
  std::vector<bool> in_left(base_count, false);
  for (auto i : left) in_left[i] = true;
  std::vector<const ScoredImage*> a, b;
  for (const auto& im : images) (in_left[im.base] ? a : b).push_back(&im);
  return {to_sample_set(a), to_sample_set(b)};
}

}  // namespace

DistortionTask build_task(const DistortionFamily& family, const std::vector<BaseImage>& bases, double support_fraction,
                          Rng& rng, double tau) {
  const auto images = distort_all(family, bases, tau, rng());
  DistortionTask t;
  t.task_id = family.name;
  std::tie(t.support, t.query) = split_images(images, bases.size(), support_fraction, rng);
  t.validate();
  return t;
}

LodoSplit lodo_split(const std::vector<DistortionFamily>& families, const std::string& held_out,
                     const std::vector<BaseImage>& bases, const LodoOptions& options, std::uint64_t seed) {
  require(families.size() >= 3, "leave-one-out needs at least 3 families");
  std::unordered_set<std::string> names;
  for (const auto& f : families) require(names.insert(f.name).second, "duplicate family '" + f.name + "'");
  if (!names.count(held_out)) fail(ErrorKind::InvalidArgument, "held-out family '" + held_out + "' is not configured");

  LodoSplit s;
  s.held_out = held_out;
  for (const auto& f : families) {
    // Streams depend only on (seed, family) so every configuration sees the same tasks.
    if (f.name == held_out) {
      Rng rng(derive_seed(seed, "target/" + f.name));
      const auto images = distort_all(f, bases, options.tau, rng());
      std::tie(s.target.train, s.target.test) = split_images(images, bases.size(), options.train_fraction, rng);
    } else {
      Rng rng(derive_seed(seed, "task/" + f.name));
      s.meta.tasks.push_back(build_task(f, bases, options.support_fraction, rng, options.tau));
    }
  }
  s.meta.validate();
  s.target.validate();
  return s;
}

TargetTask random_split(const std::vector<DistortionFamily>& families, const std::vector<BaseImage>& bases,
                        double train_fraction, double tau, std::uint64_t seed) {
  require(!families.empty(), "random split needs at least one family");
  std::vector<ScoredImage> all;
  for (const auto& f : families) {
    auto part = distort_all(f, bases, tau, derive_seed(seed, "pool/" + f.name));
    std::move(part.begin(), part.end(), std::back_inserter(all));
  }
  Rng rng(derive_seed(seed, "random-split"));
  TargetTask t;
  std::tie(t.train, t.test) = split_images(all, bases.size(), train_fraction, rng);
  t.validate();
  return t;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  require(image.rank() == 3 && image.dim(0) == 3, "PPM export expects a [3,H,W] image");
  const std::size_t h = image.dim(1), w = image.dim(2), hw = h * w;
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
  f << "P6\n" << w << ' ' << h << "\n255\n";
  auto d = image.data();
  std::string row(3 * w, '\0');
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        row[3 * x + ch] = static_cast<char>(std::lround(std::clamp(d[ch * hw + y * w + x], 0.0f, 1.0f) * 255.0f));
      }
    }
    f.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!f) fail(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

namespace {

std::size_t read_header_int(std::istream& in, const std::string& where) {
  in >> std::ws;
  while (in.peek() == '#') {
    std::string skip;
    std::getline(in, skip);
    in >> std::ws;
  }
  std::size_t v = 0;
  if (!(in >> v)) fail(ErrorKind::Io, "malformed image header in '" + where + "'");
  return v;
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  const std::size_t c = magic == "P6" ? 3 : magic == "P5" ? 1 : 0;
  if (c == 0) fail(ErrorKind::Io, "'" + path.string() + "' is not a binary PPM/PGM file");
  const std::size_t w = read_header_int(in, path.string()), h = read_header_int(in, path.string());
  const std::size_t maxval = read_header_int(in, path.string());
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) fail(ErrorKind::Io, "unsupported image header in '" + path.string() + "'");
  in.get();
  std::string bytes(c * w * h, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) fail(ErrorKind::Io, "truncated image '" + path.string() + "'");
  Tensor out({c, h, w});
  auto d = out.data();
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      d[ch * h * w + i] = static_cast<float>(static_cast<unsigned char>(bytes[i * c + ch])) / static_cast<float>(maxval);
    }
  }
  return out;
}

void export_task_set(const std::filesystem::path& dir, const std::vector<ScoredImage>& images) {
  require(!images.empty(), "nothing to export");
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "scores.csv", std::ios::binary);
  if (!csv) fail(ErrorKind::Io, "cannot write '" + (dir / "scores.csv").string() + "'");
  csv << "image,family,severity,score\n";
  for (const auto& im : images) {
    require(im.id.find(',') == std::string::npos, "image id '" + im.id + "' contains a comma");
    const std::filesystem::path rel = std::filesystem::path(im.family) / (im.id.substr(im.id.find('/') + 1) + ".ppm");
    std::filesystem::create_directories(dir / im.family);
    write_ppm(dir / rel, im.pixels);
    char score[32];
    std::snprintf(score, sizeof score, "%.9f", im.score);
    csv << rel.generic_string() << ',' << im.family << ',' << im.severity << ',' << score << '\n';
  }
  if (!csv) fail(ErrorKind::Io, "failed writing scores.csv");
}

std::vector<LoadedImage> import_task_set(const std::filesystem::path& dir, double score_lo, double score_hi) {
  require(score_hi > score_lo, "score range needs hi > lo");
  std::ifstream csv(dir / "scores.csv", std::ios::binary);
  if (!csv) fail(ErrorKind::Io, "cannot open '" + (dir / "scores.csv").string() + "'");
  std::string line;
  if (!std::getline(csv, line) || line != "image,family,severity,score") {
    fail(ErrorKind::Io, "scores.csv must start with the header image,family,severity,score");
  }
  std::vector<LoadedImage> out;
  std::size_t lineno = 1;
  while (std::getline(csv, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 4) fail(ErrorKind::Io, "scores.csv line " + std::to_string(lineno) + ": expected 4 fields");
    LoadedImage im;
    im.image = cells[0];
    im.family = cells[1];
    try {
      im.severity = std::stoul(cells[2]);
      im.score = normalize_scores({std::stod(cells[3])}, score_lo, score_hi)[0];
    } catch (const std::logic_error&) {
      fail(ErrorKind::Io, "scores.csv line " + std::to_string(lineno) + ": bad number");
    }
    im.pixels = read_pnm(dir / im.image);
    out.push_back(std::move(im));
  }
  require(!out.empty(), "scores.csv lists no images");
  return out;
}

}  // namespace metaiqa
