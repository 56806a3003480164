#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "metaiqa/evaluate.hpp"
#include "metaiqa/metalearn.hpp"

namespace metaiqa {

/// Procedural reference image, [C,H,W] with every value in [0,1].
struct BaseImage {
  Tensor pixels;
  std::string generator;
  std::uint64_t seed = 0;

  std::string id() const { return generator + "-" + std::to_string(seed); }
};

/// Deterministic mix of smooth gradients, band-limited texture and flat shapes.
std::vector<BaseImage> gen_base_images(std::size_t count, std::size_t height, std::size_t width, std::uint64_t seed,
                                       std::size_t channels = 3);

/// A named distortion with severity levels ordered mildest first. Each level
/// holds the operator's parameter vector.
struct DistortionFamily {
  std::string name;
  std::vector<std::vector<double>> levels;

  void validate() const;
};

/// gaussian-noise, gaussian-blur, brighten, darken, contrast-change,
/// quantization, impulse-noise, jitter; five levels each.
std::vector<DistortionFamily> standard_families();
const std::vector<std::string>& family_names();
DistortionFamily find_family(const std::vector<DistortionFamily>& families, const std::string& name);

/// Applies `family` at `level`. Stochastic families draw their random field
/// from `seed` once, so stronger levels extend the damage of milder ones.
Tensor apply_distortion(const Tensor& image, const DistortionFamily& family, std::size_t level, std::uint64_t seed);

/// exp(-MSE / tau)
double pseudo_mos(const Tensor& reference, const Tensor& distorted, double tau = 0.02);

/// (s - lo) / (hi - lo); every score must lie in [lo, hi].
std::vector<double> normalize_scores(const std::vector<double>& scores, double lo, double hi);

struct ScoredImage {
  Tensor pixels;
  std::string id;
  std::string family;
  std::size_t base = 0;  // index into the base list
  std::size_t severity = 0;
  double score = 0.0;
};

/// Every level of `family` applied to every base image, scored against it.
std::vector<ScoredImage> distort_all(const DistortionFamily& family, const std::vector<BaseImage>& bases, double tau,
                                     std::uint64_t seed);

SampleSet to_sample_set(const std::vector<const ScoredImage*>& images);

/// Shuffles base indices and gives the first round(fraction * n) to the first
/// side, keeping at least one base on each side.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_bases(std::size_t count, double fraction, Rng& rng);

/// Support/query split at base-image granularity.
DistortionTask build_task(const DistortionFamily& family, const std::vector<BaseImage>& bases, double support_fraction,
                          Rng& rng, double tau = 0.02);

struct LodoOptions {
  double support_fraction = 0.5;
  double train_fraction = 0.5;
  double tau = 0.02;
};

struct LodoSplit {
  MetaTrainingSet meta;
  TargetTask target;
  std::string held_out;
};

/// Meta-training tasks from every family but `held_out`; the held-out family
/// becomes the target task with its own base-level train/test split.
LodoSplit lodo_split(const std::vector<DistortionFamily>& families, const std::string& held_out,
                     const std::vector<BaseImage>& bases, const LodoOptions& options, std::uint64_t seed);

/// Mixed-family pool split into train/test at base level.
TargetTask random_split(const std::vector<DistortionFamily>& families, const std::vector<BaseImage>& bases,
                        double train_fraction, double tau, std::uint64_t seed);

/// On-disk task set: one directory per family holding binary PPM images and a
/// top-level scores.csv with header `image,family,severity,score`.
void export_task_set(const std::filesystem::path& dir, const std::vector<ScoredImage>& images);

struct LoadedImage {
  std::string image;  // path relative to the set directory
  std::string family;
  std::size_t severity = 0;
  Tensor pixels;
  double score = 0.0;
};

/// Reads scores.csv and the images it names. Scores are mapped from
/// [score_lo, score_hi] to [0,1]; values outside the range are rejected.
std::vector<LoadedImage> import_task_set(const std::filesystem::path& dir, double score_lo = 0.0, double score_hi = 1.0);

void write_ppm(const std::filesystem::path& path, const Tensor& image);
/// P6 (colour) or P5 (gray) 8-bit image as [C,H,W] in [0,1].
Tensor read_pnm(const std::filesystem::path& path);

}  // namespace metaiqa
