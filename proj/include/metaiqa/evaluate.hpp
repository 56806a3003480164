#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "metaiqa/metalearn.hpp"

namespace metaiqa {

/// Target NR-IQA task: M training images and a disjoint test set, scores in
/// [0,1] after normalisation from the original [score_lo, score_hi] scale.
struct TargetTask {
  SampleSet train;
  SampleSet test;
  double score_lo = 0.0;
  double score_hi = 1.0;

  void validate() const;
};

struct FineTuneConfig {
  std::size_t steps = 15;
  double alpha = 1e-5;
  AdamOptions adam;
  double weight_decay = 1e-5;

  void validate() const;
};

/// P Adam steps from a fresh state on the training loss. Names, shapes and
/// parameter count of the result equal the prior's.
ParamSet fine_tune(const ParamSet& prior, const TargetTask& task, const FineTuneConfig& config, std::uint64_t seed);
ParamSet fine_tune(const ParamSet& prior, const TargetTask& task, std::size_t steps, double alpha, std::uint64_t seed);

/// Pearson correlation; nullopt when either vector has zero variance.
std::optional<double> plcc(std::span<const double> truth, std::span<const double> predicted);

/// Spearman correlation. Tie-free inputs use the rank-difference formula,
/// inputs with ties use Pearson correlation of fractional ranks.
std::optional<double> srocc(std::span<const double> truth, std::span<const double> predicted);

/// 1-based ranks; tied values share the average of the ranks they span.
std::vector<double> fractional_ranks(std::span<const double> values);
bool has_ties(std::span<const double> values);
/// 1 - 6 sum d^2 / (N (N^2 - 1)); requires tie-free inputs.
double srocc_rank_difference(std::span<const double> truth, std::span<const double> predicted);
std::optional<double> srocc_pearson_of_ranks(std::span<const double> truth, std::span<const double> predicted);

struct EvalReport {
  std::optional<double> plcc;
  std::optional<double> srocc;
  std::size_t n = 0;
  std::vector<double> predictions;
};

/// Top-left corners of the patch grid along one axis: stride = patch, the last
/// patch pinned to the far border so the whole extent is covered.
std::vector<std::size_t> patch_offsets(std::size_t extent, std::size_t patch);

/// Mean score over the patch grid of each [C,H,W] image of `images` [n,C,H,W].
std::vector<double> predict_images(const ParamSet& theta, const Tensor& images);

EvalReport evaluate_model(const ParamSet& theta, const TargetTask& task);

/// |d score / d pixel| reduced over channels by max, scaled so the largest
/// entry is 1 (all zeros stay zero). Returns an [H, W] tensor.
Tensor saliency_map(const ParamSet& theta, const Tensor& image);

/// Channel-max magnitude of an image gradient [C,H,W], max-normalised.
Tensor normalized_gradient_map(const Tensor& gradient);

/// 8-bit binary graymap of an [H,W] map with values in [0,1].
void write_pgm(const std::filesystem::path& path, const Tensor& map);

}  // namespace metaiqa
