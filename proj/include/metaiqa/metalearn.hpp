#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "metaiqa/dataset.hpp"
#include "metaiqa/model.hpp"
#include "metaiqa/optimizer.hpp"

namespace metaiqa {

/// One distortion-specific regression task with disjoint support and query sets.
struct DistortionTask {
  std::string task_id;
  SampleSet support;
  SampleSet query;

  void validate() const;
};

struct MetaTrainingSet {
  std::vector<DistortionTask> tasks;

  std::size_t size() const { return tasks.size(); }
  void validate() const;
};

struct MetaConfig {
  std::size_t k = 5;
  std::size_t inner_steps = 6;
  std::size_t query_steps = 6;
  double alpha = 1e-4;
  double beta = 1e-2;
  std::size_t epochs = 100;
  AdamOptions adam;
  double weight_decay = 1e-5;
  double decay_factor = 0.8;
  std::size_t decay_every = 5;
  std::uint64_t seed = 0;
  // Worker threads for the per-task adaptations of one mini-batch.
  std::size_t threads = 1;

  void validate(std::size_t task_count) const;
};

/// Settings of one Adam adaptation phase.
struct AdaptOptions {
  std::size_t steps = 6;
  double alpha = 1e-4;
  AdamOptions adam;
  double weight_decay = 1e-5;
};

struct AdaptResult {
  ParamSet params;
  AdamState state;
  // Loss at the parameters each step's gradient was taken at.
  std::vector<double> losses;
  std::size_t backward_passes = 0;
};

/// Full-batch loss and gradients over a fixed sample set, reusing one graph.
class BatchObjective {
 public:
  BatchObjective(const ParamSet& params, const SampleSet& set);

  /// Loss at the current values of the bound parameters; fills `grads`.
  double evaluate(GradientSet& grads, Rng& rng);
  double loss_only(Rng& rng);

 private:
  const ParamSet& params_;
  const SampleSet& set_;
  ModelGraph model_;
  std::array<Tensor, 2> inputs_;  // images, targets
  bool fixed_resolution_;
};

/// Reusable workspace for repeated adaptations on one sample set: working
/// parameters, the graph bound to them, gradients and Adam buffers.
class Adapter {
 public:
  Adapter(const ParamSet& like, const SampleSet& set);
  Adapter(const Adapter&) = delete;
  Adapter& operator=(const Adapter&) = delete;

  /// `options.steps` updates from `start` with zeroed moments; returns the
  /// loss seen by each step.
  const std::vector<double>& run(const ParamSet& start, const AdaptOptions& options, Rng& rng);

  const ParamSet& params() const { return params_; }
  const AdamState& state() const { return state_; }

 private:
  ParamSet params_;
  BatchObjective objective_;
  AdamState state_;
  GradientSet grads_;
  std::vector<double> losses_;
};

/// `steps` Adam updates from a fresh zeroed state; `start` is copied, never mutated.
AdaptResult adapt(const ParamSet& start, const SampleSet& set, const AdaptOptions& options, Rng& rng);

/// First-level adaptation on the support set: theta -> theta'.
AdaptResult inner_adapt(const ParamSet& theta, const SampleSet& support, const AdaptOptions& options, Rng& rng);

/// Second-level adaptation on the query set from theta', with its own fresh moments.
AdaptResult query_adapt(const ParamSet& theta_prime, const SampleSet& query, const AdaptOptions& options, Rng& rng);

/// k distinct task indices drawn without replacement (1 < k <= N).
std::vector<std::size_t> sample_minibatch(const MetaTrainingSet& meta_set, std::size_t k, Rng& rng);

/// theta - beta * (1/k) * sum_i (theta - theta_i), accumulated in task order.
ParamSet outer_update(const ParamSet& theta, const std::vector<ParamSet>& adapted, double beta);

/// Buffer form of the outer update, shared with `outer_update`.
template <typename T>
void outer_update_buffer(std::span<T> theta, const std::vector<std::span<const T>>& adapted, double beta);

struct EpochLog {
  std::size_t epoch = 0;
  double alpha = 0.0;
  double beta = 0.0;
  double mean_support_loss = 0.0;
  // Query loss at theta' (after support adaptation), averaged over every task visit.
  double mean_query_loss = 0.0;
};

struct MetaTrainResult {
  ParamSet params;
  std::vector<EpochLog> log;
  std::size_t outer_updates = 0;
  std::size_t backward_passes = 0;
};

/// Bi-level training: every epoch runs ceil(N/k) mini-batches of
/// support adaptation, query adaptation and one outer update each.
MetaTrainResult meta_train(const MetaTrainingSet& meta_set, const MetaConfig& config, const ParamSet& initial);

}  // namespace metaiqa
