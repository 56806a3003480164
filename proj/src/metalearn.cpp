#include "metaiqa/metalearn.hpp"

#include <algorithm>
#include <memory>
#include <numeric>
#include <unordered_set>

#include "metaiqa/parallel.hpp"

namespace metaiqa {

void DistortionTask::validate() const {
  support.validate("task '" + task_id + "' support set");
  query.validate("task '" + task_id + "' query set");
  if (support.image_shape() != query.image_shape()) {
    fail(ErrorKind::ShapeMismatch, "task '" + task_id + "': support and query image shapes differ");
  }
  require(disjoint(support, query), "task '" + task_id + "': support and query sets share images");
}

void MetaTrainingSet::validate() const {
  require(tasks.size() >= 2, "meta-training set needs at least 2 tasks, got " + std::to_string(tasks.size()));
  std::unordered_set<std::string> ids;
  for (const auto& t : tasks) {
    require(ids.insert(t.task_id).second, "duplicate task id '" + t.task_id + "'");
    t.validate();
  }
}

void MetaConfig::validate(std::size_t task_count) const {
  require(k > 1 && k <= task_count, "mini-batch size k must satisfy 1 < k <= N (k=" + std::to_string(k) +
                                        ", N=" + std::to_string(task_count) + ")");
  require(inner_steps >= 1 && query_steps >= 1, "adaptation steps S must be >= 1");
  require(alpha > 0.0 && beta > 0.0, "learning rates alpha and beta must be positive");
  require(weight_decay >= 0.0, "weight decay must be non-negative");
  require(threads >= 1, "threads must be >= 1");
  adam.validate();
  Schedule{alpha, decay_factor, decay_every}.validate();
}

BatchObjective::BatchObjective(const ParamSet& params, const SampleSet& set)
    : params_(params),
      set_(set),
      model_(build_model_graph(params, set.size(), true)),
      inputs_{Tensor(Shape{set.size(), params.spec().channels, params.spec().height, params.spec().width}),
              Tensor({set.size(), 1}, std::vector<float>(set.scores.begin(), set.scores.end()))},
      fixed_resolution_(set.image_shape() == params.spec().image_shape()) {
  if (fixed_resolution_) inputs_[0] = set.images;
}

double BatchObjective::loss_only(Rng& rng) {
  if (!fixed_resolution_) inputs_[0] = training_batch(set_, params_.spec(), rng);
  const Tensor& l = model_.graph.forward(inputs_);
  if (!l.all_finite()) fail(ErrorKind::NonFinite, "loss is not finite");
  return static_cast<double>(l[0]);
}

double BatchObjective::evaluate(GradientSet& grads, Rng& rng) {
  const double l = loss_only(rng);
  model_.graph.backward(model_.loss);
  if (grads.size() != params_.size()) grads = zeros_like(params_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = model_.graph.gradient(model_.params[i]);
    std::copy(g.begin(), g.end(), grads[i].data().begin());
  }
  return l;
}

Adapter::Adapter(const ParamSet& like, const SampleSet& set)
    : params_(like), objective_(params_, set), state_(adam_init(params_)), grads_(zeros_like(params_)) {
  require(!set.empty(), "adaptation set is empty");
}

const std::vector<double>& Adapter::run(const ParamSet& start, const AdaptOptions& options, Rng& rng) {
  require(options.steps >= 1, "adaptation needs at least one step");
  require(options.alpha > 0.0, "adaptation learning rate must be positive");
  params_.require_compatible(start, "adaptation start");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = start.tensor(i).data();
    std::copy(src.begin(), src.end(), params_.tensor(i).data().begin());
  }
  options.adam.validate();
  state_.options = options.adam;
  state_.step_count = 0;
  for (auto& m : state_.m) std::fill(m.begin(), m.end(), 0.0);
  for (auto& v : state_.v) std::fill(v.begin(), v.end(), 0.0);
  losses_.clear();
  for (std::size_t s = 0; s < options.steps; ++s) {
    losses_.push_back(objective_.evaluate(grads_, rng));
    apply_weight_decay(grads_, params_, options.weight_decay);
    adam_step(state_, params_, grads_, options.alpha);
  }
  return losses_;
}

AdaptResult adapt(const ParamSet& start, const SampleSet& set, const AdaptOptions& options, Rng& rng) {
  require(!set.empty(), "adaptation set is empty");
  Adapter a(start, set);
  AdaptResult r;
  r.losses = a.run(start, options, rng);
  r.backward_passes = r.losses.size();
  r.params = a.params();
  r.state = a.state();
  return r;
}

AdaptResult inner_adapt(const ParamSet& theta, const SampleSet& support, const AdaptOptions& options, Rng& rng) {
  return adapt(theta, support, options, rng);
}

AdaptResult query_adapt(const ParamSet& theta_prime, const SampleSet& query, const AdaptOptions& options, Rng& rng) {
  return adapt(theta_prime, query, options, rng);
}

std::vector<std::size_t> sample_minibatch(const MetaTrainingSet& meta_set, std::size_t k, Rng& rng) {
  const std::size_t n = meta_set.size();
  require(k > 1 && k <= n, "mini-batch size k must satisfy 1 < k <= N (k=" + std::to_string(k) + ", N=" +
                               std::to_string(n) + ")");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first k slots are a uniform draw without replacement.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(k);
  return order;
}

template <typename T>
void outer_update_buffer(std::span<T> theta, const std::vector<std::span<const T>>& adapted, double beta) {
  require(!adapted.empty(), "outer update needs at least one adapted parameter set");
  const double inv_k = 1.0 / static_cast<double>(adapted.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double base = static_cast<double>(theta[j]);
    double acc = 0.0;
    for (const auto& a : adapted) acc += base - static_cast<double>(a[j]);
    theta[j] = static_cast<T>(base - beta * (acc * inv_k));
  }
}

template void outer_update_buffer<float>(std::span<float>, const std::vector<std::span<const float>>&, double);
template void outer_update_buffer<double>(std::span<double>, const std::vector<std::span<const double>>&, double);

ParamSet outer_update(const ParamSet& theta, const std::vector<ParamSet>& adapted, double beta) {
  require(!adapted.empty(), "outer update needs at least one adapted parameter set");
  require(beta >= 0.0, "outer learning rate must be non-negative");
  for (std::size_t i = 0; i < adapted.size(); ++i) {
    theta.require_compatible(adapted[i], "outer update, adapted set " + std::to_string(i));
  }
  ParamSet out = theta;
  std::vector<std::span<const float>> views(adapted.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    for (std::size_t i = 0; i < adapted.size(); ++i) views[i] = adapted[i].tensor(t).data();
    outer_update_buffer<float>(out.tensor(t).data(), views, beta);
  }
  return out;
}

MetaTrainResult meta_train(const MetaTrainingSet& meta_set, const MetaConfig& config, const ParamSet& initial) {
  meta_set.validate();
  config.validate(meta_set.size());
  for (const auto& t : meta_set.tasks) {
    if (t.support.image_shape()[0] != initial.spec().channels) {
      fail(ErrorKind::ShapeMismatch, "task '" + t.task_id + "' images do not match the backbone channels");
    }
  }

  MetaTrainResult result;
  result.params = initial;
  Rng rng(config.seed);
  const std::size_t n = meta_set.size();
  const std::size_t batches = (n + config.k - 1) / config.k;

  std::vector<std::unique_ptr<Adapter>> support(n), query(n);
  for (std::size_t t = 0; t < n; ++t) {
    support[t] = std::make_unique<Adapter>(initial, meta_set.tasks[t].support);
    query[t] = std::make_unique<Adapter>(initial, meta_set.tasks[t].query);
  }

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.alpha = scheduled_rate({config.alpha, config.decay_factor, config.decay_every}, epoch);
    log.beta = scheduled_rate({config.beta, config.decay_factor, config.decay_every}, epoch);
    const AdaptOptions inner{config.inner_steps, log.alpha, config.adam, config.weight_decay};
    const AdaptOptions outer{config.query_steps, log.alpha, config.adam, config.weight_decay};
    double support_sum = 0.0, query_sum = 0.0;
    std::size_t visits = 0;

    for (std::size_t b = 0; b < batches; ++b) {
      const auto picked = sample_minibatch(meta_set, config.k, rng);
      std::vector<std::uint64_t> task_seeds(picked.size());
      for (auto& s : task_seeds) s = rng();

      std::vector<double> support_loss(picked.size()), query_loss(picked.size());
      const ParamSet& theta = result.params;
      parallel_for(picked.size(), config.threads, [&](std::size_t i) {
        const std::size_t t = picked[i];
        Rng task_rng(task_seeds[i]);
        support_loss[i] = support[t]->run(theta, inner, task_rng).front();
        query_loss[i] = query[t]->run(support[t]->params(), outer, task_rng).front();
      });

      // Outer update in task order, so the sum is independent of thread scheduling.
      std::vector<std::span<const float>> views(picked.size());
      for (std::size_t j = 0; j < result.params.size(); ++j) {
        for (std::size_t i = 0; i < picked.size(); ++i) views[i] = query[picked[i]]->params().tensor(j).data();
        outer_update_buffer<float>(result.params.tensor(j).data(), views, log.beta);
      }
      ++result.outer_updates;
      for (std::size_t i = 0; i < picked.size(); ++i) {
        support_sum += support_loss[i];
        query_sum += query_loss[i];
      }
      result.backward_passes += picked.size() * (config.inner_steps + config.query_steps);
      visits += picked.size();
    }
    log.mean_support_loss = support_sum / static_cast<double>(visits);
    log.mean_query_loss = query_sum / static_cast<double>(visits);
    result.log.push_back(log);
  }
  return result;
}

}  // namespace metaiqa
