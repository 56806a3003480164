#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>

#include "metaiqa/harness.hpp"
#include "metaiqa/model.hpp"
#include "metaiqa/parallel.hpp"

namespace metaiqa {

namespace {

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  long long ms() const {
    if (!enabled_) return 0;
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

SampleSet subset(const SampleSet& set, std::span<const std::size_t> idx) {
  const std::size_t n = shape_numel(set.image_shape());
  const Shape s = set.image_shape();
  std::vector<float> data;
  data.reserve(idx.size() * n);
  SampleSet out;
  for (auto i : idx) {
    auto src = set.images.data().subspan(i * n, n);
    data.insert(data.end(), src.begin(), src.end());
    out.scores.push_back(set.scores[i]);
    out.ids.push_back(set.ids[i]);
  }
  out.images = Tensor({idx.size(), s[0], s[1], s[2]}, std::move(data));
  return out;
}

double train_loss(const ParamSet& theta, const SampleSet& set) {
  const auto pred = predict_images(theta, set.images);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - static_cast<double>(set.scores[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

ResultRow make_row(std::string run_id, std::uint64_t seed, const std::string& protocol, std::string unit,
                   std::string phase, const EvalReport& report, double loss, long long ms) {
  ResultRow r;
  r.run_id = std::move(run_id);
  r.seed = seed;
  r.protocol = protocol;
  r.unit = std::move(unit);
  r.phase = std::move(phase);
  r.plcc = report.plcc;
  r.srocc = report.srocc;
  r.loss = loss;
  r.wall_ms = ms;
  return r;
}

void append_epochs(ResultsTable& t, const std::string& run_id, std::uint64_t seed, const std::string& protocol,
                   const std::string& unit, const MetaTrainResult& train) {
  for (const auto& e : train.log) {
    char phase[32];
    std::snprintf(phase, sizeof phase, "epoch-%03zu", e.epoch);
    ResultRow r;
    r.run_id = run_id;
    r.seed = seed;
    r.protocol = protocol;
    r.unit = unit;
    r.phase = phase;
    r.loss = e.mean_query_loss;
    t.append(std::move(r));
  }
}

bool summary_phase(const std::string& phase) { return phase.rfind("epoch-", 0) != 0 && phase != "invalid"; }

// Mean over units per (run, seed, phase); NA when any contributing value is NA.
void append_averages(ResultsTable& t) {
  struct Acc {
    std::string protocol;
    std::vector<std::optional<double>> plcc, srocc, loss;
  };
  std::map<std::tuple<std::string, std::uint64_t, std::string>, Acc> groups;
  for (const auto& r : t.rows) {
    if (!summary_phase(r.phase)) continue;
    auto& g = groups[{r.run_id, r.seed, r.phase}];
    g.protocol = r.protocol;
    g.plcc.push_back(r.plcc);
    g.srocc.push_back(r.srocc);
    g.loss.push_back(r.loss);
  }
  auto mean = [](const std::vector<std::optional<double>>& v) -> std::optional<double> {
    double s = 0.0;
    for (const auto& x : v) {
      if (!x) return std::nullopt;
      s += *x;
    }
    return s / static_cast<double>(v.size());
  };
  for (const auto& [key, g] : groups) {
    ResultRow r;
    std::tie(r.run_id, r.seed, r.phase) = key;
    r.protocol = g.protocol;
    r.unit = "average";
    r.plcc = mean(g.plcc);
    r.srocc = mean(g.srocc);
    r.loss = mean(g.loss);
    t.append(std::move(r));
  }
}

struct UnitKey {
  std::uint64_t seed;
  std::string family;
};

std::vector<UnitKey> unit_keys(const ExperimentConfig& config) {
  std::vector<UnitKey> keys;
  for (auto s : config.seeds) {
    for (const auto& f : config.held_out_families()) keys.push_back({s, f});
  }
  return keys;
}

ResultsTable run_units(const ExperimentConfig& config, const std::function<ResultsTable(const UnitKey&)>& body) {
  const auto keys = unit_keys(config);
  std::vector<ResultsTable> parts(keys.size());
  parallel_for(keys.size(), config.jobs, [&](std::size_t i) { parts[i] = body(keys[i]); });
  ResultsTable t;
  for (const auto& p : parts) t.append(p);
  append_averages(t);
  return t.sorted();
}

}  // namespace

ParamSet baseline_train(const MetaTrainingSet& meta_set, const ExperimentConfig& config, const ParamSet& initial,
                        std::uint64_t seed) {
  meta_set.validate();
  std::vector<const SampleSet*> parts;
  for (const auto& t : meta_set.tasks) {
    parts.push_back(&t.support);
    parts.push_back(&t.query);
  }
  const SampleSet pooled = concat(parts);
  const std::size_t batch = std::min(config.baseline_batch, pooled.size());
  const std::size_t batches = pooled.size() / batch;
  const MetaConfig& m = config.meta;
  const Schedule schedule{m.alpha, m.decay_factor, m.decay_every};

  ParamSet params = initial;
  AdamState state = adam_init(params, m.adam);
  Rng rng(seed);
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < m.epochs; ++epoch) {
    const double alpha = scheduled_rate(schedule, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < batches; ++b) {
      const SampleSet mb = subset(pooled, std::span<const std::size_t>(order).subspan(b * batch, batch));
      auto lg = loss_and_gradients(params, training_batch(mb, params.spec(), rng), mb.scores);
      apply_weight_decay(lg.grads, params, m.weight_decay);
      adam_step(state, params, lg.grads, alpha);
    }
  }
  return params;
}

std::string split_checksum(const LodoSplit& split) {
  std::string text = "held_out=" + split.held_out + "\n";
  auto add = [&](const std::string& tag, const SampleSet& s) {
    text += tag + "\n";
    for (std::size_t i = 0; i < s.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.9g", s.scores[i]);
      text += s.ids[i] + " " + buf + "\n";
    }
  };
  for (const auto& t : split.meta.tasks) {
    add(t.task_id + "/support", t.support);
    add(t.task_id + "/query", t.query);
  }
  add("target/train", split.target.train);
  add("target/test", split.target.test);
  return to_hex(sha256(text));
}

LodoUnit make_lodo_unit(const ExperimentConfig& config, std::uint64_t seed, const std::string& held_out) {
  LodoUnit u;
  u.seed = seed;
  u.bases = gen_base_images(config.tasks.bases, config.tasks.height, config.tasks.width, derive_seed(seed, "bases"),
                            config.backbone.channels);
  u.split = lodo_split(config.family_set(), held_out, u.bases, config.lodo_options(), seed);
  u.init = build_model(config.backbone, derive_seed(seed, "init"));
  return u;
}

MetaOutcome run_meta_arm(const ExperimentConfig& config, const LodoUnit& unit, const MetaConfig& meta) {
  MetaConfig m = meta;
  m.seed = derive_seed(unit.seed, "meta/" + unit.split.held_out);
  MetaOutcome o;
  o.train = meta_train(unit.split.meta, m, unit.init);
  o.tuned = fine_tune(o.train.params, unit.split.target, config.finetune,
                      derive_seed(unit.seed, "finetune/" + unit.split.held_out));
  o.report = evaluate_model(o.tuned, unit.split.target);
  o.train_loss = train_loss(o.tuned, unit.split.target.train);
  return o;
}

ResultsTable run_lodo(const ExperimentConfig& config) {
  config.validate();
  return run_units(config, [&](const UnitKey& key) {
    ResultsTable t;
    Stopwatch clock(config.timing);
    const LodoUnit unit = make_lodo_unit(config, key.seed, key.family);
    const MetaOutcome o = run_meta_arm(config, unit, config.meta);
    t.append(make_row("lodo", key.seed, "lodo", key.family, "finetune", o.report, o.train_loss, clock.ms()));
    append_epochs(t, "lodo", key.seed, "lodo", key.family, o.train);
    return t;
  });
}

ResultsTable run_ablation(const ExperimentConfig& config) {
  config.validate();
  return run_units(config, [&](const UnitKey& key) {
    ResultsTable t;
    const LodoUnit unit = make_lodo_unit(config, key.seed, key.family);
    const TargetTask& target = unit.split.target;
    const std::uint64_t ft_seed = derive_seed(key.seed, "finetune/" + key.family);

    Stopwatch meta_clock(config.timing);
    const MetaOutcome meta = run_meta_arm(config, unit, config.meta);
    t.append(make_row("ablation", key.seed, "ablation", key.family, "meta", meta.report, meta.train_loss, meta_clock.ms()));
    append_epochs(t, "ablation", key.seed, "ablation", key.family, meta.train);

    Stopwatch base_clock(config.timing);
    const ParamSet base_prior = baseline_train(unit.split.meta, config, unit.init, derive_seed(key.seed, "baseline/" + key.family));
    const ParamSet base = fine_tune(base_prior, target, config.finetune, ft_seed);
    t.append(make_row("ablation", key.seed, "ablation", key.family, "baseline", evaluate_model(base, target),
                      train_loss(base, target.train), base_clock.ms()));

    Stopwatch scratch_clock(config.timing);
    const ParamSet scratch = fine_tune(unit.init, target, config.finetune, ft_seed);
    t.append(make_row("ablation", key.seed, "ablation", key.family, "scratch", evaluate_model(scratch, target),
                      train_loss(scratch, target.train), scratch_clock.ms()));

    if (meta.tuned.parameter_count() != base.parameter_count() || base.parameter_count() != scratch.parameter_count()) {
      fail(ErrorKind::State, "ablation arms ended with different parameter counts");
    }
    return t;
  });
}

ResultsTable run_sweep(const ExperimentConfig& config, const std::vector<std::size_t>& k_values,
                       const std::vector<std::size_t>& s_values) {
  config.validate();
  require(!k_values.empty() && !s_values.empty(), "sweep needs at least one k and one S value");
  const std::size_t tasks = config.family_set().size() - 1;
  return run_units(config, [&](const UnitKey& key) {
    ResultsTable t;
    const LodoUnit unit = make_lodo_unit(config, key.seed, key.family);
    for (auto k : k_values) {
      for (auto s : s_values) {
        const std::string run_id = "sweep-k" + std::to_string(k) + "-s" + std::to_string(s);
        if (k <= 1 || k > tasks || s < 1) {
          ResultRow r;
          r.run_id = run_id;
          r.seed = key.seed;
          r.protocol = "sweep";
          r.unit = key.family;
          r.phase = "invalid";
          t.append(std::move(r));
          continue;
        }
        MetaConfig m = config.meta;
        m.k = k;
        m.inner_steps = s;
        m.query_steps = s;
        Stopwatch clock(config.timing);
        const MetaOutcome o = run_meta_arm(config, unit, m);
        t.append(make_row(run_id, key.seed, "sweep", key.family, "finetune", o.report, o.train_loss, clock.ms()));
      }
    }
    return t;
  });
}

ResultsTable run_random_split(const ExperimentConfig& config) {
  config.validate();
  const auto families = config.family_set();
  std::vector<ResultsTable> parts(config.seeds.size());
  parallel_for(config.seeds.size(), config.jobs, [&](std::size_t i) {
    const std::uint64_t seed = config.seeds[i];
    ResultsTable& t = parts[i];
    Stopwatch clock(config.timing);
    const auto bases = gen_base_images(config.tasks.bases, config.tasks.height, config.tasks.width,
                                       derive_seed(seed, "bases"), config.backbone.channels);
    MetaTrainingSet meta_set;
    for (const auto& f : families) {
      Rng rng(derive_seed(seed, "task/" + f.name));
      meta_set.tasks.push_back(build_task(f, bases, config.tasks.support_fraction, rng, config.tasks.tau));
    }
    // The target database gets its own reference images.
    const auto target_bases = gen_base_images(config.tasks.bases, config.tasks.height, config.tasks.width,
                                              derive_seed(seed, "target-bases"), config.backbone.channels);
    const TargetTask target = random_split(families, target_bases, config.tasks.split_fraction, config.tasks.tau, seed);
    const ParamSet init = build_model(config.backbone, derive_seed(seed, "init"));

    MetaConfig m = config.meta;
    m.seed = derive_seed(seed, "meta/random-split");
    const MetaTrainResult trained = meta_train(meta_set, m, init);
    const std::uint64_t ft_seed = derive_seed(seed, "finetune/random-split");
    const ParamSet tuned = fine_tune(trained.params, target, config.finetune, ft_seed);
    t.append(make_row("random-split", seed, "random-split", "split", "finetune", evaluate_model(tuned, target),
                      train_loss(tuned, target.train), clock.ms()));
    append_epochs(t, "random-split", seed, "random-split", "split", trained);
    const ParamSet scratch = fine_tune(init, target, config.finetune, ft_seed);
    t.append(make_row("random-split", seed, "random-split", "split", "scratch", evaluate_model(scratch, target),
                      train_loss(scratch, target.train), 0));
  });
  ResultsTable t;
  for (const auto& p : parts) t.append(p);
  return t.sorted();
}

ResultsTable run_protocol(const ExperimentConfig& config) {
  if (config.protocol == "lodo") return run_lodo(config);
  if (config.protocol == "ablation") return run_ablation(config);
  if (config.protocol == "sweep") return run_sweep(config, config.sweep_k, config.sweep_s);
  if (config.protocol == "random-split") return run_random_split(config);
  fail(ErrorKind::InvalidArgument, "unknown protocol '" + config.protocol + "'");
}

}  // namespace metaiqa
