// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any fails. The directional criteria run the full desk configuration.
#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "metaiqa/harness.hpp"
#include "metaiqa/model.hpp"
#include "metaiqa/optimizer.hpp"
#include "op_cases.hpp"

using namespace metaiqa;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances.
constexpr int kGradInstances = 100;
constexpr double kGradTolerance = 1e-3;
constexpr double kGradSeconds = 30.0;
constexpr double kAdamTolerance = 1e-6;
constexpr double kMeanTolerance = 1e-7;
constexpr int kMetricCases = 1000;
constexpr double kMetricTolerance = 1e-9;
constexpr double kAblationMargin = 0.05;
constexpr double kAblationSeconds = 15.0 * 60.0;
constexpr std::size_t kFastAdaptWins = 4;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

Verdict gradient_correctness() {
  std::mt19937_64 rng(2024);
  const auto t0 = Clock::now();
  std::size_t checked = 0, failed = 0;
  double worst = 0.0;
  std::string worst_op;
  for (OpKind kind : testing_support::differentiable_ops()) {
    for (int i = 0; i < kGradInstances; ++i) {
      auto c = testing_support::make_op_case(kind, rng);
      c->graph.forward(c->inputs);
      const GradCheckReport r = check_gradients(c->graph, kGradTolerance);
      ++checked;
      if (!r.pass || r.entries.empty()) ++failed;
      for (const auto& e : r.entries) {
        if (e.max_rel_error > worst) {
          worst = e.max_rel_error;
          worst_op = op_name(kind);
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << testing_support::differentiable_ops().size() << " ops x " << kGradInstances << " instances, " << failed
    << " failed, max rel error " << worst << " (" << worst_op << "), " << num(secs, 2) << " s";
  return {failed == 0 && checked > 0 && worst < kGradTolerance && secs < kGradSeconds, d.str()};
}

Verdict adam_oracle() {
  // Hand-computed trajectory for alpha 0.1, mu1 0.9, mu2 0.99, eps 1e-8, g = 1.
  static const double table[20] = {
      -0.099999990000001,   -0.2346874094038468, -0.39193490225082918, -0.5651804385883466,
      -0.75015941062752256, -0.94385184693507238, -1.1440120453518606, -1.3489179908869445,
      -1.5572220343428978,  -1.7678547285582527, -1.9799592892165904, -2.1928449743593851,
      -2.4059528032077199,  -2.6188296790953279, -2.8311084411795447, -3.0424922216255906,
      -3.2527420058038501,  -3.4616666241750949, -3.6691146222782644, -3.8749676026595611};
  AdamOptions o;
  o.mu1 = 0.9;
  o.mu2 = 0.99;
  o.epsilon = 1e-8;
  // Both parameter precisions; moments are double either way.
  double worst = 0.0;
  double step1 = 0.0, step2 = 0.0;
  auto trajectory = [&]<typename T>(T theta) {
    double m = 0.0, v = 0.0;
    const T g = T(1);
    for (std::uint64_t t = 1; t <= 20; ++t) {
      const double before = theta;
      adam_update<T>({&theta, 1}, {&g, 1}, {&m, 1}, {&v, 1}, o, 0.1, t);
      worst = std::max(worst, std::abs(static_cast<double>(theta) - table[t - 1]));
      if (t == 1) step1 = theta - before;
      if (t == 2) step2 = theta;
    }
  };
  trajectory(0.0f);
  trajectory(0.0);
  const bool anchors = std::abs(step1 + 0.1) < 1e-5 && std::abs(step2 + 0.23469) < 1e-5;
  return {worst <= kAdamTolerance && anchors, "max abs error " + sci(worst) + " (float and double), step-1 delta " +
                                                  num(step1, 8) + ", step-2 theta " + num(step2, 8)};
}

Verdict outer_update_algebra() {
  const BackboneSpec spec = BackboneSpec::toy();
  const ParamSet theta = build_model(spec, 1);
  std::vector<ParamSet> adapted;
  for (std::uint64_t s = 2; s < 7; ++s) adapted.push_back(build_model(spec, s));

  const ParamSet mean = outer_update(theta, adapted, 1.0);
  double worst = 0.0;
  for (std::size_t t = 0; t < theta.size(); ++t) {
    const auto& out = mean.tensor(t).data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      double sum = 0.0;
      for (const auto& a : adapted) sum += a.tensor(t).data()[i];
      worst = std::max(worst, std::abs(out[i] - sum / static_cast<double>(adapted.size())));
    }
  }
  const bool noop = outer_update(theta, adapted, 0.0) == theta;

  double x = 1.0;
  const double a = 0.8, b = 0.6;
  outer_update_buffer<double>({&x, 1}, {std::span<const double>(&a, 1), std::span<const double>(&b, 1)}, 0.5);
  const bool worked = x == 0.85;

  return {worst <= kMeanTolerance && noop && worked, "beta=1 max deviation from mean " + sci(worst) +
                                                         ", beta=0 no-op " + (noop ? "yes" : "no") +
                                                         ", worked example " + num(x, 17)};
}

Verdict metric_oracles() {
  using Vec = std::vector<double>;
  const double anchor = *srocc(Vec{1, 2, 3, 4}, Vec{1, 3, 2, 4});
  double worst_anchor = std::abs(anchor - 0.8);

  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_int_distribution<std::size_t> len(3, 40);
  double worst_affine = 0.0, worst_mono = 0.0;
  std::size_t missing = 0;
  for (int c = 0; c < kMetricCases; ++c) {
    const std::size_t n = len(rng);
    Vec x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = u(rng);
      y[i] = u(rng);
    }
    if (has_ties(x) || has_ties(y)) {
      --c;
      continue;
    }
    const double scale = std::exp(std::uniform_real_distribution<double>(-3.0, 3.0)(rng));
    const double shift = u(rng);
    Vec affine(n), mono(n);
    for (std::size_t i = 0; i < n; ++i) {
      affine[i] = scale * y[i] + shift;
      mono[i] = std::exp(y[i] / 4.0) + y[i] * y[i] * y[i];
    }
    const auto p0 = plcc(x, y), p1 = plcc(x, affine);
    const auto s0 = srocc(x, y), s1 = srocc(x, mono);
    if (!p0 || !p1 || !s0 || !s1) {
      ++missing;
      continue;
    }
    worst_affine = std::max(worst_affine, std::abs(*p0 - *p1));
    worst_mono = std::max(worst_mono, std::abs(*s0 - *s1));
  }

  // Tied data goes through fractional ranks.
  std::uniform_int_distribution<int> level(0, 5);
  double worst_ties = 0.0;
  for (int c = 0; c < kMetricCases; ++c) {
    const std::size_t n = len(rng);
    Vec x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = level(rng);
      y[i] = level(rng);
    }
    const auto s = srocc(x, y);
    const auto rx = fractional_ranks(x), ry = fractional_ranks(y);
    const auto p = plcc(rx, ry);
    if (s.has_value() != p.has_value()) {
      ++missing;
      continue;
    }
    if (s) worst_ties = std::max(worst_ties, std::abs(*s - *p));
  }

  const double worst = std::max({worst_anchor, worst_affine, worst_mono, worst_ties});
  std::ostringstream d;
  d << "srocc anchor " << num(anchor, 12) << ", affine " << worst_affine << ", monotone " << worst_mono << ", ties "
    << worst_ties << " over " << kMetricCases << " cases each";
  return {worst <= kMetricTolerance && missing == 0, d.str()};
}

// Per-seed mean SROCC of one phase across held-out families.
std::map<std::uint64_t, double> seed_means(const ResultsTable& t, const std::string& run_id, const std::string& phase) {
  std::map<std::uint64_t, std::pair<double, std::size_t>> acc;
  for (const auto& r : t.rows) {
    if (r.run_id != run_id || r.phase != phase || r.unit == "average") continue;
    auto& [sum, n] = acc[r.seed];
    sum += r.srocc.value_or(0.0);
    ++n;
  }
  std::map<std::uint64_t, double> out;
  for (const auto& [seed, p] : acc) out[seed] = p.first / static_cast<double>(p.second);
  return out;
}

double mean_of(const std::map<std::uint64_t, double>& m) {
  double s = 0.0;
  for (const auto& [seed, v] : m) s += v;
  return m.empty() ? 0.0 : s / static_cast<double>(m.size());
}

std::string per_seed(const std::map<std::uint64_t, double>& m) {
  std::string s;
  for (const auto& [seed, v] : m) s += (s.empty() ? "" : " ") + num(v, 3);
  return "[" + s + "]";
}

struct Run {
  ResultsTable ablation;
  double seconds = 0.0;
};

Verdict directional_ablation(const ExperimentConfig& c, const Run& run) {
  const auto meta = seed_means(run.ablation, "ablation", "meta");
  const auto base = seed_means(run.ablation, "ablation", "baseline");
  const double gap = mean_of(meta) - mean_of(base);
  const bool sizes = meta.size() == c.seeds.size() && base.size() == c.seeds.size();
  std::ostringstream d;
  d << "meta " << num(mean_of(meta)) << " " << per_seed(meta) << " vs baseline " << num(mean_of(base)) << " "
    << per_seed(base) << ", gap " << num(gap) << " (need >= " << kAblationMargin << "), " << num(run.seconds, 1)
    << " s with " << c.jobs << " job(s) on " << std::thread::hardware_concurrency() << " core(s)";
  return {sizes && gap >= kAblationMargin && run.seconds < kAblationSeconds, d.str()};
}

Verdict fast_adaptation(const ExperimentConfig& c, const Run& run) {
  const auto meta = seed_means(run.ablation, "ablation", "meta");
  const auto scratch = seed_means(run.ablation, "ablation", "scratch");
  std::size_t wins = 0;
  for (const auto& [seed, v] : meta) {
    if (scratch.count(seed) && v > scratch.at(seed)) ++wins;
  }
  std::ostringstream d;
  d << "prior wins " << wins << " of " << c.seeds.size() << " seeds, prior " << per_seed(meta) << " vs scratch "
    << per_seed(scratch) << " after " << c.finetune.steps << " steps";
  return {wins >= kFastAdaptWins && meta.size() == c.seeds.size(), d.str()};
}

Verdict sweep_trend(const ExperimentConfig& c, const Run& run, const fs::path& out) {
  // The (k, S) cell equal to the configured meta settings is the ablation's meta arm.
  ExperimentConfig sc = c;
  sc.protocol = "sweep";
  sc.meta.k = 5;
  const ResultsTable s1 = run_sweep(sc, {5}, {1});
  emit_results(s1, out / "sweep_k5_s1.csv");
  std::map<std::uint64_t, double> s6;
  if (c.meta.k == 5 && c.meta.inner_steps == 6 && c.meta.query_steps == 6) {
    s6 = seed_means(run.ablation, "ablation", "meta");
  } else {
    const ResultsTable t = run_sweep(sc, {5}, {6});
    emit_results(t, out / "sweep_k5_s6.csv");
    s6 = seed_means(t, "sweep-k5-s6", "finetune");
  }
  const auto one = seed_means(s1, "sweep-k5-s1", "finetune");
  std::ostringstream d;
  d << "S=6 " << num(mean_of(s6)) << " " << per_seed(s6) << " vs S=1 " << num(mean_of(one)) << " " << per_seed(one);
  return {!s6.empty() && s6.size() == one.size() && mean_of(s6) >= mean_of(one), d.str()};
}

Verdict determinism(const ExperimentConfig& c, const fs::path& out) {
  ExperimentConfig one = c;
  one.seeds = {c.seeds.front()};
  one.held_out = {c.held_out_families().front()};
  one.timing = false;
  const std::string first = format_results(run_ablation(one));
  const std::string second = format_results(run_ablation(one));
  const bool same = first == second;

  const LodoUnit unit = make_lodo_unit(one, one.seeds.front(), one.held_out.front());
  MetaConfig m = one.meta;
  m.epochs = 2;
  const MetaOutcome o = run_meta_arm(one, unit, m);
  const fs::path ckpt = out / "roundtrip.miqa";
  save_checkpoint(o.train.params, ckpt, {one.hash(), m.epochs});
  const ParamSet loaded = load_checkpoint(ckpt, one.backbone);
  const bool round_trip = loaded == o.train.params && encode_checkpoint(loaded) == encode_checkpoint(o.train.params);

  const ParamSet tuned = fine_tune(loaded, unit.split.target, one.finetune, 7);
  bool layout = tuned.parameter_count() == loaded.parameter_count() && tuned.size() == loaded.size();
  for (std::size_t i = 0; layout && i < tuned.size(); ++i) {
    layout = tuned.name(i) == loaded.name(i) && tuned.tensor(i).shape() == loaded.tensor(i).shape();
  }
  std::ostringstream d;
  d << "repeat CSV " << (same ? "identical" : "differs") << " (" << first.size() << " bytes), checkpoint "
    << (round_trip ? "bitwise" : "differs") << ", fine-tune keeps " << tuned.parameter_count() << " of "
    << loaded.parameter_count() << " parameters";
  return {same && round_trip && layout, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string config_path = METAIQA_DESK_CONFIG;
  std::string out_dir = "acceptance";
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  std::vector<int> only;
  app.add_option("--config", config_path, "Desk experiment config")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "Directory for the result CSVs");
  app.add_option("--jobs", jobs, "Parallel units");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  ExperimentConfig c = load_config(config_path);
  c.jobs = jobs;
  c.timing = false;
  c.protocol = "ablation";
  const fs::path out = out_dir;
  fs::create_directories(out);

  auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
  std::optional<Run> run;
  auto full_run = [&]() -> const Run& {
    if (!run) {
      run.emplace();
      const auto t0 = Clock::now();
      run->ablation = run_ablation(c);
      run->seconds = seconds_since(t0);
      emit_results(run->ablation, out / "ablation.csv");
    }
    return *run;
  };

  const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
      {1, gradient_correctness},
      {2, adam_oracle},
      {3, outer_update_algebra},
      {4, metric_oracles},
      {5, [&] { return directional_ablation(c, full_run()); }},
      {6, [&] { return fast_adaptation(c, full_run()); }},
      {7, [&] { return sweep_trend(c, full_run(), out); }},
      {8, [&] { return determinism(c, out); }},
  };

  int failures = 0;
  for (const auto& [n, check] : criteria) {
    if (!wanted(n)) continue;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << "criterion " << n << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
