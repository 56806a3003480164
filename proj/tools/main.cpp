#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <map>

#include "metaiqa/harness.hpp"
#include "metaiqa/model.hpp"

namespace fs = std::filesystem;
using namespace metaiqa;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) c.seeds = {*g.seed};
  if (!g.out.empty()) c.out = g.out;
  return c;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::vector<ScoredImage> all_images(const ExperimentConfig& c, std::uint64_t seed) {
  const auto bases = gen_base_images(c.tasks.bases, c.tasks.height, c.tasks.width, derive_seed(seed, "bases"),
                                     c.backbone.channels);
  std::vector<ScoredImage> out;
  for (const auto& f : c.family_set()) {
    auto part = distort_all(f, bases, c.tasks.tau, derive_seed(seed, "export/" + f.name));
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

// Target task either from the synthetic held-out family or from an imported task set.
TargetTask target_task(const ExperimentConfig& c, std::uint64_t seed, const std::string& held_out,
                       const std::string& data) {
  if (data.empty()) return make_lodo_unit(c, seed, held_out).split.target;
  const auto loaded = import_task_set(data, c.score_lo, c.score_hi);
  std::vector<const LoadedImage*> pick;
  for (const auto& im : loaded) {
    if (held_out.empty() || im.family == held_out) pick.push_back(&im);
  }
  require(pick.size() >= 4, "need at least 4 images for a train/test split");
  Rng rng(derive_seed(seed, "data-split"));
  auto [train_idx, test_idx] = split_bases(pick.size(), c.tasks.train_fraction, rng);
  auto make = [&](const std::vector<std::size_t>& idx) {
    std::vector<Tensor> px;
    std::vector<float> scores;
    std::vector<std::string> ids;
    for (auto i : idx) {
      px.push_back(pick[i]->pixels);
      scores.push_back(static_cast<float>(pick[i]->score));
      ids.push_back(pick[i]->image);
    }
    return make_sample_set(px, std::move(scores), std::move(ids));
  };
  TargetTask t;
  t.train = make(train_idx);
  t.test = make(test_idx);
  t.score_lo = c.score_lo;
  t.score_hi = c.score_hi;
  return t;
}

void write_table(const ResultsTable& t, const fs::path& path) {
  emit_results(t, path);
  std::cout << "wrote " << path.string() << " (" << t.size() << " rows)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned quality prior for no-reference image quality assessment"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Experiment config file (INI)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Run a single seed instead of the configured list");
  app.add_option("--out", g.out, "Output directory");

  std::string held_out, checkpoint, data, image;
  std::size_t index = 0;

  auto* gen = app.add_subcommand("gen-tasks", "Export the synthetic task set as PPM images plus scores.csv");
  auto* meta = app.add_subcommand("meta-train", "Meta-train a quality prior and save a checkpoint");
  meta->add_option("--held-out", held_out, "Family excluded from meta-training");
  auto* ft = app.add_subcommand("fine-tune", "Fine-tune a checkpoint on a target task");
  ft->add_option("--checkpoint", checkpoint, "Prior checkpoint")->required();
  ft->add_option("--held-out", held_out, "Target family");
  ft->add_option("--data", data, "Task-set directory to load instead of synthetic data");
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on a target task");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  ev->add_option("--held-out", held_out, "Target family");
  ev->add_option("--data", data, "Task-set directory to load instead of synthetic data");
  auto* lodo = app.add_subcommand("lodo", "Leave-one-distortion-out protocol");
  auto* abl = app.add_subcommand("ablation", "Meta-learning versus single-level baseline");
  auto* sweep = app.add_subcommand("sweep", "Grid over mini-batch size k and adaptation steps S");
  std::vector<std::size_t> ks, ss;
  sweep->add_option("--k", ks, "k values (default from config)")->delimiter(',');
  sweep->add_option("--s", ss, "S values (default from config)")->delimiter(',');
  auto* split = app.add_subcommand("random-split", "Mixed-family train/test split protocol");
  auto* sal = app.add_subcommand("saliency", "Write a gradient saliency map as PGM");
  sal->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  sal->add_option("--image", image, "PPM image (default: a synthetic test image)");
  sal->add_option("--held-out", held_out, "Family of the synthetic test image");
  sal->add_option("--index", index, "Index into the synthetic test set");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::InvalidArgument);
  }

  try {
    ExperimentConfig c = resolve(g);
    const fs::path out = c.out;
    const std::uint64_t seed = c.seeds.front();
    if (held_out.empty() && !c.held_out.empty()) held_out = c.held_out.front();
    if (held_out.empty() && data.empty() && (*ft || *ev || *sal)) held_out = c.tasks.families.front();

    if (*gen) {
      const auto images = all_images(c, seed);
      export_task_set(out / "tasks", images);
      std::cout << "exported " << images.size() << " images to " << (out / "tasks").string() << "\n";
    } else if (*meta) {
      c.validate();
      MetaTrainingSet set;
      const ParamSet init = build_model(c.backbone, derive_seed(seed, "init"));
      MetaConfig m = c.meta;
      if (held_out.empty()) {
        const auto bases = gen_base_images(c.tasks.bases, c.tasks.height, c.tasks.width, derive_seed(seed, "bases"),
                                           c.backbone.channels);
        for (const auto& f : c.family_set()) {
          Rng rng(derive_seed(seed, "task/" + f.name));
          set.tasks.push_back(build_task(f, bases, c.tasks.support_fraction, rng, c.tasks.tau));
        }
        m.seed = derive_seed(seed, "meta/all");
      } else {
        set = make_lodo_unit(c, seed, held_out).split.meta;
        m.seed = derive_seed(seed, "meta/" + held_out);
      }
      const MetaTrainResult r = meta_train(set, m, init);
      save_checkpoint(r.params, out / "prior.miqa", {c.hash(), r.log.size()});
      ResultsTable t;
      for (const auto& e : r.log) {
        char phase[32];
        std::snprintf(phase, sizeof phase, "epoch-%03zu", e.epoch);
        t.append({"meta-train", seed, "meta-train", held_out.empty() ? "all" : held_out, phase, std::nullopt,
                  std::nullopt, e.mean_query_loss, 0});
      }
      write_table(t, out / "meta_train.csv");
      std::cout << "saved " << (out / "prior.miqa").string() << "\n";
    } else if (*ft) {
      const ParamSet prior = load_checkpoint(checkpoint, c.backbone);
      const TargetTask task = target_task(c, seed, held_out, data);
      const ParamSet tuned = fine_tune(prior, task, c.finetune, derive_seed(seed, "finetune/" + held_out));
      save_checkpoint(tuned, out / "tuned.miqa", {c.hash(), 0});
      const EvalReport r = evaluate_model(tuned, task);
      std::cout << "saved " << (out / "tuned.miqa").string() << "  plcc=" << fmt(r.plcc) << " srocc=" << fmt(r.srocc) << "\n";
    } else if (*ev) {
      const ParamSet theta = load_checkpoint(checkpoint, c.backbone);
      const TargetTask task = target_task(c, seed, held_out, data);
      const EvalReport r = evaluate_model(theta, task);
      ResultsTable t;
      t.append({"evaluate", seed, "evaluate", held_out.empty() ? "data" : held_out, "evaluate", r.plcc, r.srocc,
                std::nullopt, 0});
      write_table(t, out / "evaluate.csv");
      std::cout << "n=" << r.n << " plcc=" << fmt(r.plcc) << " srocc=" << fmt(r.srocc) << "\n";
    } else if (*lodo) {
      c.protocol = "lodo";
      write_table(run_lodo(c), out / "lodo.csv");
    } else if (*abl) {
      c.protocol = "ablation";
      write_table(run_ablation(c), out / "ablation.csv");
    } else if (*sweep) {
      c.protocol = "sweep";
      write_table(run_sweep(c, ks.empty() ? c.sweep_k : ks, ss.empty() ? c.sweep_s : ss), out / "sweep.csv");
    } else if (*split) {
      c.protocol = "random-split";
      write_table(run_random_split(c), out / "random_split.csv");
    } else if (*sal) {
      const ParamSet theta = load_checkpoint(checkpoint, c.backbone);
      Tensor px = image.empty() ? make_lodo_unit(c, seed, held_out).split.target.test.image(index) : read_pnm(image);
      const Tensor map = saliency_map(theta, px);
      fs::create_directories(out);
      write_pgm(out / "saliency.pgm", map);
      std::cout << "wrote " << (out / "saliency.pgm").string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
