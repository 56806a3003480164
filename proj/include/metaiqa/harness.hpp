#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metaiqa/evaluate.hpp"
#include "metaiqa/metalearn.hpp"
#include "metaiqa/taskgen.hpp"

namespace metaiqa {

struct TaskGenConfig {
  std::vector<std::string> families = family_names();
  std::size_t bases = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  double tau = 0.02;
  double support_fraction = 0.5;
  double train_fraction = 0.5;
  // Train share of the pooled random-split protocol.
  double split_fraction = 0.8;
};

struct ExperimentConfig {
  BackboneSpec backbone = BackboneSpec::toy();
  MetaConfig meta;
  FineTuneConfig finetune;
  TaskGenConfig tasks;
  std::string protocol = "lodo";
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string out = "out";
  // Held-out families to evaluate; empty means every configured family.
  std::vector<std::string> held_out;
  std::size_t jobs = 1;
  bool timing = false;
  // Mini-batch size of the single-level baseline arm.
  std::size_t baseline_batch = 20;
  std::vector<std::size_t> sweep_k{2, 3, 5, 7};
  std::vector<std::size_t> sweep_s{1, 3, 6, 9};
  double score_lo = 0.0;
  double score_hi = 1.0;

  void validate() const;
  std::vector<std::string> held_out_families() const;
  std::vector<DistortionFamily> family_set() const;
  LodoOptions lodo_options() const { return {tasks.support_fraction, tasks.train_fraction, tasks.tau}; }
  /// Flat `key = value` rendering of every field, grouped in sections.
  std::string canonical() const;
  std::string hash() const;
};

/// INI text with sections backbone, meta, finetune, tasks, experiment,
/// baseline, sweep and data. Missing keys keep their defaults; unknown keys
/// are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

struct CheckpointInfo {
  std::string config_hash;
  std::size_t epoch = 0;
};

/// Binary parameter file plus a `<path>.meta` sidecar holding the config hash and epoch.
void save_checkpoint(const ParamSet& params, const std::filesystem::path& path, const CheckpointInfo& info = {});
ParamSet load_checkpoint(const std::filesystem::path& path, const BackboneSpec& expected);
std::optional<CheckpointInfo> load_checkpoint_info(const std::filesystem::path& path);

std::string encode_checkpoint(const ParamSet& params);
ParamSet decode_checkpoint(const std::string& bytes, const BackboneSpec& expected);

struct ResultRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string protocol;
  std::string unit;
  std::string phase;
  std::optional<double> plcc;
  std::optional<double> srocc;
  std::optional<double> loss;
  long long wall_ms = 0;
};

struct ResultsTable {
  std::vector<ResultRow> rows;

  void append(ResultRow row) { rows.push_back(std::move(row)); }
  void append(const ResultsTable& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }
  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
  /// Rows sorted by run id, seed, unit and phase.
  ResultsTable sorted() const;
};

inline constexpr const char* kResultsHeader = "run_id,seed,protocol,unit,phase,plcc,srocc,loss,wall_ms";

std::string format_results(const ResultsTable& table);
void emit_results(const ResultsTable& table, const std::filesystem::path& path);
ResultsTable parse_results(const std::string& csv);
ResultsTable read_results(const std::filesystem::path& path);

/// Single-level Adam over every image of the meta-training tasks, one pass of
/// shuffled mini-batches per epoch with the inner-loop rate schedule.
ParamSet baseline_train(const MetaTrainingSet& meta_set, const ExperimentConfig& config, const ParamSet& initial,
                        std::uint64_t seed);

/// SHA-256 over every image id and score of a split, in order.
std::string split_checksum(const LodoSplit& split);

/// Everything one (seed, held-out family) configuration needs.
struct LodoUnit {
  std::uint64_t seed = 0;
  std::vector<BaseImage> bases;
  LodoSplit split;
  ParamSet init;
};

LodoUnit make_lodo_unit(const ExperimentConfig& config, std::uint64_t seed, const std::string& held_out);

struct MetaOutcome {
  MetaTrainResult train;
  ParamSet tuned;
  EvalReport report;
  double train_loss = 0.0;
};

/// meta_train, fine_tune and evaluate on one unit with the given meta settings.
MetaOutcome run_meta_arm(const ExperimentConfig& config, const LodoUnit& unit, const MetaConfig& meta);

ResultsTable run_lodo(const ExperimentConfig& config);
ResultsTable run_ablation(const ExperimentConfig& config);
ResultsTable run_sweep(const ExperimentConfig& config, const std::vector<std::size_t>& k_values,
                       const std::vector<std::size_t>& s_values);
/// Mixed-family 80/20-style split: meta-trained on per-family tasks, then
/// fine-tuned and tested on the pooled split.
ResultsTable run_random_split(const ExperimentConfig& config);

/// Dispatches on `config.protocol`.
ResultsTable run_protocol(const ExperimentConfig& config);

}  // namespace metaiqa
