#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "metaiqa/harness.hpp"
#include "metaiqa/model.hpp"

using namespace metaiqa;

namespace {

// Small backbone and short runs so whole protocols finish in a few seconds.
const char* kTinyConfig = R"(
[backbone]
conv = 4:3:2, 8:3:2
hidden = 8
height = 16
width = 16

[meta]
k = 2
inner_steps = 1
query_steps = 1
epochs = 2
alpha = 1e-3
beta = 0.5

[finetune]
steps = 3
alpha = 1e-3

[tasks]
bases = 4
height = 16
width = 16

[experiment]
seeds = 0, 1, 2
)";

ExperimentConfig tiny() { return parse_config(kTinyConfig); }

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("metaiqa_harness_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  f << bytes;
}

std::optional<ErrorKind> load_error(const std::filesystem::path& p, const BackboneSpec& spec) {
  try {
    load_checkpoint(p, spec);
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("defaults follow the toy experiment") {
  const ExperimentConfig c = parse_config("");
  CHECK(c.backbone == BackboneSpec::toy());
  CHECK(c.meta.k == 5);
  CHECK(c.meta.inner_steps == 6);
  CHECK(c.finetune.steps == 15);
  CHECK(c.seeds.size() == 5);
  CHECK(c.tasks.families.size() == 8);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse_config(std::string(kTinyConfig) + "\n[data]\nscore_lo = 1\nscore_hi = 5\n");
  CHECK(c.backbone.conv.size() == 2);
  CHECK(c.backbone.conv[1].out_channels == 8);
  CHECK(c.meta.alpha == 1e-3);
  CHECK(c.score_hi == 5.0);
  CHECK(parse_config("[tasks]\nfamilies = brighten, darken, jitter\n").tasks.families ==
        std::vector<std::string>{"brighten", "darken", "jitter"});
  CHECK(c.seeds == std::vector<std::uint64_t>{0, 1, 2});

  CHECK_THROWS_AS(parse_config("[meta]\nspeed = 3\n"), Error);
  CHECK_THROWS_AS(parse_config("[meta]\nk = three\n"), Error);
  CHECK_THROWS_AS(parse_config("stray = 1\n"), Error);
  CHECK_THROWS_AS(parse_config("[meta]\nk = 9\n").validate(), Error);
  CHECK_THROWS_AS(parse_config("[tasks]\nfamilies = brighten, darken\n").validate(), Error);
  CHECK_THROWS_AS(parse_config("[tasks]\nfamilies = brighten, darken, blurrr\n").validate(), Error);
  CHECK_THROWS_AS(parse_config("[experiment]\nprotocol = magic\n").validate(), Error);
}

TEST_CASE("config hash covers results-relevant settings only") {
  const ExperimentConfig a = tiny();
  ExperimentConfig b = a;
  b.out = "elsewhere";
  b.jobs = 4;
  CHECK(a.hash() == b.hash());
  b.meta.beta = 0.25;
  CHECK(a.hash() != b.hash());
  CHECK(a.hash().size() == 64);
}

TEST_CASE("checkpoint round trip is bitwise") {
  const auto dir = scratch("ckpt");
  const ParamSet p = build_model(BackboneSpec::toy(), 12);
  save_checkpoint(p, dir / "p.miqa", {"abc", 30});
  const ParamSet q = load_checkpoint(dir / "p.miqa", BackboneSpec::toy());
  CHECK(q == p);
  CHECK(q.checksum() == p.checksum());
  const auto info = load_checkpoint_info(dir / "p.miqa");
  REQUIRE(info.has_value());
  CHECK(info->config_hash == "abc");
  CHECK(info->epoch == 30);
  CHECK(encode_checkpoint(q) == slurp(dir / "p.miqa"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint faults map to distinct errors") {
  const auto dir = scratch("faults");
  const BackboneSpec spec = BackboneSpec::toy();
  const std::string good = encode_checkpoint(build_model(spec, 1));

  spit(dir / "trunc", good.substr(0, good.size() - 7));
  CHECK(load_error(dir / "trunc", spec) == ErrorKind::CorruptCheckpoint);
  spit(dir / "short", good.substr(0, 3));
  CHECK(load_error(dir / "short", spec) == ErrorKind::CorruptCheckpoint);
  spit(dir / "tail", good + "x");
  CHECK(load_error(dir / "tail", spec) == ErrorKind::CorruptCheckpoint);
  std::string magic = good;
  magic[0] = 'X';
  spit(dir / "magic", magic);
  CHECK(load_error(dir / "magic", spec) == ErrorKind::CorruptCheckpoint);
  std::string version = good;
  version[4] = 2;
  spit(dir / "version", version);
  CHECK(load_error(dir / "version", spec) == ErrorKind::VersionMismatch);

  BackboneSpec other = spec;
  other.hidden = 32;
  spit(dir / "other", encode_checkpoint(build_model(other, 1)));
  CHECK(load_error(dir / "other", spec) == ErrorKind::FingerprintMismatch);
  CHECK(load_error(dir / "missing", spec) == ErrorKind::Io);
  std::filesystem::remove_all(dir);
}

TEST_CASE("results emission") {
  ResultsTable t;
  t.append({"run", 1, "lodo", "b", "finetune", 0.5, std::nullopt, 0.25, 0});
  t.append({"run", 0, "lodo", "z", "finetune", 1.0 / 3.0, -0.125, std::nullopt, 7});
  t.append({"run", 0, "lodo", "a", "finetune", 0.1, 0.2, 0.3, 0});
  const std::string text = format_results(t);
  CHECK(text == std::string(kResultsHeader) + "\n"
                "run,0,lodo,a,finetune,0.100000000,0.200000000,0.300000000,0\n"
                "run,0,lodo,z,finetune,0.333333333,-0.125000000,NA,7\n"
                "run,1,lodo,b,finetune,0.500000000,NA,0.250000000,0\n");
  const ResultsTable back = parse_results(text);
  CHECK(format_results(back) == text);
  CHECK_FALSE(back.rows[1].loss.has_value());

  const auto dir = scratch("results");
  emit_results(t, dir / "a.csv");
  emit_results(t, dir / "b.csv");
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(format_results(read_results(dir / "a.csv")) == text);
  std::filesystem::remove_all(dir);

  CHECK_THROWS_AS(format_results(ResultsTable{}), Error);
  ResultsTable bad;
  bad.append({"a,b", 0, "lodo", "u", "p", std::nullopt, std::nullopt, std::nullopt, 0});
  CHECK_THROWS_AS(format_results(bad), Error);
  CHECK_THROWS_AS(parse_results("nope\n"), Error);
}

TEST_CASE("leave-one-out protocol counts and determinism") {
  const ExperimentConfig c = tiny();
  const ResultsTable t = run_lodo(c);
  std::map<std::string, int> finetune_rows;
  std::set<std::uint64_t> seeds;
  for (const auto& r : t.rows) {
    if (r.phase != "finetune") continue;
    ++finetune_rows[r.unit == "average" ? "average" : "family"];
    seeds.insert(r.seed);
  }
  CHECK(finetune_rows["family"] == 24);
  CHECK(finetune_rows["average"] == 3);
  CHECK(seeds.size() == 3);
  CHECK(format_results(run_lodo(c)) == format_results(t));

  ExperimentConfig threaded = c;
  threaded.jobs = 3;
  CHECK(format_results(run_lodo(threaded)) == format_results(t));
}

TEST_CASE("ablation runs three arms on the same split") {
  ExperimentConfig c = tiny();
  c.protocol = "ablation";
  c.held_out = {"gaussian-blur", "darken"};
  c.seeds = {4};
  const ResultsTable t = run_ablation(c);
  std::set<std::string> phases;
  for (const auto& r : t.rows) {
    if (r.phase.rfind("epoch-", 0) == 0) continue;
    phases.insert(r.phase);
    if (r.unit != "average") CHECK(r.srocc.has_value());
  }
  CHECK(phases == std::set<std::string>{"baseline", "meta", "scratch"});
}

TEST_CASE("sweep grid marks invalid cells and keeps going") {
  ExperimentConfig c = tiny();
  c.protocol = "sweep";
  c.held_out = {"brighten"};
  c.seeds = {0};
  const ResultsTable t = run_sweep(c, {1, 2, 3, 7, 8}, {1, 2});
  std::map<std::string, std::string> cells;
  for (const auto& r : t.rows)
    if (r.unit == "brighten" && r.phase.rfind("epoch-", 0) != 0) cells[r.run_id] = r.phase;
  CHECK(cells.size() == 10);
  CHECK(cells["sweep-k1-s2"] == "invalid");
  CHECK(cells["sweep-k8-s1"] == "invalid");
  CHECK(cells["sweep-k7-s2"] != "invalid");
  CHECK(cells["sweep-k2-s1"] != "invalid");
}

TEST_CASE("sweep cell at the default k and S matches the ablation meta arm") {
  ExperimentConfig c = tiny();
  c.held_out = {"darken"};
  c.seeds = {1};
  c.meta.inner_steps = c.meta.query_steps = 2;
  c.protocol = "ablation";
  const ResultsTable a = run_ablation(c);
  c.protocol = "sweep";
  const ResultsTable s = run_sweep(c, {2}, {2});
  auto find = [](const ResultsTable& t, const std::string& run, const std::string& phase) {
    for (const auto& r : t.rows)
      if (r.run_id == run && r.unit == "darken" && r.phase == phase) return r;
    FAIL("row not found");
    return ResultRow{};
  };
  const ResultRow meta = find(a, "ablation", "meta");
  const ResultRow cell = find(s, "sweep-k2-s2", "finetune");
  CHECK(meta.srocc == cell.srocc);
  CHECK(meta.plcc == cell.plcc);
}

TEST_CASE("random split protocol") {
  ExperimentConfig c = tiny();
  c.protocol = "random-split";
  c.seeds = {0, 1};
  const ResultsTable t = run_random_split(c);
  std::set<std::string> phases;
  for (const auto& r : t.rows)
    if (r.phase.rfind("epoch-", 0) != 0) phases.insert(r.phase);
  CHECK(phases.count("finetune") == 1);
  CHECK(phases.count("scratch") == 1);
  CHECK(format_results(run_random_split(c)) == format_results(t));
}

TEST_CASE("paired arms share the split and initialisation") {
  const ExperimentConfig c = tiny();
  const LodoUnit a = make_lodo_unit(c, 3, "jitter");
  const LodoUnit b = make_lodo_unit(c, 3, "jitter");
  CHECK(split_checksum(a.split) == split_checksum(b.split));
  CHECK(a.init == b.init);
  CHECK(split_checksum(make_lodo_unit(c, 4, "jitter").split) != split_checksum(a.split));
}

}
