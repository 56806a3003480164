#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "metaiqa/harness.hpp"

namespace metaiqa {

namespace {

std::vector<std::string> split_list(const std::string& text, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, sep);) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) fail(ErrorKind::InvalidArgument, "config key '" + key + "': bad value '" + text + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::logic_error&) {
  }
  fail(ErrorKind::InvalidArgument, "config key '" + key + "': bad value '" + text + "'");
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  fail(ErrorKind::InvalidArgument, "config key '" + key + "': expected a boolean, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_uint_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<T>(key, item));
  return out;
}

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    if constexpr (std::is_same_v<T, std::string>) {
      s += v[i];
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

std::string conv_text(const std::vector<ConvLayerSpec>& conv) {
  std::string s;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(conv[i].out_channels) + ":" + std::to_string(conv[i].kernel) + ":" + std::to_string(conv[i].stride);
  }
  return s;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table{
      {"backbone.conv",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.backbone.conv.clear();
         for (const auto& layer : split_list(v)) {
           const auto parts = split_list(layer, ':');
           if (parts.size() != 3) fail(ErrorKind::InvalidArgument, "config key '" + k + "': layers are out:kernel:stride");
           c.backbone.conv.push_back({parse_number<std::size_t>(k, parts[0]), parse_number<std::size_t>(k, parts[1]),
                                      parse_number<std::size_t>(k, parts[2])});
         }
       }},
      {"backbone.hidden", [](auto& c, auto& k, auto& v) { c.backbone.hidden = parse_number<std::size_t>(k, v); }},
      {"backbone.channels", [](auto& c, auto& k, auto& v) { c.backbone.channels = parse_number<std::size_t>(k, v); }},
      {"backbone.height", [](auto& c, auto& k, auto& v) { c.backbone.height = parse_number<std::size_t>(k, v); }},
      {"backbone.width", [](auto& c, auto& k, auto& v) { c.backbone.width = parse_number<std::size_t>(k, v); }},
      {"meta.k", [](auto& c, auto& k, auto& v) { c.meta.k = parse_number<std::size_t>(k, v); }},
      {"meta.inner_steps", [](auto& c, auto& k, auto& v) { c.meta.inner_steps = parse_number<std::size_t>(k, v); }},
      {"meta.query_steps", [](auto& c, auto& k, auto& v) { c.meta.query_steps = parse_number<std::size_t>(k, v); }},
      {"meta.alpha", [](auto& c, auto& k, auto& v) { c.meta.alpha = parse_real(k, v); }},
      {"meta.beta", [](auto& c, auto& k, auto& v) { c.meta.beta = parse_real(k, v); }},
      {"meta.epochs", [](auto& c, auto& k, auto& v) { c.meta.epochs = parse_number<std::size_t>(k, v); }},
      {"meta.weight_decay", [](auto& c, auto& k, auto& v) { c.meta.weight_decay = parse_real(k, v); }},
      {"meta.decay_factor", [](auto& c, auto& k, auto& v) { c.meta.decay_factor = parse_real(k, v); }},
      {"meta.decay_every", [](auto& c, auto& k, auto& v) { c.meta.decay_every = parse_number<std::size_t>(k, v); }},
      {"meta.mu1", [](auto& c, auto& k, auto& v) { c.meta.adam.mu1 = c.finetune.adam.mu1 = parse_real(k, v); }},
      {"meta.mu2", [](auto& c, auto& k, auto& v) { c.meta.adam.mu2 = c.finetune.adam.mu2 = parse_real(k, v); }},
      {"meta.epsilon", [](auto& c, auto& k, auto& v) { c.meta.adam.epsilon = c.finetune.adam.epsilon = parse_real(k, v); }},
      {"meta.bias_correction",
       [](auto& c, auto& k, auto& v) { c.meta.adam.bias_correction = c.finetune.adam.bias_correction = parse_bool(k, v); }},
      {"meta.threads", [](auto& c, auto& k, auto& v) { c.meta.threads = parse_number<std::size_t>(k, v); }},
      {"finetune.steps", [](auto& c, auto& k, auto& v) { c.finetune.steps = parse_number<std::size_t>(k, v); }},
      {"finetune.alpha", [](auto& c, auto& k, auto& v) { c.finetune.alpha = parse_real(k, v); }},
      {"finetune.weight_decay", [](auto& c, auto& k, auto& v) { c.finetune.weight_decay = parse_real(k, v); }},
      {"tasks.families", [](auto& c, auto&, auto& v) { c.tasks.families = split_list(v); }},
      {"tasks.bases", [](auto& c, auto& k, auto& v) { c.tasks.bases = parse_number<std::size_t>(k, v); }},
      {"tasks.height", [](auto& c, auto& k, auto& v) { c.tasks.height = parse_number<std::size_t>(k, v); }},
      {"tasks.width", [](auto& c, auto& k, auto& v) { c.tasks.width = parse_number<std::size_t>(k, v); }},
      {"tasks.tau", [](auto& c, auto& k, auto& v) { c.tasks.tau = parse_real(k, v); }},
      {"tasks.support_fraction", [](auto& c, auto& k, auto& v) { c.tasks.support_fraction = parse_real(k, v); }},
      {"tasks.train_fraction", [](auto& c, auto& k, auto& v) { c.tasks.train_fraction = parse_real(k, v); }},
      {"tasks.split_fraction", [](auto& c, auto& k, auto& v) { c.tasks.split_fraction = parse_real(k, v); }},
      {"experiment.protocol", [](auto& c, auto&, auto& v) { c.protocol = v; }},
      {"experiment.seeds", [](auto& c, auto& k, auto& v) { c.seeds = parse_uint_list<std::uint64_t>(k, v); }},
      {"experiment.out", [](auto& c, auto&, auto& v) { c.out = v; }},
      {"experiment.held_out", [](auto& c, auto&, auto& v) { c.held_out = split_list(v); }},
      {"experiment.jobs", [](auto& c, auto& k, auto& v) { c.jobs = parse_number<std::size_t>(k, v); }},
      {"experiment.timing", [](auto& c, auto& k, auto& v) { c.timing = parse_bool(k, v); }},
      {"baseline.batch", [](auto& c, auto& k, auto& v) { c.baseline_batch = parse_number<std::size_t>(k, v); }},
      {"sweep.k", [](auto& c, auto& k, auto& v) { c.sweep_k = parse_uint_list<std::size_t>(k, v); }},
      {"sweep.s", [](auto& c, auto& k, auto& v) { c.sweep_s = parse_uint_list<std::size_t>(k, v); }},
      {"data.score_lo", [](auto& c, auto& k, auto& v) { c.score_lo = parse_real(k, v); }},
      {"data.score_hi", [](auto& c, auto& k, auto& v) { c.score_hi = parse_real(k, v); }},
  };
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  backbone.validate();
  require(!seeds.empty(), "at least one seed is required");
  require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "seeds must be distinct");
  require(jobs >= 1, "jobs must be >= 1");
  require(baseline_batch >= 1, "baseline batch must be >= 1");
  require(tasks.bases >= 4, "need at least 4 base images so every split side has two");
  require(tasks.height >= backbone.height && tasks.width >= backbone.width,
          "task images must be at least the backbone input size");
  require(tasks.tau > 0.0, "tau must be positive");
  for (double f : {tasks.support_fraction, tasks.train_fraction, tasks.split_fraction}) {
    require(f > 0.0 && f < 1.0, "split fractions must lie in (0, 1)");
  }
  require(score_hi > score_lo, "score range needs hi > lo");
  const std::set<std::string> known{"lodo", "random-split", "ablation", "sweep"};
  if (!known.count(protocol)) fail(ErrorKind::InvalidArgument, "unknown protocol '" + protocol + "'");
  auto fams = family_set();
  require(fams.size() >= 3, "at least 3 distortion families are required");
  for (const auto& h : held_out_families()) find_family(fams, h);
  // Meta settings are checked against N - 1 tasks except in the sweep, where bad k is a per-cell outcome.
  if (protocol != "sweep") meta.validate(fams.size() - 1);
  finetune.validate();
}

std::vector<std::string> ExperimentConfig::held_out_families() const {
  return held_out.empty() ? tasks.families : held_out;
}

std::vector<DistortionFamily> ExperimentConfig::family_set() const {
  const auto all = standard_families();
  std::vector<DistortionFamily> out;
  std::set<std::string> seen;
  for (const auto& name : tasks.families) {
    require(seen.insert(name).second, "family '" + name + "' listed twice");
    out.push_back(find_family(all, name));
  }
  return out;
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream o;
  o << "[backbone]\nconv = " << conv_text(backbone.conv) << "\nhidden = " << backbone.hidden
    << "\nchannels = " << backbone.channels << "\nheight = " << backbone.height << "\nwidth = " << backbone.width
    << "\n\n[meta]\nk = " << meta.k << "\ninner_steps = " << meta.inner_steps << "\nquery_steps = " << meta.query_steps
    << "\nalpha = " << real(meta.alpha) << "\nbeta = " << real(meta.beta) << "\nepochs = " << meta.epochs
    << "\nweight_decay = " << real(meta.weight_decay) << "\ndecay_factor = " << real(meta.decay_factor)
    << "\ndecay_every = " << meta.decay_every << "\nmu1 = " << real(meta.adam.mu1) << "\nmu2 = " << real(meta.adam.mu2)
    << "\nepsilon = " << real(meta.adam.epsilon) << "\nbias_correction = " << (meta.adam.bias_correction ? "true" : "false")
    << "\n\n[finetune]\nsteps = " << finetune.steps << "\nalpha = " << real(finetune.alpha)
    << "\nweight_decay = " << real(finetune.weight_decay) << "\n\n[tasks]\nfamilies = " << join(tasks.families)
    << "\nbases = " << tasks.bases << "\nheight = " << tasks.height << "\nwidth = " << tasks.width
    << "\ntau = " << real(tasks.tau) << "\nsupport_fraction = " << real(tasks.support_fraction)
    << "\ntrain_fraction = " << real(tasks.train_fraction) << "\nsplit_fraction = " << real(tasks.split_fraction)
    << "\n\n[experiment]\nprotocol = " << protocol << "\nseeds = " << join(seeds) << "\nheld_out = " << join(held_out)
    << "\n\n[baseline]\nbatch = " << baseline_batch << "\n\n[sweep]\nk = " << join(sweep_k) << "\ns = " << join(sweep_s)
    << "\n\n[data]\nscore_lo = " << real(score_lo) << "\nscore_hi = " << real(score_hi) << "\n";
  return o.str();
}

std::string ExperimentConfig::hash() const { return to_hex(sha256(canonical())); }

ExperimentConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::InvalidArgument, std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  const auto& table = setters();
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) fail(ErrorKind::InvalidArgument, "config key '" + section + "' must live inside a section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      auto it = table.find(full);
      if (it == table.end()) fail(ErrorKind::InvalidArgument, "unknown config key '" + full + "'");
      it->second(c, full, value.get_value<std::string>());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace metaiqa
