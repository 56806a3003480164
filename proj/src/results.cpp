#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "metaiqa/harness.hpp"

namespace metaiqa {

namespace {

std::string field(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", *v);
  return buf;
}

std::optional<double> parse_field(const std::string& s, std::size_t line) {
  if (s == "NA") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::logic_error&) {
  }
  fail(ErrorKind::Io, "results line " + std::to_string(line) + ": bad number '" + s + "'");
}

void check_text(const std::string& s, const char* what) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    fail(ErrorKind::InvalidArgument, std::string("results ") + what + " '" + s + "' contains a CSV delimiter");
  }
}

}  // namespace

ResultsTable ResultsTable::sorted() const {
  ResultsTable t = *this;
  std::stable_sort(t.rows.begin(), t.rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.run_id, a.seed, a.unit, a.phase) < std::tie(b.run_id, b.seed, b.unit, b.phase);
  });
  return t;
}

std::string format_results(const ResultsTable& table) {
  require(!table.empty(), "cannot emit an empty results table");
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& r : table.sorted().rows) {
    check_text(r.run_id, "run id");
    check_text(r.protocol, "protocol");
    check_text(r.unit, "unit");
    check_text(r.phase, "phase");
    out += r.run_id + "," + std::to_string(r.seed) + "," + r.protocol + "," + r.unit + "," + r.phase + "," +
           field(r.plcc) + "," + field(r.srocc) + "," + field(r.loss) + "," + std::to_string(r.wall_ms) + "\n";
  }
  return out;
}

void emit_results(const ResultsTable& table, const std::filesystem::path& path) {
  const std::string text = format_results(table);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot write results to '" + path.string() + "'");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) fail(ErrorKind::Io, "failed writing results to '" + path.string() + "'");
}

ResultsTable parse_results(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) fail(ErrorKind::Io, "results file has an unexpected header");
  ResultsTable t;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() != 9) fail(ErrorKind::Io, "results line " + std::to_string(lineno) + ": expected 9 fields");
    ResultRow r;
    r.run_id = cells[0];
    try {
      r.seed = std::stoull(cells[1]);
      r.wall_ms = std::stoll(cells[8]);
    } catch (const std::logic_error&) {
      fail(ErrorKind::Io, "results line " + std::to_string(lineno) + ": bad integer");
    }
    r.protocol = cells[2];
    r.unit = cells[3];
    r.phase = cells[4];
    r.plcc = parse_field(cells[5], lineno);
    r.srocc = parse_field(cells[6], lineno);
    r.loss = parse_field(cells[7], lineno);
    t.append(std::move(r));
  }
  return t;
}

ResultsTable read_results(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot read results '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_results(ss.str());
}

}  // namespace metaiqa
