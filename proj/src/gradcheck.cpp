#include "metaiqa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace metaiqa {

double gradient_rel_error(double analytic, double numeric, double scale) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3 * scale, 1e-7});
  return std::abs(analytic - numeric) / denom;
}

namespace {

std::vector<double> numeric_gradient(Graph64& oracle, NodeId id, double step) {
  auto& value = oracle.mutable_value(id);
  std::vector<double> out(value.numel());
  const std::size_t next = id.index + 1;
  for (std::size_t i = 0; i < value.numel(); ++i) {
    const double saved = value[i];
    value[i] = saved + step;
    oracle.replay_from(next);
    const double up = oracle.value(oracle.output())[0];
    value[i] = saved - step;
    oracle.replay_from(next);
    const double down = oracle.value(oracle.output())[0];
    value[i] = saved;
    out[i] = (up - down) / (2.0 * step);
  }
  oracle.replay_from(next);
  return out;
}

template <typename T>
double max_error(std::span<const T> analytic, const std::vector<double>& numeric) {
  double scale = 0.0;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    worst = std::max(worst, gradient_rel_error(static_cast<double>(analytic[i]), numeric[i], scale));
  }
  return worst;
}

}  // namespace

template <typename T>
GradCheckReport check_gradients(BasicGraph<T>& graph, double tolerance, double step) {
  GradCheckReport report;
  report.tolerance = tolerance;

  std::vector<NodeId> leaves;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    NodeId id{static_cast<std::uint32_t>(i)};
    const auto kind = graph.kind(id);
    if ((kind == OpKind::Parameter || kind == OpKind::Input) && graph.needs_grad(id)) leaves.push_back(id);
  }
  if (leaves.empty()) return report;

  graph.backward(graph.output());
  Graph64 oracle = graph.template converted<double>();
  oracle.replay_from(0);

  for (NodeId id : leaves) {
    GradCheckEntry e;
    e.name = graph.name(id).empty() ? std::string(op_name(graph.kind(id))) + " #" + std::to_string(id.index)
                                    : graph.name(id);
    auto numeric = numeric_gradient(oracle, id, step);
    e.size = numeric.size();
    e.max_rel_error = max_error(graph.gradient(id), numeric);
    e.pass = e.max_rel_error < tolerance;
    report.pass = report.pass && e.pass;
    report.entries.push_back(std::move(e));
  }
  if (report.pass) return report;

  // Localize: find the op closest to the output whose incoming gradient is
  // right but whose outgoing operand gradients are wrong.
  std::vector<int> ok(graph.size(), -1);
  auto node_ok = [&](NodeId id) {
    if (ok[id.index] < 0) {
      auto numeric = numeric_gradient(oracle, id, step);
      ok[id.index] = max_error(graph.gradient(id), numeric) < tolerance ? 1 : 0;
    }
    return ok[id.index] == 1;
  };
  for (std::size_t i = graph.size(); i-- > 0;) {
    NodeId id{static_cast<std::uint32_t>(i)};
    const auto kind = graph.kind(id);
    if (kind == OpKind::Input || kind == OpKind::Parameter || !graph.needs_grad(id)) continue;
    if (id != graph.output() && !node_ok(id)) continue;
    for (NodeId op : graph.operands(id)) {
      if (graph.needs_grad(op) && !node_ok(op)) {
        report.failing_op = std::string(op_name(kind)) + " (node #" + std::to_string(i) + ")";
        return report;
      }
    }
  }
  return report;
}

template GradCheckReport check_gradients<float>(BasicGraph<float>&, double, double);
template GradCheckReport check_gradients<double>(BasicGraph<double>&, double, double);

}  // namespace metaiqa
