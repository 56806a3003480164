#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metaiqa/graph.hpp"

namespace metaiqa {

struct GradCheckEntry {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool pass = true;
  double tolerance = 0.0;
  // Set when some gradient is off: the op whose output gradient agrees with
  // finite differences but whose operand gradients do not.
  std::optional<std::string> failing_op;
};

/// Relative error with a floor tied to the oracle's scale so entries that
/// vanish through cancellation are judged in absolute terms.
double gradient_rel_error(double analytic, double numeric, double scale);

/// Compares the analytic gradients of the graph's scalar output against
/// central differences evaluated on a 64-bit copy of the graph.
///
/// The graph must have been run forward; the check re-runs backward itself.
/// Parameters and inputs flagged `requires_grad` are reported.
template <typename T>
GradCheckReport check_gradients(BasicGraph<T>& graph, double tolerance, double step = 1e-3);

extern template GradCheckReport check_gradients<float>(BasicGraph<float>&, double, double);
extern template GradCheckReport check_gradients<double>(BasicGraph<double>&, double, double);

}  // namespace metaiqa
