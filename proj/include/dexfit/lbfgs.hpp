#pragma once

#include <functional>
#include <vector>

namespace dexfit {

struct LbfgsSettings {
  int history = 10;
  int max_iterations = 200;
  /// Termination threshold on the max-norm of the gradient.
  double grad_tolerance = 1e-8;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_line_search = 30;
};

struct LbfgsResult {
  std::vector<double> x;
  double objective = 0.0;
  std::vector<double> grad;
  /// Objective at x0 followed by each accepted iterate; non-increasing.
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

/// Evaluates the objective at x and fills grad (same length as x).
using ObjectiveFn =
    std::function<double(const std::vector<double>&, std::vector<double>&)>;

/// Limited-memory BFGS with two-loop recursion and a strong-Wolfe line
/// search. Returns the best iterate found; convergence means the gradient
/// tolerance was met. A zero gradient at x0 returns immediately with zero
/// iterations.
LbfgsResult lbfgs_minimize(const ObjectiveFn& fg, std::vector<double> x0,
                           const LbfgsSettings& settings = {});

}  // namespace dexfit
