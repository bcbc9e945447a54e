#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dexfit/tape.hpp"

namespace dexfit {

struct FdResult {
  std::string name;
  double max_rel_err = 0.0;
  double tol = 1e-5;
  int samples = 0;
  bool pass = false;
};

/// Builds the graph under test from fresh input Vars.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Central-difference check of reverse-mode gradients for one input set.
/// Non-scalar outputs are contracted with a random cotangent drawn from rng,
/// so the whole Jacobian is probed, not just a sum of rows. Per-coordinate
/// error metric: |fd - grad| / max(floor, |fd|, |grad|).
FdResult fd_check(const std::string& name, const GraphFn& fn,
                  const std::vector<Tensor>& inputs, std::mt19937_64& rng,
                  double step = 1e-5, double tol = 1e-5, double floor = 1e-2);

/// Randomized sweep over every tape primitive and the rotation-geometry ops,
/// sampled away from their non-smooth sets (kinks, ties, branch cuts, the
/// gimbal band). Deterministic in seed. One result row per op.
std::vector<FdResult> run_primitive_fd_suite(std::uint64_t seed,
                                             int samples_per_op = 120);

}  // namespace dexfit
