#pragma once

#include <optional>
#include <vector>

#include "opf/constraints.hpp"
#include "opf/grid.hpp"

namespace opf {

struct PenaltyConfig {
  /// Increasing penalty weights; one inner minimization stage per entry.
  std::vector<double> rho_schedule = {1e1, 1e2, 1e3, 1e4, 1e5};
  int inner_steps = 60;        // damped Gauss-Newton iterations per stage
  double step_size = 1.0;      // initial line-search step, halved on non-descent
  double tol = 1e-5;           // convergence on max balance degree
  std::uint64_t seed = 0;      // initialization jitter
};

struct PenaltyResult {
  bool converged = false;
  OpfSolution solution;
  ViolationReport report;
  double cost = 0.0;
  int stages_used = 0;
};

/// Gradient-based AC-OPF: voltage angles free (reference pinned at zero),
/// magnitudes and dispatch sigmoid-reparameterized inside their bounds,
/// branch flows derived from the voltages, and a quadratic penalty on the
/// remaining violation degrees with an increasing weight schedule. Bound and
/// flow constraints hold by construction; the result carries its own audit.
PenaltyResult solve_acopf_penalty(const Grid& grid, const PenaltyConfig& config,
                                  const std::optional<OpfSolution>& init = std::nullopt);

}  // namespace opf
