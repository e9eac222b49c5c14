#pragma once

#include <vector>

#include "opf/constraints.hpp"
#include "opf/grid.hpp"

namespace opf {

/// Bus admittance matrix over all buses (inactive rows/columns left empty).
SpMatC build_ybus(const Grid& grid);

struct PfOptions {
  double tol = 1e-8;          // convergence on max |mismatch| (p.u.)
  int max_iter = 30;          // Newton iterations per outer stage
  int max_outer = 10;         // reactive-limit enforcement rounds
  bool enforce_q_limits = true;
};

struct PfResult {
  bool converged = false;
  int iterations = 0;        // Newton iterations of the final outer stage
  int outer_iterations = 0;  // reactive-limit rounds performed
  OpfSolution solution;
  std::vector<int> limited_buses;  // bus ids converted PV -> PQ
  std::string message;
};

/// Newton-Raphson power flow in polar coordinates with sparse LU steps.
/// `init` supplies the starting voltages, the fixed non-slack generator real
/// power, and the scheduled magnitudes at PV/reference buses. Non-convergence
/// is reported through the result, never thrown.
PfResult solve_pf(const Grid& grid, const OpfSolution& init, const PfOptions& opts = {});

/// Feasibility restoration: re-solves the physics from an approximate
/// solution, keeping non-slack real dispatch fixed.
PfResult restore(const Grid& grid, const OpfSolution& approx, const PfOptions& opts = {});

/// Starting point built from the case data: flat angles, scheduled magnitudes
/// at generator buses, initial dispatch from the case file.
OpfSolution flat_start(const Grid& grid);

}  // namespace opf
