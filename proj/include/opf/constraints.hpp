#pragma once

#include <optional>
#include <string>
#include <vector>

#include "opf/grid.hpp"

namespace opf {

/// Nonnegative violation degrees for one constraint family, one entry per
/// entity. Equality families report |lhs - rhs|; inequality families report
/// the distance past the nearest bound.
struct FamilyDegrees {
  Vec degrees;

  double mean() const { return degrees.size() ? degrees.mean() : 0.0; }
  double max() const { return degrees.size() ? degrees.maxCoeff() : 0.0; }
  /// Percentage of entities with degree strictly below tau; empty families
  /// report not-applicable.
  std::optional<double> pct_below(double tau) const;
};

struct ViolationReport {
  FamilyDegrees ref_angle;                  // per reference bus
  FamilyDegrees pg_bounds, qg_bounds;       // per generator
  FamilyDegrees vm_bounds;                  // per bus
  FamilyDegrees p_balance, q_balance;       // per bus
  FamilyDegrees ohm_from_p, ohm_from_q;     // per branch
  FamilyDegrees ohm_to_p, ohm_to_q;         // per branch
  FamilyDegrees thermal_from, thermal_to;   // per branch
  FamilyDegrees angle_diff;                 // per branch

  /// Fixed iteration order used by reports and aggregation.
  std::vector<std::pair<std::string, const FamilyDegrees*>> families() const;
  double max_degree() const;
};

/// Generation cost in $/h: sum of c2*pg^2 + c1*pg over generators (per-unit
/// rescaled coefficients; the constant offset is excluded).
double objective_cost(const Grid& grid, const OpfSolution& solution);
double objective_cost(const Grid& grid, const Vec& pg);

struct BranchFlows {
  Vec pf, qf, pt, qt;  // per branch, Grid::branches order
};

/// Branch power flows implied by the bus voltages through the pi-model.
/// Inactive branches get zero flows.
BranchFlows derive_branch_flows(const Grid& grid, const Vec& va, const Vec& vm);

/// Audits every constraint family for the given solution. Balance uses the
/// solution's stored branch flows; ohm families compare stored flows against
/// flows derived from the solution's voltages.
ViolationReport violation_degrees(const Grid& grid, const OpfSolution& solution);

/// Per-family percentage of entities with violation degree < tau.
/// Empty families map to std::nullopt (never a division by zero).
std::vector<std::pair<std::string, std::optional<double>>> feasibility_at_threshold(
    const ViolationReport& report, double tau);

}  // namespace opf
