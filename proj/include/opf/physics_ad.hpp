#pragma once

#include "opf/autodiff.hpp"
#include "opf/grid.hpp"

namespace opf {

/// Differentiable physics blocks shared by the penalty solver and the
/// network's loss. All vectors are column matrices over active entities in
/// GridIndex order.
namespace phys {

struct FlowVars {
  ad::Var pf, qf, pt, qt;  // per active branch
};

struct DegreeVars {
  ad::Var p_balance, q_balance;      // per active bus
  ad::Var thermal_from, thermal_to;  // per active branch
  ad::Var angle_diff;                // per active branch
};

/// Constant vectors of the index placed on a tape once per forward pass.
struct IndexConstants {
  ad::Var pd, qd, gs, bs;            // per bus
  ad::Var g_series, b_series, b_fr, b_to, inv_tap, inv_tap2, shift;
  ad::Var rate_a, angmin, angmax;    // per branch
};

IndexConstants put_constants(ad::Tape& t, const GridIndex& ix);

/// Pi-model branch flows from bus voltage angle/magnitude vectors.
FlowVars branch_flows(ad::Tape& t, const GridIndex& ix, const IndexConstants& c,
                      ad::Var va, ad::Var vm);

/// Violation degrees of the families that are not satisfied by construction:
/// bus power balance (split real/reactive), thermal hinges, angle-difference
/// hinges.
DegreeVars violation_degrees(ad::Tape& t, const GridIndex& ix,
                             const IndexConstants& c, ad::Var va, ad::Var vm,
                             ad::Var pg, ad::Var qg, const FlowVars& f);

/// Same quantities with signed balance residuals (identical squared penalty,
/// smooth where the hinges are inactive); used by least-squares-style
/// optimizers.
struct ResidualVars {
  ad::Var p_residual, q_residual;    // signed, per active bus
  ad::Var thermal_from, thermal_to;  // hinges, per active branch
  ad::Var angle_diff;                // hinge, per active branch
};
ResidualVars signed_residuals(ad::Tape& t, const GridIndex& ix,
                              const IndexConstants& c, ad::Var va, ad::Var vm,
                              ad::Var pg, ad::Var qg, const FlowVars& f);

/// Bound enforcement y = sigmoid(raw)*(hi - lo) + lo. Degenerate intervals
/// collapse to the constant lo with zero gradient.
ad::Var bound_sigmoid(ad::Tape& t, ad::Var raw, const Vec& lo, const Vec& hi);

/// Generation cost c2'pg^2 + c1'pg as a 1x1 tape value.
ad::Var generation_cost(ad::Tape& t, const GridIndex& ix, ad::Var pg);

}  // namespace phys
}  // namespace opf
