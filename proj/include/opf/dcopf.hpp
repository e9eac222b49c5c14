#pragma once

#include "opf/acpf.hpp"
#include "opf/grid.hpp"
#include "opf/qp.hpp"

namespace opf {

/// Partial OPF solution from the linearized (B-theta) model: real dispatch
/// and bus angles; magnitudes are implicitly 1.0 and reactive quantities are
/// absent.
struct DcSolution {
  Vec pg;  // per generator (p.u.)
  Vec va;  // per bus (rad)
  double cost = 0.0;
  QpResult qp;  // solver certificates (KKT residuals, multipliers)
};

/// DC branch real-power flows implied by the angles: (va_f - va_t - shift)/(x*tap).
Vec dc_branch_flows(const Grid& grid, const Vec& va);

/// Solves the DC-OPF as a convex QP: nodal balance, generator box bounds,
/// linearized thermal limits, angle-difference bounds, reference angle pinned.
/// Throws OpfError with a max-violation certificate when infeasible.
DcSolution solve_dcopf(const Grid& grid);

/// Expands a partial DC solution to a full AC solution by power flow
/// (magnitude targets fixed at 1.0). Propagates non-convergence through the
/// result flag.
PfResult complete_dc_solution(const Grid& grid, const DcSolution& dc,
                              const PfOptions& opts = {});

/// Full solution record for a partial DC result (flows from the DC model,
/// reactive fields zero, has_reactive = false).
OpfSolution dc_to_solution(const Grid& grid, const DcSolution& dc);

}  // namespace opf
