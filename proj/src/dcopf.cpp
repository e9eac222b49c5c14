#include "opf/dcopf.hpp"

#include <cmath>

namespace opf {

Vec dc_branch_flows(const Grid& grid, const Vec& va) {
  Vec p = Vec::Zero(grid.n_branches());
  for (int k = 0; k < grid.n_branches(); ++k) {
    const Branch& br = grid.branches[k];
    if (!grid.branch_active(br)) continue;
    const double bsus = 1.0 / (br.br_x * br.tap);
    p[k] = bsus * (va[br.from] - va[br.to] - br.shift);
  }
  return p;
}

DcSolution solve_dcopf(const Grid& grid) {
  validate_grid(grid);
  for (const Generator& g : grid.generators) {
    if (g.cost_squared < 0.0) throw OpfError("nonconvex cost (c2 < 0)");
  }
  for (const Branch& br : grid.branches) {
    if (br.br_x == 0.0) throw OpfError("zero-reactance branch in DC model");
  }
  const GridIndex ix = build_index(grid);
  const int ng = ix.ng, nb = ix.nb, nbr = ix.nbr;
  const int n = ng + nb;  // variables: [pg; theta]

  QpProblem qp;
  qp.Q = Mat::Zero(n, n);
  qp.c = Vec::Zero(n);
  for (int k = 0; k < ng; ++k) {
    qp.Q(k, k) = 2.0 * ix.cost_c2[k];
    qp.c[k] = ix.cost_c1[k];
  }

  // Equalities: nodal balance per bus, then one row per reference bus.
  const int me = nb + static_cast<int>(ix.ref_slots.size());
  qp.A = Mat::Zero(me, n);
  qp.b = Vec::Zero(me);
  for (int k = 0; k < ng; ++k) qp.A(ix.gen_bus[k], k) = 1.0;
  for (int k = 0; k < nbr; ++k) {
    const Branch& br = grid.branches[ix.branch_pos[k]];
    const double bsus = 1.0 / (br.br_x * br.tap);
    const int f = ix.br_from[k], t = ix.br_to[k];
    // p_k = bsus*(theta_f - theta_t - shift) leaves f and arrives at t.
    qp.A(f, ng + f) -= bsus;
    qp.A(f, ng + t) += bsus;
    qp.b[f] -= bsus * br.shift;
    qp.A(t, ng + f) += bsus;
    qp.A(t, ng + t) -= bsus;
    qp.b[t] += bsus * br.shift;
  }
  for (int s = 0; s < nb; ++s) {
    // Demand plus shunt conductance at nominal voltage.
    qp.b[s] += ix.pd_bus[s] + ix.gs_bus[s];
  }
  for (size_t r = 0; r < ix.ref_slots.size(); ++r) {
    qp.A(nb + static_cast<int>(r), ng + ix.ref_slots[r]) = 1.0;
  }

  // Inequalities: generator boxes, rated flows, angle differences.
  int rated = 0;
  for (int k = 0; k < nbr; ++k) {
    if (grid.branches[ix.branch_pos[k]].has_thermal_limit()) ++rated;
  }
  const int mi = 2 * ng + 2 * rated + 2 * nbr;
  qp.G = Mat::Zero(mi, n);
  qp.h = Vec::Zero(mi);
  int row = 0;
  for (int k = 0; k < ng; ++k) {
    qp.G(row, k) = 1.0;
    qp.h[row++] = ix.pmax[k];
    qp.G(row, k) = -1.0;
    qp.h[row++] = -ix.pmin[k];
  }
  for (int k = 0; k < nbr; ++k) {
    const Branch& br = grid.branches[ix.branch_pos[k]];
    if (!br.has_thermal_limit()) continue;
    const double bsus = 1.0 / (br.br_x * br.tap);
    const int f = ng + ix.br_from[k], t = ng + ix.br_to[k];
    qp.G(row, f) = bsus;
    qp.G(row, t) = -bsus;
    qp.h[row++] = br.rate_a + bsus * br.shift;
    qp.G(row, f) = -bsus;
    qp.G(row, t) = bsus;
    qp.h[row++] = br.rate_a - bsus * br.shift;
  }
  for (int k = 0; k < nbr; ++k) {
    const Branch& br = grid.branches[ix.branch_pos[k]];
    const int f = ng + ix.br_from[k], t = ng + ix.br_to[k];
    qp.G(row, f) = 1.0;
    qp.G(row, t) = -1.0;
    qp.h[row++] = br.angmax;
    qp.G(row, f) = -1.0;
    qp.G(row, t) = 1.0;
    qp.h[row++] = -br.angmin;
  }

  QpOptions qopts;
  const QpResult qr = solve_qp(qp, qopts);
  if (!qr.converged) {
    // Report the most violated constraint as an infeasibility certificate.
    double worst = 0.0;
    int worst_row = -1;
    const Vec viol = qp.G * qr.x - qp.h;
    for (int i = 0; i < viol.size(); ++i) {
      if (viol[i] > worst) {
        worst = viol[i];
        worst_row = i;
      }
    }
    throw OpfError("DC-OPF did not converge (" + qr.message +
                   "); max inequality violation " + std::to_string(worst) +
                   " at row " + std::to_string(worst_row));
  }

  DcSolution dc;
  dc.qp = qr;
  dc.pg = Vec::Zero(grid.n_generators());
  for (int k = 0; k < ng; ++k) dc.pg[ix.gen_pos[k]] = qr.x[k];
  dc.va = Vec::Zero(grid.n_buses());
  for (int s = 0; s < nb; ++s) dc.va[ix.bus_pos[s]] = qr.x[ng + s];
  dc.cost = objective_cost(grid, dc.pg);
  return dc;
}

OpfSolution dc_to_solution(const Grid& grid, const DcSolution& dc) {
  OpfSolution s;
  s.va = dc.va;
  s.vm = Vec::Ones(grid.n_buses());
  s.pg = dc.pg;
  s.qg = Vec::Zero(grid.n_generators());
  s.pf = dc_branch_flows(grid, dc.va);
  s.pt = -s.pf;
  s.qf = Vec::Zero(grid.n_branches());
  s.qt = Vec::Zero(grid.n_branches());
  s.has_reactive = false;
  return s;
}

PfResult complete_dc_solution(const Grid& grid, const DcSolution& dc,
                              const PfOptions& opts) {
  OpfSolution init = dc_to_solution(grid, dc);
  init.qg = Vec::Zero(grid.n_generators());
  init.has_reactive = true;  // reactive seeded at zero
  return restore(grid, init, opts);
}

}  // namespace opf
