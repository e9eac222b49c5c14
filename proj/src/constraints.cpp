#include "opf/constraints.hpp"

#include <cmath>

namespace opf {

std::optional<double> FamilyDegrees::pct_below(double tau) const {
  if (degrees.size() == 0) return std::nullopt;
  const auto below = (degrees.array() < tau).count();
  return 100.0 * static_cast<double>(below) / static_cast<double>(degrees.size());
}

std::vector<std::pair<std::string, const FamilyDegrees*>> ViolationReport::families() const {
  return {
      {"ref_angle", &ref_angle},       {"pg_bounds", &pg_bounds},
      {"qg_bounds", &qg_bounds},       {"vm_bounds", &vm_bounds},
      {"p_balance", &p_balance},       {"q_balance", &q_balance},
      {"ohm_from_p", &ohm_from_p},     {"ohm_from_q", &ohm_from_q},
      {"ohm_to_p", &ohm_to_p},         {"ohm_to_q", &ohm_to_q},
      {"thermal_from", &thermal_from}, {"thermal_to", &thermal_to},
      {"angle_diff", &angle_diff},
  };
}

double ViolationReport::max_degree() const {
  double m = 0.0;
  for (const auto& [name, fam] : families()) m = std::max(m, fam->max());
  return m;
}

double objective_cost(const Grid& grid, const Vec& pg) {
  double cost = 0.0;
  for (int k = 0; k < grid.n_generators(); ++k) {
    const Generator& g = grid.generators[k];
    cost += g.cost_squared * pg[k] * pg[k] + g.cost_linear * pg[k];
  }
  return cost;
}

double objective_cost(const Grid& grid, const OpfSolution& solution) {
  return objective_cost(grid, solution.pg);
}

BranchFlows derive_branch_flows(const Grid& grid, const Vec& va, const Vec& vm) {
  const int nbr = grid.n_branches();
  BranchFlows f;
  f.pf = Vec::Zero(nbr);
  f.qf = Vec::Zero(nbr);
  f.pt = Vec::Zero(nbr);
  f.qt = Vec::Zero(nbr);
  for (int k = 0; k < nbr; ++k) {
    const Branch& br = grid.branches[k];
    if (!grid.branch_active(br)) continue;
    const PiParams pi = branch_pi_params(br);
    const Complex vf = std::polar(vm[br.from], va[br.from]);
    const Complex vt = std::polar(vm[br.to], va[br.to]);
    const double tap2 = std::norm(pi.t);
    const Complex sf = std::conj(pi.y + pi.yc_fr) * std::norm(vf) / tap2 -
                       std::conj(pi.y) * vf * std::conj(vt) / pi.t;
    const Complex st = std::conj(pi.y + pi.yc_to) * std::norm(vt) -
                       std::conj(pi.y) * vt * std::conj(vf) / std::conj(pi.t);
    f.pf[k] = sf.real();
    f.qf[k] = sf.imag();
    f.pt[k] = st.real();
    f.qt[k] = st.imag();
  }
  return f;
}

namespace {

double bound_violation(double x, double lo, double hi) {
  if (x < lo) return lo - x;
  if (x > hi) return x - hi;
  return 0.0;
}

}  // namespace

ViolationReport violation_degrees(const Grid& grid, const OpfSolution& sol) {
  if (!sol.shape_matches(grid)) throw OpfError("solution shape mismatch");
  const GridIndex ix = build_index(grid);
  ViolationReport rep;

  rep.ref_angle.degrees.resize(static_cast<int>(ix.ref_slots.size()));
  for (size_t r = 0; r < ix.ref_slots.size(); ++r) {
    rep.ref_angle.degrees[static_cast<int>(r)] =
        std::abs(sol.va[ix.bus_pos[ix.ref_slots[r]]]);
  }

  rep.pg_bounds.degrees.resize(ix.ng);
  rep.qg_bounds.degrees.resize(ix.ng);
  for (int k = 0; k < ix.ng; ++k) {
    const int g = ix.gen_pos[k];
    rep.pg_bounds.degrees[k] = bound_violation(sol.pg[g], ix.pmin[k], ix.pmax[k]);
    rep.qg_bounds.degrees[k] =
        sol.has_reactive ? bound_violation(sol.qg[g], ix.qmin[k], ix.qmax[k]) : 0.0;
  }

  rep.vm_bounds.degrees.resize(ix.nb);
  for (int s = 0; s < ix.nb; ++s) {
    rep.vm_bounds.degrees[s] =
        bound_violation(sol.vm[ix.bus_pos[s]], ix.vmin[s], ix.vmax[s]);
  }

  // Bus power balance from the solution's stored branch flows plus shunts.
  Vec inj_p = -ix.pd_bus, inj_q = -ix.qd_bus;
  for (int k = 0; k < ix.ng; ++k) {
    inj_p[ix.gen_bus[k]] += sol.pg[ix.gen_pos[k]];
    if (sol.has_reactive) inj_q[ix.gen_bus[k]] += sol.qg[ix.gen_pos[k]];
  }
  Vec flow_p = Vec::Zero(ix.nb), flow_q = Vec::Zero(ix.nb);
  for (int k = 0; k < ix.nbr; ++k) {
    const int b = ix.branch_pos[k];
    flow_p[ix.br_from[k]] += sol.pf[b];
    flow_q[ix.br_from[k]] += sol.qf[b];
    flow_p[ix.br_to[k]] += sol.pt[b];
    flow_q[ix.br_to[k]] += sol.qt[b];
  }
  rep.p_balance.degrees.resize(ix.nb);
  rep.q_balance.degrees.resize(ix.nb);
  for (int s = 0; s < ix.nb; ++s) {
    const double vm2 = sol.vm[ix.bus_pos[s]] * sol.vm[ix.bus_pos[s]];
    rep.p_balance.degrees[s] = std::abs(inj_p[s] - ix.gs_bus[s] * vm2 - flow_p[s]);
    rep.q_balance.degrees[s] = std::abs(inj_q[s] + ix.bs_bus[s] * vm2 - flow_q[s]);
  }

  // Ohm constraints: stored flows vs flows implied by the voltages.
  const BranchFlows derived = derive_branch_flows(grid, sol.va, sol.vm);
  rep.ohm_from_p.degrees.resize(ix.nbr);
  rep.ohm_from_q.degrees.resize(ix.nbr);
  rep.ohm_to_p.degrees.resize(ix.nbr);
  rep.ohm_to_q.degrees.resize(ix.nbr);
  rep.thermal_from.degrees.resize(ix.nbr);
  rep.thermal_to.degrees.resize(ix.nbr);
  rep.angle_diff.degrees.resize(ix.nbr);
  for (int k = 0; k < ix.nbr; ++k) {
    const int b = ix.branch_pos[k];
    rep.ohm_from_p.degrees[k] = std::abs(sol.pf[b] - derived.pf[b]);
    rep.ohm_from_q.degrees[k] = std::abs(sol.qf[b] - derived.qf[b]);
    rep.ohm_to_p.degrees[k] = std::abs(sol.pt[b] - derived.pt[b]);
    rep.ohm_to_q.degrees[k] = std::abs(sol.qt[b] - derived.qt[b]);

    const Branch& br = grid.branches[b];
    if (br.has_thermal_limit()) {
      rep.thermal_from.degrees[k] =
          std::max(0.0, std::hypot(sol.pf[b], sol.qf[b]) - br.rate_a);
      rep.thermal_to.degrees[k] =
          std::max(0.0, std::hypot(sol.pt[b], sol.qt[b]) - br.rate_a);
    } else {
      rep.thermal_from.degrees[k] = 0.0;
      rep.thermal_to.degrees[k] = 0.0;
    }

    const double d = sol.va[br.from] - sol.va[br.to];
    rep.angle_diff.degrees[k] = bound_violation(d, br.angmin, br.angmax);
  }
  return rep;
}

std::vector<std::pair<std::string, std::optional<double>>> feasibility_at_threshold(
    const ViolationReport& report, double tau) {
  if (!(tau > 0.0)) throw OpfError("threshold must be positive");
  std::vector<std::pair<std::string, std::optional<double>>> out;
  for (const auto& [name, fam] : report.families()) {
    out.emplace_back(name, fam->pct_below(tau));
  }
  return out;
}

}  // namespace opf
