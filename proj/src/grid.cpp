#include "opf/grid.hpp"

#include <queue>

namespace opf {

std::vector<int> Grid::ref_buses() const {
  std::vector<int> refs;
  for (int i = 0; i < n_buses(); ++i) {
    if (buses[i].type == BusType::kRef) refs.push_back(i);
  }
  return refs;
}

bool OpfSolution::shape_matches(const Grid& g) const {
  const auto nb = g.n_buses(), ng = g.n_generators(), nbr = g.n_branches();
  if (va.size() != nb || vm.size() != nb || pg.size() != ng) return false;
  if (has_reactive && qg.size() != ng) return false;
  return pf.size() == nbr && qf.size() == nbr && pt.size() == nbr &&
         qt.size() == nbr;
}

PiParams branch_pi_params(const Branch& br) {
  if (br.br_r == 0.0 && br.br_x == 0.0) throw OpfError("degenerate branch");
  PiParams p;
  p.y = 1.0 / Complex(br.br_r, br.br_x);
  p.yc_fr = Complex(0.0, br.b_fr);
  p.yc_to = Complex(0.0, br.b_to);
  p.t = std::polar(br.tap, br.shift);
  return p;
}

bool is_connected(const Grid& grid) {
  const int nb = grid.n_buses();
  std::vector<int> active;
  for (int i = 0; i < nb; ++i) {
    if (grid.bus_active(i)) active.push_back(i);
  }
  if (active.empty()) return true;

  int source = active.front();
  for (int i : active) {
    if (grid.buses[i].type == BusType::kRef) {
      source = i;
      break;
    }
  }

  std::vector<std::vector<int>> adj(nb);
  for (const Branch& br : grid.branches) {
    if (!grid.branch_active(br)) continue;
    adj[br.from].push_back(br.to);
    adj[br.to].push_back(br.from);
  }

  std::vector<char> seen(nb, 0);
  std::queue<int> q;
  q.push(source);
  seen[source] = 1;
  int count = 0;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    ++count;
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        q.push(v);
      }
    }
  }
  return count == static_cast<int>(active.size());
}

void validate_grid(const Grid& grid) {
  const int nb = grid.n_buses();
  bool has_ref = false;
  for (const Bus& b : grid.buses) {
    if (!(b.vmin > 0.0) || b.vmin > b.vmax) throw OpfError("bad voltage bounds");
    if (b.type == BusType::kRef) has_ref = true;
  }
  if (!has_ref) throw OpfError("no reference bus");
  auto check_bus = [&](int b, const char* what) {
    if (b < 0 || b >= nb) throw OpfError(std::string("dangling bus reference in ") + what);
    if (!grid.bus_active(b)) throw OpfError(std::string("element attached to inactive bus in ") + what);
  };
  for (const Generator& g : grid.generators) {
    check_bus(g.bus, "generator");
    if (g.pmin > g.pmax || g.qmin > g.qmax) throw OpfError("bad generator bounds");
  }
  for (const Load& l : grid.loads) check_bus(l.bus, "load");
  for (const Shunt& s : grid.shunts) check_bus(s.bus, "shunt");
  for (const Branch& br : grid.branches) {
    check_bus(br.from, "branch");
    check_bus(br.to, "branch");
    if (br.br_r == 0.0 && br.br_x == 0.0) throw OpfError("degenerate branch");
    if (br.tap <= 0.0) throw OpfError("nonpositive tap ratio");
    if (br.angmin > br.angmax) throw OpfError("bad angle-difference bounds");
    if (br.rate_a < 0.0) throw OpfError("negative thermal rating");
  }
  if (!is_connected(grid)) throw OpfError("grid is not connected");
}

GridIndex build_index(const Grid& grid) {
  GridIndex ix;
  const int nb_all = grid.n_buses();
  ix.bus_slot.assign(nb_all, -1);
  for (int i = 0; i < nb_all; ++i) {
    if (!grid.bus_active(i)) continue;
    ix.bus_slot[i] = static_cast<int>(ix.bus_pos.size());
    ix.bus_pos.push_back(i);
  }
  ix.nb = static_cast<int>(ix.bus_pos.size());

  ix.pd_bus = Vec::Zero(ix.nb);
  ix.qd_bus = Vec::Zero(ix.nb);
  ix.gs_bus = Vec::Zero(ix.nb);
  ix.bs_bus = Vec::Zero(ix.nb);
  ix.vmin.resize(ix.nb);
  ix.vmax.resize(ix.nb);
  ix.nonref_mask = Vec::Ones(ix.nb);
  for (int s = 0; s < ix.nb; ++s) {
    const Bus& b = grid.buses[ix.bus_pos[s]];
    ix.vmin[s] = b.vmin;
    ix.vmax[s] = b.vmax;
    if (b.type == BusType::kRef) {
      ix.ref_slots.push_back(s);
      ix.nonref_mask[s] = 0.0;
    }
  }
  for (const Load& l : grid.loads) {
    int s = ix.bus_slot[l.bus];
    ix.pd_bus[s] += l.pd;
    ix.qd_bus[s] += l.qd;
  }
  for (const Shunt& sh : grid.shunts) {
    int s = ix.bus_slot[sh.bus];
    ix.gs_bus[s] += sh.gs;
    ix.bs_bus[s] += sh.bs;
  }

  for (int g = 0; g < grid.n_generators(); ++g) {
    const Generator& gen = grid.generators[g];
    if (!grid.bus_active(gen.bus)) continue;
    ix.gen_pos.push_back(g);
    ix.gen_bus.push_back(ix.bus_slot[gen.bus]);
  }
  ix.ng = static_cast<int>(ix.gen_pos.size());
  ix.pmin.resize(ix.ng);
  ix.pmax.resize(ix.ng);
  ix.qmin.resize(ix.ng);
  ix.qmax.resize(ix.ng);
  ix.cost_c2.resize(ix.ng);
  ix.cost_c1.resize(ix.ng);
  for (int k = 0; k < ix.ng; ++k) {
    const Generator& gen = grid.generators[ix.gen_pos[k]];
    ix.pmin[k] = gen.pmin;
    ix.pmax[k] = gen.pmax;
    ix.qmin[k] = gen.qmin;
    ix.qmax[k] = gen.qmax;
    ix.cost_c2[k] = gen.cost_squared;
    ix.cost_c1[k] = gen.cost_linear;
  }

  for (int b = 0; b < grid.n_branches(); ++b) {
    if (!grid.branch_active(grid.branches[b])) continue;
    ix.branch_pos.push_back(b);
  }
  ix.nbr = static_cast<int>(ix.branch_pos.size());
  ix.br_from.resize(ix.nbr);
  ix.br_to.resize(ix.nbr);
  ix.g_series.resize(ix.nbr);
  ix.b_series.resize(ix.nbr);
  ix.b_charge_fr.resize(ix.nbr);
  ix.b_charge_to.resize(ix.nbr);
  ix.tap.resize(ix.nbr);
  ix.shift.resize(ix.nbr);
  ix.rate_a.resize(ix.nbr);
  ix.angmin.resize(ix.nbr);
  ix.angmax.resize(ix.nbr);
  for (int k = 0; k < ix.nbr; ++k) {
    const Branch& br = grid.branches[ix.branch_pos[k]];
    const PiParams pi = branch_pi_params(br);
    ix.br_from[k] = ix.bus_slot[br.from];
    ix.br_to[k] = ix.bus_slot[br.to];
    ix.g_series[k] = pi.y.real();
    ix.b_series[k] = pi.y.imag();
    ix.b_charge_fr[k] = br.b_fr;
    ix.b_charge_to[k] = br.b_to;
    ix.tap[k] = br.tap;
    ix.shift[k] = br.shift;
    ix.rate_a[k] = br.has_thermal_limit() ? br.rate_a : GridIndex::kNoRate;
    ix.angmin[k] = br.angmin;
    ix.angmax[k] = br.angmax;
  }
  return ix;
}

}  // namespace opf
