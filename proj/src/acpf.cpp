#include "opf/acpf.hpp"

#include <Eigen/SparseLU>

#include <cmath>

namespace opf {

SpMatC build_ybus(const Grid& grid) {
  const int nb = grid.n_buses();
  std::vector<Eigen::Triplet<Complex>> trip;
  trip.reserve(4 * grid.n_branches() + grid.n_shunts());
  for (const Branch& br : grid.branches) {
    if (!grid.branch_active(br)) continue;
    const PiParams pi = branch_pi_params(br);
    const double tap2 = std::norm(pi.t);
    trip.emplace_back(br.from, br.from, (pi.y + pi.yc_fr) / tap2);
    trip.emplace_back(br.from, br.to, -pi.y / std::conj(pi.t));
    trip.emplace_back(br.to, br.from, -pi.y / pi.t);
    trip.emplace_back(br.to, br.to, pi.y + pi.yc_to);
  }
  for (const Shunt& s : grid.shunts) {
    if (!grid.bus_active(s.bus)) continue;
    trip.emplace_back(s.bus, s.bus, Complex(s.gs, s.bs));
  }
  SpMatC y(nb, nb);
  y.setFromTriplets(trip.begin(), trip.end());
  return y;
}

OpfSolution flat_start(const Grid& grid) {
  OpfSolution s;
  s.va = Vec::Zero(grid.n_buses());
  s.vm = Vec::Ones(grid.n_buses());
  s.pg = Vec::Zero(grid.n_generators());
  s.qg = Vec::Zero(grid.n_generators());
  for (int k = 0; k < grid.n_generators(); ++k) {
    const Generator& g = grid.generators[k];
    s.pg[k] = g.pg;
    s.qg[k] = g.qg;
    s.vm[g.bus] = g.vg;
  }
  const int nbr = grid.n_branches();
  s.pf = Vec::Zero(nbr);
  s.qf = Vec::Zero(nbr);
  s.pt = Vec::Zero(nbr);
  s.qt = Vec::Zero(nbr);
  return s;
}

namespace {

enum class Role { kSlack, kPV, kPQ, kOff };

struct PfWorkspace {
  std::vector<Role> role;            // per bus
  std::vector<std::vector<int>> gens_at;  // per bus, generator indices
  Vec p_spec, q_spec;                // fixed injections (p.u.)
  Vec pd, qd;                        // aggregated demand
  Vec fixed_qg;                      // per generator, clamped PQ-bus output
};

/// Distributes a bus total across co-located generators proportionally to
/// their (lo, hi) ranges: every generator sits at the same normalized point t
/// of its own interval. Keeps individual bounds whenever the bus total is
/// within the aggregate bounds; extrapolates proportionally otherwise.
void distribute_proportional(const std::vector<int>& gens, const Grid& grid,
                             double total, bool reactive, Vec& out) {
  double lo_sum = 0.0, hi_sum = 0.0;
  for (int g : gens) {
    lo_sum += reactive ? grid.generators[g].qmin : grid.generators[g].pmin;
    hi_sum += reactive ? grid.generators[g].qmax : grid.generators[g].pmax;
  }
  const double range = hi_sum - lo_sum;
  const double t = range > 0.0 ? (total - lo_sum) / range : 0.0;
  double assigned = 0.0;
  for (int g : gens) {
    const double lo = reactive ? grid.generators[g].qmin : grid.generators[g].pmin;
    const double hi = reactive ? grid.generators[g].qmax : grid.generators[g].pmax;
    out[g] = lo + t * (hi - lo);
    assigned += out[g];
  }
  if (range <= 0.0 && !gens.empty()) {
    // Degenerate ranges: split the remainder evenly.
    const double residual = (total - assigned) / static_cast<double>(gens.size());
    for (int g : gens) out[g] += residual;
  }
}

}  // namespace

PfResult solve_pf(const Grid& grid, const OpfSolution& init, const PfOptions& opts) {
  const int nb = grid.n_buses();
  PfResult res;
  if (init.va.size() != nb || init.vm.size() != nb ||
      init.pg.size() != grid.n_generators()) {
    res.message = "init shape mismatch";
    return res;
  }

  PfWorkspace w;
  w.role.assign(nb, Role::kOff);
  w.gens_at.assign(nb, {});
  w.pd = Vec::Zero(nb);
  w.qd = Vec::Zero(nb);
  bool any_slack = false;
  for (int i = 0; i < nb; ++i) {
    switch (grid.buses[i].type) {
      case BusType::kRef: w.role[i] = Role::kSlack; any_slack = true; break;
      case BusType::kPV: w.role[i] = Role::kPV; break;
      case BusType::kPQ: w.role[i] = Role::kPQ; break;
      case BusType::kInactive: w.role[i] = Role::kOff; break;
    }
  }
  if (!any_slack) {
    res.message = "no reference bus";
    return res;
  }
  for (const Load& l : grid.loads) {
    w.pd[l.bus] += l.pd;
    w.qd[l.bus] += l.qd;
  }
  for (int g = 0; g < grid.n_generators(); ++g) {
    w.gens_at[grid.generators[g].bus].push_back(g);
  }
  // A PV bus with no generator behaves as PQ.
  for (int i = 0; i < nb; ++i) {
    if (w.role[i] == Role::kPV && w.gens_at[i].empty()) w.role[i] = Role::kPQ;
  }

  // Fixed injections. Generators at PQ buses contribute their initial
  // reactive output clamped into bounds.
  w.fixed_qg = Vec::Zero(grid.n_generators());
  w.p_spec = -w.pd;
  w.q_spec = -w.qd;
  for (int i = 0; i < nb; ++i) {
    for (int g : w.gens_at[i]) {
      if (w.role[i] == Role::kSlack) continue;
      w.p_spec[i] += init.pg[g];
      if (w.role[i] == Role::kPQ) {
        const Generator& gen = grid.generators[g];
        double qg = init.has_reactive && init.qg.size() == grid.n_generators()
                        ? init.qg[g]
                        : 0.0;
        if (opts.enforce_q_limits) qg = std::clamp(qg, gen.qmin, gen.qmax);
        w.fixed_qg[g] = qg;
        w.q_spec[i] += qg;
      }
    }
  }

  const SpMatC ybus = build_ybus(grid);
  Eigen::VectorXcd v(nb);
  for (int i = 0; i < nb; ++i) {
    double vm = init.vm[i];
    if (w.role[i] == Role::kPV || w.role[i] == Role::kSlack) {
      // Scheduled magnitude comes from the init solution.
      vm = init.vm[i];
    }
    v[i] = std::polar(std::max(vm, 0.1), init.va[i]);
  }

  std::vector<Role> role = w.role;  // mutated by PV->PQ conversions
  Vec q_spec = w.q_spec;
  std::vector<int> limited;  // generator-carrying buses at a reactive limit
  std::vector<double> limited_q;  // clamped aggregate injection for those buses

  auto calc_injection = [&](Eigen::VectorXcd& s_calc) {
    const Eigen::VectorXcd i_bus = ybus * v;
    s_calc = v.array() * i_bus.array().conjugate();
  };

  int final_iters = 0;
  bool converged = false;
  for (int outer = 0; outer < opts.max_outer; ++outer) {
    res.outer_iterations = outer + 1;

    // Index maps for this stage.
    std::vector<int> ang_idx(nb, -1), mag_idx(nb, -1);
    std::vector<int> ang_bus, mag_bus;
    for (int i = 0; i < nb; ++i) {
      if (role[i] == Role::kPV || role[i] == Role::kPQ) {
        ang_idx[i] = static_cast<int>(ang_bus.size());
        ang_bus.push_back(i);
      }
      if (role[i] == Role::kPQ) {
        mag_idx[i] = static_cast<int>(mag_bus.size());
        mag_bus.push_back(i);
      }
    }
    const int na = static_cast<int>(ang_bus.size());
    const int nm = static_cast<int>(mag_bus.size());
    const int nx = na + nm;

    converged = false;
    for (int it = 0; it <= opts.max_iter; ++it) {
      Eigen::VectorXcd s_calc;
      calc_injection(s_calc);
      Vec mismatch(nx);
      for (int k = 0; k < na; ++k) {
        mismatch[k] = w.p_spec[ang_bus[k]] - s_calc[ang_bus[k]].real();
      }
      for (int k = 0; k < nm; ++k) {
        mismatch[na + k] = q_spec[mag_bus[k]] - s_calc[mag_bus[k]].imag();
      }
      const double err = nx ? mismatch.cwiseAbs().maxCoeff() : 0.0;
      if (err <= opts.tol) {
        converged = true;
        final_iters = it;
        break;
      }
      if (it == opts.max_iter) break;

      // Polar Jacobian from the Ybus sparsity pattern.
      std::vector<Eigen::Triplet<double>> trip;
      trip.reserve(static_cast<size_t>(ybus.nonZeros()) * 4);
      for (int col = 0; col < ybus.outerSize(); ++col) {
        for (SpMatC::InnerIterator it_y(ybus, col); it_y; ++it_y) {
          const int i = static_cast<int>(it_y.row());
          const int j = col;
          if (role[i] == Role::kSlack || role[i] == Role::kOff) continue;
          const double g = it_y.value().real(), b = it_y.value().imag();
          const double vi = std::abs(v[i]), vj = std::abs(v[j]);
          const double thij = std::arg(v[i]) - std::arg(v[j]);
          const double c = std::cos(thij), s = std::sin(thij);
          double dp_dth, dq_dth, dp_dv, dq_dv;
          if (i == j) {
            const double pi_ = s_calc[i].real(), qi_ = s_calc[i].imag();
            dp_dth = -qi_ - b * vi * vi;
            dq_dth = pi_ - g * vi * vi;
            dp_dv = pi_ / vi + g * vi;
            dq_dv = qi_ / vi - b * vi;
          } else {
            dp_dth = vi * vj * (g * s - b * c);
            dq_dth = -vi * vj * (g * c + b * s);
            dp_dv = vi * (g * c + b * s);
            dq_dv = vi * (g * s - b * c);
          }
          if (ang_idx[j] >= 0) {
            trip.emplace_back(ang_idx[i], ang_idx[j], dp_dth);
            if (mag_idx[i] >= 0) trip.emplace_back(na + mag_idx[i], ang_idx[j], dq_dth);
          }
          if (mag_idx[j] >= 0) {
            trip.emplace_back(ang_idx[i], na + mag_idx[j], dp_dv);
            if (mag_idx[i] >= 0) trip.emplace_back(na + mag_idx[i], na + mag_idx[j], dq_dv);
          }
        }
      }
      SpMat jac(nx, nx);
      jac.setFromTriplets(trip.begin(), trip.end());
      Eigen::SparseLU<SpMat> lu(jac);
      if (lu.info() != Eigen::Success) {
        res.message = "singular Jacobian";
        res.solution = init;
        return res;
      }
      const Vec dx = lu.solve(mismatch);
      if (!dx.allFinite()) {
        res.message = "non-finite Newton step";
        res.solution = init;
        return res;
      }
      for (int k = 0; k < na; ++k) {
        const int i = ang_bus[k];
        v[i] = std::polar(std::abs(v[i]), std::arg(v[i]) + dx[k]);
      }
      for (int k = 0; k < nm; ++k) {
        const int i = mag_bus[k];
        v[i] = std::polar(std::abs(v[i]) + dx[na + k], std::arg(v[i]));
      }
    }
    res.iterations = final_iters;
    if (!converged) {
      res.message = "did not converge";
      res.solution = init;
      return res;
    }
    if (!opts.enforce_q_limits) break;

    // Reactive-limit check on the remaining PV buses.
    Eigen::VectorXcd s_calc;
    calc_injection(s_calc);
    int conversions = 0;
    for (int i = 0; i < nb; ++i) {
      if (role[i] != Role::kPV) continue;
      const double q_bus = s_calc[i].imag() + w.qd[i];
      double qmin_bus = 0.0, qmax_bus = 0.0;
      for (int g : w.gens_at[i]) {
        qmin_bus += grid.generators[g].qmin;
        qmax_bus += grid.generators[g].qmax;
      }
      // Strict trigger: a bus exactly at its limit stays PV and distributes
      // to the bound without violation.
      if (q_bus > qmax_bus) {
        role[i] = Role::kPQ;
        q_spec[i] = qmax_bus - w.qd[i];
        limited.push_back(i);
        ++conversions;
      } else if (q_bus < qmin_bus) {
        role[i] = Role::kPQ;
        q_spec[i] = qmin_bus - w.qd[i];
        limited.push_back(i);
        ++conversions;
      }
    }
    if (conversions == 0) break;
  }

  // Assemble the post-power-flow solution.
  Eigen::VectorXcd s_calc;
  calc_injection(s_calc);
  OpfSolution out;
  out.va.resize(nb);
  out.vm.resize(nb);
  for (int i = 0; i < nb; ++i) {
    out.va[i] = std::arg(v[i]);
    out.vm[i] = std::abs(v[i]);
  }
  out.pg = init.pg;  // non-slack real dispatch is fixed
  out.qg = Vec::Zero(grid.n_generators());
  for (int i = 0; i < nb; ++i) {
    if (w.gens_at[i].empty()) continue;
    if (role[i] == Role::kPV) {
      // Regulating bus: distribute the bus reactive total.
      const double q_bus = s_calc[i].imag() + w.qd[i];
      distribute_proportional(w.gens_at[i], grid, q_bus, true, out.qg);
    } else if (w.role[i] == Role::kPV && role[i] == Role::kPQ) {
      // Limited bus: distribute the enforced aggregate so every generator
      // lands exactly on its violated bound.
      distribute_proportional(w.gens_at[i], grid, q_spec[i] + w.qd[i], true, out.qg);
    } else if (role[i] == Role::kSlack) {
      const double q_bus = s_calc[i].imag() + w.qd[i];
      const double p_bus = s_calc[i].real() + w.pd[i];
      distribute_proportional(w.gens_at[i], grid, q_bus, true, out.qg);
      distribute_proportional(w.gens_at[i], grid, p_bus, false, out.pg);
    } else {
      for (int g : w.gens_at[i]) out.qg[g] = w.fixed_qg[g];
    }
  }
  const BranchFlows flows = derive_branch_flows(grid, out.va, out.vm);
  out.pf = flows.pf;
  out.qf = flows.qf;
  out.pt = flows.pt;
  out.qt = flows.qt;

  res.converged = true;
  res.solution = std::move(out);
  for (int i : limited) res.limited_buses.push_back(grid.buses[i].id);
  return res;
}

PfResult restore(const Grid& grid, const OpfSolution& approx, const PfOptions& opts) {
  OpfSolution init = approx;
  if (!init.has_reactive || init.qg.size() != grid.n_generators()) {
    init.qg = Vec::Zero(grid.n_generators());
    init.has_reactive = true;
  }
  if (init.va.size() != grid.n_buses()) init.va = Vec::Zero(grid.n_buses());
  if (init.vm.size() != grid.n_buses()) init.vm = Vec::Ones(grid.n_buses());
  return solve_pf(grid, init, opts);
}

}  // namespace opf
