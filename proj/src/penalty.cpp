#include "opf/penalty.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "opf/acpf.hpp"
#include "opf/physics_ad.hpp"
#include "opf/rng.hpp"

namespace opf {

namespace {

double logit_in_bounds(double x, double lo, double hi) {
  if (!(hi > lo)) return 0.0;
  const double u = std::clamp((x - lo) / (hi - lo), 1e-9, 1.0 - 1e-9);
  return std::clamp(std::log(u / (1.0 - u)), -20.0, 20.0);
}

/// One stage objective F(x) = cost/scale + rho * sum of squared residuals,
/// with the residual Jacobian extracted row by row from the shared tape.
struct StageEval {
  double value = 0.0;
  double cost = 0.0;
  double max_balance = 0.0;
  Vec grad;       // dF/dx
  Mat jac;        // residual Jacobian (rows: residual components)
  Vec res;        // residual values
  Vec cost_curv;  // nonnegative diagonal curvature of cost/scale
};

}  // namespace

PenaltyResult solve_acopf_penalty(const Grid& grid, const PenaltyConfig& config,
                                  const std::optional<OpfSolution>& init) {
  validate_grid(grid);
  const GridIndex ix = build_index(grid);
  Rng rng = Rng::child(config.seed, 0x9e1);

  // Decision vector: free angles (reference entries pinned) followed by raw
  // logits for vm, pg, qg.
  const int n = ix.nb + ix.nb + ix.ng + ix.ng;
  Vec x(n);
  for (int s = 0; s < ix.nb; ++s) {
    x[s] = rng.uniform(-0.01, 0.01);
    x[ix.nb + s] = rng.uniform(-0.1, 0.1);
  }
  for (int k = 0; k < ix.ng; ++k) {
    x[2 * ix.nb + k] = rng.uniform(-0.1, 0.1);
    x[2 * ix.nb + ix.ng + k] = rng.uniform(-0.1, 0.1);
  }
  if (init) {
    for (int s = 0; s < ix.nb; ++s) {
      const int b = ix.bus_pos[s];
      x[s] = init->va[b];
      x[ix.nb + s] = logit_in_bounds(init->vm[b], ix.vmin[s], ix.vmax[s]);
    }
    for (int k = 0; k < ix.ng; ++k) {
      const int g = ix.gen_pos[k];
      x[2 * ix.nb + k] = logit_in_bounds(init->pg[g], ix.pmin[k], ix.pmax[k]);
      if (init->has_reactive) {
        x[2 * ix.nb + ix.ng + k] = logit_in_bounds(init->qg[g], ix.qmin[k], ix.qmax[k]);
      }
    }
  }
  for (int r : ix.ref_slots) x[r] = 0.0;

  // Cost normalization keeps the stage objective on a problem-independent
  // scale regardless of the dollar magnitude of the case.
  double cost_scale;
  {
    Vec pg_mid = Vec::Zero(grid.n_generators());
    for (int k = 0; k < ix.ng; ++k) {
      pg_mid[ix.gen_pos[k]] = ix.pmin[k] + 0.5 * (ix.pmax[k] - ix.pmin[k]);
    }
    cost_scale = std::max(1.0, objective_cost(grid, pg_mid));
  }

  const int n_res = 2 * ix.nb + 3 * ix.nbr;
  ad::Tape tape;

  auto evaluate = [&](const Vec& point, double rho, bool with_derivs) {
    tape.clear();
    Mat va_m(ix.nb, 1), vm_m(ix.nb, 1), pg_m(ix.ng, 1), qg_m(ix.ng, 1);
    for (int s = 0; s < ix.nb; ++s) {
      va_m(s, 0) = point[s];
      vm_m(s, 0) = point[ix.nb + s];
    }
    for (int k = 0; k < ix.ng; ++k) {
      pg_m(k, 0) = point[2 * ix.nb + k];
      qg_m(k, 0) = point[2 * ix.nb + ix.ng + k];
    }
    const ad::Var v_va_raw = tape.leaf(va_m);
    const ad::Var v_vm_raw = tape.leaf(vm_m);
    const ad::Var v_pg_raw = tape.leaf(pg_m);
    const ad::Var v_qg_raw = tape.leaf(qg_m);

    const ad::Var mask = tape.constant_owned(ix.nonref_mask);
    const ad::Var v_va = tape.cmul(v_va_raw, mask);
    const ad::Var v_vm = phys::bound_sigmoid(tape, v_vm_raw, ix.vmin, ix.vmax);
    const ad::Var v_pg = phys::bound_sigmoid(tape, v_pg_raw, ix.pmin, ix.pmax);
    const ad::Var v_qg = phys::bound_sigmoid(tape, v_qg_raw, ix.qmin, ix.qmax);

    const phys::IndexConstants cons = phys::put_constants(tape, ix);
    const phys::FlowVars flows = phys::branch_flows(tape, ix, cons, v_va, v_vm);
    const phys::ResidualVars res =
        phys::signed_residuals(tape, ix, cons, v_va, v_vm, v_pg, v_qg, flows);

    ad::Var penalty = tape.sum(tape.square(res.p_residual));
    penalty = tape.add(penalty, tape.sum(tape.square(res.q_residual)));
    penalty = tape.add(penalty, tape.sum(tape.square(res.thermal_from)));
    penalty = tape.add(penalty, tape.sum(tape.square(res.thermal_to)));
    penalty = tape.add(penalty, tape.sum(tape.square(res.angle_diff)));
    const ad::Var cost = phys::generation_cost(tape, ix, v_pg);
    const ad::Var obj =
        tape.add(tape.scale(cost, 1.0 / cost_scale), tape.scale(penalty, rho));

    StageEval ev;
    ev.value = tape.val(obj)(0, 0);
    ev.cost = tape.val(cost)(0, 0);
    ev.max_balance = std::max(tape.val(res.p_residual).cwiseAbs().maxCoeff(),
                              tape.val(res.q_residual).cwiseAbs().maxCoeff());
    if (!with_derivs) return ev;

    auto collect_leaf_grads = [&](Vec& out) {
      out.setZero(n);
      const Mat& g_va = tape.grad(v_va_raw);
      const Mat& g_vm = tape.grad(v_vm_raw);
      if (g_va.size()) out.head(ix.nb) = g_va.col(0);
      if (g_vm.size()) out.segment(ix.nb, ix.nb) = g_vm.col(0);
      const Mat& g_pg = tape.grad(v_pg_raw);
      const Mat& g_qg = tape.grad(v_qg_raw);
      if (g_pg.size()) out.segment(2 * ix.nb, ix.ng) = g_pg.col(0);
      if (g_qg.size()) out.tail(ix.ng) = g_qg.col(0);
    };

    tape.backward(obj);
    collect_leaf_grads(ev.grad);

    // Analytic diagonal curvature of cost/scale in the pg logits; without it
    // the model Hessian is flat along null(J) and dispatch steps overshoot.
    ev.cost_curv = Vec::Zero(n);
    for (int k = 0; k < ix.ng; ++k) {
      const double range = ix.pmax[k] - ix.pmin[k];
      const double sg = 1.0 / (1.0 + std::exp(-point[2 * ix.nb + k]));
      const double d1 = sg * (1.0 - sg) * range;         // d pg / d x
      const double d2 = sg * (1.0 - sg) * (1.0 - 2.0 * sg) * range;
      const double pg = ix.pmin[k] + sg * range;
      const double mc = ix.cost_c1[k] + 2.0 * ix.cost_c2[k] * pg;
      const double curv = (2.0 * ix.cost_c2[k] * d1 * d1 + mc * d2) / cost_scale;
      ev.cost_curv[2 * ix.nb + k] = std::max(curv, 0.0);
    }

    // Residual Jacobian, one seeded reverse pass per component.
    ev.jac.resize(n_res, n);
    ev.res.resize(n_res);
    const ad::Var blocks[5] = {res.p_residual, res.q_residual, res.thermal_from,
                               res.thermal_to, res.angle_diff};
    int row = 0;
    Vec grad_row(n);
    for (const ad::Var block : blocks) {
      const Mat& value = tape.val(block);
      for (int i = 0; i < value.rows(); ++i) {
        tape.zero_grad();
        Mat seed = Mat::Zero(value.rows(), 1);
        seed(i, 0) = 1.0;
        tape.backward_seeded(block, seed);
        collect_leaf_grads(grad_row);
        ev.jac.row(row) = grad_row.transpose();
        ev.res[row] = value(i, 0);
        ++row;
      }
    }
    return ev;
  };

  auto current_solution = [&](const Vec& point) {
    OpfSolution s;
    s.va = Vec::Zero(grid.n_buses());
    s.vm = Vec::Ones(grid.n_buses());
    s.pg = Vec::Zero(grid.n_generators());
    s.qg = Vec::Zero(grid.n_generators());
    auto sig = [](double t) { return 1.0 / (1.0 + std::exp(-t)); };
    for (int s2 = 0; s2 < ix.nb; ++s2) {
      s.va[ix.bus_pos[s2]] = point[s2] * ix.nonref_mask[s2];
      s.vm[ix.bus_pos[s2]] =
          ix.vmin[s2] + sig(point[ix.nb + s2]) * (ix.vmax[s2] - ix.vmin[s2]);
    }
    for (int k = 0; k < ix.ng; ++k) {
      s.pg[ix.gen_pos[k]] =
          ix.pmin[k] + sig(point[2 * ix.nb + k]) * (ix.pmax[k] - ix.pmin[k]);
      s.qg[ix.gen_pos[k]] =
          ix.qmin[k] + sig(point[2 * ix.nb + ix.ng + k]) * (ix.qmax[k] - ix.qmin[k]);
    }
    const BranchFlows f = derive_branch_flows(grid, s.va, s.vm);
    s.pf = f.pf;
    s.qf = f.qf;
    s.pt = f.pt;
    s.qt = f.qt;
    return s;
  };

  auto finish = [&](const Vec& point, bool converged) {
    PenaltyResult out;
    out.solution = current_solution(point);
    out.report = violation_degrees(grid, out.solution);
    out.cost = objective_cost(grid, out.solution);
    out.converged = converged;
    return out;
  };

  PenaltyResult res;
  for (size_t stage = 0; stage < config.rho_schedule.size(); ++stage) {
    const double rho = config.rho_schedule[stage];
    res.stages_used = static_cast<int>(stage) + 1;

    // Damped Gauss-Newton on F = cost/scale + rho |r|^2: the model Hessian
    // 2 rho J'J captures the penalty exactly; damping plus step halving on
    // non-descent covers the cost curvature and hinge kinks.
    double lm = 1e-4;
    StageEval ev = evaluate(x, rho, true);
    for (int it = 0; it < config.inner_steps; ++it) {
      Mat h = 2.0 * rho * ev.jac.transpose() * ev.jac;
      h.diagonal() += ev.cost_curv;
      h.diagonal().array() += lm;
      Vec dir = Eigen::LDLT<Mat>(h).solve(-ev.grad);
      for (int r : ix.ref_slots) dir[r] = 0.0;
      const double dir_max = dir.cwiseAbs().maxCoeff();
      if (dir_max > 4.0) dir *= 4.0 / dir_max;  // keep within the trust range

      // Newton decrement: stop once the model predicts no real progress.
      const double decrement = -0.5 * ev.grad.dot(dir);
      if (decrement <= 1e-15 * (1.0 + std::abs(ev.value))) break;

      // A short halving line search; how far it had to back off feeds the
      // damping update (a full step means the model is trustworthy).
      double step = config.step_size;
      int halvings = 0;
      bool accepted = false;
      for (; halvings < 5; ++halvings) {
        const StageEval next = evaluate(x + step * dir, rho, false);
        if (next.value < ev.value) {
          x += step * dir;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        lm *= 10.0;
        if (lm > 1e12) break;
        continue;  // recompute the direction with stronger damping
      }
      lm = halvings == 0 ? std::max(lm / 3.0, 1e-8) : lm * std::pow(2.0, halvings);
      ev = evaluate(x, rho, true);
    }

    if (std::getenv("OPF_PENALTY_DEBUG")) {
      const StageEval dbg = evaluate(x, rho, true);
      std::fprintf(stderr,
                   "stage rho=%.0e value=%.10g cost=%.2f maxbal=%.2e |grad|=%.2e lm=%.1e\n",
                   rho, dbg.value, dbg.cost, dbg.max_balance,
                   dbg.grad.cwiseAbs().maxCoeff(), lm);
    }
    const StageEval after = evaluate(x, rho, false);
    if (after.max_balance <= config.tol) {
      PenaltyResult out = finish(x, true);
      out.stages_used = res.stages_used;
      return out;
    }
  }

  // Feasibility polish: project onto the power-flow manifold and accept the
  // projection when its audit is completely clean (only then is it a strictly
  // better answer than the raw iterate).
  const int stages_used = res.stages_used;
  res = finish(x, false);
  res.stages_used = stages_used;
  const PfResult pf = restore(grid, res.solution);
  if (pf.converged) {
    const ViolationReport rep = violation_degrees(grid, pf.solution);
    const double bound_viol =
        std::max({rep.pg_bounds.max(), rep.qg_bounds.max(), rep.vm_bounds.max(),
                  rep.thermal_from.max(), rep.thermal_to.max(), rep.angle_diff.max(),
                  rep.ref_angle.max()});
    const double balance = std::max(rep.p_balance.max(), rep.q_balance.max());
    if (bound_viol == 0.0 && balance <= config.tol) {
      PenaltyResult projected;
      projected.converged = true;
      projected.stages_used = stages_used;
      projected.solution = pf.solution;
      projected.report = rep;
      projected.cost = objective_cost(grid, pf.solution);
      return projected;
    }
  }
  return res;
}

}  // namespace opf
