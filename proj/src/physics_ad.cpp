#include "opf/physics_ad.hpp"

namespace opf::phys {

using ad::Tape;
using ad::Var;

IndexConstants put_constants(Tape& t, const GridIndex& ix) {
  IndexConstants c;
  c.pd = t.constant_owned(ix.pd_bus);
  c.qd = t.constant_owned(ix.qd_bus);
  c.gs = t.constant_owned(ix.gs_bus);
  c.bs = t.constant_owned(ix.bs_bus);
  c.g_series = t.constant_owned(ix.g_series);
  c.b_series = t.constant_owned(ix.b_series);
  c.b_fr = t.constant_owned(ix.b_charge_fr);
  c.b_to = t.constant_owned(ix.b_charge_to);
  c.inv_tap = t.constant_owned(ix.tap.cwiseInverse());
  c.inv_tap2 = t.constant_owned(ix.tap.cwiseInverse().cwiseAbs2());
  c.shift = t.constant_owned(ix.shift);
  c.rate_a = t.constant_owned(ix.rate_a);
  c.angmin = t.constant_owned(ix.angmin);
  c.angmax = t.constant_owned(ix.angmax);
  return c;
}

FlowVars branch_flows(Tape& t, const GridIndex& ix, const IndexConstants& c,
                      Var va, Var vm) {
  const Var vf = t.gather_rows(vm, ix.br_from);
  const Var vt_ = t.gather_rows(vm, ix.br_to);
  const Var af = t.gather_rows(va, ix.br_from);
  const Var at = t.gather_rows(va, ix.br_to);

  // theta = af - at - shift; the to-side phase is its negative.
  const Var theta = t.sub(t.sub(af, at), c.shift);
  const Var cth = t.cos(theta);
  const Var sth = t.sin(theta);

  const Var vf2 = t.square(vf);
  const Var vt2 = t.square(vt_);
  const Var vfvt_tap = t.cmul(t.mul(vf, vt_), c.inv_tap);

  const Var g = c.g_series;
  const Var b = c.b_series;
  // pf = g*vf^2/tap^2 - (vf*vt/tap)*(g*cos + b*sin)
  FlowVars f;
  f.pf = t.sub(t.cmul(t.cmul(vf2, g), c.inv_tap2),
               t.mul(vfvt_tap, t.add(t.cmul(cth, g), t.cmul(sth, b))));
  // qf = -(b + b_fr)*vf^2/tap^2 - (vf*vt/tap)*(g*sin - b*cos)
  f.qf = t.sub(t.scale(t.cmul(t.cmul(vf2, t.add(b, c.b_fr)), c.inv_tap2), -1.0),
               t.mul(vfvt_tap, t.sub(t.cmul(sth, g), t.cmul(cth, b))));
  // to side with phase -theta: cos(-th) = cos(th), sin(-th) = -sin(th).
  const Var msth = t.scale(sth, -1.0);
  f.pt = t.sub(t.cmul(vt2, g),
               t.mul(vfvt_tap, t.add(t.cmul(cth, g), t.cmul(msth, b))));
  f.qt = t.sub(t.scale(t.cmul(vt2, t.add(b, c.b_to)), -1.0),
               t.mul(vfvt_tap, t.sub(t.cmul(msth, g), t.cmul(cth, b))));
  return f;
}

ResidualVars signed_residuals(Tape& t, const GridIndex& ix,
                              const IndexConstants& c, Var va, Var vm, Var pg,
                              Var qg, const FlowVars& f) {
  const Var vm2 = t.square(vm);

  Var inj_p = t.sub(t.scatter_sum_rows(pg, ix.gen_bus, ix.nb), c.pd);
  inj_p = t.sub(inj_p, t.cmul(vm2, c.gs));
  Var inj_q = t.sub(t.scatter_sum_rows(qg, ix.gen_bus, ix.nb), c.qd);
  inj_q = t.add(inj_q, t.cmul(vm2, c.bs));

  const Var flow_p = t.add(t.scatter_sum_rows(f.pf, ix.br_from, ix.nb),
                           t.scatter_sum_rows(f.pt, ix.br_to, ix.nb));
  const Var flow_q = t.add(t.scatter_sum_rows(f.qf, ix.br_from, ix.nb),
                           t.scatter_sum_rows(f.qt, ix.br_to, ix.nb));

  ResidualVars r;
  r.p_residual = t.sub(inj_p, flow_p);
  r.q_residual = t.sub(inj_q, flow_q);

  // |S| with a tiny floor inside the root; the hinge gates the gradient, so
  // the floor only prevents a 0/0 at exactly zero flow.
  const Mat eps = Mat::Constant(ix.nbr, 1, 1e-24);
  const Var eps_c = t.constant_owned(eps);
  const Var s_from = t.sqrt(t.cadd(t.add(t.square(f.pf), t.square(f.qf)), eps_c));
  const Var s_to = t.sqrt(t.cadd(t.add(t.square(f.pt), t.square(f.qt)), eps_c));
  r.thermal_from = t.relu(t.sub(s_from, c.rate_a));
  r.thermal_to = t.relu(t.sub(s_to, c.rate_a));

  const Var diff = t.sub(t.gather_rows(va, ix.br_from), t.gather_rows(va, ix.br_to));
  r.angle_diff = t.add(t.relu(t.sub(diff, c.angmax)), t.relu(t.sub(c.angmin, diff)));
  return r;
}

DegreeVars violation_degrees(Tape& t, const GridIndex& ix,
                             const IndexConstants& c, Var va, Var vm, Var pg,
                             Var qg, const FlowVars& f) {
  const ResidualVars r = signed_residuals(t, ix, c, va, vm, pg, qg, f);
  DegreeVars d;
  d.p_balance = t.abs(r.p_residual);
  d.q_balance = t.abs(r.q_residual);
  d.thermal_from = r.thermal_from;
  d.thermal_to = r.thermal_to;
  d.angle_diff = r.angle_diff;
  return d;
}

Var bound_sigmoid(Tape& t, Var raw, const Vec& lo, const Vec& hi) {
  const Var range = t.constant_owned(hi - lo);
  const Var low = t.constant_owned(lo);
  return t.cadd(t.cmul(t.sigmoid(raw), range), low);
}

Var generation_cost(Tape& t, const GridIndex& ix, Var pg) {
  const Var c2 = t.constant_owned(ix.cost_c2);
  const Var c1 = t.constant_owned(ix.cost_c1);
  return t.sum(t.add(t.cmul(t.square(pg), c2), t.cmul(pg, c1)));
}

}  // namespace opf::phys
