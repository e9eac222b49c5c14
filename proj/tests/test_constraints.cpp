#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "opf/constraints.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace opf;

namespace {

OpfSolution zero_solution(const Grid& g) {
  OpfSolution s;
  s.va = Vec::Zero(g.n_buses());
  s.vm = Vec::Ones(g.n_buses());
  s.pg = Vec::Zero(g.n_generators());
  s.qg = Vec::Zero(g.n_generators());
  s.pf = Vec::Zero(g.n_branches());
  s.qf = Vec::Zero(g.n_branches());
  s.pt = Vec::Zero(g.n_branches());
  s.qt = Vec::Zero(g.n_branches());
  return s;
}

OpfSolution solution_from_voltages(const Grid& g, const Vec& va, const Vec& vm) {
  OpfSolution s = zero_solution(g);
  s.va = va;
  s.vm = vm;
  const BranchFlows f = derive_branch_flows(g, va, vm);
  s.pf = f.pf;
  s.qf = f.qf;
  s.pt = f.pt;
  s.qt = f.qt;
  return s;
}

}  // namespace

TEST_CASE("objective cost in dollars per hour") {
  // c1 equivalent to 40 $/MWh at base 100 MVA, pg = 0.5 p.u. -> 2000 $/h.
  Grid g = testutil::two_bus();
  g.generators[0].cost_squared = 0.0;
  g.generators[0].cost_linear = 40.0 * 100.0;
  OpfSolution s = zero_solution(g);
  s.pg[0] = 0.5;
  CHECK(objective_cost(g, s) == doctest::Approx(2000.0));

  s.pg[0] = 0.0;
  CHECK(objective_cost(g, s) == 0.0);
}

TEST_CASE("objective cost quadratic term against mixed-units evaluation") {
  // Two generators, c2 = 0.01 $/MW^2 h, pg = 1 p.u. at base 100:
  // raw units 0.01 * (100 MW)^2 per generator.
  Grid g = testutil::two_bus();
  g.generators.push_back(g.generators[0]);
  g.generators[1].id = 2;
  for (auto& gen : g.generators) {
    gen.cost_squared = 0.01 * 100.0 * 100.0;
    gen.cost_linear = 0.0;
  }
  OpfSolution s = zero_solution(g);
  s.pg.setOnes();
  const double mixed_units = 2 * (0.01 * std::pow(1.0 * g.base_mva, 2));
  CHECK(objective_cost(g, s) == doctest::Approx(mixed_units).epsilon(1e-12));
  CHECK(objective_cost(g, s) == doctest::Approx(200.0));
}

TEST_CASE("derive_branch_flows on a lossless line") {
  Grid g = testutil::two_bus(0.5, 0.0, 0.0, 0.1);
  Vec va(2), vm(2);

  SUBCASE("equal voltages carry no flow") {
    va << 0.0, 0.0;
    vm << 1.0, 1.0;
    const BranchFlows f = derive_branch_flows(g, va, vm);
    CHECK(f.pf[0] == doctest::Approx(0.0));
    CHECK(f.qf[0] == doctest::Approx(0.0));
    CHECK(f.pt[0] == doctest::Approx(0.0));
    CHECK(f.qt[0] == doctest::Approx(0.0));
  }

  SUBCASE("angle difference against the complex-arithmetic oracle") {
    va << 0.0, -0.1;
    vm << 1.0, 1.0;
    const BranchFlows f = derive_branch_flows(g, va, vm);
    // Oracle: S_f = V_f conj((V_f - V_t) * y) with y = 1/(j 0.1) = -10j.
    const Complex vf = std::polar(1.0, 0.0), vt = std::polar(1.0, -0.1);
    const Complex sf = vf * std::conj((vf - vt) * Complex(0.0, -10.0));
    CHECK(f.pf[0] == doctest::Approx(sf.real()).epsilon(1e-12));
    CHECK(f.qf[0] == doctest::Approx(sf.imag()).epsilon(1e-12));
    CHECK(f.pf[0] == doctest::Approx(0.99833).epsilon(1e-4));
    CHECK(f.qf[0] == doctest::Approx(0.04996).epsilon(1e-3));
  }

  SUBCASE("lossless branches conserve real power") {
    Rng rng(11);
    for (int k = 0; k < 50; ++k) {
      va << 0.0, rng.uniform(-0.5, 0.5);
      vm << rng.uniform(0.9, 1.1), rng.uniform(0.9, 1.1);
      const BranchFlows f = derive_branch_flows(g, va, vm);
      CHECK(std::abs(f.pf[0] + f.pt[0]) < 1e-12);
    }
  }
}

TEST_CASE("violation degrees: isolated imbalance and bound overshoot") {
  // Load-only bus: the balance degree equals the demand.
  Grid g = testutil::two_bus(1.0, 0.0);
  OpfSolution s = zero_solution(g);
  const ViolationReport rep = violation_degrees(g, s);
  CHECK(rep.p_balance.degrees[1] == doctest::Approx(1.0));

  // pg above pmax by 0.2.
  Grid g2 = testutil::two_bus();
  g2.generators[0].pmin = 0.0;
  g2.generators[0].pmax = 1.0;
  OpfSolution s2 = zero_solution(g2);
  s2.pg[0] = 1.2;
  const ViolationReport rep2 = violation_degrees(g2, s2);
  CHECK(rep2.pg_bounds.degrees[0] == doctest::Approx(0.2));
}

TEST_CASE("self-derived flows have zero ohm degrees") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Grid g = testutil::random_grid(rng, 20);
    Vec va, vm;
    testutil::random_voltages(rng, g, va, vm);
    const OpfSolution s = solution_from_voltages(g, va, vm);
    const ViolationReport rep = violation_degrees(g, s);
    CHECK(rep.ohm_from_p.max() <= 1e-12);
    CHECK(rep.ohm_from_q.max() <= 1e-12);
    CHECK(rep.ohm_to_p.max() <= 1e-12);
    CHECK(rep.ohm_to_q.max() <= 1e-12);
  }
}

TEST_CASE("flow-based balance equals the Ybus injection oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const Grid g = testutil::random_grid(rng, 20);
    Vec va, vm;
    testutil::random_voltages(rng, g, va, vm);
    OpfSolution s = solution_from_voltages(g, va, vm);
    for (int k = 0; k < g.n_generators(); ++k) {
      s.pg[k] = rng.uniform(0.0, 1.0);
      s.qg[k] = rng.uniform(-0.5, 0.5);
    }
    const ViolationReport rep = violation_degrees(g, s);
    Vec p_res, q_res;
    testutil::ybus_balance_residual(g, s, p_res, q_res);
    const GridIndex ix = build_index(g);
    for (int slot = 0; slot < ix.nb; ++slot) {
      const int b = ix.bus_pos[slot];
      CHECK(std::abs(rep.p_balance.degrees[slot] - std::abs(p_res[b])) < 1e-10);
      CHECK(std::abs(rep.q_balance.degrees[slot] - std::abs(q_res[b])) < 1e-10);
    }
  }
}

TEST_CASE("degrees are invariant to bus and branch permutations") {
  Rng rng(23);
  const Grid g = testutil::random_grid(rng, 12);
  Vec va, vm;
  testutil::random_voltages(rng, g, va, vm);
  OpfSolution s = solution_from_voltages(g, va, vm);

  // Permute buses (relabel) and branches, remap the solution accordingly.
  const int nb = g.n_buses();
  std::vector<int> perm(nb);
  for (int i = 0; i < nb; ++i) perm[i] = i;
  for (int i = nb - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
  }
  Grid gp = g;
  for (int i = 0; i < nb; ++i) gp.buses[perm[i]] = g.buses[i];
  for (auto& gen : gp.generators) gen.bus = perm[gen.bus];
  for (auto& l : gp.loads) l.bus = perm[l.bus];
  for (auto& sh : gp.shunts) sh.bus = perm[sh.bus];
  for (auto& br : gp.branches) {
    br.from = perm[br.from];
    br.to = perm[br.to];
  }
  OpfSolution sp = s;
  for (int i = 0; i < nb; ++i) {
    sp.va[perm[i]] = s.va[i];
    sp.vm[perm[i]] = s.vm[i];
  }

  const ViolationReport ra = violation_degrees(g, s);
  const ViolationReport rb = violation_degrees(gp, sp);
  // Family multisets agree: compare sorted copies.
  auto sorted = [](Vec v) {
    std::sort(v.data(), v.data() + v.size());
    return v;
  };
  CHECK((sorted(ra.p_balance.degrees) - sorted(rb.p_balance.degrees)).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK((sorted(ra.thermal_from.degrees) - sorted(rb.thermal_from.degrees))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  CHECK((sorted(ra.angle_diff.degrees) - sorted(rb.angle_diff.degrees)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("thermal degree is monotone in the flow magnitude") {
  Grid g = testutil::two_bus();
  g.branches[0].rate_a = 1.0;
  OpfSolution s = zero_solution(g);
  double prev = -1.0;
  for (double scale = 0.0; scale < 3.0; scale += 0.25) {
    s.pf[0] = scale;
    s.qf[0] = 0.5 * scale;
    const ViolationReport rep = violation_degrees(g, s);
    CHECK(rep.thermal_from.degrees[0] >= prev);
    prev = rep.thermal_from.degrees[0];
  }
}

TEST_CASE("feasibility at threshold") {
  ViolationReport rep;
  rep.p_balance.degrees.resize(3);
  rep.p_balance.degrees << 0.0, 0.005, 0.02;
  const auto rows = feasibility_at_threshold(rep, 0.01);
  for (const auto& [name, pct] : rows) {
    if (name == "p_balance") {
      REQUIRE(pct.has_value());
      CHECK(*pct == doctest::Approx(100.0 * 2.0 / 3.0));
    } else {
      CHECK_FALSE(pct.has_value());  // empty families are not applicable
    }
  }

  rep.p_balance.degrees.setZero();
  const auto rows2 = feasibility_at_threshold(rep, 1e-8);
  for (const auto& [name, pct] : rows2) {
    if (name == "p_balance") CHECK(*pct == doctest::Approx(100.0));
  }

  CHECK_THROWS_AS(feasibility_at_threshold(rep, 0.0), OpfError);
}
