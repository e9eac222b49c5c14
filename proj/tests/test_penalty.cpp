#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "opf/acpf.hpp"
#include "opf/penalty.hpp"
#include "test_util.hpp"

using namespace opf;

TEST_CASE("forced dispatch through a lossless line") {
  // One generator, one load, lossless line: the optimum is pg = pd.
  const double pd = 0.5;
  Grid g = testutil::two_bus(pd, 0.0, 0.0, 0.1);
  PenaltyConfig cfg;
  const PenaltyResult r = solve_acopf_penalty(g, cfg);
  REQUIRE(r.converged);
  CHECK(std::abs(r.solution.pg[0] - pd) < 2e-3);
  CHECK(r.cost == doctest::Approx(g.generators[0].cost_linear * pd).epsilon(5e-3));
  CHECK(std::max(r.report.p_balance.max(), r.report.q_balance.max()) <= cfg.tol);
}

TEST_CASE("bounds and derived flows hold by construction") {
  Grid g = parse_case_file(testutil::case14_path());
  PenaltyConfig cfg;
  cfg.inner_steps = 60;  // not converged, construction guarantees only
  cfg.rho_schedule = {10.0, 100.0};
  const PenaltyResult r = solve_acopf_penalty(g, cfg);
  CHECK(r.report.pg_bounds.max() == 0.0);
  CHECK(r.report.qg_bounds.max() == 0.0);
  CHECK(r.report.vm_bounds.max() == 0.0);
  CHECK(r.report.ref_angle.max() == 0.0);
  CHECK(r.report.ohm_from_p.max() <= 1e-12);
  CHECK(r.report.ohm_from_q.max() <= 1e-12);
  CHECK(r.report.ohm_to_p.max() <= 1e-12);
  CHECK(r.report.ohm_to_q.max() <= 1e-12);
}

TEST_CASE("case14 reaches the balance tolerance") {
  Grid g = parse_case_file(testutil::case14_path());
  const PenaltyResult r = solve_acopf_penalty(g, PenaltyConfig{});
  REQUIRE(r.converged);
  CHECK(std::max(r.report.p_balance.max(), r.report.q_balance.max()) <= 1e-5);
  CHECK(r.cost > 0.0);
}

TEST_CASE("two seeds agree on the objective within half a percent") {
  Grid g = parse_case_file(testutil::case14_path());
  PenaltyConfig a, b;
  a.seed = 1;
  b.seed = 2;
  const PenaltyResult ra = solve_acopf_penalty(g, a);
  const PenaltyResult rb = solve_acopf_penalty(g, b);
  REQUIRE(ra.converged);
  REQUIRE(rb.converged);
  CHECK(std::abs(ra.cost - rb.cost) / ra.cost < 0.005);
}

TEST_CASE("unreachable tolerance is reported as not converged") {
  Grid g = parse_case_file(testutil::case14_path());
  PenaltyConfig cfg;
  cfg.rho_schedule = {10.0};
  cfg.inner_steps = 30;
  cfg.tol = 1e-12;
  const PenaltyResult r = solve_acopf_penalty(g, cfg);
  CHECK_FALSE(r.converged);
  // Best iterate is still returned with its audit.
  CHECK(r.solution.shape_matches(g));
}

TEST_CASE("pg coordinate probes rebalanced by power flow never beat the optimum") {
  Grid g = parse_case_file(testutil::case14_path());
  const PenaltyResult r = solve_acopf_penalty(g, PenaltyConfig{});
  REQUIRE(r.converged);

  // Baseline cost after restoration.
  const PfResult base_pf = restore(g, r.solution);
  REQUIRE(base_pf.converged);
  const double base_cost = objective_cost(g, base_pf.solution);

  int admissible = 0;
  for (int k = 0; k < g.n_generators(); ++k) {
    if (g.buses[g.generators[k].bus].type == BusType::kRef) continue;
    for (const double delta : {-1e-3, 1e-3}) {
      OpfSolution probe = r.solution;
      const double moved =
          std::clamp(probe.pg[k] + delta, g.generators[k].pmin, g.generators[k].pmax);
      if (moved == probe.pg[k]) continue;
      probe.pg[k] = moved;
      const PfResult pf = restore(g, probe);
      if (!pf.converged) continue;
      // Probe must stay inside the feasible box to count.
      bool inside = true;
      for (int j = 0; j < g.n_generators(); ++j) {
        if (pf.solution.pg[j] < g.generators[j].pmin - 1e-9 ||
            pf.solution.pg[j] > g.generators[j].pmax + 1e-9) {
          inside = false;
        }
      }
      const ViolationReport rep = violation_degrees(g, pf.solution);
      if (rep.vm_bounds.max() > 1e-6 || rep.thermal_from.max() > 1e-6 ||
          rep.thermal_to.max() > 1e-6 || rep.angle_diff.max() > 1e-6) {
        inside = false;
      }
      if (!inside) continue;
      ++admissible;
      CHECK(objective_cost(g, pf.solution) >= base_cost - 1e-6 * base_cost);
    }
  }
  CHECK(admissible > 0);  // the probe set must not be vacuous
}
