#pragma once

#include <optional>
#include <vector>

#include "opf/types.hpp"

namespace opf {

enum class BusType { kPQ, kPV, kRef, kInactive };
enum class BranchKind { kAcLine, kTransformer };

struct Bus {
  int id = 0;  // external label (case file bus number)
  double base_kv = 0.0;
  BusType type = BusType::kPQ;
  double vmin = 0.0;  // p.u. voltage magnitude bounds
  double vmax = 0.0;
};

struct Generator {
  int id = 0;
  int bus = -1;  // index into Grid::buses
  double pmin = 0.0, pmax = 0.0;  // p.u.
  double qmin = 0.0, qmax = 0.0;  // p.u.
  // Cost coefficients rescaled so that cost($/h) = c2*pg^2 + c1*pg with pg in p.u.
  double cost_squared = 0.0, cost_linear = 0.0, cost_offset = 0.0;
  // Initial operating point as given in the case file (p.u. / p.u. voltage).
  double pg = 0.0, qg = 0.0, vg = 1.0, mbase = 0.0;
};

struct Load {
  int id = 0;
  int bus = -1;
  double pd = 0.0, qd = 0.0;  // p.u.
};

struct Shunt {
  int id = 0;
  int bus = -1;
  double gs = 0.0, bs = 0.0;  // p.u.
};

struct Branch {
  int id = 0;
  int from = -1, to = -1;  // indices into Grid::buses
  BranchKind kind = BranchKind::kAcLine;
  double br_r = 0.0, br_x = 0.0;    // p.u. series impedance
  double b_fr = 0.0, b_to = 0.0;    // p.u. charging susceptance per end
  double rate_a = 0.0;              // p.u. apparent-power limit; 0 = unlimited
  double rate_b = 0.0, rate_c = 0.0;
  double angmin = -2.0 * kPi, angmax = 2.0 * kPi;  // rad
  double tap = 1.0;    // off-nominal turns ratio (1.0 for AC lines)
  double shift = 0.0;  // rad (0.0 for AC lines)

  bool has_thermal_limit() const { return rate_a > 0.0; }
};

struct Grid {
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Generator> generators;
  std::vector<Load> loads;
  std::vector<Shunt> shunts;
  std::vector<Branch> branches;

  int n_buses() const { return static_cast<int>(buses.size()); }
  int n_generators() const { return static_cast<int>(generators.size()); }
  int n_loads() const { return static_cast<int>(loads.size()); }
  int n_shunts() const { return static_cast<int>(shunts.size()); }
  int n_branches() const { return static_cast<int>(branches.size()); }

  bool bus_active(int b) const { return buses[b].type != BusType::kInactive; }
  bool branch_active(const Branch& br) const {
    return bus_active(br.from) && bus_active(br.to);
  }
  std::vector<int> ref_buses() const;
};

/// Full dispatch decision. Branch arrays follow Grid::branches order.
struct OpfSolution {
  Vec va, vm;          // per bus (rad, p.u.)
  Vec pg, qg;          // per generator (p.u.)
  Vec pf, qf, pt, qt;  // per branch, both directions (p.u.)

  bool has_reactive = true;  // false for partial (DC) solutions
  bool shape_matches(const Grid& g) const;
};

/// Pi-section parameters of a branch.
struct PiParams {
  Complex y;      // series admittance 1/(r + jx)
  Complex yc_fr;  // from-side charging, j*b_fr
  Complex yc_to;  // to-side charging, j*b_to
  Complex t;      // complex turns ratio tap*e^{j*shift}
};

/// Throws OpfError("degenerate branch") when r = x = 0.
PiParams branch_pi_params(const Branch& br);

/// True iff every active bus is reachable from the reference bus through
/// active branches (undirected). Singleton grids are connected.
bool is_connected(const Grid& grid);

/// Checks structural invariants (cross-references, bounds ordering, at least
/// one reference bus, connectivity). Throws OpfError on the first failure.
void validate_grid(const Grid& grid);

/// Precomputed index arrays and per-entity constants used by the constraint
/// and gradient paths. Entries cover active elements only; `bus_pos` maps an
/// active-bus slot back to its position in Grid::buses.
struct GridIndex {
  int nb = 0, ng = 0, nbr = 0;

  std::vector<int> bus_pos;                // active slot -> Grid::buses index
  std::vector<int> bus_slot;               // Grid::buses index -> slot or -1
  std::vector<int> gen_pos, branch_pos;    // active slot -> grid vector index
  std::vector<int> gen_bus;                // per active generator, bus slot
  std::vector<int> br_from, br_to;         // per active branch, bus slots
  std::vector<int> ref_slots;              // bus slots of reference buses

  Vec pd_bus, qd_bus;        // aggregated demand per bus slot
  Vec gs_bus, bs_bus;        // aggregated shunt admittance per bus slot
  Vec vmin, vmax;            // per bus slot
  Vec pmin, pmax, qmin, qmax;  // per active generator
  Vec cost_c2, cost_c1;      // per active generator

  Vec g_series, b_series;    // per active branch, series admittance parts
  Vec b_charge_fr, b_charge_to, tap, shift;
  Vec rate_a;                // thermal limit; unlimited mapped to kNoRate
  Vec angmin, angmax;
  Vec nonref_mask;           // 1.0 except at reference bus slots

  static constexpr double kNoRate = 1e9;
};

GridIndex build_index(const Grid& grid);

}  // namespace opf
