#pragma once

#include <vector>

#include "opf/grid.hpp"

namespace opf {

// Feature column counts, fixed by the data format.
inline constexpr int kBusFeatDim = 7;    // base_kv, bus_type one-hot(4), vmin, vmax
inline constexpr int kGenFeatDim = 11;   // mbase, pg, pmin, pmax, qg, qmin, qmax, vg, c2, c1, c0
inline constexpr int kLoadFeatDim = 2;   // pd, qd
inline constexpr int kShuntFeatDim = 2;  // bs, gs
inline constexpr int kLineFeatDim = 9;   // angmin, angmax, b_fr, b_to, br_r, br_x, rate_a/b/c
inline constexpr int kXfmrFeatDim = 11;  // line features + tap, shift

struct FeatureStats {
  Vec mean, std;

  static FeatureStats identity(int dim) {
    return {Vec::Zero(dim), Vec::Ones(dim)};
  }
  Vec standardize(const Vec& raw) const {
    return (raw - mean).cwiseQuotient(std);
  }
};

/// Z-score statistics for input features and solution targets, computed once
/// over the training split and persisted with the dataset.
struct StandardizationStats {
  FeatureStats bus, gen, load, shunt, line, xfmr;          // inputs
  FeatureStats sol_bus, sol_gen, sol_line, sol_xfmr;       // targets (va,vm | pg,qg | pf,qf,pt,qt)

  static StandardizationStats identity();
};

/// Tensorized heterogeneous graph. Rows of the feature matrices follow the
/// per-type entity order; edge index lists point into those rows. Immutable
/// after construction.
struct TypedGraph {
  Mat bus_x, gen_x, load_x, shunt_x;  // standardized node features
  Mat line_x, xfmr_x;                 // standardized branch edge features

  struct Edges {
    std::vector<int> src, dst;
    int size() const { return static_cast<int>(src.size()); }
  };
  Edges line, xfmr;                        // bus -> bus, grid orientation
  Edges gen_link, load_link, shunt_link;   // subnode -> bus

  std::vector<int> bus_pos, gen_pos, load_pos, shunt_pos;  // row -> grid index
  std::vector<int> line_pos, xfmr_pos;                     // row -> branch index

  int n_bus() const { return static_cast<int>(bus_x.rows()); }
  int n_gen() const { return static_cast<int>(gen_x.rows()); }
};

// Raw (unstandardized) feature rows; used both for graph construction and for
// accumulating dataset statistics.
Vec raw_bus_features(const Bus& b);
Vec raw_gen_features(const Generator& g);
Vec raw_load_features(const Load& l);
Vec raw_shunt_features(const Shunt& s);
Vec raw_branch_features(const Branch& br);  // kLineFeatDim or kXfmrFeatDim

/// Builds the typed input graph over active elements with z-scored features.
/// Throws OpfError if a stats block has the wrong dimension.
TypedGraph to_typed_graph(const Grid& grid, const StandardizationStats& stats);

}  // namespace opf
