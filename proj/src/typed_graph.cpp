#include "opf/typed_graph.hpp"

namespace opf {

StandardizationStats StandardizationStats::identity() {
  StandardizationStats s;
  s.bus = FeatureStats::identity(kBusFeatDim);
  s.gen = FeatureStats::identity(kGenFeatDim);
  s.load = FeatureStats::identity(kLoadFeatDim);
  s.shunt = FeatureStats::identity(kShuntFeatDim);
  s.line = FeatureStats::identity(kLineFeatDim);
  s.xfmr = FeatureStats::identity(kXfmrFeatDim);
  s.sol_bus = FeatureStats::identity(2);
  s.sol_gen = FeatureStats::identity(2);
  s.sol_line = FeatureStats::identity(4);
  s.sol_xfmr = FeatureStats::identity(4);
  return s;
}

Vec raw_bus_features(const Bus& b) {
  Vec x = Vec::Zero(kBusFeatDim);
  x[0] = b.base_kv;
  x[1 + static_cast<int>(b.type)] = 1.0;  // one-hot: PQ, PV, REF, INACTIVE
  x[5] = b.vmin;
  x[6] = b.vmax;
  return x;
}

Vec raw_gen_features(const Generator& g) {
  Vec x(kGenFeatDim);
  x << g.mbase, g.pg, g.pmin, g.pmax, g.qg, g.qmin, g.qmax, g.vg,
      g.cost_squared, g.cost_linear, g.cost_offset;
  return x;
}

Vec raw_load_features(const Load& l) {
  Vec x(kLoadFeatDim);
  x << l.pd, l.qd;
  return x;
}

Vec raw_shunt_features(const Shunt& s) {
  Vec x(kShuntFeatDim);
  x << s.bs, s.gs;
  return x;
}

Vec raw_branch_features(const Branch& br) {
  const bool xfmr = br.kind == BranchKind::kTransformer;
  Vec x(xfmr ? kXfmrFeatDim : kLineFeatDim);
  x.head(kLineFeatDim) << br.angmin, br.angmax, br.b_fr, br.b_to, br.br_r,
      br.br_x, br.rate_a, br.rate_b, br.rate_c;
  if (xfmr) {
    x[9] = br.tap;
    x[10] = br.shift;
  }
  return x;
}

namespace {

void check_dim(const FeatureStats& s, int dim, const char* what) {
  if (s.mean.size() != dim || s.std.size() != dim) {
    throw OpfError(std::string("feature dimension mismatch with stats: ") + what);
  }
}

}  // namespace

TypedGraph to_typed_graph(const Grid& grid, const StandardizationStats& stats) {
  check_dim(stats.bus, kBusFeatDim, "bus");
  check_dim(stats.gen, kGenFeatDim, "generator");
  check_dim(stats.load, kLoadFeatDim, "load");
  check_dim(stats.shunt, kShuntFeatDim, "shunt");
  check_dim(stats.line, kLineFeatDim, "ac_line");
  check_dim(stats.xfmr, kXfmrFeatDim, "transformer");

  TypedGraph g;
  std::vector<int> bus_slot(grid.n_buses(), -1);
  for (int i = 0; i < grid.n_buses(); ++i) {
    if (!grid.bus_active(i)) continue;
    bus_slot[i] = static_cast<int>(g.bus_pos.size());
    g.bus_pos.push_back(i);
  }
  g.bus_x.resize(static_cast<int>(g.bus_pos.size()), kBusFeatDim);
  for (size_t r = 0; r < g.bus_pos.size(); ++r) {
    g.bus_x.row(static_cast<int>(r)) =
        stats.bus.standardize(raw_bus_features(grid.buses[g.bus_pos[r]])).transpose();
  }

  auto add_subnodes = [&](auto const& items, const FeatureStats& fs, auto raw_fn,
                          Mat& x, TypedGraph::Edges& link, std::vector<int>& pos) {
    for (int i = 0; i < static_cast<int>(items.size()); ++i) {
      if (!grid.bus_active(items[i].bus)) continue;
      pos.push_back(i);
    }
    x.resize(static_cast<int>(pos.size()), fs.mean.size());
    for (size_t r = 0; r < pos.size(); ++r) {
      x.row(static_cast<int>(r)) = fs.standardize(raw_fn(items[pos[r]])).transpose();
      link.src.push_back(static_cast<int>(r));
      link.dst.push_back(bus_slot[items[pos[r]].bus]);
    }
  };
  add_subnodes(grid.generators, stats.gen, raw_gen_features, g.gen_x, g.gen_link, g.gen_pos);
  add_subnodes(grid.loads, stats.load, raw_load_features, g.load_x, g.load_link, g.load_pos);
  add_subnodes(grid.shunts, stats.shunt, raw_shunt_features, g.shunt_x, g.shunt_link, g.shunt_pos);

  for (int b = 0; b < grid.n_branches(); ++b) {
    const Branch& br = grid.branches[b];
    if (!grid.branch_active(br)) continue;
    if (br.kind == BranchKind::kTransformer) {
      g.xfmr_pos.push_back(b);
    } else {
      g.line_pos.push_back(b);
    }
  }
  g.line_x.resize(static_cast<int>(g.line_pos.size()), kLineFeatDim);
  for (size_t r = 0; r < g.line_pos.size(); ++r) {
    const Branch& br = grid.branches[g.line_pos[r]];
    g.line_x.row(static_cast<int>(r)) =
        stats.line.standardize(raw_branch_features(br)).transpose();
    g.line.src.push_back(bus_slot[br.from]);
    g.line.dst.push_back(bus_slot[br.to]);
  }
  g.xfmr_x.resize(static_cast<int>(g.xfmr_pos.size()), kXfmrFeatDim);
  for (size_t r = 0; r < g.xfmr_pos.size(); ++r) {
    const Branch& br = grid.branches[g.xfmr_pos[r]];
    g.xfmr_x.row(static_cast<int>(r)) =
        stats.xfmr.standardize(raw_branch_features(br)).transpose();
    g.xfmr.src.push_back(bus_slot[br.from]);
    g.xfmr.dst.push_back(bus_slot[br.to]);
  }
  return g;
}

}  // namespace opf
