#include "opf/gnn.hpp"

#include <cmath>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "opf/metrics.hpp"
#include "opf/physics_ad.hpp"
#include "opf/rng.hpp"

namespace opf::gnn {

using ad::Tape;
using ad::Var;

namespace {

constexpr const char* kNodeNames[kNodeTypes] = {"bus", "gen", "load", "shunt"};
constexpr const char* kEdgeNames[kEdgeTypes] = {"line", "xfmr", "gen_link",
                                                "load_link", "shunt_link"};
constexpr int kNodeFeatDims[kNodeTypes] = {kBusFeatDim, kGenFeatDim, kLoadFeatDim,
                                           kShuntFeatDim};
constexpr int kEdgeFeatDims[kEdgeTypes] = {kLineFeatDim, kXfmrFeatDim, 0, 0, 0};

Mat uniform_init(int rows, int cols, Rng& rng) {
  Mat w(rows, cols);
  const double a = rows > 0 ? 1.0 / std::sqrt(static_cast<double>(rows)) : 0.0;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) w(i, j) = rng.uniform(-a, a);
  }
  return w;
}

Dense init_dense(int in, int out, Rng& rng) {
  return {uniform_init(in, out, rng), Mat::Zero(1, out)};
}

Mlp init_mlp(int in, int hidden, int out, Rng& rng) {
  Mlp m;
  m.l1 = init_dense(in, hidden, rng);
  m.l2 = init_dense(hidden, out, rng);
  m.ln_scale = Mat::Ones(1, out);
  m.ln_offset = Mat::Zero(1, out);
  return m;
}

template <typename Params, typename Fn>
void visit_impl(Params& p, const Fn& fn) {
  auto dense = [&](const std::string& prefix, auto& d) {
    fn(prefix + "/w", d.w);
    fn(prefix + "/b", d.b);
  };
  auto mlp = [&](const std::string& prefix, auto& m) {
    dense(prefix + "/l1", m.l1);
    dense(prefix + "/l2", m.l2);
    fn(prefix + "/ln_scale", m.ln_scale);
    fn(prefix + "/ln_offset", m.ln_offset);
  };
  for (int i = 0; i < kNodeTypes; ++i) {
    dense(std::string("enc/node/") + kNodeNames[i], p.node_enc[i]);
  }
  for (int i = 0; i < kEdgeTypes; ++i) {
    dense(std::string("enc/edge/") + kEdgeNames[i], p.edge_enc[i]);
  }
  for (size_t s = 0; s < p.steps.size(); ++s) {
    const std::string sp = "proc/" + std::to_string(s);
    for (int i = 0; i < kEdgeTypes; ++i) {
      mlp(sp + "/edge/" + kEdgeNames[i], p.steps[s].edge[i]);
    }
    for (int i = 0; i < kNodeTypes; ++i) {
      mlp(sp + "/node/" + kNodeNames[i], p.steps[s].node[i]);
    }
  }
  mlp("dec/bus/mlp", p.dec_mlp[0]);
  mlp("dec/gen/mlp", p.dec_mlp[1]);
  dense("dec/bus/head", p.dec_head[0]);
  dense("dec/gen/head", p.dec_head[1]);
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng = Rng::child(seed, 0x6e);
  const int h = cfg.hidden_size;
  ModelParams p;
  for (int i = 0; i < kNodeTypes; ++i) p.node_enc[i] = init_dense(kNodeFeatDims[i], h, rng);
  for (int i = 0; i < kEdgeTypes; ++i) p.edge_enc[i] = init_dense(kEdgeFeatDims[i], h, rng);
  p.steps.resize(cfg.num_message_passing_steps);
  for (auto& step : p.steps) {
    for (int i = 0; i < kEdgeTypes; ++i) step.edge[i] = init_mlp(3 * h, h, h, rng);
    for (int i = 0; i < kNodeTypes; ++i) step.node[i] = init_mlp(3 * h, h, h, rng);
  }
  const int d = cfg.decoder_mlp_size;
  p.dec_mlp[0] = init_mlp(h, d, d, rng);
  p.dec_mlp[1] = init_mlp(h, d, d, rng);
  p.dec_head[0] = init_dense(d, 2, rng);
  p.dec_head[1] = init_dense(d, 2, rng);
  return p;
}

void visit_params(ModelParams& p, const std::function<void(const std::string&, Mat&)>& fn) {
  visit_impl(p, fn);
}

void visit_params(const ModelParams& p,
                  const std::function<void(const std::string&, const Mat&)>& fn) {
  visit_impl(p, fn);
}

std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  visit_params(p, [&](const std::string&, const Mat& m) { n += m.size(); });
  return n;
}

// ---------------------------------------------------------------------------
// Forward pass on a tape
// ---------------------------------------------------------------------------

namespace {

struct DenseVars {
  Var w, b;
};
struct MlpVars {
  DenseVars l1, l2;
  Var ln_scale, ln_offset;
};
struct ParamVars {
  std::array<DenseVars, kNodeTypes> node_enc;
  std::array<DenseVars, kEdgeTypes> edge_enc;
  struct Step {
    std::array<MlpVars, kEdgeTypes> edge;
    std::array<MlpVars, kNodeTypes> node;
  };
  std::vector<Step> steps;
  std::array<MlpVars, 2> dec_mlp;
  std::array<DenseVars, 2> dec_head;
};

ParamVars put_params(Tape& t, const ModelParams& p, bool track) {
  auto put = [&](const Mat& m) { return track ? t.leaf(m) : t.constant(m); };
  auto dense = [&](const Dense& d) { return DenseVars{put(d.w), put(d.b)}; };
  auto mlp = [&](const Mlp& m) {
    return MlpVars{dense(m.l1), dense(m.l2), put(m.ln_scale), put(m.ln_offset)};
  };
  ParamVars pv;
  for (int i = 0; i < kNodeTypes; ++i) pv.node_enc[i] = dense(p.node_enc[i]);
  for (int i = 0; i < kEdgeTypes; ++i) pv.edge_enc[i] = dense(p.edge_enc[i]);
  pv.steps.resize(p.steps.size());
  for (size_t s = 0; s < p.steps.size(); ++s) {
    for (int i = 0; i < kEdgeTypes; ++i) pv.steps[s].edge[i] = mlp(p.steps[s].edge[i]);
    for (int i = 0; i < kNodeTypes; ++i) pv.steps[s].node[i] = mlp(p.steps[s].node[i]);
  }
  for (int i = 0; i < 2; ++i) {
    pv.dec_mlp[i] = mlp(p.dec_mlp[i]);
    pv.dec_head[i] = dense(p.dec_head[i]);
  }
  return pv;
}

// 2-layer MLP on a single input: LN(W2 relu(W1 x + b1) + b2).
Var run_mlp(Tape& t, const MlpVars& m, Var x) {
  const Var z = t.relu(t.linear(x, m.l1.w, m.l1.b));
  return t.layer_norm(t.linear(z, m.l2.w, m.l2.b), m.ln_scale, m.ln_offset);
}

// Same MLP with a fused three-block input.
Var run_mlp3(Tape& t, const MlpVars& m, Var x1, Var x2, Var x3) {
  const Var z = t.relu(t.linear3(x1, x2, x3, m.l1.w, m.l1.b));
  return t.layer_norm(t.linear(z, m.l2.w, m.l2.b), m.ln_scale, m.ln_offset);
}

struct DecodedVars {
  Var va, vm, pg, qg;
  phys::FlowVars flows;
};

DecodedVars build_forward(Tape& t, const ParamVars& pv, const TypedGraph& g,
                          const GridIndex& ix) {
  const int h = static_cast<int>(t.val(pv.node_enc[0].w).cols());

  // Encode.
  std::array<Var, kNodeTypes> hn;
  const std::array<const Mat*, kNodeTypes> node_x = {&g.bus_x, &g.gen_x, &g.load_x,
                                                     &g.shunt_x};
  for (int i = 0; i < kNodeTypes; ++i) {
    hn[i] = t.linear(t.constant(*node_x[i]), pv.node_enc[i].w, pv.node_enc[i].b);
  }
  const std::array<const TypedGraph::Edges*, kEdgeTypes> edges = {
      &g.line, &g.xfmr, &g.gen_link, &g.load_link, &g.shunt_link};
  // Link edges carry no physical features; their latent comes from the bias.
  std::array<Var, kEdgeTypes> he;
  he[0] = t.linear(t.constant(g.line_x), pv.edge_enc[0].w, pv.edge_enc[0].b);
  he[1] = t.linear(t.constant(g.xfmr_x), pv.edge_enc[1].w, pv.edge_enc[1].b);
  for (int i = 2; i < kEdgeTypes; ++i) {
    he[i] = t.linear(t.constant_owned(Mat::Zero(edges[i]->size(), 0)),
                     pv.edge_enc[i].w, pv.edge_enc[i].b);
  }

  // Node-type space of each edge type's endpoints: {src_type, dst_type}.
  constexpr int kSrcType[kEdgeTypes] = {0, 0, 1, 2, 3};
  constexpr int kDstType[kEdgeTypes] = {0, 0, 0, 0, 0};

  // Process.
  for (const auto& step : pv.steps) {
    std::array<Var, kEdgeTypes> he_new;
    for (int e = 0; e < kEdgeTypes; ++e) {
      const Var hs = t.gather_rows(hn[kSrcType[e]], edges[e]->src);
      const Var hd = t.gather_rows(hn[kDstType[e]], edges[e]->dst);
      he_new[e] = t.add(run_mlp3(t, step.edge[e], he[e], hs, hd), he[e]);
    }
    he = he_new;

    // Sum messages into nodes, keeping incoming and outgoing separate.
    std::array<Var, kNodeTypes> agg_in, agg_out;
    std::array<bool, kNodeTypes> has_in{}, has_out{};
    auto accumulate = [&](std::array<Var, kNodeTypes>& agg, std::array<bool, kNodeTypes>& has,
                          int type, Var messages, const std::vector<int>& rows) {
      const int n = static_cast<int>(t.val(hn[type]).rows());
      const Var summed = t.scatter_sum_rows(messages, rows, n);
      agg[type] = has[type] ? t.add(agg[type], summed) : summed;
      has[type] = true;
    };
    for (int e = 0; e < kEdgeTypes; ++e) {
      accumulate(agg_in, has_in, kDstType[e], he[e], edges[e]->dst);
      accumulate(agg_out, has_out, kSrcType[e], he[e], edges[e]->src);
    }
    for (int ntype = 0; ntype < kNodeTypes; ++ntype) {
      const int n = static_cast<int>(t.val(hn[ntype]).rows());
      const Var zero = t.constant_owned(Mat::Zero(n, h));
      const Var in = has_in[ntype] ? agg_in[ntype] : zero;
      const Var out = has_out[ntype] ? agg_out[ntype] : zero;
      hn[ntype] = t.add(run_mlp3(t, step.node[ntype], hn[ntype], in, out), hn[ntype]);
    }
  }

  // Decode bus voltages and generator dispatch.
  const Var bus_out =
      t.linear(run_mlp(t, pv.dec_mlp[0], hn[0]), pv.dec_head[0].w, pv.dec_head[0].b);
  const Var gen_out =
      t.linear(run_mlp(t, pv.dec_mlp[1], hn[1]), pv.dec_head[1].w, pv.dec_head[1].b);

  DecodedVars d;
  const Var va_raw = t.col(bus_out, 0);
  d.va = t.cmul(va_raw, t.constant_owned(ix.nonref_mask));  // reference angle = 0
  d.vm = phys::bound_sigmoid(t, t.col(bus_out, 1), ix.vmin, ix.vmax);
  d.pg = phys::bound_sigmoid(t, t.col(gen_out, 0), ix.pmin, ix.pmax);
  d.qg = phys::bound_sigmoid(t, t.col(gen_out, 1), ix.qmin, ix.qmax);

  const phys::IndexConstants cons = phys::put_constants(t, ix);
  d.flows = phys::branch_flows(t, ix, cons, d.va, d.vm);
  return d;
}

OpfSolution decoded_to_solution(const Tape& t, const DecodedVars& d, const Grid& grid,
                                const GridIndex& ix) {
  OpfSolution s;
  s.va = Vec::Zero(grid.n_buses());
  s.vm = Vec::Ones(grid.n_buses());
  s.pg = Vec::Zero(grid.n_generators());
  s.qg = Vec::Zero(grid.n_generators());
  s.pf = Vec::Zero(grid.n_branches());
  s.qf = Vec::Zero(grid.n_branches());
  s.pt = Vec::Zero(grid.n_branches());
  s.qt = Vec::Zero(grid.n_branches());
  for (int i = 0; i < ix.nb; ++i) {
    s.va[ix.bus_pos[i]] = t.val(d.va)(i, 0);
    s.vm[ix.bus_pos[i]] = t.val(d.vm)(i, 0);
  }
  for (int k = 0; k < ix.ng; ++k) {
    s.pg[ix.gen_pos[k]] = t.val(d.pg)(k, 0);
    s.qg[ix.gen_pos[k]] = t.val(d.qg)(k, 0);
  }
  for (int k = 0; k < ix.nbr; ++k) {
    const int b = ix.branch_pos[k];
    s.pf[b] = t.val(d.flows.pf)(k, 0);
    s.qf[b] = t.val(d.flows.qf)(k, 0);
    s.pt[b] = t.val(d.flows.pt)(k, 0);
    s.qt[b] = t.val(d.flows.qt)(k, 0);
  }
  return s;
}

}  // namespace

OpfSolution forward(const ModelParams& params, const TypedGraph& graph, const Grid& grid) {
  const GridIndex ix = build_index(grid);
  Tape t;
  const ParamVars pv = put_params(t, params, /*track=*/false);
  const DecodedVars d = build_forward(t, pv, graph, ix);
  return decoded_to_solution(t, d, grid, ix);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

namespace {

/// Per-example standardization payload: raw targets in index order plus the
/// 1/sigma vector of each feature (so that std-space error = (pred-target)/sigma).
struct TargetBlocks {
  Mat va, vm, pg, qg;              // targets as column matrices
  Mat pf, qf, pt, qt;              // per active branch
  Mat inv_sig_va, inv_sig_vm;      // per bus (scalar broadcast)
  Mat inv_sig_pg, inv_sig_qg;
  Mat inv_sig_pf, inv_sig_qf, inv_sig_pt, inv_sig_qt;  // per branch, by kind
};

double safe_inv(double sigma) { return sigma > 1e-12 ? 1.0 / sigma : 1.0; }

TargetBlocks make_target_blocks(const Grid& grid, const GridIndex& ix,
                                const OpfSolution& target,
                                const StandardizationStats& stats) {
  TargetBlocks tb;
  tb.va.resize(ix.nb, 1);
  tb.vm.resize(ix.nb, 1);
  for (int s = 0; s < ix.nb; ++s) {
    tb.va(s, 0) = target.va[ix.bus_pos[s]];
    tb.vm(s, 0) = target.vm[ix.bus_pos[s]];
  }
  tb.pg.resize(ix.ng, 1);
  tb.qg.resize(ix.ng, 1);
  for (int k = 0; k < ix.ng; ++k) {
    tb.pg(k, 0) = target.pg[ix.gen_pos[k]];
    tb.qg(k, 0) = target.qg[ix.gen_pos[k]];
  }
  tb.pf.resize(ix.nbr, 1);
  tb.qf.resize(ix.nbr, 1);
  tb.pt.resize(ix.nbr, 1);
  tb.qt.resize(ix.nbr, 1);
  tb.inv_sig_pf.resize(ix.nbr, 1);
  tb.inv_sig_qf.resize(ix.nbr, 1);
  tb.inv_sig_pt.resize(ix.nbr, 1);
  tb.inv_sig_qt.resize(ix.nbr, 1);
  for (int k = 0; k < ix.nbr; ++k) {
    const int b = ix.branch_pos[k];
    tb.pf(k, 0) = target.pf[b];
    tb.qf(k, 0) = target.qf[b];
    tb.pt(k, 0) = target.pt[b];
    tb.qt(k, 0) = target.qt[b];
    const bool xf = grid.branches[b].kind == BranchKind::kTransformer;
    const FeatureStats& fs = xf ? stats.sol_xfmr : stats.sol_line;
    tb.inv_sig_pf(k, 0) = safe_inv(fs.std[2]);  // order: pt, qt, pf, qf
    tb.inv_sig_qf(k, 0) = safe_inv(fs.std[3]);
    tb.inv_sig_pt(k, 0) = safe_inv(fs.std[0]);
    tb.inv_sig_qt(k, 0) = safe_inv(fs.std[1]);
  }
  tb.inv_sig_va = Mat::Constant(ix.nb, 1, safe_inv(stats.sol_bus.std[0]));
  tb.inv_sig_vm = Mat::Constant(ix.nb, 1, safe_inv(stats.sol_bus.std[1]));
  tb.inv_sig_pg = Mat::Constant(ix.ng, 1, safe_inv(stats.sol_gen.std[0]));
  tb.inv_sig_qg = Mat::Constant(ix.ng, 1, safe_inv(stats.sol_gen.std[1]));
  return tb;
}

// Sum of squared standardized differences; caller divides by the group count.
Var sq_std_diff(Tape& t, Var pred, const Mat& target, const Mat& inv_sigma) {
  const Var diff = t.sub(pred, t.constant(target));
  return t.sum(t.square(t.cmul(diff, t.constant(inv_sigma))));
}

Var family_mean(Tape& t, Var degrees) {
  if (t.val(degrees).size() == 0) return t.constant_owned(Mat::Zero(1, 1));
  return t.mean(degrees);
}

struct LossVars {
  Var total, supervised, constraint;
};

LossVars build_loss(Tape& t, const DecodedVars& d, const TargetBlocks& tb,
                    const GridIndex& ix, double constraint_weight) {
  // Supervised: group-wise mean of squared standardized errors, summed over
  // the bus, generator and branch groups.
  Var sup = t.scale(t.add(sq_std_diff(t, d.va, tb.va, tb.inv_sig_va),
                          sq_std_diff(t, d.vm, tb.vm, tb.inv_sig_vm)),
                    1.0 / (2.0 * ix.nb));
  if (ix.ng > 0) {
    sup = t.add(sup, t.scale(t.add(sq_std_diff(t, d.pg, tb.pg, tb.inv_sig_pg),
                                   sq_std_diff(t, d.qg, tb.qg, tb.inv_sig_qg)),
                             1.0 / (2.0 * ix.ng)));
  }
  if (ix.nbr > 0) {
    Var br = t.add(sq_std_diff(t, d.flows.pf, tb.pf, tb.inv_sig_pf),
                   sq_std_diff(t, d.flows.qf, tb.qf, tb.inv_sig_qf));
    br = t.add(br, sq_std_diff(t, d.flows.pt, tb.pt, tb.inv_sig_pt));
    br = t.add(br, sq_std_diff(t, d.flows.qt, tb.qt, tb.inv_sig_qt));
    sup = t.add(sup, t.scale(br, 1.0 / (4.0 * ix.nbr)));
  }

  // Constraint term: mean violation degrees of the violable families in
  // physical units (bounds, reference angle and ohm hold by construction).
  const phys::IndexConstants cons = phys::put_constants(t, ix);
  const phys::DegreeVars deg =
      phys::violation_degrees(t, ix, cons, d.va, d.vm, d.pg, d.qg, d.flows);
  Var con = t.add(family_mean(t, deg.p_balance), family_mean(t, deg.q_balance));
  con = t.add(con, family_mean(t, deg.thermal_from));
  con = t.add(con, family_mean(t, deg.thermal_to));
  con = t.add(con, family_mean(t, deg.angle_diff));

  LossVars lv;
  lv.supervised = sup;
  lv.constraint = con;
  lv.total = t.add(sup, t.scale(con, constraint_weight));
  return lv;
}

}  // namespace

LossParts loss(const OpfSolution& pred, const OpfSolution& target, const Grid& grid,
               const StandardizationStats& stats, double constraint_weight) {
  if (!pred.shape_matches(grid) || !target.shape_matches(grid)) {
    throw OpfError("loss: solution shape mismatch");
  }
  const GridIndex ix = build_index(grid);
  const TargetBlocks tb = make_target_blocks(grid, ix, target, stats);

  double sup = 0.0;
  {
    double acc = 0.0;
    for (int s = 0; s < ix.nb; ++s) {
      const int b = ix.bus_pos[s];
      acc += std::pow((pred.va[b] - tb.va(s, 0)) * tb.inv_sig_va(s, 0), 2);
      acc += std::pow((pred.vm[b] - tb.vm(s, 0)) * tb.inv_sig_vm(s, 0), 2);
    }
    sup += acc / (2.0 * ix.nb);
  }
  if (ix.ng > 0) {
    double acc = 0.0;
    for (int k = 0; k < ix.ng; ++k) {
      const int g = ix.gen_pos[k];
      acc += std::pow((pred.pg[g] - tb.pg(k, 0)) * tb.inv_sig_pg(k, 0), 2);
      acc += std::pow((pred.qg[g] - tb.qg(k, 0)) * tb.inv_sig_qg(k, 0), 2);
    }
    sup += acc / (2.0 * ix.ng);
  }
  if (ix.nbr > 0) {
    double acc = 0.0;
    for (int k = 0; k < ix.nbr; ++k) {
      const int b = ix.branch_pos[k];
      acc += std::pow((pred.pf[b] - tb.pf(k, 0)) * tb.inv_sig_pf(k, 0), 2);
      acc += std::pow((pred.qf[b] - tb.qf(k, 0)) * tb.inv_sig_qf(k, 0), 2);
      acc += std::pow((pred.pt[b] - tb.pt(k, 0)) * tb.inv_sig_pt(k, 0), 2);
      acc += std::pow((pred.qt[b] - tb.qt(k, 0)) * tb.inv_sig_qt(k, 0), 2);
    }
    sup += acc / (4.0 * ix.nbr);
  }

  const ViolationReport rep = violation_degrees(grid, pred);
  const double con = rep.p_balance.mean() + rep.q_balance.mean() +
                     rep.thermal_from.mean() + rep.thermal_to.mean() +
                     rep.angle_diff.mean();

  LossParts parts;
  parts.supervised = sup;
  parts.constraint = con;
  parts.total = sup + constraint_weight * con;
  return parts;
}

TrainExample make_train_example(const Example& ex, const StandardizationStats& stats) {
  TrainExample te;
  te.grid = ex.grid;
  te.index = build_index(te.grid);
  te.graph = to_typed_graph(te.grid, stats);
  te.target = ex.solution;
  if (te.graph.bus_pos != te.index.bus_pos) {
    throw OpfError("typed graph and grid index disagree on active buses");
  }
  return te;
}

// ---------------------------------------------------------------------------
// Gradient
// ---------------------------------------------------------------------------

namespace {

std::vector<Mat*> tensor_list(ModelParams& p) {
  std::vector<Mat*> out;
  visit_params(p, [&](const std::string&, Mat& m) { out.push_back(&m); });
  return out;
}

std::vector<const Mat*> tensor_list(const ModelParams& p) {
  std::vector<const Mat*> out;
  visit_params(p, [&](const std::string&, const Mat& m) { out.push_back(&m); });
  return out;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  visit_params(z, [](const std::string&, Mat& m) { m.setZero(); });
  return z;
}

std::vector<Var> param_var_list(const ParamVars& pv) {
  // Mirrors visit_params order.
  std::vector<Var> out;
  auto dense = [&](const DenseVars& d) {
    out.push_back(d.w);
    out.push_back(d.b);
  };
  auto mlp = [&](const MlpVars& m) {
    dense(m.l1);
    dense(m.l2);
    out.push_back(m.ln_scale);
    out.push_back(m.ln_offset);
  };
  for (const auto& d : pv.node_enc) dense(d);
  for (const auto& d : pv.edge_enc) dense(d);
  for (const auto& s : pv.steps) {
    for (const auto& m : s.edge) mlp(m);
    for (const auto& m : s.node) mlp(m);
  }
  mlp(pv.dec_mlp[0]);
  mlp(pv.dec_mlp[1]);
  dense(pv.dec_head[0]);
  dense(pv.dec_head[1]);
  return out;
}

}  // namespace

LossParts gradient(const ModelParams& params, const std::vector<const TrainExample*>& batch,
                   const StandardizationStats& stats, double constraint_weight,
                   ModelParams& grads, int threads) {
  if (batch.empty()) throw OpfError("gradient: empty batch");
  for (const TrainExample* ex : batch) {
    if (!ex->target) throw OpfError("gradient: example without target");
  }
  const int b = static_cast<int>(batch.size());
  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, b));

  struct Partial {
    ModelParams grads;
    LossParts parts;
    std::string error;
  };
  std::vector<Partial> partials(threads);
  const double inv_b = 1.0 / static_cast<double>(b);

  auto run_chunk = [&](int tid, int lo, int hi) {
    Partial& part = partials[tid];
    try {
      Tape tape;
      const ParamVars pv = put_params(tape, params, /*track=*/true);
      const std::vector<Var> leaf_vars = param_var_list(pv);
      const size_t mark = tape.checkpoint();
      for (int i = lo; i < hi; ++i) {
        const TrainExample& ex = *batch[i];
        const DecodedVars dec = build_forward(tape, pv, ex.graph, ex.index);
        const TargetBlocks tb =
            make_target_blocks(ex.grid, ex.index, *ex.target, stats);
        const LossVars lv = build_loss(tape, dec, tb, ex.index, constraint_weight);
        const double total = tape.val(lv.total)(0, 0);
        if (!std::isfinite(total)) {
          part.error = "non-finite loss at batch example " + std::to_string(i);
          return;
        }
        part.parts.total += total * inv_b;
        part.parts.supervised += tape.val(lv.supervised)(0, 0) * inv_b;
        part.parts.constraint += tape.val(lv.constraint)(0, 0) * inv_b;
        tape.backward(tape.scale(lv.total, inv_b));
        tape.truncate(mark);
      }
      part.grads = zeros_like(params);
      std::vector<Mat*> gs = tensor_list(part.grads);
      for (size_t k = 0; k < gs.size(); ++k) {
        const Mat& g = tape.grad(leaf_vars[k]);
        if (g.size() > 0) *gs[k] = g;
      }
    } catch (const std::exception& e) {
      part.error = e.what();
    }
  };

  if (threads == 1) {
    run_chunk(0, 0, b);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (b + threads - 1) / threads;
    for (int tid = 0; tid < threads; ++tid) {
      const int lo = tid * chunk, hi = std::min(b, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(run_chunk, tid, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  grads = zeros_like(params);
  std::vector<Mat*> acc = tensor_list(grads);
  LossParts parts;
  for (Partial& part : partials) {
    if (!part.error.empty()) throw OpfError(part.error);
    if (param_count(part.grads) == 0) continue;  // unused thread slot
    std::vector<Mat*> gs = tensor_list(part.grads);
    for (size_t k = 0; k < acc.size(); ++k) *acc[k] += *gs[k];
    parts.total += part.parts.total;
    parts.supervised += part.parts.supervised;
    parts.constraint += part.parts.constraint;
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

double lr_at(std::int64_t step, const TrainConfig& cfg) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
  }
  const double exponent =
      static_cast<double>(step - cfg.warmup_steps) / cfg.transition_steps;
  return std::max(cfg.final_lr, cfg.peak_lr * std::pow(cfg.decay_rate, exponent));
}

namespace {

std::vector<int> batch_indices(std::int64_t step, int n, int batch, std::uint64_t seed) {
  // Stateless schedule: epoch-wise seeded shuffles, full batches, wraparound
  // when the dataset is smaller than a batch.
  const int per_epoch = std::max(1, n / std::max(1, batch));
  const std::int64_t epoch = step / per_epoch;
  const int slot = static_cast<int>(step % per_epoch);
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  Rng rng = Rng::child(seed, 0xba7c4 + static_cast<std::uint64_t>(epoch));
  for (int i = n - 1; i > 0; --i) {
    std::swap(perm[i], perm[rng.uniform_int(static_cast<std::uint64_t>(i) + 1)]);
  }
  std::vector<int> out(batch);
  for (int k = 0; k < batch; ++k) out[k] = perm[(slot * batch + k) % n];
  return out;
}

void adam_update(ModelParams& params, ModelParams& m, ModelParams& v,
                 const ModelParams& grads, double lr, std::int64_t t,
                 const TrainConfig& cfg) {
  std::vector<Mat*> ps = tensor_list(params), ms = tensor_list(m), vs = tensor_list(v);
  std::vector<const Mat*> gs = tensor_list(grads);
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (size_t k = 0; k < ps.size(); ++k) {
    const Mat& g = *gs[k];
    Mat& mk = *ms[k];
    Mat& vk = *vs[k];
    mk = b1 * mk + (1.0 - b1) * g;
    vk = b2 * vk + (1.0 - b2) * g.cwiseProduct(g);
    ps[k]->array() -=
        lr * (mk.array() / c1) / ((vk.array() / c2).sqrt() + cfg.adam_eps);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state,
                     const ModelConfig& cfg, const StandardizationStats& stats) {
  TensorBundle b;
  visit_params(state.params,
               [&](const std::string& n, const Mat& m) { b.tensors["p/" + n] = m; });
  visit_params(state.adam_m,
               [&](const std::string& n, const Mat& m) { b.tensors["m/" + n] = m; });
  visit_params(state.adam_v,
               [&](const std::string& n, const Mat& m) { b.tensors["v/" + n] = m; });
  b.scalars["step"] = static_cast<double>(state.step);
  b.scalars["hidden_size"] = cfg.hidden_size;
  b.scalars["num_message_passing_steps"] = cfg.num_message_passing_steps;
  b.scalars["decoder_mlp_size"] = cfg.decoder_mlp_size;
  b.scalars["constraint_weight"] = cfg.constraint_weight;
  auto put_stats = [&](const std::string& name, const FeatureStats& fs) {
    b.tensors["stats/" + name + "/mean"] = fs.mean.transpose();
    b.tensors["stats/" + name + "/std"] = fs.std.transpose();
  };
  put_stats("bus", stats.bus);
  put_stats("gen", stats.gen);
  put_stats("load", stats.load);
  put_stats("shunt", stats.shunt);
  put_stats("line", stats.line);
  put_stats("xfmr", stats.xfmr);
  put_stats("sol_bus", stats.sol_bus);
  put_stats("sol_gen", stats.sol_gen);
  put_stats("sol_line", stats.sol_line);
  put_stats("sol_xfmr", stats.sol_xfmr);
  save_bundle(path, b);
}

Checkpoint load_checkpoint(const std::string& path) {
  const TensorBundle b = load_bundle(path);
  Checkpoint ck;
  auto scalar = [&](const std::string& name) {
    const auto it = b.scalars.find(name);
    if (it == b.scalars.end()) throw OpfError("checkpoint missing scalar " + name);
    return it->second;
  };
  ck.config.hidden_size = static_cast<int>(scalar("hidden_size"));
  ck.config.num_message_passing_steps = static_cast<int>(scalar("num_message_passing_steps"));
  ck.config.decoder_mlp_size = static_cast<int>(scalar("decoder_mlp_size"));
  ck.config.constraint_weight = scalar("constraint_weight");
  ck.state.step = static_cast<std::int64_t>(scalar("step"));

  ck.state.params = init_params(ck.config, 0);
  ck.state.adam_m = zeros_like(ck.state.params);
  ck.state.adam_v = zeros_like(ck.state.params);
  auto fill = [&](ModelParams& p, const std::string& prefix) {
    visit_params(p, [&](const std::string& n, Mat& m) {
      const auto it = b.tensors.find(prefix + n);
      if (it == b.tensors.end()) throw OpfError("checkpoint missing tensor " + prefix + n);
      if (it->second.rows() != m.rows() || it->second.cols() != m.cols()) {
        throw OpfError("checkpoint tensor shape mismatch at " + prefix + n);
      }
      m = it->second;
    });
  };
  fill(ck.state.params, "p/");
  fill(ck.state.adam_m, "m/");
  fill(ck.state.adam_v, "v/");

  auto get_stats = [&](const std::string& name) {
    const auto mean_it = b.tensors.find("stats/" + name + "/mean");
    const auto std_it = b.tensors.find("stats/" + name + "/std");
    if (mean_it == b.tensors.end() || std_it == b.tensors.end()) {
      throw OpfError("checkpoint missing stats block " + name);
    }
    return FeatureStats{mean_it->second.transpose(), std_it->second.transpose()};
  };
  ck.stats.bus = get_stats("bus");
  ck.stats.gen = get_stats("gen");
  ck.stats.load = get_stats("load");
  ck.stats.shunt = get_stats("shunt");
  ck.stats.line = get_stats("line");
  ck.stats.xfmr = get_stats("xfmr");
  ck.stats.sol_bus = get_stats("sol_bus");
  ck.stats.sol_gen = get_stats("sol_gen");
  ck.stats.sol_line = get_stats("sol_line");
  ck.stats.sol_xfmr = get_stats("sol_xfmr");
  return ck;
}

namespace {

TrainLogEntry validate(const ModelParams& params, const std::vector<TrainExample>& val_set,
                       const StandardizationStats& stats, double c_weight,
                       std::int64_t step, double lr) {
  TrainLogEntry e;
  e.step = step;
  e.lr = lr;
  if (val_set.empty()) return e;
  LossParts acc;
  double pbal = 0.0, qbal = 0.0;
  std::vector<double> pg_pred, pg_tgt, vm_pred, vm_tgt;
  for (const TrainExample& ex : val_set) {
    const OpfSolution pred = forward(params, ex.graph, ex.grid);
    const LossParts lp = loss(pred, *ex.target, ex.grid, stats, c_weight);
    acc.total += lp.total;
    acc.supervised += lp.supervised;
    acc.constraint += lp.constraint;
    const ViolationReport rep = violation_degrees(ex.grid, pred);
    pbal += rep.p_balance.mean();
    qbal += rep.q_balance.mean();
    for (int k = 0; k < ex.grid.n_generators(); ++k) {
      pg_pred.push_back(pred.pg[k]);
      pg_tgt.push_back(ex.target->pg[k]);
    }
    for (int i = 0; i < ex.grid.n_buses(); ++i) {
      vm_pred.push_back(pred.vm[i]);
      vm_tgt.push_back(ex.target->vm[i]);
    }
  }
  const double n = static_cast<double>(val_set.size());
  acc.total /= n;
  acc.supervised /= n;
  acc.constraint /= n;
  e.val_loss = acc;
  e.val_p_balance_mean = pbal / n;
  e.val_q_balance_mean = qbal / n;
  e.val_trmae_pg = trmae(pg_pred, pg_tgt).value_or(0.0);
  e.val_trmae_vm = trmae(vm_pred, vm_tgt).value_or(0.0);
  return e;
}

void append_log(const std::string& path, const TrainLogEntry& e) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::app);
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["lr"] = e.lr;
  j["loss_total"] = e.train_loss.total;
  j["loss_sup"] = e.train_loss.supervised;
  j["loss_con"] = e.train_loss.constraint;
  if (e.val_loss) {
    j["val_loss_total"] = e.val_loss->total;
    j["val_loss_sup"] = e.val_loss->supervised;
    j["val_loss_con"] = e.val_loss->constraint;
    j["val_p_balance_mean"] = *e.val_p_balance_mean;
    j["val_q_balance_mean"] = *e.val_q_balance_mean;
    j["val_trmae_pg"] = *e.val_trmae_pg;
    j["val_trmae_vm"] = *e.val_trmae_vm;
  }
  out << j.dump() << '\n';
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::vector<TrainExample>& train_set,
                  const std::vector<TrainExample>& val_set,
                  const StandardizationStats& stats, const std::string& checkpoint_path,
                  const std::string& log_path, const TrainState* resume) {
  if (train_set.empty()) throw OpfError("train: empty training set");
  for (const TrainExample& ex : train_set) {
    if (!ex.target) throw OpfError("train: dataset has unlabeled examples");
  }

  TrainResult res;
  if (resume) {
    res.state = *resume;
  } else {
    res.state.params = init_params(model_cfg, train_cfg.seed);
    res.state.adam_m = zeros_like(res.state.params);
    res.state.adam_v = zeros_like(res.state.params);
    res.state.step = 0;
  }

  const int n = static_cast<int>(train_set.size());
  ModelParams grads = zeros_like(res.state.params);

  while (res.state.step < train_cfg.total_steps) {
    const std::int64_t step = res.state.step;

    if (train_cfg.validate_every > 0 && step % train_cfg.validate_every == 0) {
      const TrainLogEntry e = validate(res.state.params, val_set, stats,
                                       model_cfg.constraint_weight, step,
                                       lr_at(step, train_cfg));
      res.log.push_back(e);
      append_log(log_path, e);
    }

    const std::vector<int> idx =
        batch_indices(step, n, train_cfg.batch_size, train_cfg.seed);
    std::vector<const TrainExample*> batch;
    batch.reserve(idx.size());
    for (int i : idx) batch.push_back(&train_set[i]);

    LossParts parts;
    try {
      parts = gradient(res.state.params, batch, stats, model_cfg.constraint_weight,
                       grads, train_cfg.threads);
    } catch (const OpfError&) {
      res.aborted_nan = true;  // last good checkpoint stays on disk
      return res;
    }
    const double lr = lr_at(step + 1, train_cfg);
    adam_update(res.state.params, res.state.adam_m, res.state.adam_v, grads, lr,
                step + 1, train_cfg);
    res.state.step = step + 1;

    TrainLogEntry e;
    e.step = res.state.step;
    e.lr = lr;
    e.train_loss = parts;
    res.log.push_back(e);
    append_log(log_path, e);

    if (!checkpoint_path.empty() && train_cfg.checkpoint_every > 0 &&
        (res.state.step % train_cfg.checkpoint_every == 0 ||
         res.state.step == train_cfg.total_steps)) {
      save_checkpoint(checkpoint_path, res.state, model_cfg, stats);
    }
  }

  if (train_cfg.validate_every > 0) {
    const TrainLogEntry e =
        validate(res.state.params, val_set, stats, model_cfg.constraint_weight,
                 res.state.step, lr_at(res.state.step, train_cfg));
    res.log.push_back(e);
    append_log(log_path, e);
  }
  return res;
}

}  // namespace opf::gnn
