#include "opf/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "opf/dcopf.hpp"
#include "opf/metrics.hpp"

namespace opf {

using json = nlohmann::ordered_json;

namespace {

const std::vector<std::string> kSupervisedKeys = {
    "bus/va",  "bus/vm",  "gen/pg",  "gen/qg",  "line/pf", "line/qf",
    "line/pt", "line/qt", "xfmr/pf", "xfmr/qf", "xfmr/pt", "xfmr/qt"};

bool is_reactive_key(const std::string& key) {
  return key == "gen/qg" || key.ends_with("qf") || key.ends_with("qt");
}

struct SeriesAccum {
  std::vector<double> pred, target;
};

void collect_series(std::map<std::string, SeriesAccum>& acc, const Grid& grid,
                    const OpfSolution& pred, const OpfSolution& target) {
  for (int i = 0; i < grid.n_buses(); ++i) {
    if (!grid.bus_active(i)) continue;
    acc["bus/va"].pred.push_back(pred.va[i]);
    acc["bus/va"].target.push_back(target.va[i]);
    acc["bus/vm"].pred.push_back(pred.vm[i]);
    acc["bus/vm"].target.push_back(target.vm[i]);
  }
  for (int k = 0; k < grid.n_generators(); ++k) {
    acc["gen/pg"].pred.push_back(pred.pg[k]);
    acc["gen/pg"].target.push_back(target.pg[k]);
    if (pred.has_reactive) {
      acc["gen/qg"].pred.push_back(pred.qg[k]);
      acc["gen/qg"].target.push_back(target.qg[k]);
    }
  }
  for (int b = 0; b < grid.n_branches(); ++b) {
    const Branch& br = grid.branches[b];
    if (!grid.branch_active(br)) continue;
    const std::string t = br.kind == BranchKind::kTransformer ? "xfmr" : "line";
    acc[t + "/pf"].pred.push_back(pred.pf[b]);
    acc[t + "/pf"].target.push_back(target.pf[b]);
    acc[t + "/pt"].pred.push_back(pred.pt[b]);
    acc[t + "/pt"].target.push_back(target.pt[b]);
    if (pred.has_reactive) {
      acc[t + "/qf"].pred.push_back(pred.qf[b]);
      acc[t + "/qf"].target.push_back(target.qf[b]);
      acc[t + "/qt"].pred.push_back(pred.qt[b]);
      acc[t + "/qt"].target.push_back(target.qt[b]);
    }
  }
}

struct FamilyAccum {
  double degree_sum = 0.0;  // of per-example means
  double degree_max = 0.0;
  int examples = 0;
  std::map<double, std::pair<std::int64_t, std::int64_t>> below;  // tau -> (below, total)

  void add(const FamilyDegrees& fam) {
    if (fam.degrees.size() == 0) return;
    degree_sum += fam.mean();
    degree_max = std::max(degree_max, fam.max());
    ++examples;
    for (double tau : kFeasibilityThresholds) {
      auto& [b, t] = below[tau];
      b += (fam.degrees.array() < tau).count();
      t += fam.degrees.size();
    }
  }
  void add(const Vec& degrees) {
    FamilyDegrees fam{degrees};
    add(fam);
  }
};

/// Post-power-flow family split: voltage bounds by bus role, generator
/// bounds restricted to reference-bus units.
std::map<std::string, Vec> post_pf_families(const Grid& grid, const OpfSolution& sol,
                                            const ViolationReport& rep) {
  const GridIndex ix = build_index(grid);
  std::vector<double> vm_pq, vm_pv, qg_slack, pg_slack;
  for (int s = 0; s < ix.nb; ++s) {
    const BusType t = grid.buses[ix.bus_pos[s]].type;
    if (t == BusType::kPQ) vm_pq.push_back(rep.vm_bounds.degrees[s]);
    if (t == BusType::kPV) vm_pv.push_back(rep.vm_bounds.degrees[s]);
  }
  for (int k = 0; k < ix.ng; ++k) {
    const Generator& g = grid.generators[ix.gen_pos[k]];
    if (grid.buses[g.bus].type == BusType::kRef) {
      qg_slack.push_back(rep.qg_bounds.degrees[k]);
      pg_slack.push_back(rep.pg_bounds.degrees[k]);
    }
  }
  auto to_vec = [](const std::vector<double>& v) {
    return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  (void)sol;
  return {{"thermal_from", rep.thermal_from.degrees},
          {"thermal_to", rep.thermal_to.degrees},
          {"angle_diff", rep.angle_diff.degrees},
          {"vm_bounds_pq", to_vec(vm_pq)},
          {"vm_bounds_pv", to_vec(vm_pv)},
          {"qg_bounds_slack", to_vec(qg_slack)},
          {"pg_bounds_slack", to_vec(pg_slack)}};
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Solver make_model_solver(const std::string& checkpoint_path) {
  auto ck = std::make_shared<gnn::Checkpoint>(gnn::load_checkpoint(checkpoint_path));
  Solver s;
  s.name = "model";
  s.reactive = true;
  s.solve = [ck](const Example& ex) {
    const TypedGraph graph = to_typed_graph(ex.grid, ck->stats);
    return gnn::forward(ck->state.params, graph, ex.grid);
  };
  return s;
}

Solver make_dc_solver() {
  Solver s;
  s.name = "dc";
  s.reactive = false;
  s.evaluate_pre_feasibility = false;  // partial solutions are not audited
  s.solve = [](const Example& ex) {
    return dc_to_solution(ex.grid, solve_dcopf(ex.grid));
  };
  return s;
}

Solver make_reference_solver() {
  Solver s;
  s.name = "reference";
  s.reactive = true;
  s.solve = [](const Example& ex) {
    if (!ex.solution) throw OpfError("reference solver requires labeled examples");
    return *ex.solution;
  };
  return s;
}

EvalReport evaluate(const Solver& solver, const std::vector<Example>& examples,
                    bool with_pf, const PfOptions& pf_opts, int threads) {
  if (examples.empty()) throw OpfError("evaluate: empty example set");
  for (const Example& ex : examples) {
    if (!ex.solution) throw OpfError("evaluate: missing reference solutions");
  }

  struct PerExample {
    OpfSolution pred;
    double pre_ms = 0.0;
    bool pf_converged = false;
    OpfSolution post;
    double post_ms = 0.0;
  };
  const int n = static_cast<int>(examples.size());
  std::vector<PerExample> rows(n);

  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, n));
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  std::vector<std::string> errors(threads);
  auto work = [&](int tid) {
    try {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        PerExample& row = rows[i];
        const auto t0 = std::chrono::steady_clock::now();
        row.pred = solver.solve(examples[i]);
        const auto t1 = std::chrono::steady_clock::now();
        row.pre_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        if (with_pf) {
          const PfResult pf = restore(examples[i].grid, row.pred, pf_opts);
          const auto t2 = std::chrono::steady_clock::now();
          row.post_ms = row.pre_ms +
                        std::chrono::duration<double, std::milli>(t2 - t1).count();
          row.pf_converged = pf.converged;
          if (pf.converged) row.post = pf.solution;
        }
      }
    } catch (const std::exception& e) {
      errors[tid] = e.what();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (const std::string& err : errors) {
    if (!err.empty()) throw OpfError(err);
  }

  EvalReport rep;
  rep.solver = solver.name;
  rep.n_examples = n;
  rep.with_pf = with_pf;
  rep.reactive_available = solver.reactive;
  rep.pre_feasibility_evaluated = solver.evaluate_pre_feasibility;

  // Supervised, pre power flow.
  std::map<std::string, SeriesAccum> series;
  for (int i = 0; i < n; ++i) {
    collect_series(series, examples[i].grid, rows[i].pred, *examples[i].solution);
  }
  for (const std::string& key : kSupervisedKeys) {
    if (!solver.reactive && is_reactive_key(key)) {
      rep.trmae_pct[key] = std::nullopt;
      rep.mse[key] = std::nullopt;
      continue;
    }
    const auto it = series.find(key);
    if (it == series.end() || it->second.target.empty()) {
      rep.trmae_pct[key] = std::nullopt;
      rep.mse[key] = std::nullopt;
      continue;
    }
    const auto tr = trmae(it->second.pred, it->second.target);
    rep.trmae_pct[key] = tr ? std::optional<double>(*tr * 100.0) : std::nullopt;
    rep.mse[key] = mse(it->second.pred, it->second.target);
  }

  // Pre-power-flow feasibility (violable families).
  if (solver.evaluate_pre_feasibility) {
    std::map<std::string, FamilyAccum> fams;
    for (int i = 0; i < n; ++i) {
      const ViolationReport vr = violation_degrees(examples[i].grid, rows[i].pred);
      fams["p_balance"].add(vr.p_balance);
      fams["q_balance"].add(vr.q_balance);
      fams["thermal_from"].add(vr.thermal_from);
      fams["thermal_to"].add(vr.thermal_to);
      fams["angle_diff"].add(vr.angle_diff);
      fams["vm_bounds"].add(vr.vm_bounds);
    }
    for (const auto& [name, acc] : fams) {
      if (acc.examples == 0) continue;
      rep.pre_mean_degree[name] = acc.degree_sum / acc.examples;
      rep.pre_max_degree[name] = acc.degree_max;
      for (const auto& [tau, counts] : acc.below) {
        rep.pre_feas_at[tau][name] =
            100.0 * static_cast<double>(counts.first) / static_cast<double>(counts.second);
      }
    }
  }

  // Optimality, pre power flow.
  {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += optimality_ratio(objective_cost(examples[i].grid, rows[i].pred),
                              objective_cost(examples[i].grid, *examples[i].solution));
    }
    rep.optimality_pre_pct = acc / n;
  }

  // Timing.
  {
    std::vector<double> pre;
    for (const auto& row : rows) pre.push_back(row.pre_ms);
    rep.pre_ms_mean =
        std::accumulate(pre.begin(), pre.end(), 0.0) / static_cast<double>(n);
    rep.pre_ms_median = median(pre);
  }

  if (!with_pf) return rep;

  // Post-power-flow metrics over converged examples only.
  int converged = 0;
  std::map<std::string, SeriesAccum> post_series;
  std::map<std::string, FamilyAccum> post_fams;
  double opt_acc = 0.0;
  std::vector<double> post_ms;
  for (int i = 0; i < n; ++i) {
    if (!rows[i].pf_converged) continue;
    ++converged;
    const Grid& grid = examples[i].grid;
    collect_series(post_series, grid, rows[i].post, *examples[i].solution);
    const ViolationReport vr = violation_degrees(grid, rows[i].post);
    for (const auto& [name, degrees] : post_pf_families(grid, rows[i].post, vr)) {
      post_fams[name].add(degrees);
    }
    opt_acc += optimality_ratio(objective_cost(grid, rows[i].post),
                                objective_cost(grid, *examples[i].solution));
    post_ms.push_back(rows[i].post_ms);
  }
  rep.pf_convergence_pct = 100.0 * converged / static_cast<double>(n);
  if (converged > 0) {
    for (const std::string& key : kSupervisedKeys) {
      const auto it = post_series.find(key);
      if (it == post_series.end() || it->second.target.empty()) {
        rep.post_trmae_pct[key] = std::nullopt;
        rep.post_mse[key] = std::nullopt;
        continue;
      }
      const auto tr = trmae(it->second.pred, it->second.target);
      rep.post_trmae_pct[key] = tr ? std::optional<double>(*tr * 100.0) : std::nullopt;
      rep.post_mse[key] = mse(it->second.pred, it->second.target);
    }
    for (const auto& [name, acc] : post_fams) {
      if (acc.examples == 0) continue;
      rep.post_mean_degree[name] = acc.degree_sum / acc.examples;
      rep.post_max_degree[name] = acc.degree_max;
      for (const auto& [tau, counts] : acc.below) {
        rep.post_feas_at[tau][name] =
            100.0 * static_cast<double>(counts.first) / static_cast<double>(counts.second);
      }
    }
    rep.optimality_post_pct = opt_acc / converged;
    rep.post_ms_mean = std::accumulate(post_ms.begin(), post_ms.end(), 0.0) /
                       static_cast<double>(converged);
    rep.post_ms_median = median(post_ms);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Report serialization and rendering
// ---------------------------------------------------------------------------

namespace {

json opt_to_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

std::optional<double> opt_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

json table_to_json(const std::map<std::string, std::optional<double>>& t) {
  json j;
  for (const auto& [k, v] : t) j[k] = opt_to_json(v);
  return j;
}

std::map<std::string, std::optional<double>> table_from_json(const json& j) {
  std::map<std::string, std::optional<double>> t;
  for (auto it = j.begin(); it != j.end(); ++it) t[it.key()] = opt_from_json(it.value());
  return t;
}

json plain_to_json(const std::map<std::string, double>& t) {
  json j;
  for (const auto& [k, v] : t) j[k] = v;
  return j;
}

std::map<std::string, double> plain_from_json(const json& j) {
  std::map<std::string, double> t;
  for (auto it = j.begin(); it != j.end(); ++it) t[it.key()] = it.value().get<double>();
  return t;
}

json feas_to_json(const std::map<double, std::map<std::string, double>>& t) {
  json j;
  for (const auto& [tau, fams] : t) {
    std::ostringstream key;
    key << tau;
    j[key.str()] = plain_to_json(fams);
  }
  return j;
}

std::map<double, std::map<std::string, double>> feas_from_json(const json& j) {
  std::map<double, std::map<std::string, double>> t;
  for (auto it = j.begin(); it != j.end(); ++it) {
    t[std::stod(it.key())] = plain_from_json(it.value());
  }
  return t;
}

}  // namespace

void save_report(const std::string& path, const EvalReport& r) {
  json j;
  j["solver"] = r.solver;
  j["n_examples"] = r.n_examples;
  j["with_pf"] = r.with_pf;
  j["reactive_available"] = r.reactive_available;
  j["trmae_pct"] = table_to_json(r.trmae_pct);
  j["mse"] = table_to_json(r.mse);
  j["pre_feasibility_evaluated"] = r.pre_feasibility_evaluated;
  j["pre_mean_degree"] = plain_to_json(r.pre_mean_degree);
  j["pre_max_degree"] = plain_to_json(r.pre_max_degree);
  j["pre_feas_at"] = feas_to_json(r.pre_feas_at);
  j["pf_convergence_pct"] = r.pf_convergence_pct;
  j["post_trmae_pct"] = table_to_json(r.post_trmae_pct);
  j["post_mse"] = table_to_json(r.post_mse);
  j["post_mean_degree"] = plain_to_json(r.post_mean_degree);
  j["post_max_degree"] = plain_to_json(r.post_max_degree);
  j["post_feas_at"] = feas_to_json(r.post_feas_at);
  j["optimality_pre_pct"] = opt_to_json(r.optimality_pre_pct);
  j["optimality_post_pct"] = opt_to_json(r.optimality_post_pct);
  j["pre_ms_mean"] = r.pre_ms_mean;
  j["pre_ms_median"] = r.pre_ms_median;
  j["post_ms_mean"] = r.post_ms_mean;
  j["post_ms_median"] = r.post_ms_median;
  std::ofstream out(path);
  if (!out) throw OpfError("cannot write report " + path);
  out << j.dump(2) << '\n';
}

EvalReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw OpfError("cannot open report " + path);
  json j;
  in >> j;
  EvalReport r;
  r.solver = j.at("solver").get<std::string>();
  r.n_examples = j.at("n_examples").get<int>();
  r.with_pf = j.at("with_pf").get<bool>();
  r.reactive_available = j.at("reactive_available").get<bool>();
  r.trmae_pct = table_from_json(j.at("trmae_pct"));
  r.mse = table_from_json(j.at("mse"));
  r.pre_feasibility_evaluated = j.at("pre_feasibility_evaluated").get<bool>();
  r.pre_mean_degree = plain_from_json(j.at("pre_mean_degree"));
  r.pre_max_degree = plain_from_json(j.at("pre_max_degree"));
  r.pre_feas_at = feas_from_json(j.at("pre_feas_at"));
  r.pf_convergence_pct = j.at("pf_convergence_pct").get<double>();
  r.post_trmae_pct = table_from_json(j.at("post_trmae_pct"));
  r.post_mse = table_from_json(j.at("post_mse"));
  r.post_mean_degree = plain_from_json(j.at("post_mean_degree"));
  r.post_max_degree = plain_from_json(j.at("post_max_degree"));
  r.post_feas_at = feas_from_json(j.at("post_feas_at"));
  r.optimality_pre_pct = opt_from_json(j.at("optimality_pre_pct"));
  r.optimality_post_pct = opt_from_json(j.at("optimality_post_pct"));
  r.pre_ms_mean = j.at("pre_ms_mean").get<double>();
  r.pre_ms_median = j.at("pre_ms_median").get<double>();
  r.post_ms_mean = j.at("post_ms_mean").get<double>();
  r.post_ms_median = j.at("post_ms_median").get<double>();
  return r;
}

namespace {

std::string fmt_opt(const std::optional<double>& v, const char* unit = "") {
  if (!v) return "-";
  std::ostringstream ss;
  if (std::abs(*v) >= 1e-3 && std::abs(*v) < 1e5) {
    ss.precision(4);
    ss << std::fixed << *v << unit;
  } else {
    ss.precision(2);
    ss << std::scientific << *v << unit;
  }
  return ss.str();
}

void render_supervised(std::ostringstream& out, const std::string& title,
                       const std::map<std::string, std::optional<double>>& trmae_t,
                       const std::map<std::string, std::optional<double>>& mse_t) {
  out << title << "\n";
  out << "  " << std::left << std::setw(10) << "entity" << std::setw(6) << "field"
      << std::right << std::setw(14) << "TRMAE" << std::setw(14) << "MSE" << "\n";
  const std::pair<const char*, const char*> rows[] = {
      {"Bus", "va"},  {"Bus", "vm"},  {"Gen", "pg"},  {"Gen", "qg"},
      {"Line", "pf"}, {"Line", "qf"}, {"Line", "pt"}, {"Line", "qt"},
      {"Transf", "pf"}, {"Transf", "qf"}, {"Transf", "pt"}, {"Transf", "qt"}};
  const std::map<std::string, std::string> keys = {
      {"Bus", "bus"}, {"Gen", "gen"}, {"Line", "line"}, {"Transf", "xfmr"}};
  for (const auto& [entity, field] : rows) {
    const std::string key = keys.at(entity) + "/" + field;
    const auto tr = trmae_t.count(key) ? trmae_t.at(key) : std::nullopt;
    const auto ms = mse_t.count(key) ? mse_t.at(key) : std::nullopt;
    out << "  " << std::left << std::setw(10) << entity << std::setw(6) << field
        << std::right << std::setw(14) << fmt_opt(tr, "%") << std::setw(14)
        << fmt_opt(ms) << "\n";
  }
}

void render_degrees(std::ostringstream& out, const std::string& title,
                    const std::map<std::string, double>& mean_t,
                    const std::map<std::string, double>& max_t) {
  out << title << "\n";
  out << "  " << std::left << std::setw(20) << "family" << std::right << std::setw(14)
      << "mean" << std::setw(14) << "max" << "\n";
  for (const auto& [name, v] : mean_t) {
    out << "  " << std::left << std::setw(20) << name << std::right << std::setw(14)
        << fmt_opt(v) << std::setw(14)
        << fmt_opt(max_t.count(name) ? std::optional<double>(max_t.at(name))
                                     : std::nullopt)
        << "\n";
  }
}

void render_feas(std::ostringstream& out, const std::string& title,
                 const std::map<double, std::map<std::string, double>>& feas) {
  out << title << "\n";
  for (const auto& [tau, fams] : feas) {
    out << "  threshold " << std::scientific << std::setprecision(0) << tau << ":\n";
    for (const auto& [name, pct] : fams) {
      out << "    " << std::left << std::setw(20) << name << std::right
          << std::fixed << std::setprecision(3) << std::setw(10) << pct << " %\n";
    }
  }
}

}  // namespace

std::string render_report(const EvalReport& r) {
  std::ostringstream out;
  out << "=== evaluation: " << r.solver << " (" << r.n_examples << " examples) ===\n";
  render_supervised(out, "-- TRMAE / MSE (pre power flow)", r.trmae_pct, r.mse);
  if (r.pre_feasibility_evaluated) {
    render_degrees(out, "-- violation degrees (pre power flow)", r.pre_mean_degree,
                   r.pre_max_degree);
    render_feas(out, "-- % entities below threshold (pre power flow)", r.pre_feas_at);
  } else {
    out << "-- pre-power-flow feasibility: not applicable (partial solution)\n";
  }
  out << "-- optimality ratio (pre PF): " << fmt_opt(r.optimality_pre_pct, "%") << "\n";
  out << "-- timing (pre PF): mean " << r.pre_ms_mean << " ms, median "
      << r.pre_ms_median << " ms\n";
  if (r.with_pf) {
    out << "-- power flow convergence: " << std::fixed << std::setprecision(2)
        << r.pf_convergence_pct << " %\n";
    render_supervised(out, "-- TRMAE / MSE (post power flow)", r.post_trmae_pct,
                      r.post_mse);
    render_degrees(out, "-- violation degrees (post power flow)", r.post_mean_degree,
                   r.post_max_degree);
    render_feas(out, "-- % entities below threshold (post power flow)", r.post_feas_at);
    out << "-- optimality ratio (post PF): " << fmt_opt(r.optimality_post_pct, "%")
        << "\n";
    out << "-- timing (post PF): mean " << r.post_ms_mean << " ms, median "
        << r.post_ms_median << " ms\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Model-size sweep
// ---------------------------------------------------------------------------

SweepResult sweep(const gnn::ModelConfig& base_model, const gnn::TrainConfig& base_train,
                  const std::vector<int>& sizes, int n_seeds,
                  const std::vector<gnn::TrainExample>& train_set,
                  const std::vector<gnn::TrainExample>& val_set,
                  const StandardizationStats& stats, const std::string& out_dir) {
  SweepResult res;
  for (int size : sizes) {
    for (int seed = 0; seed < n_seeds; ++seed) {
      SweepCell cell;
      cell.num_message_passing_steps = size;
      cell.seed = static_cast<std::uint64_t>(seed);
      try {
        gnn::ModelConfig mc = base_model;
        mc.num_message_passing_steps = size;
        gnn::TrainConfig tc = base_train;
        tc.seed = base_train.seed + static_cast<std::uint64_t>(seed);
        const std::string tag =
            "size" + std::to_string(size) + "_seed" + std::to_string(seed);
        const std::string ckpt =
            out_dir.empty() ? "" : out_dir + "/sweep_" + tag + ".ckpt";
        const std::string log =
            out_dir.empty() ? "" : out_dir + "/sweep_" + tag + ".jsonl";
        const gnn::TrainResult tr =
            gnn::train(mc, tc, train_set, val_set, stats, ckpt, log);
        // Last validation entry carries the final losses.
        for (auto it = tr.log.rbegin(); it != tr.log.rend(); ++it) {
          if (it->val_loss) {
            cell.final_val_constraint = it->val_loss->constraint;
            cell.final_val_total = it->val_loss->total;
            break;
          }
        }
        if (tr.aborted_nan) cell.error = "training aborted on non-finite loss";
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
      res.cells.push_back(cell);
    }
  }
  std::map<int, std::pair<double, int>> agg;
  for (const SweepCell& c : res.cells) {
    if (!c.error.empty()) continue;
    agg[c.num_message_passing_steps].first += c.final_val_constraint;
    agg[c.num_message_passing_steps].second += 1;
  }
  for (const auto& [size, acc] : agg) {
    if (acc.second > 0) res.mean_constraint_by_size[size] = acc.first / acc.second;
  }
  if (!out_dir.empty()) {
    json j;
    j["cells"] = json::array();
    for (const SweepCell& c : res.cells) {
      j["cells"].push_back({{"num_message_passing_steps", c.num_message_passing_steps},
                            {"seed", c.seed},
                            {"final_val_constraint", c.final_val_constraint},
                            {"final_val_total", c.final_val_total},
                            {"error", c.error}});
    }
    json means;
    for (const auto& [size, v] : res.mean_constraint_by_size) {
      means[std::to_string(size)] = v;
    }
    j["mean_constraint_by_size"] = means;
    std::ofstream out(out_dir + "/sweep_summary.json");
    out << j.dump(2) << '\n';
  }
  return res;
}

}  // namespace opf
