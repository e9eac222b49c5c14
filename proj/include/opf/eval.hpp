#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "opf/acpf.hpp"
#include "opf/case_io.hpp"
#include "opf/gnn.hpp"

namespace opf {

/// Thresholds of the feasibility-at-threshold tables.
inline const std::vector<double> kFeasibilityThresholds = {1e-2, 1e-4, 1e-6, 1e-8};

struct EvalReport {
  std::string solver;
  int n_examples = 0;
  bool with_pf = false;
  bool reactive_available = true;  // false: partial solutions, reactive rows dashed

  // Supervised metrics aggregated over examples, keyed "bus/va", "line/pf", ...
  std::map<std::string, std::optional<double>> trmae_pct;
  std::map<std::string, std::optional<double>> mse;

  // Pre-power-flow feasibility over the violable families.
  bool pre_feasibility_evaluated = true;
  std::map<std::string, double> pre_mean_degree, pre_max_degree;
  // threshold -> family -> percentage of entities below it
  std::map<double, std::map<std::string, double>> pre_feas_at;

  // Post-power-flow metrics (only over converged examples).
  double pf_convergence_pct = 0.0;
  std::map<std::string, std::optional<double>> post_trmae_pct, post_mse;
  std::map<std::string, double> post_mean_degree, post_max_degree;
  std::map<double, std::map<std::string, double>> post_feas_at;

  std::optional<double> optimality_pre_pct, optimality_post_pct;

  double pre_ms_mean = 0.0, pre_ms_median = 0.0;
  double post_ms_mean = 0.0, post_ms_median = 0.0;
};

/// A solution provider under evaluation.
struct Solver {
  std::string name;
  bool reactive = true;
  bool evaluate_pre_feasibility = true;
  // Returns the approximate solution for one example.
  std::function<OpfSolution(const Example&)> solve;
};

Solver make_model_solver(const std::string& checkpoint_path);
Solver make_dc_solver();
Solver make_reference_solver();  // evaluates the stored labels against themselves

/// Runs the full metric suite over a labeled example set.
EvalReport evaluate(const Solver& solver, const std::vector<Example>& examples,
                    bool with_pf, const PfOptions& pf_opts = {}, int threads = 0);

void save_report(const std::string& path, const EvalReport& report);
EvalReport load_report(const std::string& path);

/// Plain-text tables (supervised, feasibility, optimality, convergence,
/// timing) for terminal output.
std::string render_report(const EvalReport& report);

struct SweepCell {
  int num_message_passing_steps = 0;
  std::uint64_t seed = 0;
  double final_val_constraint = 0.0;
  double final_val_total = 0.0;
  std::string error;  // empty on success
};

struct SweepResult {
  std::vector<SweepCell> cells;
  /// Mean final validation constraint loss per size, averaged over seeds.
  std::map<int, double> mean_constraint_by_size;
};

/// Trains one model per (size, seed) pair and collects final validation
/// losses. Per-cell failures are recorded and the sweep continues.
SweepResult sweep(const gnn::ModelConfig& base_model, const gnn::TrainConfig& base_train,
                  const std::vector<int>& sizes, int n_seeds,
                  const std::vector<gnn::TrainExample>& train_set,
                  const std::vector<gnn::TrainExample>& val_set,
                  const StandardizationStats& stats, const std::string& out_dir);

}  // namespace opf
