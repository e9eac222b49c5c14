#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "opf/case_io.hpp"
#include "opf/constraints.hpp"
#include "opf/grid.hpp"
#include "opf/typed_graph.hpp"

namespace opf::gnn {

inline constexpr int kNodeTypes = 4;  // bus, generator, load, shunt
inline constexpr int kEdgeTypes = 5;  // ac_line, transformer, gen/load/shunt links

struct ModelConfig {
  int hidden_size = 128;
  int num_message_passing_steps = 12;
  int decoder_mlp_size = 256;
  double constraint_weight = 0.1;
};

struct Dense {
  Mat w;  // in x out
  Mat b;  // 1 x out
};

/// Two dense layers with relu between them and layer normalization applied
/// after the second layer.
struct Mlp {
  Dense l1, l2;
  Mat ln_scale, ln_offset;  // 1 x out
};

/// All learnable weights. Every node and edge type has its own update
/// parameters at every message-passing step.
struct ModelParams {
  std::array<Dense, kNodeTypes> node_enc;
  std::array<Dense, kEdgeTypes> edge_enc;
  struct Step {
    std::array<Mlp, kEdgeTypes> edge;
    std::array<Mlp, kNodeTypes> node;
  };
  std::vector<Step> steps;
  std::array<Mlp, 2> dec_mlp;    // bus, generator
  std::array<Dense, 2> dec_head; // 2 outputs each: (va, vm) / (pg, qg)
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Enumerates every tensor in a fixed order (used by the optimizer, the
/// checkpoint format, and gradient checks).
void visit_params(ModelParams& p, const std::function<void(const std::string&, Mat&)>& fn);
void visit_params(const ModelParams& p,
                  const std::function<void(const std::string&, const Mat&)>& fn);
std::size_t param_count(const ModelParams& p);

/// Inference: encode-process-decode, sigmoid bound enforcement, reference
/// angles pinned to zero, branch flows derived from the decoded voltages.
OpfSolution forward(const ModelParams& params, const TypedGraph& graph, const Grid& grid);

struct LossParts {
  double total = 0.0;
  double supervised = 0.0;
  double constraint = 0.0;
};

/// Supervised L2 on standardized targets (per-group mean, summed over bus,
/// generator and branch groups) plus C times the mean violation degree of the
/// violable families in physical units.
LossParts loss(const OpfSolution& pred, const OpfSolution& target, const Grid& grid,
               const StandardizationStats& stats, double constraint_weight);

struct TrainExample {
  Grid grid;
  GridIndex index;
  TypedGraph graph;
  std::optional<OpfSolution> target;
};

TrainExample make_train_example(const Example& ex, const StandardizationStats& stats);

/// Mean-batch loss and its exact reverse-mode gradient, shaped like `params`.
/// Deterministic for a fixed thread count (contiguous chunks, ordered
/// reduction). Throws OpfError naming the offending example on a non-finite
/// loss.
LossParts gradient(const ModelParams& params, const std::vector<const TrainExample*>& batch,
                   const StandardizationStats& stats, double constraint_weight,
                   ModelParams& grads, int threads = 0);

struct TrainConfig {
  int total_steps = 2000;
  int batch_size = 32;
  int warmup_steps = 10000;
  double peak_lr = 2e-4;
  double decay_rate = 0.9;
  double transition_steps = 4000;
  double final_lr = 5e-6;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;
  int validate_every = 200;
  int threads = 0;  // 0 = hardware concurrency
};

/// Linear warmup to peak_lr, then exponential decay with the configured rate
/// and transition step, clamped below at final_lr.
double lr_at(std::int64_t step, const TrainConfig& cfg);

struct TrainState {
  ModelParams params;
  ModelParams adam_m, adam_v;
  std::int64_t step = 0;
};

void save_checkpoint(const std::string& path, const TrainState& state,
                     const ModelConfig& cfg, const StandardizationStats& stats);
struct Checkpoint {
  TrainState state;
  ModelConfig config;
  StandardizationStats stats;
};
Checkpoint load_checkpoint(const std::string& path);

struct TrainLogEntry {
  std::int64_t step = 0;
  double lr = 0.0;
  LossParts train_loss;
  std::optional<LossParts> val_loss;
  std::optional<double> val_p_balance_mean, val_q_balance_mean;
  std::optional<double> val_trmae_pg, val_trmae_vm;
};

struct TrainResult {
  TrainState state;
  std::vector<TrainLogEntry> log;
  bool aborted_nan = false;
};

/// Adam with the warmup/decay schedule; deterministic batch order from a
/// seeded shuffle. `resume` continues from a saved state. The metrics log is
/// appended to `log_path` (one JSON object per line) when non-empty.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::vector<TrainExample>& train_set,
                  const std::vector<TrainExample>& val_set,
                  const StandardizationStats& stats, const std::string& checkpoint_path,
                  const std::string& log_path, const TrainState* resume = nullptr);

}  // namespace opf::gnn
