#pragma once

#include <functional>
#include <optional>
#include <string>

#include "opf/case_io.hpp"
#include "opf/rng.hpp"

namespace opf {

enum class DatasetKind { kFullTop, kTopDrop };

struct DatagenConfig {
  std::string base_case;      // path to a MATPOWER-style case
  int n_examples = 1000;
  DatasetKind kind = DatasetKind::kFullTop;
  double load_perturbation_fraction = 0.20;
  double drop_probability = 0.5;
  double split_train = 0.90, split_val = 0.05, split_test = 0.05;
  std::uint64_t seed = 0;
  double max_label_failure_rate = 0.10;
};

/// Multiplies every load's active and reactive demand by independent factors
/// drawn uniformly from [1 - f, 1 + f].
Grid perturb_loads(const Grid& grid, Rng& rng, double fraction = 0.20);

/// Removes one uniformly chosen eligible component: a generator not at a
/// reference bus, or a branch whose removal keeps the grid connected
/// (disconnecting picks are rejected and resampled). Falls back to the other
/// kind when the coin's side has no eligible pick; throws when neither has.
std::pair<Grid, DroppedComponent> drop_component(const Grid& grid, Rng& rng);

/// Solves a grid for a reference label; empty result marks a labeling failure.
using Labeler = std::function<std::optional<OpfSolution>(const Grid&, std::uint64_t seed)>;

struct DatagenOutput {
  int n_written = 0;
  int n_label_failures = 0;
  int n_dropped_topology = 0;  // examples with a component removed
};

/// Writes train/val/test JSONL splits (deterministic given the config) plus
/// stats.json when a labeler is supplied. Example i derives its own RNG from
/// (seed, i), so results are independent of generation order.
DatagenOutput generate_dataset(const DatagenConfig& config, const std::string& out_dir,
                               const Labeler& labeler = nullptr, int threads = 0);

/// Z-score statistics over a set of labeled examples (the training split).
StandardizationStats compute_stats(const std::vector<Example>& examples);

}  // namespace opf
