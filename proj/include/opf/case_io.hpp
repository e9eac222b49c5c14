#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "opf/grid.hpp"
#include "opf/typed_graph.hpp"

namespace opf {

enum class Perturbation { kNone, kLoadOnly, kLoadAndDrop };

struct DroppedComponent {
  std::string kind;  // "generator" or "branch"
  int id = 0;
};

/// One dataset record: a grid, an optional reference solution, and
/// provenance metadata.
struct Example {
  Grid grid;
  std::optional<OpfSolution> solution;
  struct Meta {
    std::string source_case;
    Perturbation perturbation = Perturbation::kNone;
    std::optional<DroppedComponent> dropped;
    std::uint64_t seed = 0;
  } meta;
};

/// Parses a MATPOWER-style case (baseMVA, bus, gen, branch, gencost matrices)
/// into a per-unit Grid. Only polynomial costs of degree <= 2 are accepted.
Grid parse_case(const std::string& text);
Grid parse_case_file(const std::string& path);

// Line-delimited JSON dataset records.
std::string write_example(const Example& ex);
Example read_example(const std::string& line);

std::vector<Example> read_dataset_file(const std::string& path);
void write_dataset_file(const std::string& path, const std::vector<Example>& examples);

// Standardization stats as a JSON sidecar file.
void save_stats(const std::string& path, const StandardizationStats& stats);
StandardizationStats load_stats(const std::string& path);

/// Versioned binary container for named tensors plus named scalars; the
/// checkpoint format used by the trainer. Round-trips exactly.
struct TensorBundle {
  std::map<std::string, Mat> tensors;
  std::map<std::string, double> scalars;
  std::map<std::string, std::string> strings;
};

void save_bundle(const std::string& path, const TensorBundle& bundle);
TensorBundle load_bundle(const std::string& path);

}  // namespace opf
