#pragma once

#include <optional>
#include <span>

#include "opf/types.hpp"

namespace opf {

inline constexpr double kTrmaeThreshold = 0.001;

/// Thresholded relative mean absolute error: mean of |pred - target|/|target|
/// over entries whose |target| exceeds the threshold. An empty index set maps
/// to not-applicable.
std::optional<double> trmae(std::span<const double> pred, std::span<const double> target,
                            double threshold = kTrmaeThreshold);

/// Plain mean squared error over all entries (no thresholding).
double mse(std::span<const double> pred, std::span<const double> target);

/// cost(solution)/cost(reference) as a percentage. Requires a positive
/// reference cost.
double optimality_ratio(double cost_solution, double cost_reference);

}  // namespace opf
