#include "opf/metrics.hpp"

#include <cmath>

namespace opf {

std::optional<double> trmae(std::span<const double> pred, std::span<const double> target,
                            double threshold) {
  if (pred.size() != target.size()) throw OpfError("trmae: length mismatch");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (std::abs(target[i]) > threshold) {
      acc += std::abs(pred[i] - target[i]) / std::abs(target[i]);
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return acc / static_cast<double>(count);
}

double mse(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw OpfError("mse: length mismatch");
  if (pred.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

double optimality_ratio(double cost_solution, double cost_reference) {
  if (!(cost_reference > 0.0)) throw OpfError("optimality: nonpositive reference cost");
  return 100.0 * cost_solution / cost_reference;
}

}  // namespace opf
