#pragma once

#include "opf/types.hpp"

namespace opf {

/// Convex quadratic program
///   minimize    0.5 x'Qx + c'x
///   subject to  A x = b,  G x <= h
/// with Q positive semidefinite.
struct QpProblem {
  Mat Q;
  Vec c;
  Mat A;
  Vec b;
  Mat G;
  Vec h;
};

struct QpOptions {
  double tol = 1e-9;  // on stationarity, primal residuals and duality gap
  int max_iter = 100;
};

struct QpResult {
  bool converged = false;
  int iterations = 0;
  Vec x;      // primal
  Vec y;      // equality multipliers
  Vec z, s;   // inequality multipliers and slacks (z >= 0, s >= 0)
  double stationarity = 0.0, primal_eq = 0.0, primal_ineq = 0.0, gap = 0.0;
  std::string message;
};

/// Mehrotra-style primal-dual interior-point method on dense matrices.
QpResult solve_qp(const QpProblem& qp, const QpOptions& opts = {});

}  // namespace opf
