#include "opf/qp.hpp"

#include <Eigen/LU>

#include <cmath>

namespace opf {

namespace {

// Fraction-to-boundary step length keeping v + a*dv >= (1-eta)*v.
double max_step(const Vec& v, const Vec& dv, double eta) {
  double a = 1.0;
  for (int i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) a = std::min(a, -eta * v[i] / dv[i]);
  }
  return a;
}

}  // namespace

QpResult solve_qp(const QpProblem& qp, const QpOptions& opts) {
  const int n = static_cast<int>(qp.Q.rows());
  const int me = static_cast<int>(qp.A.rows());
  const int mi = static_cast<int>(qp.G.rows());
  QpResult res;

  Vec x = Vec::Zero(n);
  Vec y = Vec::Zero(me);
  Vec z = Vec::Ones(mi);
  Vec s = Vec::Ones(mi);

  const double reg = 1e-10;  // KKT regularization
  const int dim = n + me;
  Mat kkt(dim, dim);
  Vec rhs(dim);

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    res.iterations = iter;

    const Vec r_stat = qp.Q * x + qp.c + qp.A.transpose() * y + qp.G.transpose() * z;
    const Vec r_eq = qp.A * x - qp.b;
    const Vec r_in = qp.G * x + s - qp.h;  // == 0 on the central path
    const double mu = mi ? s.dot(z) / mi : 0.0;

    res.stationarity = r_stat.size() ? r_stat.cwiseAbs().maxCoeff() : 0.0;
    res.primal_eq = r_eq.size() ? r_eq.cwiseAbs().maxCoeff() : 0.0;
    res.primal_ineq = r_in.size() ? r_in.cwiseAbs().maxCoeff() : 0.0;
    res.gap = mu;
    if (res.stationarity <= opts.tol && res.primal_eq <= opts.tol &&
        res.primal_ineq <= opts.tol && mu <= opts.tol) {
      res.converged = true;
      break;
    }

    // Reduced KKT with inequalities folded through W = diag(z/s).
    const Vec w = mi ? Vec(z.cwiseQuotient(s)) : Vec();
    kkt.setZero();
    kkt.topLeftCorner(n, n) = qp.Q;
    if (mi) kkt.topLeftCorner(n, n) += qp.G.transpose() * w.asDiagonal() * qp.G;
    kkt.topLeftCorner(n, n).diagonal().array() += reg;
    if (me) {
      kkt.topRightCorner(n, me) = qp.A.transpose();
      kkt.bottomLeftCorner(me, n) = qp.A;
      kkt.bottomRightCorner(me, me).diagonal().array() -= reg;
    }
    Eigen::PartialPivLU<Mat> lu(kkt);

    // Newton step with ds, dz eliminated; `comp` is the complementarity
    // target in the linearized equation z.*ds + s.*dz = comp - s.*z.
    auto solve_step = [&](const Vec& rs, const Vec& re, const Vec& comp) {
      rhs.head(n) = -rs;
      if (mi) {
        rhs.head(n) -=
            qp.G.transpose() * (w.cwiseProduct(r_in) + comp.cwiseQuotient(s) - z);
      }
      if (me) rhs.tail(me) = -re;
      const Vec d = lu.solve(rhs);
      struct Step { Vec dx, dy, dz, ds; } st;
      st.dx = d.head(n);
      st.dy = me ? Vec(d.tail(me)) : Vec();
      if (mi) {
        st.ds = -(r_in + qp.G * st.dx);
        st.dz = w.cwiseProduct(qp.G * st.dx + r_in) + comp.cwiseQuotient(s) - z;
      }
      return st;
    };

    // Predictor (affine scaling direction).
    auto aff = solve_step(r_stat, r_eq, Vec::Zero(mi));
    double alpha_aff = 1.0;
    if (mi) {
      alpha_aff = std::min(max_step(s, aff.ds, 1.0), max_step(z, aff.dz, 1.0));
    }
    double sigma = 0.0;
    if (mi && mu > 0.0) {
      const double mu_aff = (s + alpha_aff * aff.ds).dot(z + alpha_aff * aff.dz) / mi;
      sigma = std::pow(mu_aff / mu, 3);
    }

    // Corrector with centering.
    Vec comp = Vec::Zero(mi);
    if (mi) comp = Vec::Constant(mi, sigma * mu) - aff.ds.cwiseProduct(aff.dz);
    auto dir = solve_step(r_stat, r_eq, comp);

    double alpha = 1.0;
    if (mi) {
      const double eta = 0.995;
      alpha = std::min(max_step(s, dir.ds, eta), max_step(z, dir.dz, eta));
    }
    x += alpha * dir.dx;
    if (me) y += alpha * dir.dy;
    if (mi) {
      s += alpha * dir.ds;
      z += alpha * dir.dz;
    }
    if (!x.allFinite()) {
      res.message = "diverged";
      break;
    }
  }

  res.x = x;
  res.y = y;
  res.z = z;
  res.s = s;
  if (!res.converged && res.message.empty()) res.message = "iteration limit";
  return res;
}

}  // namespace opf
