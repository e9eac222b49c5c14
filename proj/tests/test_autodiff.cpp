#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "opf/autodiff.hpp"
#include "opf/rng.hpp"

using namespace opf;
using ad::Tape;
using ad::Var;

namespace {

/// Central finite differences of a scalar function of one matrix input.
Mat fd_grad(const std::function<double(const Mat&)>& f, Mat x, double h = 1e-6) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double save = x.data()[i];
    x.data()[i] = save + h;
    const double up = f(x);
    x.data()[i] = save - h;
    const double dn = f(x);
    x.data()[i] = save;
    g.data()[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

void check_close(const Mat& a, const Mat& b, double tol = 1e-6) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  CHECK((a - b).cwiseAbs().maxCoeff() < tol);
}

}  // namespace

TEST_CASE("elementwise chain against finite differences") {
  Rng rng(1);
  Mat x(4, 3);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(0.2, 1.5);

  auto f = [](const Mat& m) {
    // sum(sigmoid(m)^2 * sin(m) + sqrt(m))
    const Mat s = (1.0 / (1.0 + (-m).array().exp())).matrix();
    return (s.array().square() * m.array().sin() + m.array().sqrt()).sum();
  };
  Tape t;
  const Var vx = t.leaf(x);
  const Var s = t.sigmoid(vx);
  const Var expr =
      t.add(t.mul(t.square(s), t.sin(vx)), t.sqrt(vx));
  const Var out = t.sum(expr);
  CHECK(t.val(out)(0, 0) == doctest::Approx(f(x)).epsilon(1e-12));
  t.backward(out);
  check_close(t.grad(vx), fd_grad(f, x));
}

TEST_CASE("matmul and linear against finite differences") {
  Rng rng(2);
  Mat x(5, 4), w(4, 3), b(1, 3);
  for (auto* m : {&x, &w, &b}) {
    for (int i = 0; i < m->size(); ++i) m->data()[i] = rng.uniform(-1.0, 1.0);
  }
  auto value = [&](const Mat& xx, const Mat& ww, const Mat& bb) {
    Mat y = xx * ww;
    y.rowwise() += bb.row(0);
    return (y.array() * y.array()).sum();
  };
  Tape t;
  const Var vx = t.leaf(x), vw = t.leaf(w), vb = t.leaf(b);
  const Var out = t.sum(t.square(t.linear(vx, vw, vb)));
  t.backward(out);
  check_close(t.grad(vw), fd_grad([&](const Mat& m) { return value(x, m, b); }, w));
  check_close(t.grad(vx), fd_grad([&](const Mat& m) { return value(m, w, b); }, x));
  check_close(t.grad(vb), fd_grad([&](const Mat& m) { return value(x, w, m); }, b));
}

TEST_CASE("linear3 equals explicit concatenation") {
  Rng rng(3);
  Mat x1(6, 2), x2(6, 3), x3(6, 4), w(9, 5), b(1, 5);
  for (auto* m : {&x1, &x2, &x3, &w, &b}) {
    for (int i = 0; i < m->size(); ++i) m->data()[i] = rng.uniform(-1.0, 1.0);
  }
  Mat cat(6, 9);
  cat << x1, x2, x3;

  Tape t;
  const Var vw = t.leaf(w), vb = t.leaf(b);
  const Var out =
      t.sum(t.square(t.linear3(t.constant(x1), t.constant(x2), t.constant(x3), vw, vb)));
  t.backward(out);

  Tape t2;
  const Var vw2 = t2.leaf(w), vb2 = t2.leaf(b);
  const Var out2 = t2.sum(t2.square(t2.linear(t2.constant(cat), vw2, vb2)));
  t2.backward(out2);

  CHECK(t.val(out)(0, 0) == doctest::Approx(t2.val(out2)(0, 0)).epsilon(1e-14));
  check_close(t.grad(vw), t2.grad(vw2), 1e-12);
  check_close(t.grad(vb), t2.grad(vb2), 1e-12);
}

TEST_CASE("gather and scatter are adjoint") {
  Rng rng(4);
  Mat x(5, 3);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);
  const std::vector<int> rows = {0, 2, 2, 4, 1, 0};

  auto f = [&](const Mat& m) {
    double acc = 0.0;
    for (size_t r = 0; r < rows.size(); ++r) {
      acc += m.row(rows[r]).squaredNorm() * static_cast<double>(r + 1);
    }
    return acc;
  };
  Tape t;
  const Var vx = t.leaf(x);
  const Var gathered = t.gather_rows(vx, rows);
  Mat weights(static_cast<int>(rows.size()), 3);
  for (size_t r = 0; r < rows.size(); ++r) {
    weights.row(static_cast<int>(r)).setConstant(static_cast<double>(r + 1));
  }
  const Var out = t.sum(t.mul(t.square(gathered), t.constant(weights)));
  CHECK(t.val(out)(0, 0) == doctest::Approx(f(x)).epsilon(1e-12));
  t.backward(out);
  check_close(t.grad(vx), fd_grad(f, x));

  // scatter: y[r] = sum of x rows mapped there.
  Tape t2;
  const Var vx2 = t2.leaf(x);
  const Var spread = t2.gather_rows(vx2, rows);
  const Var packed = t2.scatter_sum_rows(spread, {1, 1, 0, 3, 2, 2}, 4);
  const Var out2 = t2.sum(t2.square(packed));
  t2.backward(out2);
  auto f2 = [&](const Mat& m) {
    Mat sp(static_cast<int>(rows.size()), 3);
    for (size_t r = 0; r < rows.size(); ++r) sp.row(static_cast<int>(r)) = m.row(rows[r]);
    Mat pk = Mat::Zero(4, 3);
    const std::vector<int> dst = {1, 1, 0, 3, 2, 2};
    for (size_t r = 0; r < dst.size(); ++r) pk.row(dst[r]) += sp.row(static_cast<int>(r));
    return pk.squaredNorm();
  };
  check_close(t2.grad(vx2), fd_grad(f2, x));
}

TEST_CASE("layer norm against finite differences") {
  Rng rng(5);
  Mat x(4, 6), scale(1, 6), offset(1, 6);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-2.0, 2.0);
  for (int i = 0; i < 6; ++i) {
    scale(0, i) = rng.uniform(0.5, 1.5);
    offset(0, i) = rng.uniform(-0.5, 0.5);
  }
  auto value = [&](const Mat& xx, const Mat& sc, const Mat& of) {
    double acc = 0.0;
    for (int r = 0; r < xx.rows(); ++r) {
      const double mean = xx.row(r).mean();
      const double var = (xx.row(r).array() - mean).square().mean();
      const Eigen::ArrayXd norm =
          (xx.row(r).array() - mean) / std::sqrt(var + 1e-6);
      acc += ((norm * sc.row(0).array().transpose() + of.row(0).array().transpose()) *
              (norm * sc.row(0).array().transpose() + of.row(0).array().transpose()))
                 .sum();
    }
    return acc;
  };
  Tape t;
  const Var vx = t.leaf(x), vs = t.leaf(scale), vo = t.leaf(offset);
  const Var out = t.sum(t.square(t.layer_norm(vx, vs, vo)));
  CHECK(t.val(out)(0, 0) == doctest::Approx(value(x, scale, offset)).epsilon(1e-10));
  t.backward(out);
  check_close(t.grad(vx), fd_grad([&](const Mat& m) { return value(m, scale, offset); }, x),
              1e-5);
  check_close(t.grad(vs),
              fd_grad([&](const Mat& m) { return value(x, m, offset); }, scale), 1e-5);
  check_close(t.grad(vo),
              fd_grad([&](const Mat& m) { return value(x, scale, m); }, offset), 1e-5);
}

TEST_CASE("relu and abs subgradients away from the kink") {
  Mat x(1, 4);
  x << -2.0, -0.5, 0.5, 2.0;
  Tape t;
  const Var vx = t.leaf(x);
  const Var out = t.sum(t.add(t.relu(vx), t.abs(vx)));
  t.backward(out);
  Mat expect(1, 4);
  expect << -1.0, -1.0, 2.0, 2.0;  // d/dx (relu + abs)
  check_close(t.grad(vx), expect, 1e-12);
}

TEST_CASE("leaf gradients accumulate across truncated passes") {
  Mat w(2, 2);
  w << 1.0, 2.0, 3.0, 4.0;
  Tape t;
  const Var vw = t.leaf(w);
  const size_t mark = t.checkpoint();

  // Two passes of the same scalar: gradients add up.
  for (int pass = 0; pass < 2; ++pass) {
    const Var out = t.sum(t.square(vw));
    t.backward(out);
    t.truncate(mark);
  }
  check_close(t.grad(vw), Mat(4.0 * w), 1e-12);

  t.zero_grad();
  const Var out = t.sum(t.square(vw));
  t.backward(out);
  check_close(t.grad(vw), Mat(2.0 * w), 1e-12);
}

TEST_CASE("vstack and col slicing route gradients") {
  Mat a(2, 3), b(3, 3);
  a.setConstant(1.0);
  b.setConstant(2.0);
  Tape t;
  const Var va = t.leaf(a), vb = t.leaf(b);
  const Var stacked = t.vstack(va, vb);
  const Var c1 = t.col(stacked, 1);
  const Var out = t.sum(t.square(c1));
  t.backward(out);
  Mat ga = Mat::Zero(2, 3), gb = Mat::Zero(3, 3);
  ga.col(1).setConstant(2.0);
  gb.col(1).setConstant(4.0);
  check_close(t.grad(va), ga, 1e-12);
  check_close(t.grad(vb), gb, 1e-12);
}
