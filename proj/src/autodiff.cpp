#include "opf/autodiff.hpp"

#include <cmath>

namespace opf::ad {

int Tape::push(Mat value, bool track, std::function<void(Tape&)> pull) {
  Node n;
  n.value = std::move(value);
  n.track = track;
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Var Tape::leaf(const Mat& external) {
  Node n;
  n.ref = &external;
  n.track = true;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(const Mat& external) {
  Node n;
  n.ref = &external;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant_owned(Mat value) {
  return {push(std::move(value), false, nullptr)};
}

const Mat& Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.grad;
}

Mat& Tape::grad_buf(Var v) {
  Node& n = nodes_[v.id];
  const Mat& val = n.ref ? *n.ref : n.value;
  if (n.grad.rows() != val.rows() || n.grad.cols() != val.cols()) {
    n.grad = Mat::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

void Tape::add_grad(Var v, const Mat& g) {
  if (!nodes_[v.id].track) return;
  grad_buf(v) += g;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.resize(0, 0);
}

void Tape::truncate(size_t mark) {
  nodes_.resize(mark);
}

void Tape::backward(Var root) {
  if (val(root).size() != 1) throw OpfError("backward root must be scalar");
  backward_seeded(root, Mat::Ones(1, 1));
}

void Tape::backward_seeded(Var node, const Mat& seed) {
  grad_buf(node) += seed;
  for (int i = node.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.track || !n.pull) continue;
    if (n.grad.size() == 0) continue;  // not reached from the seed
    n.pull(*this);
  }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Var Tape::gather_rows(Var x, const std::vector<int>& rows) {
  const Mat& xv = val(x);
  Mat out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = xv.row(rows[r]);
  const bool track = requires_grad(x);
  Var v{push(std::move(out), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [x, v, rows](Tape& t) {
      const Mat& g = t.nodes_[v.id].grad;
      Mat& gx = t.grad_buf(x);
      for (size_t r = 0; r < rows.size(); ++r) {
        gx.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
      }
    };
  }
  return v;
}

Var Tape::scatter_sum_rows(Var x, const std::vector<int>& rows, int n_out) {
  const Mat& xv = val(x);
  Mat out = Mat::Zero(n_out, xv.cols());
  for (size_t r = 0; r < rows.size(); ++r) out.row(rows[r]) += xv.row(static_cast<Eigen::Index>(r));
  const bool track = requires_grad(x);
  Var v{push(std::move(out), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [x, v, rows](Tape& t) {
      const Mat& g = t.nodes_[v.id].grad;
      Mat& gx = t.grad_buf(x);
      for (size_t r = 0; r < rows.size(); ++r) {
        gx.row(static_cast<Eigen::Index>(r)) += g.row(rows[r]);
      }
    };
  }
  return v;
}

Var Tape::col(Var x, int j) {
  const bool track = requires_grad(x);
  Var v{push(val(x).col(j), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [x, v, j](Tape& t) {
      t.grad_buf(x).col(j) += t.nodes_[v.id].grad;
    };
  }
  return v;
}

Var Tape::vstack(Var a, Var b) {
  const Mat& av = val(a);
  const Mat& bv = val(b);
  Mat out(av.rows() + bv.rows(), av.cols());
  out.topRows(av.rows()) = av;
  out.bottomRows(bv.rows()) = bv;
  const bool track = requires_grad(a) || requires_grad(b);
  Var v{push(std::move(out), track, nullptr)};
  if (track) {
    const Eigen::Index na = av.rows(), nb = bv.rows();
    nodes_[v.id].pull = [a, b, v, na, nb](Tape& t) {
      const Mat& g = t.nodes_[v.id].grad;
      t.add_grad(a, g.topRows(na));
      t.add_grad(b, g.bottomRows(nb));
    };
  }
  return v;
}

Var Tape::matmul(Var a, Var b) {
  Mat out = val(a) * val(b);
  const bool track = requires_grad(a) || requires_grad(b);
  Var v{push(std::move(out), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, b, v](Tape& t) {
      const Mat& g = t.nodes_[v.id].grad;
      if (t.requires_grad(a)) t.grad_buf(a).noalias() += g * t.val(b).transpose();
      if (t.requires_grad(b)) t.grad_buf(b).noalias() += t.val(a).transpose() * g;
    };
  }
  return v;
}

Var Tape::linear(Var x, Var w, Var b) {
  Mat out = val(x) * val(w);
  out.rowwise() += val(b).row(0);
  const bool track = requires_grad(x) || requires_grad(w) || requires_grad(b);
  Var v{push(std::move(out), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [x, w, b, v](Tape& t) {
      const Mat& g = t.nodes_[v.id].grad;
      if (t.requires_grad(x)) t.grad_buf(x).noalias() += g * t.val(w).transpose();
      if (t.requires_grad(w)) t.grad_buf(w).noalias() += t.val(x).transpose() * g;
      if (t.requires_grad(b)) t.grad_buf(b).row(0) += g.colwise().sum();
    };
  }
  return v;
}

Var Tape::linear3(Var x1, Var x2, Var x3, Var w, Var b) {
  const Eigen::Index d1 = val(x1).cols(), d2 = val(x2).cols(), d3 = val(x3).cols();
  const Mat& wv = val(w);
  if (wv.rows() != d1 + d2 + d3) throw OpfError("linear3 weight shape mismatch");
  Mat out = val(x1) * wv.topRows(d1);
  out.noalias() += val(x2) * wv.middleRows(d1, d2);
  out.noalias() += val(x3) * wv.bottomRows(d3);
  out.rowwise() += val(b).row(0);
  Var v{push(std::move(out), true, nullptr)};
  nodes_[v.id].pull = [x1, x2, x3, w, b, v, d1, d2, d3](Tape& t) {
    const Mat& g = t.nodes_[v.id].grad;
    const Mat& wv = t.val(w);
    if (t.requires_grad(x1)) t.grad_buf(x1).noalias() += g * wv.topRows(d1).transpose();
    if (t.requires_grad(x2)) t.grad_buf(x2).noalias() += g * wv.middleRows(d1, d2).transpose();
    if (t.requires_grad(x3)) t.grad_buf(x3).noalias() += g * wv.bottomRows(d3).transpose();
    if (t.requires_grad(w)) {
      Mat& gw = t.grad_buf(w);
      gw.topRows(d1).noalias() += t.val(x1).transpose() * g;
      gw.middleRows(d1, d2).noalias() += t.val(x2).transpose() * g;
      gw.bottomRows(d3).noalias() += t.val(x3).transpose() * g;
    }
    if (t.requires_grad(b)) t.grad_buf(b).row(0) += g.colwise().sum();
  };
  return v;
}

Var Tape::add(Var a, Var b) {
  const bool track = requires_grad(a) || requires_grad(b);
  Var v{push(val(a) + val(b), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, b, v](Tape& t) {
      const Mat& g = t.nodes_[v.id].grad;
      t.add_grad(a, g);
      t.add_grad(b, g);
    };
  }
  return v;
}

Var Tape::sub(Var a, Var b) {
  const bool track = requires_grad(a) || requires_grad(b);
  Var v{push(val(a) - val(b), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, b, v](Tape& t) {
      const Mat& g = t.nodes_[v.id].grad;
      t.add_grad(a, g);
      t.add_grad(b, -g);
    };
  }
  return v;
}

Var Tape::mul(Var a, Var b) {
  const bool track = requires_grad(a) || requires_grad(b);
  Var v{push(val(a).cwiseProduct(val(b)), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, b, v](Tape& t) {
      const Mat& g = t.nodes_[v.id].grad;
      if (t.requires_grad(a)) t.grad_buf(a) += g.cwiseProduct(t.val(b));
      if (t.requires_grad(b)) t.grad_buf(b) += g.cwiseProduct(t.val(a));
    };
  }
  return v;
}

Var Tape::scale(Var a, double s) {
  const bool track = requires_grad(a);
  Var v{push(val(a) * s, track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, v, s](Tape& t) { t.grad_buf(a) += t.nodes_[v.id].grad * s; };
  }
  return v;
}

Var Tape::cmul(Var a, Var c) {
  if (requires_grad(c)) throw OpfError("cmul weight must be constant");
  return mul(a, c);
}

Var Tape::cadd(Var a, Var c) { return add(a, c); }

Var Tape::relu(Var a) {
  const bool track = requires_grad(a);
  Var v{push(val(a).cwiseMax(0.0), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, v](Tape& t) {
      const Mat mask = (t.val(a).array() > 0.0).cast<double>();
      t.grad_buf(a) += t.nodes_[v.id].grad.cwiseProduct(mask);
    };
  }
  return v;
}

Var Tape::sigmoid(Var a) {
  Mat out = (1.0 / (1.0 + (-val(a)).array().exp())).matrix();
  const bool track = requires_grad(a);
  Var v{push(std::move(out), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, v](Tape& t) {
      const Mat& s = t.val(v);
      t.grad_buf(a) +=
          t.nodes_[v.id].grad.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
    };
  }
  return v;
}

Var Tape::sin(Var a) {
  const bool track = requires_grad(a);
  Var v{push(val(a).array().sin().matrix(), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, v](Tape& t) {
      t.grad_buf(a) +=
          t.nodes_[v.id].grad.cwiseProduct(t.val(a).array().cos().matrix());
    };
  }
  return v;
}

Var Tape::cos(Var a) {
  const bool track = requires_grad(a);
  Var v{push(val(a).array().cos().matrix(), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, v](Tape& t) {
      t.grad_buf(a) -=
          t.nodes_[v.id].grad.cwiseProduct(t.val(a).array().sin().matrix());
    };
  }
  return v;
}

Var Tape::square(Var a) {
  const bool track = requires_grad(a);
  Var v{push(val(a).cwiseProduct(val(a)), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, v](Tape& t) {
      t.grad_buf(a) += 2.0 * t.nodes_[v.id].grad.cwiseProduct(t.val(a));
    };
  }
  return v;
}

Var Tape::sqrt(Var a) {
  const bool track = requires_grad(a);
  Var v{push(val(a).cwiseSqrt(), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, v](Tape& t) {
      t.grad_buf(a) += t.nodes_[v.id].grad.cwiseQuotient(2.0 * t.val(v));
    };
  }
  return v;
}

Var Tape::abs(Var a) {
  const bool track = requires_grad(a);
  Var v{push(val(a).cwiseAbs(), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, v](Tape& t) {
      const Mat sign = t.val(a).array().sign().matrix();
      t.grad_buf(a) += t.nodes_[v.id].grad.cwiseProduct(sign);
    };
  }
  return v;
}

Var Tape::layer_norm(Var x, Var scale, Var offset, double eps) {
  const Mat& xv = val(x);
  const Eigen::Index n = xv.rows(), d = xv.cols();
  Vec mean(n), inv_std(n);
  Mat xhat(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double m = xv.row(r).mean();
    const double var = (xv.row(r).array() - m).square().mean();
    mean[r] = m;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - m) * inv_std[r];
  }
  Mat out = xhat;
  out.array().rowwise() *= val(scale).row(0).array();
  out.rowwise() += val(offset).row(0);

  Var v{push(std::move(out), true, nullptr)};
  // The backward needs xhat and inv_std; keep them on the closure.
  nodes_[v.id].pull = [x, scale, offset, v, xhat = std::move(xhat),
                       inv_std = std::move(inv_std)](Tape& t) {
    const Mat& g = t.nodes_[v.id].grad;
    if (t.requires_grad(scale)) {
      t.grad_buf(scale).row(0) += g.cwiseProduct(xhat).colwise().sum();
    }
    if (t.requires_grad(offset)) t.grad_buf(offset).row(0) += g.colwise().sum();
    if (t.requires_grad(x)) {
      const Eigen::Index d = g.cols();
      Mat gh = g;
      gh.array().rowwise() *= t.val(scale).row(0).array();
      Mat& gx = t.grad_buf(x);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const double gh_mean = gh.row(r).mean();
        const double ghx_mean = gh.row(r).cwiseProduct(xhat.row(r)).mean() ;
        gx.row(r) += (inv_std[r] *
                      (gh.row(r).array() - gh_mean - xhat.row(r).array() * ghx_mean))
                         .matrix();
        (void)d;
      }
    }
  };
  return v;
}

Var Tape::sum(Var a) {
  const bool track = requires_grad(a);
  Mat out(1, 1);
  out(0, 0) = val(a).sum();
  Var v{push(std::move(out), track, nullptr)};
  if (track) {
    nodes_[v.id].pull = [a, v](Tape& t) {
      t.grad_buf(a).array() += t.nodes_[v.id].grad(0, 0);
    };
  }
  return v;
}

Var Tape::mean(Var a) {
  const double inv = 1.0 / static_cast<double>(val(a).size());
  return scale(sum(a), inv);
}

}  // namespace opf::ad
