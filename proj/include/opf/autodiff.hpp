#pragma once

#include <functional>
#include <vector>

#include "opf/types.hpp"

namespace opf::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense matrices. Nodes are created in topological
/// order; backward() walks them in reverse, accumulating into parent
/// gradients. Leaf gradients persist across truncate(), which lets several
/// forward/backward passes share one set of parameter leaves and accumulate
/// their gradients in place.
class Tape {
 public:
  /// Gradient-tracked leaf referencing caller-owned storage (no copy; the
  /// referenced matrix must outlive tape use).
  Var leaf(const Mat& external);
  Var leaf(const Mat&&) = delete;  // would dangle
  /// Untracked constant referencing caller-owned storage.
  Var constant(const Mat& external);
  Var constant(const Mat&&) = delete;
  /// Untracked constant owned by the tape.
  Var constant_owned(Mat value);

  const Mat& val(Var v) const { return nodes_[v.id].ref ? *nodes_[v.id].ref : nodes_[v.id].value; }
  const Mat& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].track; }

  // --- structural ops -------------------------------------------------
  Var gather_rows(Var x, const std::vector<int>& rows);
  Var scatter_sum_rows(Var x, const std::vector<int>& rows, int n_out);
  Var col(Var x, int j);                       // n x 1 slice
  Var vstack(Var a, Var b);                    // row-wise concatenation

  // --- linear algebra --------------------------------------------------
  Var matmul(Var a, Var b);
  /// x*W + 1b' (bias broadcast over rows).
  Var linear(Var x, Var w, Var b);
  /// [x1 x2 x3]*W + 1b' without materializing the concatenation; W has
  /// cols(x1)+cols(x2)+cols(x3) rows.
  Var linear3(Var x1, Var x2, Var x3, Var w, Var b);

  // --- elementwise -----------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var cmul(Var a, Var c);   // c must be untracked (constant weights)
  Var cadd(Var a, Var c);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var sin(Var a);
  Var cos(Var a);
  Var square(Var a);
  Var sqrt(Var a);          // argument must stay positive
  Var abs(Var a);           // subgradient 0 at the kink

  /// Row-wise layer normalization followed by affine scale/offset
  /// (scale, offset are 1 x d row vectors).
  Var layer_norm(Var x, Var scale, Var offset, double eps = 1e-6);

  // --- reductions -------------------------------------------------------
  Var sum(Var a);   // 1x1
  Var mean(Var a);  // 1x1

  /// Seeds d(root)/d(root) = 1 and accumulates gradients into every tracked
  /// ancestor. `root` must be 1x1. May be called several times; gradients of
  /// surviving nodes keep accumulating until zero_grad().
  void backward(Var root);

  /// Vector-Jacobian product: seeds d(node) with `seed` (same shape as the
  /// node value) and accumulates into ancestors. Used to extract Jacobian
  /// rows one seed at a time.
  void backward_seeded(Var node, const Mat& seed);

  size_t checkpoint() const { return nodes_.size(); }
  /// Drops nodes created after the checkpoint (leaf gradients persist).
  void truncate(size_t mark);
  void zero_grad();
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Mat value;
    const Mat* ref = nullptr;  // external storage for leaves/constants
    Mat grad;                  // lazily sized
    bool track = false;
    std::function<void(Tape&)> pull;  // accumulates into parents
  };

  int push(Mat value, bool track, std::function<void(Tape&)> pull);
  Mat& grad_buf(Var v);
  void add_grad(Var v, const Mat& g);

  std::vector<Node> nodes_;
  friend struct GradAccess;
};

}  // namespace opf::ad
