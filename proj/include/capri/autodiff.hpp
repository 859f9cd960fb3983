#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "capri/common.hpp"

namespace capri::ad {

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape is a flat, append-only expression graph. Nodes are created in
// topological order by the builder methods; forward() evaluates every node,
// backward(root) accumulates gradients of a scalar root into all
// differentiable leaves. The tape can be rebuilt per step or built once and
// re-bound; both give identical results because forward() always recomputes
// from the current bindings.
//
// Subgradient conventions at kinks (fixed so tests are deterministic):
//   relu'(0) = 0, leaky_relu'(0) = slope
//   clip01' is 1 strictly inside (0,1), 0 elsewhere including the boundary
//   abs'(0) = 0
//   row_min routes the row gradient to the lowest-index minimizer
//   max/min of node vs constant routes ties to the node
//   max/min of two nodes routes ties to the first argument
//   indicators and (non-straight-through) binarize have zero gradient

using NodeId = int;

enum class Op {
  kLeaf,
  kConstant,
  kMatMul,
  kAdd,
  kSub,
  kMul,       // elementwise
  kScale,     // by compile-time scalar
  kRelu,
  kLeakyRelu,
  kClip01,
  kSquare,
  kAbs,
  kMaxConst,
  kMinConst,
  kMax,       // elementwise, two nodes
  kMin,
  kRowMin,
  kRowSum,
  kSumAll,
  kMeanAll,
  kLtIndicator,  // 1 if x < k else 0; gradient zero
  kGtIndicator,  // 1 if x > k else 0; gradient zero
  kBinarize,     // 1 if x > k else 0; straight-through optional
  kReshape,
};

template <typename S>
class Tape {
 public:
  using Mat = MatX<S>;

  NodeId leaf(std::string name, Index rows, Index cols,
              bool differentiable = true) {
    Node n;
    n.op = Op::kLeaf;
    n.name = std::move(name);
    n.rows = rows;
    n.cols = cols;
    n.differentiable = differentiable;
    n.needs_grad = differentiable;
    return push(std::move(n));
  }

  NodeId constant(Mat value) {
    require_finite(value, "tape constant");
    Node n;
    n.op = Op::kConstant;
    n.rows = value.rows();
    n.cols = value.cols();
    n.value = std::move(value);
    n.bound = true;
    return push(std::move(n));
  }

  NodeId constant_filled(Index rows, Index cols, S fill) {
    return constant(Mat::Constant(rows, cols, fill));
  }

  // C = op_a(A) * op_b(B), where the flags select transposed operands.
  NodeId matmul(NodeId a, NodeId b, bool trans_a = false,
                bool trans_b = false) {
    const Index ar = trans_a ? at(a).cols : at(a).rows;
    const Index ac = trans_a ? at(a).rows : at(a).cols;
    const Index br = trans_b ? at(b).cols : at(b).rows;
    const Index bc = trans_b ? at(b).rows : at(b).cols;
    if (ac != br) {
      throw InputError("matmul shape mismatch: " + shape_str(ar, ac) + " * " +
                       shape_str(br, bc));
    }
    Node n = binary(Op::kMatMul, a, b, ar, bc);
    n.flag_a = trans_a;
    n.flag_b = trans_b;
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) { return push(same_shape(Op::kAdd, a, b)); }
  NodeId sub(NodeId a, NodeId b) { return push(same_shape(Op::kSub, a, b)); }
  NodeId mul(NodeId a, NodeId b) { return push(same_shape(Op::kMul, a, b)); }
  NodeId cmax(NodeId a, NodeId b) { return push(same_shape(Op::kMax, a, b)); }
  NodeId cmin(NodeId a, NodeId b) { return push(same_shape(Op::kMin, a, b)); }

  NodeId scale(NodeId a, S k) { return push(unary(Op::kScale, a, k)); }
  NodeId relu(NodeId a) { return push(unary(Op::kRelu, a)); }
  NodeId leaky_relu(NodeId a, S slope) {
    return push(unary(Op::kLeakyRelu, a, slope));
  }
  NodeId clip01(NodeId a) { return push(unary(Op::kClip01, a)); }
  NodeId square(NodeId a) { return push(unary(Op::kSquare, a)); }
  NodeId abs(NodeId a) { return push(unary(Op::kAbs, a)); }
  NodeId max_const(NodeId a, S k) { return push(unary(Op::kMaxConst, a, k)); }
  NodeId min_const(NodeId a, S k) { return push(unary(Op::kMinConst, a, k)); }

  NodeId lt_indicator(NodeId a, S threshold) {
    Node n = unary(Op::kLtIndicator, a, threshold);
    n.needs_grad = false;
    return push(std::move(n));
  }
  NodeId gt_indicator(NodeId a, S threshold) {
    Node n = unary(Op::kGtIndicator, a, threshold);
    n.needs_grad = false;
    return push(std::move(n));
  }
  NodeId binarize(NodeId a, S threshold, bool straight_through) {
    Node n = unary(Op::kBinarize, a, threshold);
    n.flag_a = straight_through;
    if (!straight_through) n.needs_grad = false;
    return push(std::move(n));
  }

  NodeId row_min(NodeId a) {
    if (at(a).cols < 1) throw InputError("row_min on empty-width node");
    Node n = unary(Op::kRowMin, a);
    n.cols = 1;
    return push(std::move(n));
  }
  NodeId row_sum(NodeId a) {
    Node n = unary(Op::kRowSum, a);
    n.cols = 1;
    return push(std::move(n));
  }
  NodeId sum_all(NodeId a) {
    Node n = unary(Op::kSumAll, a);
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
  }
  NodeId mean_all(NodeId a) {
    Node n = unary(Op::kMeanAll, a);
    n.rows = 1;
    n.cols = 1;
    return push(std::move(n));
  }

  NodeId reshape(NodeId a, Index rows, Index cols) {
    if (at(a).rows * at(a).cols != rows * cols) {
      throw InputError("reshape size mismatch: " +
                       shape_str(at(a).rows, at(a).cols) + " -> " +
                       shape_str(rows, cols));
    }
    Node n = unary(Op::kReshape, a);
    n.rows = rows;
    n.cols = cols;
    return push(std::move(n));
  }

  void bind(NodeId id, const Mat& value) {
    Node& n = at(id);
    if (n.op != Op::kLeaf) throw InputError("bind target is not a leaf");
    if (value.rows() != n.rows || value.cols() != n.cols) {
      throw InputError("bind shape mismatch for leaf '" + n.name +
                       "': " + shape_str(n.rows, n.cols) + " vs " +
                       shape_str(value.rows(), value.cols()));
    }
    require_finite(value, "leaf '" + n.name + "'");
    n.value = value;
    n.bound = true;
  }

  // Cast-bind from a double matrix (used when the fit runs in float).
  void bind_cast(NodeId id, const MatX<double>& value) {
    if constexpr (std::is_same_v<S, double>) {
      bind(id, value);
    } else {
      bind(id, value.template cast<S>());
    }
  }

  void forward() {
    for (Node& n : nodes_) eval(n);
  }

  void backward(NodeId root) {
    Node& r = at(root);
    if (r.rows != 1 || r.cols != 1) {
      throw InputError("backward root must be scalar, got " +
                       shape_str(r.rows, r.cols));
    }
    for (Node& n : nodes_) {
      if (n.needs_grad || n.op == Op::kLeaf) {
        n.grad.setZero(n.rows, n.cols);
      }
    }
    if (!r.needs_grad) return;  // root does not depend on any leaf
    r.grad(0, 0) = S(1);
    for (NodeId id = root; id >= 0; --id) accumulate(at(id));
  }

  const Mat& value(NodeId id) const { return at(id).value; }
  const Mat& grad(NodeId id) const { return at(id).grad; }
  const std::string& name(NodeId id) const { return at(id).name; }
  bool differentiable(NodeId id) const { return at(id).differentiable; }

  std::vector<NodeId> differentiable_leaves() const {
    std::vector<NodeId> out;
    for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id) {
      if (nodes_[id].op == Op::kLeaf && nodes_[id].differentiable) {
        out.push_back(id);
      }
    }
    return out;
  }

  // Smallest distance of any kinked op's input to its kink, over the last
  // forward pass. Callers use this to reject bindings too close to a
  // non-smooth point before running a finite-difference check.
  S kink_margin() const {
    S margin = std::numeric_limits<S>::infinity();
    auto consider = [&margin](S d) { margin = std::min(margin, std::abs(d)); };
    for (const Node& n : nodes_) {
      const Mat* x = n.a >= 0 ? &nodes_[n.a].value : nullptr;
      // Continuous kinks (branch switches with a continuous value) only
      // matter where a gradient can flow; on constant subgraphs they affect
      // neither the analytic gradient nor a finite-difference probe.
      const bool grad_path =
          (n.a >= 0 && nodes_[n.a].needs_grad) ||
          (n.b >= 0 && nodes_[n.b].needs_grad);
      switch (n.op) {
        case Op::kRelu:
        case Op::kLeakyRelu:
        case Op::kAbs:
          if (!grad_path) break;
          for (Index i = 0; i < x->size(); ++i) consider(x->data()[i]);
          break;
        case Op::kClip01:
          if (!grad_path) break;
          for (Index i = 0; i < x->size(); ++i) {
            consider(x->data()[i]);
            consider(x->data()[i] - S(1));
          }
          break;
        case Op::kMaxConst:
        case Op::kMinConst:
          if (!grad_path) break;
          [[fallthrough]];
        case Op::kLtIndicator:
        case Op::kGtIndicator:
        case Op::kBinarize:
          // Indicator and quantization thresholds are value discontinuities,
          // so their margins always count.
          for (Index i = 0; i < x->size(); ++i) consider(x->data()[i] - n.k);
          break;
        case Op::kMax:
        case Op::kMin: {
          if (!grad_path) break;
          const Mat& y = nodes_[n.b].value;
          for (Index i = 0; i < x->size(); ++i) {
            consider(x->data()[i] - y.data()[i]);
          }
          break;
        }
        case Op::kRowMin:
          if (!grad_path) break;
          for (Index r = 0; r < x->rows(); ++r) {
            S lo = std::numeric_limits<S>::infinity();
            S second = lo;
            for (Index c = 0; c < x->cols(); ++c) {
              const S v = (*x)(r, c);
              if (v < lo) {
                second = lo;
                lo = v;
              } else {
                second = std::min(second, v);
              }
            }
            if (x->cols() > 1) consider(second - lo);
          }
          break;
        default:
          break;
      }
    }
    return margin;
  }

 private:
  struct Node {
    Op op = Op::kLeaf;
    NodeId a = -1;
    NodeId b = -1;
    S k = S(0);
    bool flag_a = false;
    bool flag_b = false;
    Index rows = 0;
    Index cols = 0;
    bool differentiable = false;  // leaves only
    bool needs_grad = false;      // any differentiable leaf upstream
    bool bound = false;           // leaves/constants only
    std::string name;
    Mat value;
    Mat grad;
  };

  Node& at(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
  const Node& at(NodeId id) const {
    return nodes_.at(static_cast<std::size_t>(id));
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  Node unary(Op op, NodeId a, S k = S(0)) {
    Node n;
    n.op = op;
    n.a = a;
    n.k = k;
    n.rows = at(a).rows;
    n.cols = at(a).cols;
    n.needs_grad = at(a).needs_grad;
    return n;
  }

  Node binary(Op op, NodeId a, NodeId b, Index rows, Index cols) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.rows = rows;
    n.cols = cols;
    n.needs_grad = at(a).needs_grad || at(b).needs_grad;
    return n;
  }

  Node same_shape(Op op, NodeId a, NodeId b) {
    if (at(a).rows != at(b).rows || at(a).cols != at(b).cols) {
      throw InputError("elementwise shape mismatch: " +
                       shape_str(at(a).rows, at(a).cols) + " vs " +
                       shape_str(at(b).rows, at(b).cols));
    }
    return binary(op, a, b, at(a).rows, at(a).cols);
  }

  void eval(Node& n) {
    switch (n.op) {
      case Op::kLeaf:
        if (!n.bound) throw InputError("unbound leaf '" + n.name + "'");
        return;
      case Op::kConstant:
        return;
      default:
        break;
    }
    const Mat& A = nodes_[n.a].value;
    n.value.resize(n.rows, n.cols);
    switch (n.op) {
      case Op::kMatMul: {
        const Mat& B = nodes_[n.b].value;
        if (!n.flag_a && !n.flag_b) {
          n.value.noalias() = A * B;
        } else if (!n.flag_a && n.flag_b) {
          n.value.noalias() = A * B.transpose();
        } else if (n.flag_a && !n.flag_b) {
          n.value.noalias() = A.transpose() * B;
        } else {
          n.value.noalias() = A.transpose() * B.transpose();
        }
        break;
      }
      case Op::kAdd:
        n.value = A + nodes_[n.b].value;
        break;
      case Op::kSub:
        n.value = A - nodes_[n.b].value;
        break;
      case Op::kMul:
        n.value = A.cwiseProduct(nodes_[n.b].value);
        break;
      case Op::kMax:
        n.value = A.cwiseMax(nodes_[n.b].value);
        break;
      case Op::kMin:
        n.value = A.cwiseMin(nodes_[n.b].value);
        break;
      case Op::kScale:
        n.value = A * n.k;
        break;
      case Op::kRelu:
        n.value = A.cwiseMax(S(0));
        break;
      case Op::kLeakyRelu:
        n.value = A.unaryExpr(
            [s = n.k](S x) { return x > S(0) ? x : s * x; });
        break;
      case Op::kClip01:
        n.value = A.cwiseMax(S(0)).cwiseMin(S(1));
        break;
      case Op::kSquare:
        n.value = A.array().square();
        break;
      case Op::kAbs:
        n.value = A.cwiseAbs();
        break;
      case Op::kMaxConst:
        n.value = A.cwiseMax(n.k);
        break;
      case Op::kMinConst:
        n.value = A.cwiseMin(n.k);
        break;
      case Op::kRowMin:
        n.value = A.rowwise().minCoeff();
        break;
      case Op::kRowSum:
        n.value = A.rowwise().sum();
        break;
      case Op::kSumAll:
        n.value(0, 0) = A.sum();
        break;
      case Op::kMeanAll:
        n.value(0, 0) = A.sum() / static_cast<S>(A.size());
        break;
      case Op::kLtIndicator:
        n.value = A.unaryExpr(
            [t = n.k](S x) { return x < t ? S(1) : S(0); });
        break;
      case Op::kGtIndicator:
      case Op::kBinarize:
        n.value = A.unaryExpr(
            [t = n.k](S x) { return x > t ? S(1) : S(0); });
        break;
      case Op::kReshape:
        n.value = Eigen::Map<const Mat>(A.data(), n.rows, n.cols);
        break;
      default:
        throw InputError("unhandled op in eval");
    }
  }

  void accumulate(Node& n) {
    if (!n.needs_grad) return;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        return;
      default:
        break;
    }
    Node& na = nodes_[n.a];
    const Mat& G = n.grad;
    auto add_a = [&](const Mat& g) {
      if (na.needs_grad) na.grad += g;
    };
    switch (n.op) {
      case Op::kMatMul: {
        Node& nb = nodes_[n.b];
        const Mat& A = na.value;
        const Mat& B = nb.value;
        if (na.needs_grad) {
          if (!n.flag_a && !n.flag_b) {
            na.grad.noalias() += G * B.transpose();
          } else if (!n.flag_a && n.flag_b) {
            na.grad.noalias() += G * B;
          } else if (n.flag_a && !n.flag_b) {
            na.grad.noalias() += B * G.transpose();
          } else {
            na.grad.noalias() += B.transpose() * G.transpose();
          }
        }
        if (nb.needs_grad) {
          if (!n.flag_a && !n.flag_b) {
            nb.grad.noalias() += A.transpose() * G;
          } else if (!n.flag_a && n.flag_b) {
            nb.grad.noalias() += G.transpose() * A;
          } else if (n.flag_a && !n.flag_b) {
            nb.grad.noalias() += A * G;
          } else {
            nb.grad.noalias() += G.transpose() * A.transpose();
          }
        }
        return;
      }
      case Op::kAdd: {
        add_a(G);
        Node& nb = nodes_[n.b];
        if (nb.needs_grad) nb.grad += G;
        return;
      }
      case Op::kSub: {
        add_a(G);
        Node& nb = nodes_[n.b];
        if (nb.needs_grad) nb.grad -= G;
        return;
      }
      case Op::kMul: {
        Node& nb = nodes_[n.b];
        if (na.needs_grad) na.grad += G.cwiseProduct(nb.value);
        if (nb.needs_grad) nb.grad += G.cwiseProduct(na.value);
        return;
      }
      case Op::kMax:
      case Op::kMin: {
        // Ties go to the first argument.
        Node& nb = nodes_[n.b];
        const bool is_max = n.op == Op::kMax;
        for (Index i = 0; i < G.size(); ++i) {
          const S a = na.value.data()[i];
          const S b = nb.value.data()[i];
          const bool first = is_max ? (a >= b) : (a <= b);
          if (first) {
            if (na.needs_grad) na.grad.data()[i] += G.data()[i];
          } else {
            if (nb.needs_grad) nb.grad.data()[i] += G.data()[i];
          }
        }
        return;
      }
      case Op::kScale:
        add_a(G * n.k);
        return;
      case Op::kRelu:
        if (na.needs_grad) {
          na.grad += G.cwiseProduct(na.value.unaryExpr(
              [](S x) { return x > S(0) ? S(1) : S(0); }));
        }
        return;
      case Op::kLeakyRelu:
        if (na.needs_grad) {
          na.grad += G.cwiseProduct(na.value.unaryExpr(
              [s = n.k](S x) { return x > S(0) ? S(1) : s; }));
        }
        return;
      case Op::kClip01:
        if (na.needs_grad) {
          na.grad += G.cwiseProduct(na.value.unaryExpr([](S x) {
            return (x > S(0) && x < S(1)) ? S(1) : S(0);
          }));
        }
        return;
      case Op::kSquare:
        if (na.needs_grad) na.grad += S(2) * G.cwiseProduct(na.value);
        return;
      case Op::kAbs:
        if (na.needs_grad) {
          na.grad += G.cwiseProduct(na.value.unaryExpr([](S x) {
            return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0));
          }));
        }
        return;
      case Op::kMaxConst:
        if (na.needs_grad) {
          na.grad += G.cwiseProduct(na.value.unaryExpr(
              [t = n.k](S x) { return x >= t ? S(1) : S(0); }));
        }
        return;
      case Op::kMinConst:
        if (na.needs_grad) {
          na.grad += G.cwiseProduct(na.value.unaryExpr(
              [t = n.k](S x) { return x <= t ? S(1) : S(0); }));
        }
        return;
      case Op::kRowMin:
        if (na.needs_grad) {
          for (Index r = 0; r < na.value.rows(); ++r) {
            Index arg = 0;
            S lo = na.value(r, 0);
            for (Index c = 1; c < na.value.cols(); ++c) {
              if (na.value(r, c) < lo) {
                lo = na.value(r, c);
                arg = c;
              }
            }
            na.grad(r, arg) += G(r, 0);
          }
        }
        return;
      case Op::kRowSum:
        if (na.needs_grad) na.grad.colwise() += G.col(0);
        return;
      case Op::kSumAll:
        if (na.needs_grad) na.grad.array() += G(0, 0);
        return;
      case Op::kMeanAll:
        if (na.needs_grad) {
          na.grad.array() += G(0, 0) / static_cast<S>(na.value.size());
        }
        return;
      case Op::kBinarize:
        if (n.flag_a && na.needs_grad) na.grad += G;  // straight-through
        return;
      case Op::kLtIndicator:
      case Op::kGtIndicator:
        return;
      case Op::kReshape:
        if (na.needs_grad) {
          na.grad += Eigen::Map<const Mat>(G.data(), na.rows, na.cols);
        }
        return;
      default:
        throw InputError("unhandled op in accumulate");
    }
  }

  std::vector<Node> nodes_;
};

// Central finite differences of `root` w.r.t. every differentiable leaf,
// compared against the tape's analytic gradients. Returns
// max over entries of |analytic - numeric| / max(1, |analytic|).
// Bindings must stay clear of kinks within +-epsilon; see Tape::kink_margin.
template <typename S>
S finite_difference_check(Tape<S>& tape, NodeId root, S epsilon) {
  if (epsilon <= S(0)) throw InputError("epsilon must be positive");
  tape.forward();
  tape.backward(root);

  const std::vector<NodeId> leaves = tape.differentiable_leaves();
  std::vector<MatX<S>> analytic;
  analytic.reserve(leaves.size());
  for (NodeId leaf : leaves) analytic.push_back(tape.grad(leaf));

  S worst = S(0);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const NodeId leaf = leaves[li];
    MatX<S> base = tape.value(leaf);
    for (Index i = 0; i < base.size(); ++i) {
      const S saved = base.data()[i];
      base.data()[i] = saved + epsilon;
      tape.bind(leaf, base);
      tape.forward();
      const S f_plus = tape.value(root)(0, 0);
      base.data()[i] = saved - epsilon;
      tape.bind(leaf, base);
      tape.forward();
      const S f_minus = tape.value(root)(0, 0);
      base.data()[i] = saved;
      const S numeric = (f_plus - f_minus) / (S(2) * epsilon);
      const S a = analytic[li].data()[i];
      const S err = std::abs(a - numeric) / std::max(S(1), std::abs(a));
      worst = std::max(worst, err);
    }
    tape.bind(leaf, base);
  }
  tape.forward();
  return worst;
}

}  // namespace capri::ad
