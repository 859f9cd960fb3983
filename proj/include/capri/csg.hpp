#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "capri/common.hpp"
#include "capri/quadric.hpp"

namespace capri::csg {

// Fixed-order CSG assembly: primitives are intersected into convexes, the
// convexes are unioned into a left and a right concave shape, and the final
// shape is left minus right. Soft variants keep everything differentiable for
// training; hard variants give exact set semantics for evaluation.

inline constexpr double kDifferenceMargin = 0.2;
inline constexpr double kDefaultQuantizeEta = 0.01;
inline constexpr double kMinRampScale = 1e-5;

// C = relu(D) * T. With binary T, C(j,i) = 0 exactly when point j is inside
// every primitive selected by column i.
template <typename S>
MatX<S> intersect(const MatX<S>& D, const MatX<S>& T) {
  if (D.cols() != T.rows()) {
    throw InputError("intersect shape mismatch: " +
                     shape_str(D.rows(), D.cols()) + " * " +
                     shape_str(T.rows(), T.cols()));
  }
  return D.cwiseMax(S(0)) * T;
}

// a*(j) = min over the row of C; 0 = inside at least one convex.
template <typename S>
MatX<S> hard_union(const MatX<S>& c_half) {
  if (c_half.cols() < 1) {
    throw InputError("hard_union requires at least one convex column");
  }
  return c_half.rowwise().minCoeff();
}

template <typename S>
S clip01(S x) {
  return x < S(0) ? S(0) : (x > S(1) ? S(1) : x);
}

// a+(j) = clip01( sum_i ramp * W(i) * clip01(1 - C(j,i)) ); 1 ~ inside.
// The clipped sum over-counts points inside several convexes, which is fine:
// it is only a soft score used while the selection matrix is still forming.
template <typename S>
MatX<S> soft_union(const MatX<S>& c_half, const MatX<S>& weights,
                   S ramp_scale) {
  if (weights.size() != c_half.cols()) {
    throw InputError("soft_union weight count " +
                     std::to_string(weights.size()) +
                     " does not match convex count " +
                     std::to_string(c_half.cols()));
  }
  MatX<S> contrib = (MatX<S>::Ones(c_half.rows(), c_half.cols()) - c_half)
                        .unaryExpr([](S x) { return clip01(x); });
  MatX<S> w = weights;
  w.resize(c_half.cols(), 1);
  MatX<S> sum = contrib * (w * ramp_scale);
  return sum.unaryExpr([](S x) { return clip01(x); });
}

// s*(j) = max(a_l(j), margin - a_r(j)); 0 = inside the final shape. The
// margin keeps the subtracted side from re-carving points that are only
// marginally outside the right shape.
template <typename S>
MatX<S> hard_difference(const MatX<S>& a_left, const MatX<S>& a_right,
                        S margin = S(kDifferenceMargin)) {
  if (a_left.rows() != a_right.rows() || a_left.cols() != 1 ||
      a_right.cols() != 1) {
    throw InputError("hard_difference expects matching n x 1 vectors, got " +
                     shape_str(a_left.rows(), a_left.cols()) + " and " +
                     shape_str(a_right.rows(), a_right.cols()));
  }
  return (a_left.array().max(margin - a_right.array())).matrix();
}

// s+(j) = min(a_l(j), 1 - a_r(j)); 1 ~ inside.
template <typename S>
MatX<S> soft_difference(const MatX<S>& a_left, const MatX<S>& a_right) {
  if (a_left.rows() != a_right.rows() || a_left.cols() != 1 ||
      a_right.cols() != 1) {
    throw InputError("soft_difference expects matching n x 1 vectors, got " +
                     shape_str(a_left.rows(), a_left.cols()) + " and " +
                     shape_str(a_right.rows(), a_right.cols()));
  }
  return a_left.cwiseMin(MatX<S>::Ones(a_right.rows(), 1) - a_right);
}

// t_hard = 1 if t > eta else 0.
template <typename S>
MatX<S> quantize_selection(const MatX<S>& T, S eta = S(kDefaultQuantizeEta)) {
  if (!(eta > S(0) && eta < S(1))) {
    throw InputError("quantization threshold must lie in (0, 1)");
  }
  return T.unaryExpr([eta](S t) { return t > eta ? S(1) : S(0); });
}

// Multiplicative warm-up for the soft-union weights: rises geometrically from
// 1e-5 to 1 across the first quarter of the stage, then stays at 1. Keeps
// early union scores tiny so gradients first shape individual convexes.
inline double ramp_scale(Index iteration, Index stage_iterations) {
  if (stage_iterations < 1) throw InputError("stage must have iterations");
  const double warm = 0.25 * static_cast<double>(stage_iterations);
  if (static_cast<double>(iteration) >= warm) return 1.0;
  const double frac = static_cast<double>(iteration) / warm;
  return std::pow(10.0, -5.0 * (1.0 - frac));
}

struct HardEval {
  Mat s;                               // n x 1 final indicator, 0 = inside
  std::vector<std::uint8_t> inside;   // s <= 0 per point
};

// Full hard pipeline: features -> signed distances -> intersect into convex
// columns -> per-half union -> difference. An empty right half means nothing
// is subtracted. T columns must already be binary (see quantize_selection).
inline HardEval evaluate_hard(const Mat& P, const Mat& t_left,
                              const Mat& t_right, const Mat& points,
                              double margin = kDifferenceMargin) {
  const Mat D = quadric::signed_distances(P, quadric::feature_map(points));
  HardEval out;
  const Mat a_left = hard_union(Mat(intersect(D, t_left)));
  if (t_right.cols() > 0) {
    const Mat a_right = hard_union(Mat(intersect(D, t_right)));
    out.s = hard_difference(a_left, a_right, margin);
  } else {
    out.s = a_left;
  }
  out.inside.resize(static_cast<std::size_t>(out.s.rows()));
  for (Index j = 0; j < out.s.rows(); ++j) {
    out.inside[static_cast<std::size_t>(j)] = out.s(j, 0) <= 0.0 ? 1 : 0;
  }
  return out;
}

// Soft counterpart used to compare pre- and post-quantization occupancy:
// returns s+ per point; callers usually threshold at 0.5.
inline Mat evaluate_soft(const Mat& P, const Mat& t_left, const Mat& t_right,
                         const Mat& w_left, const Mat& w_right,
                         const Mat& points, double ramp = 1.0) {
  const Mat D = quadric::signed_distances(P, quadric::feature_map(points));
  const Mat a_left = soft_union(Mat(intersect(D, t_left)), w_left, ramp);
  const Mat a_right = soft_union(Mat(intersect(D, t_right)), w_right, ramp);
  return soft_difference(a_left, a_right);
}

}  // namespace capri::csg
