#pragma once

#include <cmath>
#include <string>

#include "capri/common.hpp"

namespace capri::loss {

// Training losses for the three-stage schedule. Stage 0 trains the soft
// pipeline with a weighted L2 objective; stages 1 and 2 train the hard
// pipeline with an L1-style objective. Both use per-point masks, recomputed
// from the current activations each step and treated as constants during
// backpropagation.

inline constexpr double kStage12MaskThreshold = 0.01;
inline constexpr double kDefaultInsideWeight = 10.0;
inline constexpr double kDefaultOutsideWeight = 2.5;

struct LossBreakdown {
  double total = 0.0;
  double reconstruction = 0.0;        // reconstruction_left + reconstruction_right
  double reconstruction_left = 0.0;   // term driving the left (union) shape
  double reconstruction_right = 0.0;  // term driving the subtracted shape
  double selection = 0.0;  // hinge penalty pushing T entries into [0,1]
  double weight = 0.0;     // |W - 1| penalty; used by stage 0 only
};

// Sum of max(-t, 0) + max(t - 1, 0) over all entries.
inline double selection_regularizer(const Mat& t) {
  double s = 0.0;
  for (Index i = 0; i < t.size(); ++i) {
    const double v = t.data()[i];
    s += std::max(-v, 0.0) + std::max(v - 1.0, 0.0);
  }
  return s;
}

// Sum of |w - 1| over all entries.
inline double weight_regularizer(const Mat& w) {
  return (w.array() - 1.0).abs().sum();
}

namespace detail {

inline void check_lengths(const Mat& a_left, const Mat& a_right, const Mat& g,
                          const char* who) {
  if (a_left.cols() != 1 || a_right.cols() != 1 || g.cols() != 1 ||
      a_left.rows() != g.rows() || a_right.rows() != g.rows() ||
      g.rows() < 1) {
    throw InputError(std::string(who) + " expects matching n x 1 vectors, got " +
                     shape_str(a_left.rows(), a_left.cols()) + ", " +
                     shape_str(a_right.rows(), a_right.cols()) + ", " +
                     shape_str(g.rows(), g.cols()));
  }
  for (Index j = 0; j < g.rows(); ++j) {
    if (g(j, 0) != 0.0 && g(j, 0) != 1.0) {
      throw InputError("occupancy labels must be 0 or 1, got " +
                       std::to_string(g(j, 0)) + " at row " +
                       std::to_string(j));
    }
  }
}

}  // namespace detail

// Stage-0 masks: a point contributes to the left (inside-shape) term when it
// is labeled inside or the soft right shape does not claim it; to the right
// term when it is labeled inside or the soft left shape claims it.
inline Mat stage0_mask_left(const Mat& a_right_soft, const Mat& g) {
  return g.binaryExpr(a_right_soft, [](double gj, double ar) {
    return std::max(gj, ar < 0.5 ? 1.0 : 0.0);
  });
}

inline Mat stage0_mask_right(const Mat& a_left_soft, const Mat& g) {
  return g.binaryExpr(a_left_soft, [](double gj, double al) {
    return std::max(gj, al > 0.5 ? 1.0 : 0.0);
  });
}

// Stage-1/2 masks. The comparison directions flip relative to stage 0
// because the hard indicators use 0 = inside while the soft ones use 1 =
// inside: "right shape does not claim the point" reads a_r > threshold here.
inline Mat stage12_mask_left(const Mat& a_right_hard, const Mat& g,
                             double threshold = kStage12MaskThreshold) {
  return g.binaryExpr(a_right_hard, [threshold](double gj, double ar) {
    return std::max(gj, ar > threshold ? 1.0 : 0.0);
  });
}

inline Mat stage12_mask_right(const Mat& a_left_hard, const Mat& g,
                              double threshold = kStage12MaskThreshold) {
  return g.binaryExpr(a_left_hard, [threshold](double gj, double al) {
    return std::max(gj, al < threshold ? 1.0 : 0.0);
  });
}

// Weighted L2 objective on the soft indicators, plus both regularizers:
//   (1/n) sum_j M_l (g - a_l)^2 + M_r ((1-g) - a_r)^2.
inline LossBreakdown stage0_loss_with_masks(const Mat& a_left,
                                            const Mat& a_right, const Mat& g,
                                            const Mat& mask_left,
                                            const Mat& mask_right,
                                            const Mat& t_all,
                                            const Mat& w_all) {
  detail::check_lengths(a_left, a_right, g, "stage0_loss");
  const double n = static_cast<double>(g.rows());
  double left = 0.0, right = 0.0;
  for (Index j = 0; j < g.rows(); ++j) {
    const double dl = g(j, 0) - a_left(j, 0);
    const double dr = (1.0 - g(j, 0)) - a_right(j, 0);
    left += mask_left(j, 0) * dl * dl;
    right += mask_right(j, 0) * dr * dr;
  }
  LossBreakdown out;
  out.reconstruction_left = left / n;
  out.reconstruction_right = right / n;
  out.reconstruction = out.reconstruction_left + out.reconstruction_right;
  out.selection = selection_regularizer(t_all);
  out.weight = weight_regularizer(w_all);
  out.total = out.reconstruction + out.selection + out.weight;
  return out;
}

inline LossBreakdown stage0_loss(const Mat& a_left, const Mat& a_right,
                                 const Mat& g, const Mat& t_all,
                                 const Mat& w_all) {
  detail::check_lengths(a_left, a_right, g, "stage0_loss");
  return stage0_loss_with_masks(a_left, a_right, g, stage0_mask_left(a_right, g),
                                stage0_mask_right(a_left, g), t_all, w_all);
}

// L1-style objective on the hard indicators plus the selection regularizer:
//   L_l = (1/n) sum_j M_l [ (1-g)(1 - a_l) + w_inside g a_l ]
//   L_r = (1/n) sum_j M_r [ g (1 - a_r) + w_outside (1-g) a_r ]
// The inside weight penalizes dropping a labeled-inside point from the left
// shape much harder than the unit-slope outside terms.
inline LossBreakdown stage12_loss_with_masks(
    const Mat& a_left, const Mat& a_right, const Mat& g, const Mat& mask_left,
    const Mat& mask_right, const Mat& t_all,
    double w_inside = kDefaultInsideWeight,
    double w_outside = kDefaultOutsideWeight) {
  detail::check_lengths(a_left, a_right, g, "stage12_loss");
  if (w_inside <= 0.0 || w_outside <= 0.0) {
    throw InputError("loss weights must be positive");
  }
  const double n = static_cast<double>(g.rows());
  double left = 0.0, right = 0.0;
  for (Index j = 0; j < g.rows(); ++j) {
    const double gj = g(j, 0);
    left += mask_left(j, 0) *
            ((1.0 - gj) * (1.0 - a_left(j, 0)) + w_inside * gj * a_left(j, 0));
    right += mask_right(j, 0) *
             (gj * (1.0 - a_right(j, 0)) +
              w_outside * (1.0 - gj) * a_right(j, 0));
  }
  LossBreakdown out;
  out.reconstruction_left = left / n;
  out.reconstruction_right = right / n;
  out.reconstruction = out.reconstruction_left + out.reconstruction_right;
  out.selection = selection_regularizer(t_all);
  out.weight = 0.0;
  out.total = out.reconstruction + out.selection;
  return out;
}

inline LossBreakdown stage12_loss(const Mat& a_left, const Mat& a_right,
                                  const Mat& g, const Mat& t_all,
                                  double w_inside = kDefaultInsideWeight,
                                  double w_outside = kDefaultOutsideWeight) {
  detail::check_lengths(a_left, a_right, g, "stage12_loss");
  return stage12_loss_with_masks(a_left, a_right, g,
                                 stage12_mask_left(a_right, g),
                                 stage12_mask_right(a_left, g), t_all,
                                 w_inside, w_outside);
}

}  // namespace capri::loss
