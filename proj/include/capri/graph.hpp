#pragma once

#include "capri/autodiff.hpp"
#include "capri/loss.hpp"
#include "capri/model.hpp"

namespace capri::graph {

// Tape graph for one training stage. Built once per stage with a fixed
// minibatch width; every iteration then re-binds the parameter and batch
// leaves and reruns forward/backward over the same node storage.
//
// Stage 0 runs the soft union/difference with per-convex weights and the
// warm-up ramp; stages 1 and 2 run the hard row-min path. Stage 2 binarizes
// the selection leaves in the forward pass, with optional straight-through
// gradients. The per-point loss masks are assembled from indicator nodes and
// the label leaf, none of which carry gradients, so masks are constants as
// far as backpropagation is concerned.
template <typename S>
struct StageGraph {
  ad::Tape<S> tape;
  int stage = 0;
  Index batch = 0;

  // Differentiable parameter leaves (weights only exist in stage 0).
  ad::NodeId latent = -1, w1 = -1, b1 = -1, w2 = -1, b2 = -1;
  ad::NodeId t_left = -1, t_right = -1, w_left = -1, w_right = -1;
  // Per-iteration data leaves.
  ad::NodeId features = -1, labels = -1, ramp = -1;
  // Outputs.
  ad::NodeId a_left = -1, a_right = -1;
  ad::NodeId total = -1, reconstruction = -1, selection = -1, weight = -1;

  static StageGraph build(int stage, const model::FitConfig& cfg,
                          Index batch) {
    if (stage < 0 || stage > 2) {
      throw InputError("stage must be 0, 1, or 2");
    }
    cfg.validate();
    StageGraph g;
    g.stage = stage;
    g.batch = batch;
    ad::Tape<S>& t = g.tape;

    const Index p = cfg.primitive_count;
    const Index half = cfg.half_convex_count();
    const Index out = p * quadric::kCoeffsPerPrimitive;

    g.latent = t.leaf("latent", 1, cfg.latent_size);
    g.w1 = t.leaf("decoder_w1", cfg.latent_size, cfg.hidden_size);
    g.b1 = t.leaf("decoder_b1", 1, cfg.hidden_size);
    g.w2 = t.leaf("decoder_w2", cfg.hidden_size, out);
    g.b2 = t.leaf("decoder_b2", 1, out);
    g.t_left = t.leaf("selection_left", p, half);
    g.t_right = t.leaf("selection_right", p, half);
    g.features = t.leaf("query_features", batch, 7, /*differentiable=*/false);
    g.labels = t.leaf("query_labels", batch, 1, /*differentiable=*/false);

    // Decoder: leaky-relu hidden layer, linear output, reshape to p x 7,
    // absolute value on the three quadratic-coefficient columns via a mask.
    auto hidden = t.leaky_relu(t.add(t.matmul(g.latent, g.w1), g.b1),
                               S(quadric::kLeakySlope));
    auto raw = t.reshape(t.add(t.matmul(hidden, g.w2), g.b2), p, 7);
    MatX<S> mask = MatX<S>::Zero(p, 7);
    mask.leftCols(3).setOnes();
    auto abs_mask = t.constant(mask);
    auto keep_mask = t.constant(MatX<S>(MatX<S>::Ones(p, 7) - mask));
    auto prims =
        t.add(t.mul(raw, keep_mask), t.mul(t.abs(raw), abs_mask));

    // D = features * P^T, then per-convex intersection scores.
    auto relu_d = t.relu(t.matmul(g.features, prims, false, true));
    ad::NodeId sel_l = g.t_left;
    ad::NodeId sel_r = g.t_right;
    if (stage == 2) {
      sel_l = t.binarize(g.t_left, S(cfg.quantize_eta), cfg.straight_through);
      sel_r = t.binarize(g.t_right, S(cfg.quantize_eta), cfg.straight_through);
    }
    auto c_left = t.matmul(relu_d, sel_l);
    auto c_right = t.matmul(relu_d, sel_r);

    auto ones_n1 = t.constant_filled(batch, 1, S(1));
    auto one_minus_g = t.sub(ones_n1, g.labels);

    // Selection regularizer on the effective selection (for binary T it is
    // identically zero and carries no gradient).
    auto ones_phalf = t.constant_filled(p, half, S(1));
    auto hinge = [&](ad::NodeId sel) {
      return t.add(t.sum_all(t.relu(t.scale(sel, S(-1)))),
                   t.sum_all(t.relu(t.sub(sel, ones_phalf))));
    };
    g.selection = t.add(hinge(sel_l), hinge(sel_r));

    if (stage == 0) {
      g.w_left = t.leaf("union_weights_left", half, 1);
      g.w_right = t.leaf("union_weights_right", half, 1);
      g.ramp = t.leaf("ramp_scale", half, 1, /*differentiable=*/false);

      auto ones_nhalf = t.constant_filled(batch, half, S(1));
      auto soft_half = [&](ad::NodeId c, ad::NodeId w) {
        auto contrib = t.clip01(t.sub(ones_nhalf, c));
        return t.clip01(t.matmul(contrib, t.mul(w, g.ramp)));
      };
      g.a_left = soft_half(c_left, g.w_left);
      g.a_right = soft_half(c_right, g.w_right);

      auto mask_l = t.cmax(g.labels, t.lt_indicator(g.a_right, S(0.5)));
      auto mask_r = t.cmax(g.labels, t.gt_indicator(g.a_left, S(0.5)));
      auto term_l = t.mul(mask_l, t.square(t.sub(g.labels, g.a_left)));
      auto term_r = t.mul(mask_r, t.square(t.sub(one_minus_g, g.a_right)));
      g.reconstruction = t.scale(t.sum_all(t.add(term_l, term_r)),
                                 S(1) / static_cast<S>(batch));

      auto ones_half1 = t.constant_filled(half, 1, S(1));
      g.weight = t.add(t.sum_all(t.abs(t.sub(g.w_left, ones_half1))),
                       t.sum_all(t.abs(t.sub(g.w_right, ones_half1))));
      g.total = t.add(g.reconstruction, t.add(g.selection, g.weight));
    } else {
      g.a_left = t.row_min(c_left);
      g.a_right = t.row_min(c_right);

      const S thresh = S(loss::kStage12MaskThreshold);
      auto mask_l = t.cmax(g.labels, t.gt_indicator(g.a_right, thresh));
      auto mask_r = t.cmax(g.labels, t.lt_indicator(g.a_left, thresh));

      auto inner_l =
          t.add(t.mul(one_minus_g, t.sub(ones_n1, g.a_left)),
                t.scale(t.mul(g.labels, g.a_left), S(cfg.inside_weight)));
      auto inner_r =
          t.add(t.mul(g.labels, t.sub(ones_n1, g.a_right)),
                t.scale(t.mul(one_minus_g, g.a_right), S(cfg.outside_weight)));
      auto rec_l = t.scale(t.sum_all(t.mul(mask_l, inner_l)),
                           S(1) / static_cast<S>(batch));
      auto rec_r = t.scale(t.sum_all(t.mul(mask_r, inner_r)),
                           S(1) / static_cast<S>(batch));
      g.reconstruction = t.add(rec_l, rec_r);
      g.total = t.add(g.reconstruction, g.selection);
    }
    return g;
  }

  // Binds the double-precision master parameters (casting if S is float).
  void bind_params(const model::ModelState& s) {
    tape.bind_cast(latent, s.latent);
    tape.bind_cast(w1, s.w1);
    tape.bind_cast(b1, s.b1);
    tape.bind_cast(w2, s.w2);
    tape.bind_cast(b2, s.b2);
    tape.bind_cast(t_left, s.t_left);
    tape.bind_cast(t_right, s.t_right);
    if (stage == 0) {
      tape.bind_cast(w_left, s.w_left);
      tape.bind_cast(w_right, s.w_right);
    }
  }

  // Binds one minibatch: rows of the precomputed n x 7 feature matrix plus
  // the matching labels.
  void bind_batch(const Mat& batch_features, const Mat& batch_labels) {
    tape.bind_cast(features, batch_features);
    tape.bind_cast(labels, batch_labels);
  }

  void bind_ramp(double scale, Index half) {
    if (stage != 0) {
      throw InputError("ramp applies to stage 0 only");
    }
    tape.bind_cast(ramp, Mat(Mat::Constant(half, 1, scale)));
  }

  // Ordered to match ModelState::trainable_params(stage).
  std::vector<ad::NodeId> trainable_leaves() const {
    std::vector<ad::NodeId> ids = {latent, w1, b1, w2, b2, t_left, t_right};
    if (stage == 0) {
      ids.push_back(w_left);
      ids.push_back(w_right);
    }
    return ids;
  }

  loss::LossBreakdown breakdown() const {
    loss::LossBreakdown b;
    b.total = static_cast<double>(tape.value(total)(0, 0));
    b.reconstruction = static_cast<double>(tape.value(reconstruction)(0, 0));
    b.selection = static_cast<double>(tape.value(selection)(0, 0));
    if (stage == 0) {
      b.weight = static_cast<double>(tape.value(weight)(0, 0));
    }
    return b;
  }
};

}  // namespace capri::graph
