#pragma once

#include <string>
#include <vector>

#include "capri/common.hpp"
#include "capri/csg.hpp"
#include "capri/loss.hpp"
#include "capri/quadric.hpp"
#include "capri/rng.hpp"

namespace capri::model {

enum class Precision { kFloat64, kFloat32 };

// All knobs of one per-shape fit. Defaults follow the reference pipeline:
// 1,024 primitives in 64 convexes, three stages of 12,000 iterations.
struct FitConfig {
  Index primitive_count = 1024;          // p
  Index convex_count = 64;               // c, split evenly left|right
  Index latent_size = 256;
  Index hidden_size = 512;
  Index iterations_per_stage = 12000;
  Index minibatch_size = 4096;
  double learning_rate = 1e-4;
  double quantize_eta = 0.01;            // T binarization threshold
  double inside_weight = 10.0;           // w_l in the stage-1/2 loss
  double outside_weight = 2.5;           // w_r in the stage-1/2 loss
  double difference_margin = 0.2;
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat64;
  bool straight_through = true;          // stage-2 gradient through T_hard
  double gradient_clip = 10.0;

  void validate() const {
    if (convex_count < 2) {
      throw InputError("convex count must be at least 2, got " +
                       std::to_string(convex_count));
    }
    if (convex_count % 2 != 0) {
      throw InputError("convex count must be even for the left|right split, "
                       "got " + std::to_string(convex_count));
    }
    if (primitive_count < convex_count) {
      throw InputError("primitive count " + std::to_string(primitive_count) +
                       " must be at least the convex count " +
                       std::to_string(convex_count));
    }
    if (latent_size < 1 || hidden_size < 1) {
      throw InputError("latent and hidden sizes must be positive");
    }
    if (iterations_per_stage < 1) {
      throw InputError("iterations per stage must be at least 1");
    }
    if (minibatch_size < 1) {
      throw InputError("minibatch size must be at least 1");
    }
    if (!(learning_rate > 0.0)) {
      throw InputError("learning rate must be positive");
    }
    if (!(quantize_eta > 0.0 && quantize_eta < 1.0)) {
      throw InputError("quantization threshold must lie in (0, 1)");
    }
    if (!(inside_weight > 0.0 && outside_weight > 0.0)) {
      throw InputError("loss weights must be positive");
    }
    if (difference_margin < 0.0) {
      throw InputError("difference margin must be non-negative");
    }
    if (!(gradient_clip > 0.0)) {
      throw InputError("gradient clip must be positive");
    }
  }

  Index half_convex_count() const { return convex_count / 2; }
};

struct LossRecord {
  int stage = 0;       // which loss formula produced the value
  Index iteration = 0;
  double total = 0.0;
  double reconstruction = 0.0;
  double selection = 0.0;
  double weight = 0.0;
};

// Everything the optimizer owns. Parameters are double-precision master
// copies; a reduced-precision forward pass casts on bind and casts gradients
// back.
struct ModelState {
  Mat latent;   // 1 x latent_size
  Mat w1, b1;   // decoder layer 1
  Mat w2, b2;   // decoder layer 2
  Mat t_left;   // p x c/2 selection half for the union shape
  Mat t_right;  // p x c/2 selection half for the subtracted shape
  Mat w_left;   // c/2 x 1 soft-union weights
  Mat w_right;  // c/2 x 1

  int stage = 0;        // 0, 1, or 2; transitions only forward
  Index iteration = 0;  // within the current stage
  std::vector<LossRecord> trace;

  std::vector<Mat*> all_params() {
    return {&latent, &w1, &b1, &w2, &b2, &t_left, &t_right, &w_left,
            &w_right};
  }

  // Stage 0 trains everything; stages 1-2 freeze the soft-union weights.
  std::vector<Mat*> trainable_params(int for_stage) {
    if (for_stage == 0) return all_params();
    return {&latent, &w1, &b1, &w2, &b2, &t_left, &t_right};
  }

  Mat decode_primitives() const {
    return quadric::decode_primitives(latent, w1, b1, w2, b2,
                                      t_left.rows());
  }

  double parameter_norm() const {
    double sq = 0.0;
    for (const Mat* p :
         {&latent, &w1, &b1, &w2, &b2, &t_left, &t_right, &w_left, &w_right}) {
      sq += p->squaredNorm();
    }
    return std::sqrt(sq);
  }
};

// Deterministic initialization: the decoder and latent code are small
// Gaussians, T starts uniform in [0, 0.1] so every convex column begins
// slightly and differently coupled, and the soft-union weights start at 1
// (their effective magnitude is governed by the ramp schedule instead).
inline ModelState init_model(const FitConfig& config, Rng& rng) {
  config.validate();
  ModelState s;
  auto dec = quadric::DecoderParams::init(rng, config.latent_size,
                                          config.hidden_size,
                                          config.primitive_count);
  s.latent = std::move(dec.latent);
  s.w1 = std::move(dec.w1);
  s.b1 = std::move(dec.b1);
  s.w2 = std::move(dec.w2);
  s.b2 = std::move(dec.b2);
  const Index half = config.half_convex_count();
  auto fill_uniform = [&rng](Mat& m, Index rows, Index cols) {
    m.resize(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
      m.data()[i] = rng.uniform(0.0, 0.1);
    }
  };
  fill_uniform(s.t_left, config.primitive_count, half);
  fill_uniform(s.t_right, config.primitive_count, half);
  s.w_left = Mat::Ones(half, 1);
  s.w_right = Mat::Ones(half, 1);
  return s;
}

// A finished fit: constrained primitives plus binary selection halves,
// directly evaluable by the hard CSG pipeline.
struct FittedModel {
  Mat primitives;    // p x 7, constrained
  Mat t_left_hard;   // p x c/2 binary
  Mat t_right_hard;  // p x c/2 binary
  FitConfig config;
  std::vector<LossRecord> trace;

  csg::HardEval evaluate(const Mat& points) const {
    return csg::evaluate_hard(primitives, t_left_hard, t_right_hard, points,
                              config.difference_margin);
  }
};

inline FittedModel finalize(const ModelState& state, const FitConfig& config) {
  FittedModel f;
  f.primitives = state.decode_primitives();
  f.t_left_hard = csg::quantize_selection(state.t_left, config.quantize_eta);
  f.t_right_hard = csg::quantize_selection(state.t_right, config.quantize_eta);
  f.config = config;
  f.trace = state.trace;
  return f;
}

}  // namespace capri::model
