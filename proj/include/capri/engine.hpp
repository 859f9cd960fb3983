#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "capri/adam.hpp"
#include "capri/csg.hpp"
#include "capri/graph.hpp"
#include "capri/model.hpp"
#include "capri/sampling.hpp"

namespace capri::engine {

// The per-shape optimization loop: three stages over the same query set,
// switching loss formula and forward variant at each boundary, with fresh
// optimizer moments per stage.

inline constexpr double kWeightFloor = 1e-6;

// One optimizer step over a bound graph. The graph must already hold the
// current parameters, batch, and (stage 0) ramp. Throws when the loss or
// gradients stop being finite.
template <typename S>
loss::LossBreakdown train_step(graph::StageGraph<S>& g,
                               model::ModelState& state,
                               const model::FitConfig& cfg, opt::Adam& adam) {
  g.tape.forward();
  const auto breakdown = g.breakdown();
  if (!std::isfinite(breakdown.total)) {
    throw FitError("non-finite loss at stage " + std::to_string(state.stage) +
                   " iteration " + std::to_string(state.iteration) +
                   "; parameter norm " + std::to_string(state.parameter_norm()));
  }
  g.tape.backward(g.total);

  auto params = state.trainable_params(g.stage);
  const auto leaves = g.trainable_leaves();
  std::vector<Mat> grads;
  grads.reserve(leaves.size());
  for (ad::NodeId id : leaves) {
    if constexpr (std::is_same_v<S, double>) {
      grads.push_back(g.tape.grad(id));
    } else {
      grads.push_back(g.tape.grad(id).template cast<double>());
    }
  }
  const double grad_norm = opt::clip_gradient_norm(grads, cfg.gradient_clip);
  if (!std::isfinite(grad_norm)) {
    throw FitError("non-finite gradient at stage " +
                   std::to_string(state.stage) + " iteration " +
                   std::to_string(state.iteration) + "; parameter norm " +
                   std::to_string(state.parameter_norm()));
  }
  adam.step(params, grads);

  if (g.stage == 0) {
    // The soft-union weights must stay positive; project back if an update
    // ever crosses zero.
    state.w_left = state.w_left.cwiseMax(kWeightFloor);
    state.w_right = state.w_right.cwiseMax(kWeightFloor);
  }
  return breakdown;
}

// Deterministic minibatch index stream: reshuffles the full index range
// whenever fewer than one batch remains, so every batch has exactly
// `batch` entries.
class BatchStream {
 public:
  BatchStream(Index total, Index batch, Rng& rng)
      : total_(total), batch_(batch), rng_(rng) {
    if (total_ < 1) throw InputError("cannot batch an empty query set");
    order_.resize(static_cast<std::size_t>(total_));
    for (Index i = 0; i < total_; ++i) {
      order_[static_cast<std::size_t>(i)] = i;
    }
    cursor_ = total_;  // force a shuffle on first use
  }

  void next(std::vector<Index>& out) {
    out.clear();
    out.reserve(static_cast<std::size_t>(batch_));
    for (Index k = 0; k < batch_; ++k) {
      if (cursor_ >= total_) {
        rng_.shuffle(order_);
        cursor_ = 0;
      }
      out.push_back(order_[static_cast<std::size_t>(cursor_++)]);
    }
  }

 private:
  Index total_, batch_;
  Rng& rng_;
  std::vector<Index> order_;
  Index cursor_ = 0;
};

template <typename S>
void run_stage(int stage, model::ModelState& state,
               const model::FitConfig& cfg, const Mat& features,
               const Mat& labels, Rng& rng) {
  const Index n = features.rows();
  const Index batch = std::min<Index>(cfg.minibatch_size, n);
  auto g = graph::StageGraph<S>::build(stage, cfg, batch);
  opt::Adam adam(cfg.learning_rate);
  adam.reset(state.trainable_params(stage));
  BatchStream stream(n, batch, rng);

  std::vector<Index> idx;
  Mat batch_f(batch, 7), batch_g(batch, 1);
  state.stage = stage;
  for (Index iter = 0; iter < cfg.iterations_per_stage; ++iter) {
    state.iteration = iter;
    stream.next(idx);
    for (Index r = 0; r < batch; ++r) {
      batch_f.row(r) = features.row(idx[static_cast<std::size_t>(r)]);
      batch_g(r, 0) = labels(idx[static_cast<std::size_t>(r)], 0);
    }
    try {
      g.bind_params(state);
    } catch (const InputError& e) {
      // Parameters went non-finite after an optimizer update; report it as a
      // divergence rather than a caller input mistake.
      throw FitError("parameters diverged at stage " + std::to_string(stage) +
                     " iteration " + std::to_string(iter) + ": " + e.what());
    }
    g.bind_batch(batch_f, batch_g);
    if (stage == 0) {
      g.bind_ramp(csg::ramp_scale(iter, cfg.iterations_per_stage),
                  cfg.half_convex_count());
    }
    const auto breakdown = train_step(g, state, cfg, adam);
    state.trace.push_back({stage, iter, breakdown.total,
                           breakdown.reconstruction, breakdown.selection,
                           breakdown.weight});
  }
}

struct FitOutcome {
  model::FittedModel fitted;
  model::ModelState state;
};

struct IgnoreStage {
  void operator()(int) const {}
};

// Runs stages 0, 1, 2 over the query set and returns the quantized model.
// Deterministic for a fixed config (including seed). `stage_done` is invoked
// after each stage finishes, e.g. for progress reporting or timing.
template <typename StageDone = IgnoreStage>
FitOutcome reconstruct(const sampling::QuerySet& queries,
                       const model::FitConfig& cfg,
                       StageDone stage_done = StageDone{}) {
  cfg.validate();
  const Index n = queries.points.rows();
  if (n < 1 || queries.labels.rows() != n) {
    throw InputError("query set is empty or inconsistent");
  }
  const double label_sum = queries.labels.sum();
  if (label_sum == 0.0 || label_sum == static_cast<double>(n)) {
    throw InputError("degenerate query set: all labels are " +
                     std::to_string(queries.labels(0, 0)));
  }

  Rng rng(cfg.seed);
  model::ModelState state = model::init_model(cfg, rng);
  const Mat features = quadric::feature_map(queries.points).transpose();

  for (int stage = 0; stage <= 2; ++stage) {
    if (cfg.precision == model::Precision::kFloat64) {
      run_stage<double>(stage, state, cfg, features, queries.labels, rng);
    } else {
      run_stage<float>(stage, state, cfg, features, queries.labels, rng);
    }
    stage_done(stage);
  }

  FitOutcome out{model::finalize(state, cfg), std::move(state)};
  return out;
}

}  // namespace capri::engine
