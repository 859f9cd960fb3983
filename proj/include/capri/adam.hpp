#pragma once

#include <cmath>
#include <vector>

#include "capri/common.hpp"

namespace capri::opt {

// Adam optimizer over a fixed list of parameter matrices. Moments live in
// double precision regardless of the compute precision of the forward pass.
class Adam {
 public:
  Adam(double learning_rate = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
       double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
    if (!(lr_ > 0.0)) throw InputError("learning rate must be positive");
  }

  // Drops all moment state; used at stage boundaries so each stage starts
  // with fresh optimizer statistics.
  void reset(const std::vector<Mat*>& params) {
    m_.clear();
    v_.clear();
    for (const Mat* p : params) {
      m_.push_back(Mat::Zero(p->rows(), p->cols()));
      v_.push_back(Mat::Zero(p->rows(), p->cols()));
    }
    t_ = 0;
  }

  // One update over all parameters with their matching gradients.
  void step(const std::vector<Mat*>& params, const std::vector<Mat>& grads) {
    if (params.size() != grads.size() || params.size() != m_.size()) {
      throw InputError("optimizer parameter/gradient list mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->rows() != grads[i].rows() ||
          params[i]->cols() != grads[i].cols()) {
        throw InputError("gradient shape " +
                         shape_str(grads[i].rows(), grads[i].cols()) +
                         " does not match parameter " +
                         shape_str(params[i]->rows(), params[i]->cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Mat& m = m_[i];
      Mat& v = v_[i];
      const Mat& g = grads[i];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
      params[i]->array() -=
          lr_ * (m.array() / bc1) /
          ((v.array() / bc2).sqrt() + eps_);
    }
  }

  std::int64_t step_count() const { return t_; }
  double learning_rate() const { return lr_; }

  std::vector<Mat>& moments_m() { return m_; }
  std::vector<Mat>& moments_v() { return v_; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<Mat> m_, v_;
  std::int64_t t_ = 0;
};

// Scales all gradients by max_norm / norm when their joint L2 norm exceeds
// max_norm. Returns the pre-clip norm.
inline double clip_gradient_norm(std::vector<Mat>& grads, double max_norm) {
  double sq = 0.0;
  for (const Mat& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Mat& g : grads) g *= s;
  }
  return norm;
}

}  // namespace capri::opt
