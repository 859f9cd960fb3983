#pragma once

#include <cmath>

#include "capri/common.hpp"
#include "capri/rng.hpp"

namespace capri::quadric {

// A primitive is one row (a, b, c, d, e, f, g) of a p x 7 matrix, encoding the
// quadric a*x^2 + b*y^2 + c*z^2 + d*x + e*y + f*z + g = 0. Points where the
// polynomial is <= 0 are inside. With a, b, c constrained non-negative the
// representable family is spheres, ellipsoids, cylinders, planes, and their
// paraboloid/slab degenerations; the polynomial value acts as an algebraic
// (not Euclidean) signed distance.

inline constexpr int kCoeffsPerPrimitive = 7;
inline constexpr double kLeakySlope = 0.01;

// Column j of the result is (x^2, y^2, z^2, x, y, z, 1) for point j.
template <typename S>
MatX<S> feature_map(const MatX<S>& points) {
  if (points.cols() != 3) {
    throw InputError("feature_map expects n x 3 points, got " +
                     shape_str(points.rows(), points.cols()));
  }
  require_finite(points, "query points");
  const Index n = points.rows();
  MatX<S> q(kCoeffsPerPrimitive, n);
  for (Index j = 0; j < n; ++j) {
    const S x = points(j, 0), y = points(j, 1), z = points(j, 2);
    q(0, j) = x * x;
    q(1, j) = y * y;
    q(2, j) = z * z;
    q(3, j) = x;
    q(4, j) = y;
    q(5, j) = z;
    q(6, j) = S(1);
  }
  return q;
}

// Absolute value on the quadratic coefficients a, b, c keeps them
// non-negative while passing gradient from both sides of zero.
template <typename S>
MatX<S> constrain(const MatX<S>& raw) {
  if (raw.cols() != kCoeffsPerPrimitive) {
    throw InputError("primitive matrix must have 7 columns, got " +
                     shape_str(raw.rows(), raw.cols()));
  }
  MatX<S> p = raw;
  p.leftCols(3) = p.leftCols(3).cwiseAbs();
  return p;
}

// D = (P * Q)^T, one row per query point, one column per primitive.
// D(j, i) <= 0 means point j lies inside primitive i.
template <typename S>
MatX<S> signed_distances(const MatX<S>& P, const MatX<S>& Q) {
  if (P.cols() != kCoeffsPerPrimitive || Q.rows() != kCoeffsPerPrimitive) {
    throw InputError("signed_distances shape mismatch: " +
                     shape_str(P.rows(), P.cols()) + " * " +
                     shape_str(Q.rows(), Q.cols()));
  }
  return (P * Q).transpose();
}

// Two-layer perceptron from a per-shape latent code to the raw p x 7
// primitive outputs: leaky-relu hidden layer, linear output layer.
struct DecoderParams {
  Mat latent;  // 1 x latent_size
  Mat w1;      // latent_size x hidden_size
  Mat b1;      // 1 x hidden_size
  Mat w2;      // hidden_size x (p * 7)
  Mat b2;      // 1 x (p * 7)
  Index primitive_count = 0;

  static DecoderParams init(Rng& rng, Index latent_size, Index hidden_size,
                            Index primitive_count) {
    if (latent_size < 1 || hidden_size < 1 || primitive_count < 1) {
      throw InputError("decoder sizes must be positive");
    }
    DecoderParams d;
    d.primitive_count = primitive_count;
    const Index out = primitive_count * kCoeffsPerPrimitive;
    auto fill = [&rng](Mat& m, Index rows, Index cols, double stddev) {
      m.resize(rows, cols);
      for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.normal(0.0, stddev);
      }
    };
    fill(d.latent, 1, latent_size, 0.1);
    fill(d.w1, latent_size, hidden_size, 0.02);
    fill(d.b1, 1, hidden_size, 0.02);
    fill(d.w2, hidden_size, out, 0.02);
    fill(d.b2, 1, out, 0.02);
    return d;
  }
};

// Runs the decoder end to end and returns the constrained primitive matrix.
// The tape-based training path builds the same computation as a graph; this
// plain version backs evaluation and extraction.
template <typename S>
MatX<S> decode_primitives(const MatX<S>& latent, const MatX<S>& w1,
                          const MatX<S>& b1, const MatX<S>& w2,
                          const MatX<S>& b2, Index primitive_count) {
  MatX<S> h = latent * w1 + b1;
  h = h.unaryExpr([](S x) { return x > S(0) ? x : S(kLeakySlope) * x; });
  MatX<S> raw_flat = h * w2 + b2;
  if (raw_flat.size() != primitive_count * kCoeffsPerPrimitive) {
    throw InputError("decoder output size " + std::to_string(raw_flat.size()) +
                     " does not match " + std::to_string(primitive_count) +
                     " primitives");
  }
  MatX<S> raw = Eigen::Map<const MatX<S>>(raw_flat.data(), primitive_count,
                                          kCoeffsPerPrimitive);
  return constrain(raw);
}

inline Mat decode_primitives(const DecoderParams& d) {
  return decode_primitives(d.latent, d.w1, d.b1, d.w2, d.b2,
                           d.primitive_count);
}

}  // namespace capri::quadric
