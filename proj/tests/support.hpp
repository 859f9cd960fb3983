#pragma once

// Shared helpers for the test suite: analytic primitives with exact
// containment tests, used to cross-check the quadric and assembly code
// against set-theoretic ground truth.

#include <array>
#include <cmath>
#include <vector>

#include "capri/common.hpp"
#include "capri/rng.hpp"
#include "capri/sampling.hpp"

namespace testsupport {

using capri::Mat;

// Rasterizes an implicit field (<= 0 means inside) onto voxel centers.
template <typename Field>
capri::sampling::VoxelGrid voxelize(const Field& field, std::uint32_t nx,
                                    std::uint32_t ny, std::uint32_t nz) {
  capri::sampling::VoxelGrid grid;
  grid.dims = {nx, ny, nz};
  grid.occupancy.resize(grid.voxel_count());
  for (std::uint32_t z = 0; z < nz; ++z) {
    for (std::uint32_t y = 0; y < ny; ++y) {
      for (std::uint32_t x = 0; x < nx; ++x) {
        const auto c = grid.center(x, y, z);
        grid.occupancy[grid.index(x, y, z)] =
            field(c[0], c[1], c[2]) <= 0.0 ? 1 : 0;
      }
    }
  }
  return grid;
}

// A primitive whose quadric row and exact inside test are both known.
struct AnalyticPrimitive {
  enum class Kind { kSphere, kAxisPlane, kAxisCylinder };
  Kind kind = Kind::kSphere;
  // Sphere: center c, radius r. Cylinder: axis in {0,1,2}, center in the two
  // transverse coordinates, radius r. Plane: axis, direction (+1 keeps
  // x_axis <= offset inside, -1 keeps x_axis >= offset), offset.
  std::array<double, 3> center{0, 0, 0};
  double radius = 0.25;
  int axis = 0;
  double direction = 1.0;
  double offset = 0.0;

  Mat row() const {
    Mat r = Mat::Zero(1, 7);
    switch (kind) {
      case Kind::kSphere:
        r << 1, 1, 1, -2 * center[0], -2 * center[1], -2 * center[2],
            center[0] * center[0] + center[1] * center[1] +
                center[2] * center[2] - radius * radius;
        break;
      case Kind::kAxisPlane:
        r(0, 3 + axis) = direction;
        r(0, 6) = -direction * offset;
        break;
      case Kind::kAxisCylinder: {
        const int u = (axis + 1) % 3;
        const int v = (axis + 2) % 3;
        r(0, u) = 1;
        r(0, v) = 1;
        r(0, 3 + u) = -2 * center[u];
        r(0, 3 + v) = -2 * center[v];
        r(0, 6) = center[u] * center[u] + center[v] * center[v] -
                  radius * radius;
        break;
      }
    }
    return r;
  }

  double value(double x, double y, double z) const {
    const std::array<double, 3> p{x, y, z};
    switch (kind) {
      case Kind::kSphere: {
        double s = 0;
        for (int i = 0; i < 3; ++i) {
          s += (p[i] - center[i]) * (p[i] - center[i]);
        }
        return s - radius * radius;
      }
      case Kind::kAxisPlane:
        return direction * (p[axis] - offset);
      case Kind::kAxisCylinder: {
        const int u = (axis + 1) % 3;
        const int v = (axis + 2) % 3;
        return (p[u] - center[u]) * (p[u] - center[u]) +
               (p[v] - center[v]) * (p[v] - center[v]) - radius * radius;
      }
    }
    return 0;
  }

  bool inside(double x, double y, double z) const {
    return value(x, y, z) <= 0.0;
  }
};

inline AnalyticPrimitive random_primitive(capri::Rng& rng) {
  AnalyticPrimitive p;
  switch (rng.uniform_index(3)) {
    case 0:
      p.kind = AnalyticPrimitive::Kind::kSphere;
      for (auto& c : p.center) c = rng.uniform(-0.3, 0.3);
      p.radius = rng.uniform(0.05, 0.35);
      break;
    case 1:
      p.kind = AnalyticPrimitive::Kind::kAxisPlane;
      p.axis = static_cast<int>(rng.uniform_index(3));
      p.direction = rng.uniform() < 0.5 ? 1.0 : -1.0;
      p.offset = rng.uniform(-0.4, 0.4);
      break;
    default:
      p.kind = AnalyticPrimitive::Kind::kAxisCylinder;
      p.axis = static_cast<int>(rng.uniform_index(3));
      for (auto& c : p.center) c = rng.uniform(-0.3, 0.3);
      p.radius = rng.uniform(0.05, 0.35);
      break;
  }
  return p;
}

inline Mat random_points(capri::Rng& rng, capri::Index n, double lo = -0.5,
                         double hi = 0.5) {
  Mat pts(n, 3);
  for (capri::Index i = 0; i < pts.size(); ++i) {
    pts.data()[i] = rng.uniform(lo, hi);
  }
  return pts;
}

// A hard CSG model over analytic primitives, with a brute-force set-theoretic
// evaluator that never touches the production assembly code.
struct OracleModel {
  std::vector<AnalyticPrimitive> prims;
  Mat t_left;   // p x c_l binary selection
  Mat t_right;  // p x c_r binary selection

  Mat primitive_rows() const {
    Mat p(static_cast<capri::Index>(prims.size()), 7);
    for (std::size_t i = 0; i < prims.size(); ++i) {
      p.row(static_cast<capri::Index>(i)) = prims[i].row();
    }
    return p;
  }

  // min over columns of sum of relu(primitive value) for selected rows;
  // +infinity when there are no columns.
  double concave_score(const Mat& t, double x, double y, double z) const {
    double best = std::numeric_limits<double>::infinity();
    for (capri::Index c = 0; c < t.cols(); ++c) {
      double s = 0;
      for (capri::Index i = 0; i < t.rows(); ++i) {
        if (t(i, c) != 0.0) {
          s += std::max(0.0, prims[static_cast<std::size_t>(i)].value(x, y, z));
        }
      }
      best = std::min(best, s);
    }
    return best;
  }

  bool inside_some_left_convex(double x, double y, double z) const {
    for (capri::Index c = 0; c < t_left.cols(); ++c) {
      bool all_in = true;
      for (capri::Index i = 0; i < t_left.rows() && all_in; ++i) {
        if (t_left(i, c) != 0.0 &&
            !prims[static_cast<std::size_t>(i)].inside(x, y, z)) {
          all_in = false;
        }
      }
      if (all_in) return true;  // vacuously true for an empty column
    }
    return false;
  }

  // Inside the final shape: in some left convex, and the right concave score
  // is at least `margin` (points closer than the margin are carved away).
  bool inside(double x, double y, double z, double margin = 0.2) const {
    if (!inside_some_left_convex(x, y, z)) return false;
    return concave_score(t_right, x, y, z) >= margin;
  }

  // True when the point is too close to a decision boundary for a
  // floating-point comparison against the production path to be meaningful.
  bool near_boundary(double x, double y, double z, double tol = 1e-9,
                     double margin = 0.2) const {
    for (const auto& p : prims) {
      if (std::abs(p.value(x, y, z)) < tol) return true;
    }
    const double right = concave_score(t_right, x, y, z);
    if (std::isfinite(right) && std::abs(right - margin) < tol) return true;
    return false;
  }
};

inline Mat random_binary_selection(capri::Rng& rng, capri::Index rows,
                                   capri::Index cols, double keep_prob) {
  Mat t = Mat::Zero(rows, cols);
  for (capri::Index i = 0; i < t.size(); ++i) {
    t.data()[i] = rng.uniform() < keep_prob ? 1.0 : 0.0;
  }
  return t;
}

inline OracleModel random_oracle_model(capri::Rng& rng) {
  OracleModel m;
  const auto p = 1 + rng.uniform_index(8);   // up to 8 primitives
  const auto cl = 1 + rng.uniform_index(2);  // up to 2 convexes per side
  const auto cr = 1 + rng.uniform_index(2);
  for (std::uint64_t i = 0; i < p; ++i) {
    m.prims.push_back(random_primitive(rng));
  }
  const auto rows = static_cast<capri::Index>(p);
  m.t_left = random_binary_selection(rng, rows, static_cast<capri::Index>(cl),
                                     0.5);
  m.t_right = random_binary_selection(rng, rows, static_cast<capri::Index>(cr),
                                      0.35);
  return m;
}

}  // namespace testsupport
