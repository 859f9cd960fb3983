#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "capri/common.hpp"
#include "capri/kdtree.hpp"
#include "capri/mesh.hpp"
#include "capri/rng.hpp"

namespace capri::metrics {

inline constexpr Index kDefaultSurfaceSamples = 8192;
inline constexpr double kChamferScale = 1000.0;
inline constexpr double kEdgeNeighborRadius = 0.01;
inline constexpr double kDefaultEdgeCrossThreshold = 0.1;

// Points sampled from a mesh surface together with their facet normals.
struct SurfaceSampleSet {
  Mat points;   // k x 3
  Mat normals;  // k x 3, unit length
  const mesh::TriangleMesh* source = nullptr;  // non-owning, may be null
};

namespace detail {

inline void require_samples(const SurfaceSampleSet& s, const char* what) {
  if (s.points.rows() < 1) {
    throw InputError(std::string(what) + " sample set is empty");
  }
  if (s.points.cols() != 3 || s.normals.rows() != s.points.rows() ||
      s.normals.cols() != 3) {
    throw InputError(std::string(what) +
                     " sample set points/normals must both be k x 3");
  }
}

// Mean over `queries` of the squared distance to the nearest point in `ref`.
inline double mean_min_sq_dist(const Mat& queries, const knn::KdTree& ref) {
  double sum = 0.0;
  for (Index i = 0; i < queries.rows(); ++i) {
    sum += ref.nearest(queries(i, 0), queries(i, 1), queries(i, 2)).sq_dist;
  }
  return sum / static_cast<double>(queries.rows());
}

inline Mat select_rows(const Mat& m, const std::vector<Index>& rows) {
  Mat out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Index>(i)) = m.row(rows[i]);
  }
  return out;
}

}  // namespace detail

// Draws k points uniformly by area across the mesh triangles; each sample
// carries its triangle's unit normal. Zero-area triangles get no samples.
inline SurfaceSampleSet sample_surface(const mesh::TriangleMesh& m, Rng& rng,
                                       Index k = kDefaultSurfaceSamples) {
  mesh::validate_mesh(m);
  if (k < 1) throw InputError("surface sample count must be at least 1");
  if (m.triangle_count() < 1) {
    throw InputError("cannot sample an empty mesh");
  }
  std::vector<double> cumulative(static_cast<std::size_t>(m.triangle_count()));
  double total = 0.0;
  for (Index t = 0; t < m.triangle_count(); ++t) {
    total += mesh::triangle_area(m, t);
    cumulative[static_cast<std::size_t>(t)] = total;
  }
  if (!(total > 0.0)) {
    throw InputError("cannot sample a mesh with zero surface area");
  }

  SurfaceSampleSet out;
  out.points.resize(k, 3);
  out.normals.resize(k, 3);
  out.source = &m;
  for (Index i = 0; i < k; ++i) {
    const double pick = rng.uniform(0.0, total);
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    Index t = it == cumulative.end()
                  ? m.triangle_count() - 1
                  : static_cast<Index>(it - cumulative.begin());
    // upper_bound can only land on a positive-area triangle except at the
    // very end of the range; back up over any trailing zero-area ones.
    while (t > 0 && mesh::triangle_area(m, t) <= 0.0) --t;

    const auto& tri = m.triangles[static_cast<std::size_t>(t)];
    const Eigen::RowVector3d a = m.vertices.row(tri[0]);
    const Eigen::RowVector3d b = m.vertices.row(tri[1]);
    const Eigen::RowVector3d c = m.vertices.row(tri[2]);
    const double su = std::sqrt(u1);
    out.points.row(i) = (1.0 - su) * a + su * (1.0 - u2) * b + su * u2 * c;
    out.normals.row(i) = mesh::triangle_normal(m, t).normalized();
  }
  return out;
}

// Symmetric Chamfer distance between the two sample sets: 1000 times the sum
// of the two directional means of squared nearest-neighbor distance.
inline double chamfer_distance(const SurfaceSampleSet& a,
                               const SurfaceSampleSet& b) {
  detail::require_samples(a, "first");
  detail::require_samples(b, "second");
  const knn::KdTree tree_a(a.points);
  const knn::KdTree tree_b(b.points);
  return kChamferScale * (detail::mean_min_sq_dist(a.points, tree_b) +
                          detail::mean_min_sq_dist(b.points, tree_a));
}

// Mean absolute cosine between each sample's normal and its nearest
// neighbor's normal in the other set, averaged over both directions.
inline double normal_consistency(const SurfaceSampleSet& a,
                                 const SurfaceSampleSet& b) {
  detail::require_samples(a, "first");
  detail::require_samples(b, "second");
  const auto directional = [](const SurfaceSampleSet& from,
                              const SurfaceSampleSet& to) {
    const knn::KdTree tree(to.points);
    double sum = 0.0;
    for (Index i = 0; i < from.points.rows(); ++i) {
      const auto nn = tree.nearest(from.points(i, 0), from.points(i, 1),
                                   from.points(i, 2));
      sum += std::abs(from.normals.row(i).dot(to.normals.row(nn.index)));
    }
    return sum / static_cast<double>(from.points.rows());
  };
  return 0.5 * (directional(a, b) + directional(b, a));
}

// A sample is an edge point when some other sample within the neighborhood
// radius has a clearly different facet normal (cross-product norm above the
// threshold) — the signature of a sharp crease.
inline std::vector<Index> edge_point_indices(
    const SurfaceSampleSet& s,
    double threshold = kDefaultEdgeCrossThreshold,
    double radius = kEdgeNeighborRadius) {
  detail::require_samples(s, "edge-classification");
  const knn::KdTree tree(s.points);
  std::vector<Index> edges;
  for (Index i = 0; i < s.points.rows(); ++i) {
    const auto nearby =
        tree.within_radius(s.points(i, 0), s.points(i, 1), s.points(i, 2),
                           radius);
    const Eigen::RowVector3d ni = s.normals.row(i);
    for (Index j : nearby) {
      if (j == i) continue;
      const Eigen::RowVector3d nj = s.normals.row(j);
      if (ni.cross(nj).norm() > threshold) {
        edges.push_back(i);
        break;
      }
    }
  }
  return edges;
}

// Chamfer distance restricted to the edge-point subsets. When only one side
// has edge points the result is the one-directional mean from those edge
// points to the other side's full sample set; when neither side has any, the
// shapes agree on having no sharp features and the distance is zero.
inline double edge_chamfer_distance(
    const SurfaceSampleSet& a, const SurfaceSampleSet& b,
    double threshold = kDefaultEdgeCrossThreshold) {
  detail::require_samples(a, "first");
  detail::require_samples(b, "second");
  const auto ia = edge_point_indices(a, threshold);
  const auto ib = edge_point_indices(b, threshold);
  if (ia.empty() && ib.empty()) return 0.0;
  if (ia.empty() || ib.empty()) {
    const Mat& edge_pts = ia.empty() ? detail::select_rows(b.points, ib)
                                     : detail::select_rows(a.points, ia);
    const knn::KdTree other(ia.empty() ? a.points : b.points);
    return kChamferScale * detail::mean_min_sq_dist(edge_pts, other);
  }
  const Mat ea = detail::select_rows(a.points, ia);
  const Mat eb = detail::select_rows(b.points, ib);
  const knn::KdTree tree_a(ea);
  const knn::KdTree tree_b(eb);
  return kChamferScale * (detail::mean_min_sq_dist(ea, tree_b) +
                          detail::mean_min_sq_dist(eb, tree_a));
}

}  // namespace capri::metrics
