#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "capri/common.hpp"

namespace capri::knn {

// Exact nearest-neighbor queries over a fixed 3-D point set, via a balanced
// median-split k-d tree. Subtrees are pruned with the splitting-plane
// distance, never skipped heuristically, so results match brute force.
class KdTree {
 public:
  struct Neighbor {
    Index index = -1;
    double sq_dist = std::numeric_limits<double>::infinity();
  };

  explicit KdTree(const Mat& points) : pts_(points) {
    if (pts_.cols() != 3) {
      throw InputError("k-d tree points must be n x 3, got " +
                       shape_str(pts_.rows(), pts_.cols()));
    }
    if (pts_.rows() < 1) {
      throw InputError("k-d tree needs at least one point");
    }
    require_finite(pts_, "k-d tree points");
    std::vector<Index> order(static_cast<std::size_t>(pts_.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    nodes_.reserve(order.size());
    root_ = build(order, 0, static_cast<Index>(order.size()), 0);
  }

  Neighbor nearest(double x, double y, double z) const {
    const double q[3] = {x, y, z};
    Neighbor best;
    search(root_, q, best);
    return best;
  }

  // Indices of stored points with squared distance <= radius^2 (inclusive).
  std::vector<Index> within_radius(double x, double y, double z,
                                   double radius) const {
    const double q[3] = {x, y, z};
    std::vector<Index> out;
    collect(root_, q, radius, radius * radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

  Index size() const { return pts_.rows(); }

 private:
  struct Node {
    Index point;
    Index left = -1;
    Index right = -1;
    int axis = 0;
  };

  double sq_dist_to(Index point, const double q[3]) const {
    const double dx = q[0] - pts_(point, 0);
    const double dy = q[1] - pts_(point, 1);
    const double dz = q[2] - pts_(point, 2);
    return dx * dx + dy * dy + dz * dz;
  }

  Index build(std::vector<Index>& order, Index lo, Index hi, int axis) {
    if (lo >= hi) return -1;
    const Index mid = lo + (hi - lo) / 2;
    std::nth_element(order.begin() + lo, order.begin() + mid,
                     order.begin() + hi, [&](Index a, Index b) {
                       return pts_(a, axis) < pts_(b, axis);
                     });
    const Index id = static_cast<Index>(nodes_.size());
    nodes_.push_back(Node{order[static_cast<std::size_t>(mid)], -1, -1, axis});
    const int next = (axis + 1) % 3;
    const Index left = build(order, lo, mid, next);
    const Index right = build(order, mid + 1, hi, next);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  void search(Index node_id, const double q[3], Neighbor& best) const {
    if (node_id < 0) return;
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    const double d = sq_dist_to(node.point, q);
    if (d < best.sq_dist) best = Neighbor{node.point, d};
    const double delta = q[node.axis] - pts_(node.point, node.axis);
    const Index near = delta < 0.0 ? node.left : node.right;
    const Index far = delta < 0.0 ? node.right : node.left;
    search(near, q, best);
    if (delta * delta <= best.sq_dist) search(far, q, best);
  }

  void collect(Index node_id, const double q[3], double radius,
               double sq_radius, std::vector<Index>& out) const {
    if (node_id < 0) return;
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (sq_dist_to(node.point, q) <= sq_radius) out.push_back(node.point);
    const double delta = q[node.axis] - pts_(node.point, node.axis);
    const Index near = delta < 0.0 ? node.left : node.right;
    const Index far = delta < 0.0 ? node.right : node.left;
    collect(near, q, radius, sq_radius, out);
    if (std::abs(delta) <= radius) collect(far, q, radius, sq_radius, out);
  }

  Mat pts_;
  std::vector<Node> nodes_;
  Index root_ = -1;
};

}  // namespace capri::knn
