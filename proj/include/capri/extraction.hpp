#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "capri/common.hpp"
#include "capri/csg.hpp"
#include "capri/model.hpp"
#include "capri/quadric.hpp"
#include "capri/rng.hpp"

namespace capri::extraction {

inline constexpr Index kDefaultUniformValidationCount = 8192;
inline constexpr char kTreeFormatTag[] = "capri-tree-v1";

// Validation set for pruning: the points the model was fitted on plus fresh
// uniform samples over the box, so pruning is judged both near the surface
// and in free space.
inline Mat pruning_points(const Mat& query_points, Rng& rng,
                          Index n_uniform = kDefaultUniformValidationCount) {
  if (query_points.cols() != 3) {
    throw InputError("validation points must be n x 3, got " +
                     shape_str(query_points.rows(), query_points.cols()));
  }
  if (n_uniform < 0) throw InputError("uniform point count must be >= 0");
  Mat out(query_points.rows() + n_uniform, 3);
  out.topRows(query_points.rows()) = query_points;
  for (Index i = 0; i < n_uniform; ++i) {
    for (Index d = 0; d < 3; ++d) {
      out(query_points.rows() + i, d) = rng.uniform(-0.5, 0.5);
    }
  }
  return out;
}

namespace detail {

inline void require_binary(const Mat& t, const char* name) {
  for (Index i = 0; i < t.size(); ++i) {
    const double v = t.data()[i];
    if (v != 0.0 && v != 1.0) {
      throw InputError(std::string(name) +
                       " must be binary (quantize the model first)");
    }
  }
}

// Occupancy of the hard shape given candidate selection matrices. Built from
// the same expressions as evaluate_hard so accepted trials, the committed
// state, and the final cross-check all agree bit for bit.
inline std::vector<std::uint8_t> occupancy(const Mat& D, const Mat& t_left,
                                           const Mat& t_right, double margin) {
  const Mat a_left = csg::hard_union(Mat(csg::intersect(D, t_left)));
  Mat s;
  if (t_right.cols() > 0) {
    const Mat a_right = csg::hard_union(Mat(csg::intersect(D, t_right)));
    s = csg::hard_difference(a_left, a_right, margin);
  } else {
    s = a_left;
  }
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(s.rows()));
  for (Index j = 0; j < s.rows(); ++j) {
    inside[static_cast<std::size_t>(j)] = s(j, 0) <= 0.0 ? 1 : 0;
  }
  return inside;
}

inline Mat drop_column(const Mat& t, Index col) {
  Mat out(t.rows(), t.cols() - 1);
  out.leftCols(col) = t.leftCols(col);
  out.rightCols(t.cols() - 1 - col) = t.rightCols(t.cols() - 1 - col);
  return out;
}

}  // namespace detail

// Removes primitives and convexes that do not affect the shape, judged on the
// validation points. A primitive is removed by zeroing its row in both
// selection matrices; a convex is dropped when it has no selected primitives
// or contains no validation point. Every candidate change is accepted only if
// the occupancy of all validation points stays exactly the one of the input
// model, so pruning can never alter what the model says about those points;
// sweeps repeat in ascending id order until nothing more is removed.
inline model::FittedModel prune_primitives(const model::FittedModel& fitted,
                                           const Mat& validation) {
  const Index p = fitted.primitives.rows();
  if (fitted.primitives.cols() != 7) {
    throw InputError("primitives must be p x 7, got " +
                     shape_str(fitted.primitives.rows(),
                               fitted.primitives.cols()));
  }
  if (fitted.t_left_hard.rows() != p || fitted.t_right_hard.rows() != p) {
    throw InputError("selection matrices must have one row per primitive");
  }
  if (validation.cols() != 3 || validation.rows() < 1) {
    throw InputError("validation points must be non-empty n x 3");
  }
  detail::require_binary(fitted.t_left_hard, "left selection");
  detail::require_binary(fitted.t_right_hard, "right selection");
  if (fitted.t_left_hard.cols() < 1) {
    throw InputError("model must have at least one left convex");
  }

  const double margin = fitted.config.difference_margin;
  const Mat D = quadric::signed_distances(fitted.primitives,
                                          quadric::feature_map(validation));
  Mat tl = fitted.t_left_hard;
  Mat tr = fitted.t_right_hard;
  const std::vector<std::uint8_t> baseline =
      detail::occupancy(D, tl, tr, margin);

  bool changed = true;
  while (changed) {
    changed = false;

    // Primitive sweep: drop a primitive when the shape does not miss it.
    for (Index i = 0; i < p; ++i) {
      if (tl.row(i).isZero(0.0) && tr.row(i).isZero(0.0)) continue;
      Mat cand_l = tl, cand_r = tr;
      cand_l.row(i).setZero();
      cand_r.row(i).setZero();
      if (detail::occupancy(D, cand_l, cand_r, margin) == baseline) {
        tl = std::move(cand_l);
        tr = std::move(cand_r);
        changed = true;
      }
    }

    // Convex sweep: drop empty or unoccupied columns, still only when the
    // validation occupancy is unaffected (the margin of the difference means
    // even an unoccupied right convex can influence nearby points).
    for (int half = 0; half < 2; ++half) {
      Mat& t = half == 0 ? tl : tr;
      const Index min_cols = half == 0 ? 1 : 0;
      for (Index j = 0; j < t.cols() && t.cols() > min_cols;) {
        bool candidate = t.col(j).isZero(0.0);
        if (!candidate) {
          const Mat scores = csg::intersect(D, Mat(t.col(j)));
          candidate = !(scores.array() <= 0.0).any();  // nobody inside it
        }
        if (candidate) {
          Mat cand = detail::drop_column(t, j);
          const bool ok =
              half == 0 ? detail::occupancy(D, cand, tr, margin) == baseline
                        : detail::occupancy(D, tl, cand, margin) == baseline;
          if (ok) {
            t = std::move(cand);
            changed = true;
            continue;  // same j now names the next column
          }
        }
        ++j;
      }
    }
  }

  model::FittedModel pruned;
  pruned.primitives = fitted.primitives;
  pruned.t_left_hard = std::move(tl);
  pruned.t_right_hard = std::move(tr);
  pruned.config = fitted.config;
  pruned.trace = fitted.trace;

  // Independent cross-check through the production evaluation path.
  if (pruned.evaluate(validation).inside != baseline) {
    throw std::logic_error("pruning changed validation occupancy");
  }
  return pruned;
}

// Number of primitives still referenced by either selection matrix.
inline Index active_primitive_count(const model::FittedModel& fitted) {
  Index n = 0;
  for (Index i = 0; i < fitted.primitives.rows(); ++i) {
    if (!fitted.t_left_hard.row(i).isZero(0.0) ||
        !fitted.t_right_hard.row(i).isZero(0.0)) {
      ++n;
    }
  }
  return n;
}

// Explicit assembly description: shape = (union of left convexes) minus
// (union of right convexes), each convex the intersection of half-spaces
// {quadric <= 0}. Primitive ids are rows of the source model.
struct CSGTree {
  std::vector<Index> primitive_ids;              // ascending, unique
  Mat coefficients;                              // rows parallel to ids
  std::vector<std::vector<Index>> left_convexes;   // lists of primitive ids
  std::vector<std::vector<Index>> right_convexes;

  friend bool operator==(const CSGTree& a, const CSGTree& b) {
    return a.primitive_ids == b.primitive_ids &&
           a.coefficients.rows() == b.coefficients.rows() &&
           (a.coefficients.array() == b.coefficients.array()).all() &&
           a.left_convexes == b.left_convexes &&
           a.right_convexes == b.right_convexes;
  }
};

inline void validate_tree(const CSGTree& tree) {
  if (tree.coefficients.rows() !=
      static_cast<Index>(tree.primitive_ids.size())) {
    throw InputError("tree primitive table size mismatch");
  }
  if (tree.coefficients.rows() > 0 && tree.coefficients.cols() != 7) {
    throw InputError("tree primitives must have 7 coefficients");
  }
  require_finite(tree.coefficients, "tree coefficients");
  std::set<Index> ids;
  for (Index id : tree.primitive_ids) {
    if (id < 0) throw InputError("negative primitive id in tree");
    if (!ids.insert(id).second) {
      throw InputError("duplicate primitive id " + std::to_string(id));
    }
  }
  for (const auto* side : {&tree.left_convexes, &tree.right_convexes}) {
    for (const auto& convex : *side) {
      if (convex.empty()) throw InputError("tree contains an empty convex");
      for (Index id : convex) {
        if (!ids.count(id)) {
          throw InputError("convex references unknown primitive id " +
                           std::to_string(id));
        }
      }
    }
  }
}

// Reads the surviving assembly out of a pruned, quantized model. Convexes
// that select no primitives are omitted; the primitive table keeps exactly
// the referenced rows.
inline CSGTree extract_csg_tree(const model::FittedModel& fitted) {
  detail::require_binary(fitted.t_left_hard, "left selection");
  detail::require_binary(fitted.t_right_hard, "right selection");

  CSGTree tree;
  std::set<Index> referenced;
  const auto gather = [&](const Mat& t) {
    std::vector<std::vector<Index>> convexes;
    for (Index j = 0; j < t.cols(); ++j) {
      std::vector<Index> members;
      for (Index i = 0; i < t.rows(); ++i) {
        if (t(i, j) != 0.0) members.push_back(i);
      }
      if (members.empty()) continue;
      referenced.insert(members.begin(), members.end());
      convexes.push_back(std::move(members));
    }
    return convexes;
  };
  tree.left_convexes = gather(fitted.t_left_hard);
  tree.right_convexes = gather(fitted.t_right_hard);

  tree.primitive_ids.assign(referenced.begin(), referenced.end());
  tree.coefficients.resize(static_cast<Index>(tree.primitive_ids.size()), 7);
  for (std::size_t k = 0; k < tree.primitive_ids.size(); ++k) {
    tree.coefficients.row(static_cast<Index>(k)) =
        fitted.primitives.row(tree.primitive_ids[k]);
  }
  validate_tree(tree);
  return tree;
}

// Set-theoretic evaluation of the tree; by construction it matches the hard
// model evaluation the tree was extracted from.
inline std::vector<std::uint8_t> tree_inside(
    const CSGTree& tree, const Mat& points,
    double margin = csg::kDifferenceMargin) {
  validate_tree(tree);
  if (points.cols() != 3) {
    throw InputError("points must be n x 3, got " +
                     shape_str(points.rows(), points.cols()));
  }
  std::unordered_map<Index, Index> row_of;
  for (std::size_t k = 0; k < tree.primitive_ids.size(); ++k) {
    row_of[tree.primitive_ids[k]] = static_cast<Index>(k);
  }
  const Mat relu_d =
      quadric::signed_distances(tree.coefficients,
                                quadric::feature_map(points))
          .cwiseMax(0.0);
  const Index n = points.rows();
  const auto union_score = [&](const std::vector<std::vector<Index>>& side) {
    Eigen::VectorXd best =
        Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    for (const auto& convex : side) {
      Eigen::VectorXd score = Eigen::VectorXd::Zero(n);
      for (Index id : convex) score += relu_d.col(row_of.at(id));
      best = best.cwiseMin(score);
    }
    return best;
  };

  const Eigen::VectorXd a_left = union_score(tree.left_convexes);
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(n));
  if (tree.right_convexes.empty()) {
    for (Index j = 0; j < n; ++j) {
      inside[static_cast<std::size_t>(j)] = a_left(j) <= 0.0 ? 1 : 0;
    }
  } else {
    const Eigen::VectorXd a_right = union_score(tree.right_convexes);
    for (Index j = 0; j < n; ++j) {
      inside[static_cast<std::size_t>(j)] =
          std::max(a_left(j), margin - a_right(j)) <= 0.0 ? 1 : 0;
    }
  }
  return inside;
}

inline nlohmann::ordered_json tree_to_json(const CSGTree& tree) {
  validate_tree(tree);
  nlohmann::ordered_json j;
  j["format"] = kTreeFormatTag;
  j["primitives"] = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < tree.primitive_ids.size(); ++k) {
    nlohmann::ordered_json prim;
    prim["id"] = tree.primitive_ids[k];
    std::vector<double> coeffs(7);
    for (Index c = 0; c < 7; ++c) {
      coeffs[static_cast<std::size_t>(c)] =
          tree.coefficients(static_cast<Index>(k), c);
    }
    prim["coeffs"] = coeffs;
    j["primitives"].push_back(std::move(prim));
  }
  j["left_convexes"] = tree.left_convexes;
  j["right_convexes"] = tree.right_convexes;
  return j;
}

inline void export_tree(const CSGTree& tree, const std::string& path) {
  const std::string text = tree_to_json(tree).dump(2) + "\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw InputError("write failed for " + path);
}

inline CSGTree tree_from_json(const nlohmann::ordered_json& j,
                              const std::string& context) {
  try {
    if (!j.contains("format") || j.at("format") != kTreeFormatTag) {
      throw InputError(context + ": expected format \"" +
                       std::string(kTreeFormatTag) + "\"");
    }
    CSGTree tree;
    const auto& prims = j.at("primitives");
    tree.coefficients.resize(static_cast<Index>(prims.size()), 7);
    Index row = 0;
    for (const auto& prim : prims) {
      tree.primitive_ids.push_back(prim.at("id").get<Index>());
      const auto& coeffs = prim.at("coeffs");
      if (coeffs.size() != 7) {
        throw InputError(context + ": primitive coeffs must have 7 entries");
      }
      for (Index c = 0; c < 7; ++c) {
        tree.coefficients(row, c) =
            coeffs.at(static_cast<std::size_t>(c)).get<double>();
      }
      ++row;
    }
    tree.left_convexes =
        j.at("left_convexes").get<std::vector<std::vector<Index>>>();
    tree.right_convexes =
        j.at("right_convexes").get<std::vector<std::vector<Index>>>();
    validate_tree(tree);
    return tree;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(context + ": malformed tree json: " + e.what());
  }
}

inline CSGTree load_tree(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": malformed tree json: " + e.what());
  }
  return tree_from_json(j, path);
}

}  // namespace capri::extraction
