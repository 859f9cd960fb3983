#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "capri/common.hpp"

namespace capri::mesh {

// Indexed triangle soup with consistently oriented (outward) faces.
struct TriangleMesh {
  Mat vertices;  // m x 3
  std::vector<std::array<Index, 3>> triangles;

  Index vertex_count() const { return vertices.rows(); }
  Index triangle_count() const { return static_cast<Index>(triangles.size()); }
};

inline Eigen::RowVector3d triangle_normal(const TriangleMesh& m, Index t) {
  const auto& tri = m.triangles[static_cast<std::size_t>(t)];
  const Eigen::RowVector3d a = m.vertices.row(tri[0]);
  const Eigen::RowVector3d b = m.vertices.row(tri[1]);
  const Eigen::RowVector3d c = m.vertices.row(tri[2]);
  return (b - a).cross(c - a);  // length = 2 * area, direction = facet normal
}

inline double triangle_area(const TriangleMesh& m, Index t) {
  return 0.5 * triangle_normal(m, t).norm();
}

// Signed volume via the divergence theorem; positive for a closed mesh with
// outward-facing triangles.
inline double signed_volume(const TriangleMesh& m) {
  double v = 0.0;
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    const Eigen::RowVector3d a = m.vertices.row(tri[0]);
    const Eigen::RowVector3d b = m.vertices.row(tri[1]);
    const Eigen::RowVector3d c = m.vertices.row(tri[2]);
    v += a.dot(b.cross(c)) / 6.0;
  }
  return v;
}

inline void validate_mesh(const TriangleMesh& m) {
  const Index n = m.vertices.rows();
  if (m.vertices.cols() != 3) {
    throw InputError("mesh vertices must be m x 3, got " +
                     shape_str(m.vertices.rows(), m.vertices.cols()));
  }
  require_finite(m.vertices, "mesh vertices");
  for (const auto& tri : m.triangles) {
    for (Index k : tri) {
      if (k < 0 || k >= n) {
        throw InputError("triangle index " + std::to_string(k) +
                         " out of range for " + std::to_string(n) +
                         " vertices");
      }
    }
  }
}

// Writes Wavefront OBJ: one "v x y z" line per vertex, one 1-based
// "f i j k" line per triangle.
inline void save_obj(const TriangleMesh& m, const std::string& path) {
  validate_mesh(m);
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out.precision(17);
  for (Index v = 0; v < m.vertices.rows(); ++v) {
    out << "v " << m.vertices(v, 0) << ' ' << m.vertices(v, 1) << ' '
        << m.vertices(v, 2) << '\n';
  }
  for (const auto& tri : m.triangles) {
    out << "f " << tri[0] + 1 << ' ' << tri[1] + 1 << ' ' << tri[2] + 1
        << '\n';
  }
  if (!out) throw InputError("write failed for " + path);
}

// Reads the OBJ subset written by save_obj plus common extras: blank lines
// and comments are skipped, faces may carry "i/j/k" attribute suffixes and
// are fan-triangulated when they have more than three corners.
inline TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  std::vector<std::array<double, 3>> verts;
  TriangleMesh m;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      std::array<double, 3> p{};
      if (!(ls >> p[0] >> p[1] >> p[2])) {
        throw InputError(path + ": parse error at line " +
                         std::to_string(line_no));
      }
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<Index> corners;
      std::string field;
      while (ls >> field) {
        // "i", "i/t", "i//n", "i/t/n" all start with the vertex index.
        const std::size_t slash = field.find('/');
        Index idx = 0;
        try {
          idx = static_cast<Index>(std::stoll(field.substr(0, slash)));
        } catch (const std::exception&) {
          throw InputError(path + ": parse error at line " +
                           std::to_string(line_no));
        }
        if (idx < 0) {
          idx = static_cast<Index>(verts.size()) + idx;  // negative = relative
        } else {
          idx -= 1;
        }
        corners.push_back(idx);
      }
      if (corners.size() < 3) {
        throw InputError(path + ": face with fewer than 3 corners at line " +
                         std::to_string(line_no));
      }
      for (std::size_t k = 2; k < corners.size(); ++k) {
        m.triangles.push_back({corners[0], corners[k - 1], corners[k]});
      }
    }
    // All other tags (vn, vt, o, g, s, usemtl, ...) are ignored.
  }
  m.vertices.resize(static_cast<Index>(verts.size()), 3);
  for (std::size_t v = 0; v < verts.size(); ++v) {
    m.vertices(static_cast<Index>(v), 0) = verts[v][0];
    m.vertices(static_cast<Index>(v), 1) = verts[v][1];
    m.vertices(static_cast<Index>(v), 2) = verts[v][2];
  }
  validate_mesh(m);
  return m;
}

}  // namespace capri::mesh
