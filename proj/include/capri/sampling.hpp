#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "capri/common.hpp"
#include "capri/rng.hpp"

namespace capri::sampling {

// Input ingestion and query-set generation. Shapes arrive either as binary
// voxel grids or as oriented point clouds; both are normalized so the longest
// side of the bounding region spans 1 world unit centered at the origin, and
// both produce (point, occupancy-label) training queries.

inline constexpr Index kDefaultVoxelQueryCount = 32768;
inline constexpr int kDefaultOffsetsPerPoint = 8;
inline constexpr double kDefaultOffsetSigma = 1.0 / 64.0;
inline constexpr double kQueryClampBound = 0.6;
inline constexpr char kVoxelMagic[5] = "CAPV";

enum class Provenance { kVoxel, kPointCloud };

struct QuerySet {
  Mat points;  // n x 3, inside [-0.6, 0.6]^3
  Mat labels;  // n x 1, entries 0 or 1 (1 = inside the shape)
  Provenance provenance = Provenance::kVoxel;
};

struct VoxelGrid {
  std::array<std::uint32_t, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> occupancy;  // index = x + nx*(y + ny*z)

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }

  std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims[0]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(dims[1]) * z);
  }

  bool at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
    return occupancy[index(x, y, z)] != 0;
  }

  // Treats everything beyond the grid as empty space.
  bool at_clamped(std::int64_t x, std::int64_t y, std::int64_t z) const {
    if (x < 0 || y < 0 || z < 0 || x >= dims[0] || y >= dims[1] ||
        z >= dims[2]) {
      return false;
    }
    return at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
              static_cast<std::uint32_t>(z));
  }

  // Voxel-center world coordinates: the longest grid side spans exactly 1.
  std::array<double, 3> center(std::uint32_t x, std::uint32_t y,
                               std::uint32_t z) const {
    const double longest =
        static_cast<double>(std::max(dims[0], std::max(dims[1], dims[2])));
    auto coord = [longest](std::uint32_t i, std::uint32_t d) {
      return (static_cast<double>(i) + 0.5 - 0.5 * static_cast<double>(d)) /
             longest;
    };
    return {coord(x, dims[0]), coord(y, dims[1]), coord(z, dims[2])};
  }
};

struct OrientedPointCloud {
  Mat points;   // m x 3 in [-0.5, 0.5]^3
  Mat normals;  // m x 3, unit length
};

inline VoxelGrid load_voxel_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open voxel grid file: " + path.string());
  }
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kVoxelMagic, 4) != 0) {
    throw InputError("bad voxel grid magic in " + path.string() +
                     ": expected \"CAPV\"");
  }
  std::uint8_t dim_bytes[12];
  in.read(reinterpret_cast<char*>(dim_bytes), 12);
  if (in.gcount() != 12) {
    throw InputError("truncated voxel grid header in " + path.string());
  }
  VoxelGrid grid;
  for (int i = 0; i < 3; ++i) {
    std::uint32_t d = 0;
    for (int b = 0; b < 4; ++b) {
      d |= static_cast<std::uint32_t>(dim_bytes[4 * i + b]) << (8 * b);
    }
    if (d == 0) {
      throw InputError("voxel grid dimension " + std::to_string(i) +
                       " is zero in " + path.string());
    }
    grid.dims[static_cast<std::size_t>(i)] = d;
  }
  const std::size_t count = grid.voxel_count();
  grid.occupancy.resize(count);
  in.read(reinterpret_cast<char*>(grid.occupancy.data()),
          static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count) {
    throw InputError("truncated voxel grid payload in " + path.string() +
                     ": expected " + std::to_string(count) + " voxels");
  }
  for (auto& v : grid.occupancy) v = v != 0 ? 1 : 0;
  return grid;
}

inline void save_voxel_grid(const VoxelGrid& grid,
                            const std::filesystem::path& path) {
  if (grid.occupancy.size() != grid.voxel_count() || grid.voxel_count() == 0) {
    throw InputError("voxel grid occupancy does not match its dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError("cannot write voxel grid file: " + path.string());
  }
  out.write(kVoxelMagic, 4);
  for (std::uint32_t d : grid.dims) {
    char bytes[4];
    for (int b = 0; b < 4; ++b) {
      bytes[b] = static_cast<char>((d >> (8 * b)) & 0xff);
    }
    out.write(bytes, 4);
  }
  out.write(reinterpret_cast<const char*>(grid.occupancy.data()),
            static_cast<std::streamsize>(grid.occupancy.size()));
  if (!out) {
    throw InputError("failed writing voxel grid file: " + path.string());
  }
}

// Voxels whose occupancy differs from at least one of their six face
// neighbors; everything outside the grid counts as empty.
inline std::vector<std::size_t> near_surface_indices(const VoxelGrid& grid) {
  std::vector<std::size_t> out;
  for (std::uint32_t z = 0; z < grid.dims[2]; ++z) {
    for (std::uint32_t y = 0; y < grid.dims[1]; ++y) {
      for (std::uint32_t x = 0; x < grid.dims[0]; ++x) {
        const bool own = grid.at(x, y, z);
        const std::int64_t xi = x, yi = y, zi = z;
        const bool differs =
            own != grid.at_clamped(xi - 1, yi, zi) ||
            own != grid.at_clamped(xi + 1, yi, zi) ||
            own != grid.at_clamped(xi, yi - 1, zi) ||
            own != grid.at_clamped(xi, yi + 1, zi) ||
            own != grid.at_clamped(xi, yi, zi - 1) ||
            own != grid.at_clamped(xi, yi, zi + 1);
        if (differs) out.push_back(grid.index(x, y, z));
      }
    }
  }
  return out;
}

// Near-surface voxel centers first (shuffled), then uniformly random voxel
// centers until n_total queries exist. Labels copy the voxel occupancy.
inline QuerySet sample_voxel_queries(const VoxelGrid& grid, Index n_total,
                                     Rng& rng) {
  if (n_total < 1) throw InputError("query count must be positive");
  const std::size_t count = grid.voxel_count();
  if (grid.occupancy.size() != count || count == 0) {
    throw InputError("voxel grid occupancy does not match its dimensions");
  }
  std::size_t filled = 0;
  for (auto v : grid.occupancy) filled += v != 0 ? 1u : 0u;
  if (filled == 0) {
    throw InputError("voxel grid is entirely empty; no surface to sample");
  }
  if (filled == count) {
    throw InputError("voxel grid is entirely full; no surface to sample");
  }

  std::vector<std::size_t> order = near_surface_indices(grid);
  rng.shuffle(order);
  if (static_cast<Index>(order.size()) > n_total) {
    order.resize(static_cast<std::size_t>(n_total));
  }
  while (static_cast<Index>(order.size()) < n_total) {
    order.push_back(static_cast<std::size_t>(rng.uniform_index(count)));
  }

  QuerySet qs;
  qs.provenance = Provenance::kVoxel;
  qs.points.resize(n_total, 3);
  qs.labels.resize(n_total, 1);
  const std::size_t nx = grid.dims[0];
  const std::size_t ny = grid.dims[1];
  for (Index j = 0; j < n_total; ++j) {
    const std::size_t idx = order[static_cast<std::size_t>(j)];
    const auto x = static_cast<std::uint32_t>(idx % nx);
    const auto y = static_cast<std::uint32_t>((idx / nx) % ny);
    const auto z = static_cast<std::uint32_t>(idx / (nx * ny));
    const auto c = grid.center(x, y, z);
    qs.points(j, 0) = c[0];
    qs.points(j, 1) = c[1];
    qs.points(j, 2) = c[2];
    qs.labels(j, 0) = grid.occupancy[idx] != 0 ? 1.0 : 0.0;
  }
  return qs;
}

inline OrientedPointCloud load_point_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot open point cloud file: " + path.string());
  }
  std::vector<std::array<double, 6>> rows;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    std::size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::array<double, 6> row{};
    for (int f = 0; f < 6; ++f) {
      if (!(ls >> row[static_cast<std::size_t>(f)])) {
        throw InputError("point cloud parse error at line " +
                         std::to_string(line_no) +
                         ": expected 6 numeric fields");
      }
    }
    std::string trailing;
    if (ls >> trailing) {
      throw InputError("point cloud parse error at line " +
                       std::to_string(line_no) +
                       ": expected 6 numeric fields");
    }
    const double norm2 =
        row[3] * row[3] + row[4] * row[4] + row[5] * row[5];
    if (!(norm2 > 1e-24)) {
      throw InputError("zero-length normal at line " +
                       std::to_string(line_no));
    }
    for (double v : row) {
      if (!std::isfinite(v)) {
        throw InputError("non-finite value at line " + std::to_string(line_no));
      }
    }
    rows.push_back(row);
  }
  if (rows.empty()) {
    throw InputError("point cloud file has no points: " + path.string());
  }

  OrientedPointCloud cloud;
  const auto m = static_cast<Index>(rows.size());
  cloud.points.resize(m, 3);
  cloud.normals.resize(m, 3);
  for (Index i = 0; i < m; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    cloud.points.row(i) << r[0], r[1], r[2];
    Eigen::RowVector3d n(r[3], r[4], r[5]);
    cloud.normals.row(i) = n / n.norm();
  }

  // Normalize into [-0.5, 0.5]^3 preserving aspect ratio: recenter on the
  // bounding-box midpoint and scale so the longest side spans 1.
  const Eigen::RowVector3d lo = cloud.points.colwise().minCoeff();
  const Eigen::RowVector3d hi = cloud.points.colwise().maxCoeff();
  const Eigen::RowVector3d center = 0.5 * (lo + hi);
  const double extent = (hi - lo).maxCoeff();
  const double scale = extent > 0.0 ? 1.0 / extent : 1.0;
  cloud.points = (cloud.points.rowwise() - center) * scale;
  return cloud;
}

// For every surface point, draws `offsets_per_point` signed distances
// t ~ Normal(0, sigma) along the (outward) normal. Queries moved against the
// normal (t < 0) are labeled inside; t = 0 counts as outside. Results are
// clamped into the [-0.6, 0.6]^3 evaluation box.
inline QuerySet sample_pointcloud_queries(
    const OrientedPointCloud& cloud, Rng& rng,
    int offsets_per_point = kDefaultOffsetsPerPoint,
    double sigma = kDefaultOffsetSigma) {
  if (offsets_per_point < 1) {
    throw InputError("offsets per point must be at least 1");
  }
  if (!(sigma > 0.0)) throw InputError("offset sigma must be positive");
  const Index m = cloud.points.rows();
  if (m < 1 || cloud.normals.rows() != m) {
    throw InputError("point cloud is empty or inconsistent");
  }

  QuerySet qs;
  qs.provenance = Provenance::kPointCloud;
  const Index n = m * offsets_per_point;
  qs.points.resize(n, 3);
  qs.labels.resize(n, 1);
  Index row = 0;
  for (Index i = 0; i < m; ++i) {
    for (int k = 0; k < offsets_per_point; ++k, ++row) {
      const double t = rng.normal(0.0, sigma);
      for (Index c = 0; c < 3; ++c) {
        double v = cloud.points(i, c) + t * cloud.normals(i, c);
        v = std::min(kQueryClampBound, std::max(-kQueryClampBound, v));
        qs.points(row, c) = v;
      }
      qs.labels(row, 0) = t < 0.0 ? 1.0 : 0.0;
    }
  }
  return qs;
}

}  // namespace capri::sampling
