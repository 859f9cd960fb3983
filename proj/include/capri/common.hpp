#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace capri {

// All dense storage is row-major so that raw buffers, file formats and the
// tape agree on layout.
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mat = MatX<double>;
using MatF = MatX<float>;
using Index = Eigen::Index;

// Thrown for malformed inputs (files, shapes, configs).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a fit blows up or produces an empty reconstruction.
struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename S>
inline void require_finite(const MatX<S>& m, const std::string& what) {
  if (!m.allFinite()) {
    throw InputError(what + ": non-finite entries");
  }
}

inline std::string shape_str(Index rows, Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace capri
