#pragma once

#include <cmath>

#include <Eigen/Core>

#include "toos/errors.hpp"

namespace toos {

// Master -> slave motion mapping: dx_s = (1 / k_scale) * J * dx_m.
struct MasterMapping {
  double k_scale = 2.0;
  Eigen::Matrix3d axis_map = default_axis_map();

  static Eigen::Matrix3d default_axis_map() {
    Eigen::Matrix3d m;
    m << 0, 1, 0,
         1, 0, 0,
         0, 0, -1;
    return m;
  }

  // Signed permutation: entries in {-1, 0, 1}, exactly one nonzero per row and column.
  void validate() const {
    if (!(k_scale > 0.0) || !std::isfinite(k_scale)) throw OutOfRange("k_scale must be > 0");
    for (int r = 0; r < 3; ++r) {
      int row_nz = 0;
      int col_nz = 0;
      for (int c = 0; c < 3; ++c) {
        const double v = axis_map(r, c);
        if (v != 0.0 && v != 1.0 && v != -1.0) throw OutOfRange("axis map entries must be -1, 0 or 1");
        row_nz += v != 0.0;
        col_nz += axis_map(c, r) != 0.0;
      }
      if (row_nz != 1 || col_nz != 1) throw OutOfRange("axis map must be a signed permutation");
    }
  }
};

inline Eigen::Vector3d map_master_delta(const Eigen::Vector3d& delta_m, const MasterMapping& mapping) {
  return (mapping.axis_map * delta_m) / mapping.k_scale;
}

}  // namespace toos
