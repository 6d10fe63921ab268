#pragma once

// Constant-curvature kinematics of the three-cable soft wrist.
//
// Three spaces are involved:
//   actuator space      a = (l1, l2, l3)  cable lengths [mm]
//   configuration space q = (alpha, beta, l)  bend direction, bend angle, arc length
//   task space          x = tip position (+ orientation) in the wrist base frame [mm]
//
// Cable i sits at phase theta_i = 2*pi*(i-1)/3 + pi/2 on a circle of radius d,
// so that l_i = l - d * beta * cos(theta_i - alpha).

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "toos/errors.hpp"

namespace toos::kinematics {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = std::numbers::pi;

struct WristGeometry {
  double cable_radius = 30.0;  // d [mm]
  double rest_length = 65.0;   // [mm]
  double tip_offset = 80.0;    // Z: gripper + swab reach beyond the top centre [mm]
  double l_min = 45.0;         // actuator limits [mm]
  double l_max = 85.0;
  double beta_max = kPi / 2.0;

  void validate() const {
    if (!(cable_radius > 0.0)) throw OutOfRange("cable_radius must be > 0");
    if (!(rest_length > 0.0)) throw OutOfRange("rest_length must be > 0");
    if (!(tip_offset >= 0.0)) throw OutOfRange("tip_offset must be >= 0");
    if (!(l_min > 0.0 && l_min < l_max)) throw OutOfRange("actuator limits must satisfy 0 < l_min < l_max");
    if (rest_length < l_min || rest_length > l_max) throw OutOfRange("rest_length outside actuator limits");
    if (!(beta_max > 0.0 && beta_max < kPi)) throw OutOfRange("beta_max must lie in (0, pi)");
  }
};

struct ActuatorLengths {
  std::array<double, 3> l{};

  double operator[](std::size_t i) const { return l[i]; }
  double& operator[](std::size_t i) { return l[i]; }
  double mean() const { return (l[0] + l[1] + l[2]) / 3.0; }
};

struct ConfigState {
  double alpha = 0.0;   // (-pi, pi]
  double beta = 0.0;    // [0, beta_max]
  double length = 0.0;  // > 0 [mm]
};

struct TipPose {
  Vec3 position = Vec3::Zero();
  Mat3 orientation = Mat3::Identity();
};

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

inline double cable_phase(std::size_t i) { return 2.0 * kPi * static_cast<double>(i) / 3.0 + kPi / 2.0; }

/// Straight wrist (beta == 0) forces alpha to 0.
inline ConfigState canonical(ConfigState q) {
  if (q.beta == 0.0) {
    q.alpha = 0.0;
  } else {
    q.alpha = wrap_angle(q.alpha);
  }
  return q;
}

inline void validate_config(const ConfigState& q, const WristGeometry& geom) {
  if (!std::isfinite(q.alpha) || !std::isfinite(q.beta) || !std::isfinite(q.length))
    throw OutOfRange("configuration has non-finite components");
  if (q.beta < 0.0 || q.beta > geom.beta_max) throw OutOfRange("bend angle outside [0, beta_max]");
  if (!(q.length > 0.0)) throw OutOfRange("arc length must be > 0");
}

inline bool within_limits(const ActuatorLengths& a, const WristGeometry& geom) {
  for (double li : a.l) {
    if (!(li >= geom.l_min && li <= geom.l_max)) return false;
  }
  return true;
}

inline void validate_actuators(const ActuatorLengths& a, const WristGeometry& geom) {
  for (std::size_t i = 0; i < 3; ++i) {
    if (!(a.l[i] > 0.0) || a.l[i] < geom.l_min || a.l[i] > geom.l_max)
      throw OutOfRange("cable " + std::to_string(i + 1) + " length " + std::to_string(a.l[i]) +
                       " mm outside actuator limits");
  }
}

namespace detail {

inline ActuatorLengths cables_unchecked(const ConfigState& q, double d) {
  ActuatorLengths a;
  for (std::size_t i = 0; i < 3; ++i) a.l[i] = q.length - d * q.beta * std::cos(cable_phase(i) - q.alpha);
  return a;
}

// (1 - cos b) / b and sin b / b with series fallbacks near zero. Valid for negative b too.
inline double versine_over(double b) {
  if (std::abs(b) < 1e-4) return b / 2.0 - b * b * b / 24.0;
  return (1.0 - std::cos(b)) / b;
}
inline double sine_over(double b) {
  if (std::abs(b) < 1e-4) return 1.0 - b * b / 6.0;
  return std::sin(b) / b;
}

inline Mat3 orientation(double alpha, double beta) {
  const Eigen::AngleAxisd rz(alpha, Vec3::UnitZ());
  const Eigen::AngleAxisd ry(beta, Vec3::UnitY());
  const Eigen::AngleAxisd rz_back(-alpha, Vec3::UnitZ());
  return (rz * ry * rz_back).toRotationMatrix();
}

inline Vec3 centerline_unchecked(double alpha, double beta, double l) {
  const double planar = l * versine_over(beta);
  return {planar * std::cos(alpha), planar * std::sin(alpha), l * sine_over(beta)};
}

// Tip position for any (alpha, beta, l); negative beta is the smooth continuation
// used by central differences at beta = 0.
inline Vec3 tip_unchecked(double alpha, double beta, double l, double z_offset) {
  const Vec3 axis{std::cos(alpha) * std::sin(beta), std::sin(alpha) * std::sin(beta), std::cos(beta)};
  return centerline_unchecked(alpha, beta, l) + z_offset * axis;
}

// Arc length from a straight base to a centerline point; beta-parameterised chord relation.
inline double arc_from_chord(double beta, double chord) {
  if (beta < 1e-8) return chord;
  return beta * chord / (2.0 * std::sin(beta / 2.0));
}

// Inverse of the swab-tip map. The tip lies on the end tangent, which gives
// tan(beta/2) = rho / (z + Z) in closed form. No limit checks.
inline ConfigState swab_tip_inverse_unchecked(const Vec3& p, double z_offset) {
  const double rho = std::hypot(p.x(), p.y());
  ConfigState q;
  q.alpha = rho > 0.0 ? std::atan2(p.y(), p.x()) : 0.0;
  q.beta = 2.0 * std::atan2(rho, p.z() + z_offset);
  const Vec3 axis{std::cos(q.alpha) * std::sin(q.beta), std::sin(q.alpha) * std::sin(q.beta), std::cos(q.beta)};
  const Vec3 centre = p - z_offset * axis;
  q.length = arc_from_chord(q.beta, centre.norm());
  if (q.beta == 0.0) q.length = centre.z();
  return canonical(q);
}

}  // namespace detail

/// Cable lengths for a configuration. Throws OutOfRange when the configuration
/// is invalid or any cable falls outside the actuator limits.
inline ActuatorLengths config_to_actuator(const ConfigState& q, const WristGeometry& geom) {
  validate_config(q, geom);
  const ActuatorLengths a = detail::cables_unchecked(q, geom.cable_radius);
  validate_actuators(a, geom);
  return a;
}

/// Configuration from cable lengths; exact inverse of config_to_actuator.
inline ConfigState actuator_to_config(const ActuatorLengths& a, const WristGeometry& geom) {
  validate_actuators(a, geom);
  const double l1 = a.l[0], l2 = a.l[1], l3 = a.l[2];
  const double sum = l1 + l2 + l3;
  ConfigState q;
  q.length = sum / 3.0;
  const double spread = l1 * l1 + l2 * l2 + l3 * l3 - l1 * l2 - l1 * l3 - l2 * l3;
  if (std::abs(l1 - l2) <= 1e-9 && std::abs(l2 - l3) <= 1e-9 && std::abs(l1 - l3) <= 1e-9) {
    return {0.0, 0.0, q.length};
  }
  const double curvature = 2.0 * std::sqrt(std::max(spread, 0.0)) / (geom.cable_radius * sum);
  q.beta = curvature * q.length;
  q.alpha = std::atan2(l2 + l3 - 2.0 * l1, std::sqrt(3.0) * (l2 - l3));
  return canonical(q);
}

inline Vec3 centerline_endpoint(const ConfigState& q) {
  return detail::centerline_unchecked(q.alpha, q.beta, q.length);
}

/// Tip pose: arc endpoint plus the tip offset along the local z axis.
inline TipPose config_to_tip(const ConfigState& q, const WristGeometry& geom) {
  validate_config(q, geom);
  TipPose pose;
  pose.orientation = detail::orientation(q.alpha, q.beta);
  pose.position = centerline_endpoint(q) + pose.orientation.col(2) * geom.tip_offset;
  return pose;
}

/// Configuration whose *centerline endpoint* is p.
inline ConfigState tip_to_config(const Vec3& p, const WristGeometry& geom) {
  if (!(p.z() > 0.0)) throw InvalidTarget("target must lie above the wrist base (z > 0)");
  const double rho = std::hypot(p.x(), p.y());
  ConfigState q;
  if (rho == 0.0) {
    q = {0.0, 0.0, p.z()};
  } else {
    q.alpha = std::atan2(p.y(), p.x());
    q.beta = 2.0 * std::atan2(rho, p.z());
    q.length = detail::arc_from_chord(q.beta, p.norm());
    q = canonical(q);
  }
  if (q.beta > geom.beta_max) throw Unreachable("bend angle exceeds beta_max");
  if (q.length < geom.l_min || q.length > geom.l_max) throw Unreachable("arc length outside limits");
  return q;
}

/// Configuration whose swab tip (centerline endpoint + Z along the end tangent) is p.
inline ConfigState swab_tip_to_config(const Vec3& p, const WristGeometry& geom) {
  if (!(p.z() + geom.tip_offset > 0.0)) throw InvalidTarget("target behind the wrist base");
  const ConfigState q = detail::swab_tip_inverse_unchecked(p, geom.tip_offset);
  if (q.beta > geom.beta_max) throw Unreachable("bend angle exceeds beta_max");
  if (!(q.length > 0.0) || q.length < geom.l_min || q.length > geom.l_max)
    throw Unreachable("arc length outside limits");
  return q;
}

/// d(tip position)/d(alpha, beta, l) by central differences.
inline Mat3 numeric_jacobian(const ConfigState& q, const WristGeometry& geom, double h = 1e-4) {
  Mat3 jac;
  const std::array<double, 3> base{q.alpha, q.beta, q.length};
  for (int c = 0; c < 3; ++c) {
    auto plus = base;
    auto minus = base;
    plus[c] += h;
    minus[c] -= h;
    const Vec3 fp = detail::tip_unchecked(plus[0], plus[1], plus[2], geom.tip_offset);
    const Vec3 fm = detail::tip_unchecked(minus[0], minus[1], minus[2], geom.tip_offset);
    jac.col(c) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

struct WorkspaceExtents {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
};

struct WorkspaceSample {
  std::vector<ConfigState> configs;
  std::vector<Vec3> points;
  WorkspaceExtents extents;
};

/// Tip positions over a regular (alpha, beta, l) grid, keeping configurations
/// whose cables respect the actuator limits. The alpha axis uses 2n samples
/// over [-pi, pi), so the grid is closed under alpha -> alpha + pi and
/// alpha -> pi - alpha. Only the mirror survives the cable limits: a half turn
/// does not map the cable layout onto itself, so with binding limits the set
/// is symmetric under x -> -x but not under (x, y) -> (-x, -y).
inline WorkspaceSample workspace_sample(const WristGeometry& geom, int n_per_axis) {
  if (n_per_axis < 2) throw OutOfRange("workspace sampling needs at least 2 samples per axis");
  geom.validate();
  WorkspaceSample out;
  const int n_alpha = 2 * n_per_axis;
  bool first = true;
  for (int ib = 0; ib < n_per_axis; ++ib) {
    const double beta = geom.beta_max * ib / (n_per_axis - 1);
    for (int il = 0; il < n_per_axis; ++il) {
      const double l = geom.l_min + (geom.l_max - geom.l_min) * il / (n_per_axis - 1);
      for (int ia = 0; ia < (ib == 0 ? 1 : n_alpha); ++ia) {
        const double alpha = -kPi + 2.0 * kPi * ia / n_alpha;
        const ConfigState q = canonical({alpha, beta, l});
        if (!within_limits(detail::cables_unchecked(q, geom.cable_radius), geom)) continue;
        const Vec3 p = config_to_tip(q, geom).position;
        out.configs.push_back(q);
        out.points.push_back(p);
        if (first) {
          out.extents.min = out.extents.max = p;
          first = false;
        } else {
          out.extents.min = out.extents.min.cwiseMin(p);
          out.extents.max = out.extents.max.cwiseMax(p);
        }
      }
    }
  }
  return out;
}

}  // namespace toos::kinematics
