#pragma once

// Hybrid motion/stiffness virtual fixture.
//
// Commands are swab-tip displacements relative to the fixture origin, the tip
// position captured when the operator triggers the fixture with the wrist
// straight. The safe set is
//   x^2 + y^2 <= r_throat^2                       (motion constraint)
//   l_s(x)    <= l_button + f_safety / k_axial   (stiffness constraint)
// where l_s is the wrist arc length of the configuration reaching x.
//
// Both constraints are symmetric about the wrist axis, so the nearest feasible
// point shares the command's azimuth and the projection reduces to a 2-D
// problem in the (rho, z) half-plane. The feasible region there is bounded by
// the wall rho = r_throat and by the curve of tips reached by arcs of the
// maximal length. The projector takes the nearer of the clamped wall point and
// the nearest curve point, which is the exact Euclidean minimiser.

#include <array>
#include <cmath>
#include <limits>
#include <optional>

#include <Eigen/Core>

#include "toos/errors.hpp"
#include "toos/kinematics.hpp"
#include "toos/mapping.hpp"
#include "toos/stiffness.hpp"

namespace toos::fixture {

using kinematics::ConfigState;
using kinematics::TipPose;
using kinematics::Vec3;
using kinematics::WristGeometry;

inline constexpr double kMinDiameter = 20.0;  // mm
inline constexpr double kMaxDiameter = 60.0;
inline constexpr double kDefaultForceCap = 3.0;  // N

struct FixtureSpec {
  double r_throat = 20.0;  // mm
  double l_button = 65.0;  // wrist arc length at trigger
  double f_safety = stiffness::kDefaultSafetyForce;
  double k_axial_effective = 1.0;  // N/mm
  bool enabled = false;
  TipPose origin;  // swab tip pose at trigger

  double l_stiffness() const { return f_safety / k_axial_effective; }
  double length_bound() const { return l_button + l_stiffness(); }

  static double radius_from_diameter(double diameter_mm) {
    if (!std::isfinite(diameter_mm) || diameter_mm < kMinDiameter || diameter_mm > kMaxDiameter)
      throw OutOfRange("VF diameter " + std::to_string(diameter_mm) + " mm outside [20, 60]");
    return diameter_mm / 2.0;
  }

  void validate() const {
    if (r_throat < kMinDiameter / 2 || r_throat > kMaxDiameter / 2) throw OutOfRange("r_throat outside [10, 30] mm");
    if (!(f_safety > 0.0)) throw OutOfRange("f_safety must be > 0");
    if (!(k_axial_effective > 0.0)) throw OutOfRange("k_axial_effective must be > 0");
    if (!(l_button > 0.0)) throw OutOfRange("l_button must be > 0");
  }
};

struct HapticGains {
  double k_motion = 0.5;     // N/mm
  double k_stiffness = 0.5;  // N/mm, applied to configuration-space deformation

  void validate() const {
    if (!(k_motion >= 0.0) || !(k_stiffness >= 0.0)) throw OutOfRange("haptic gains must be >= 0");
  }
};

enum Constraint : unsigned {
  kNoConstraint = 0,
  kMotion = 1u << 0,
  kStiffness = 1u << 1,
  kWorkspace = 1u << 2,  // clipped to the kinematically reachable set
};

struct ProjectionResult {
  Vec3 delta_cmd = Vec3::Zero();
  Vec3 motion_violation = Vec3::Zero();     // delta_cmd side minus command, task space [mm]
  Vec3 stiffness_violation = Vec3::Zero();  // q_cmd - q(reference), configuration space
  ConfigState q_cmd;
  unsigned active = kNoConstraint;

  bool has(Constraint c) const { return (active & c) != 0; }
};

struct ConstraintForce {
  Vec3 task_force = Vec3::Zero();
  Vec3 master_force = Vec3::Zero();
};

/// Configuration difference with the alpha term scaled by the mean bend angle,
/// so a straight wrist contributes no azimuthal deformation.
inline Vec3 config_delta(const ConfigState& a, const ConfigState& b) {
  return {kinematics::wrap_angle(a.alpha - b.alpha) * 0.5 * (a.beta + b.beta), a.beta - b.beta, a.length - b.length};
}

/// Non-throwing swab-tip IK with every wrist limit applied.
inline std::optional<ConfigState> try_solve(const Vec3& tip, const WristGeometry& geom) {
  if (!(tip.z() + geom.tip_offset > 0.0)) return std::nullopt;
  const ConfigState q = kinematics::detail::swab_tip_inverse_unchecked(tip, geom.tip_offset);
  if (!(q.length > 0.0) || q.beta > geom.beta_max || q.length < geom.l_min || q.length > geom.l_max)
    return std::nullopt;
  if (!kinematics::within_limits(kinematics::detail::cables_unchecked(q, geom.cable_radius), geom))
    return std::nullopt;
  return q;
}

struct Reach {
  Vec3 delta;  // relative to the origin
  ConfigState q;
};

/// Furthest point on the segment anchor -> target (both relative to origin)
/// that the wrist can reach, with its configuration. `anchor_q` is the
/// configuration at the anchor; re-solving the anchor tip can round a cable
/// sitting on its limit to just outside it, so the anchor is never re-solved.
/// Bisection, 60 halvings.
inline Reach reach_toward(const Vec3& anchor, const ConfigState& anchor_q, const Vec3& target, const Vec3& origin,
                          const WristGeometry& geom) {
  if (auto q = try_solve(origin + target, geom)) return {target, *q};
  if (!kinematics::within_limits(kinematics::detail::cables_unchecked(anchor_q, geom.cable_radius), geom))
    throw IkUnreachable("no reachable point between anchor and command");
  Reach best{anchor, anchor_q};
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    const Vec3 p = anchor + mid * (target - anchor);
    if (auto q = try_solve(origin + p, geom)) {
      lo = mid;
      best = {p, *q};
    } else {
      hi = mid;
    }
  }
  return best;
}

namespace detail {

struct HalfPlanePoint {
  double rho = 0.0;
  double z = 0.0;  // relative to the fixture origin
};

// Tip reached by an arc of length `length` bent by `beta`, in the half-plane.
inline HalfPlanePoint boundary_point(double beta, double length, double z_offset, double origin_z) {
  using kinematics::detail::sine_over;
  using kinematics::detail::versine_over;
  return {length * versine_over(beta) + z_offset * std::sin(beta),
          length * sine_over(beta) + z_offset * std::cos(beta) - origin_z};
}

inline double arc_length_at(double rho, double z_rel, double z_offset, double origin_z) {
  return kinematics::detail::swab_tip_inverse_unchecked(Vec3{rho, 0.0, origin_z + z_rel}, z_offset).length;
}

// Bend angle at which the maximal-length boundary reaches radius `rho`.
// rho(beta) is increasing on [0, pi/2] for any z_offset >= 0.
inline double boundary_beta_at(double rho, double length, double z_offset) {
  double lo = 0.0, hi = kinematics::kPi / 2.0;
  if (boundary_point(hi, length, z_offset, 0.0).rho < rho)
    throw IkUnreachable("fixture radius exceeds the stiffness boundary");
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (boundary_point(mid, length, z_offset, 0.0).rho < rho) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

inline double dist2(const HalfPlanePoint& a, const HalfPlanePoint& b) {
  const double dr = a.rho - b.rho;
  const double dz = a.z - b.z;
  return dr * dr + dz * dz;
}

// Nearest boundary-curve point to `p` for beta in [0, beta_hi]: coarse scan
// then golden-section refinement around the best sample.
inline HalfPlanePoint nearest_on_boundary(const HalfPlanePoint& p, double beta_hi, double length, double z_offset,
                                          double origin_z) {
  constexpr int kScan = 128;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= kScan; ++i) {
    const double b = beta_hi * i / kScan;
    const double d = dist2(boundary_point(b, length, z_offset, origin_z), p);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  double a = beta_hi * std::max(best - 1, 0) / kScan;
  double c = beta_hi * std::min(best + 1, kScan) / kScan;
  constexpr double kInvPhi = 0.6180339887498949;
  auto f = [&](double b) { return dist2(boundary_point(b, length, z_offset, origin_z), p); };
  double x1 = c - kInvPhi * (c - a);
  double x2 = a + kInvPhi * (c - a);
  double f1 = f(x1), f2 = f(x2);
  for (int i = 0; i < 100 && c - a > 1e-15; ++i) {
    if (f1 < f2) {
      c = x2;
      x2 = x1;
      f2 = f1;
      x1 = c - kInvPhi * (c - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (c - a);
      f2 = f(x2);
    }
  }
  return boundary_point(0.5 * (a + c), length, z_offset, origin_z);
}

}  // namespace detail

/// True when `delta` (relative to the fixture origin) satisfies both fixture
/// constraints within `tol`.
inline bool satisfies_fixture(const Vec3& delta, const FixtureSpec& fixture, const WristGeometry& geom,
                              double tol = 1e-9) {
  const double rho = std::hypot(delta.x(), delta.y());
  if (rho > fixture.r_throat + tol) return false;
  const Vec3 o = fixture.origin.position;
  const double len = kinematics::detail::swab_tip_inverse_unchecked(o + delta, geom.tip_offset).length;
  return len <= fixture.length_bound() + tol;
}

/// Projects a commanded displacement onto the fixture's safe set, then clips
/// it to the reachable workspace along the segment from the current tip.
inline ProjectionResult project(const Vec3& delta_s, const FixtureSpec& fixture, const ConfigState& current_q,
                                const WristGeometry& geom) {
  ProjectionResult out;
  if (!fixture.enabled) {
    out.delta_cmd = delta_s;
    out.q_cmd = kinematics::detail::swab_tip_inverse_unchecked(fixture.origin.position + delta_s, geom.tip_offset);
    return out;
  }
  const Vec3 origin = fixture.origin.position;
  if (std::hypot(origin.x(), origin.y()) > 1e-9)
    throw IkUnreachable("fixture origin must lie on the wrist axis (trigger with a straight wrist)");

  const double z_offset = geom.tip_offset;
  const double bound = fixture.length_bound();
  const double r = fixture.r_throat;

  const double rho_s = std::hypot(delta_s.x(), delta_s.y());
  const Eigen::Vector2d azimuth =
      rho_s > 0.0 ? Eigen::Vector2d(delta_s.x() / rho_s, delta_s.y() / rho_s) : Eigen::Vector2d(1.0, 0.0);
  auto lift = [&](const detail::HalfPlanePoint& hp) {
    return Vec3{hp.rho * azimuth.x(), hp.rho * azimuth.y(), hp.z};
  };

  Vec3 disk = delta_s;
  if (rho_s > r) {
    disk.x() = r * azimuth.x();
    disk.y() = r * azimuth.y();
    out.active |= kMotion;
  }
  out.motion_violation = disk - delta_s;

  const double len_disk = detail::arc_length_at(std::min(rho_s, r), delta_s.z(), z_offset, origin.z());
  Vec3 feasible = disk;
  if (len_disk > bound + 1e-12) {
    out.active |= kStiffness;
    const detail::HalfPlanePoint p{rho_s, delta_s.z()};
    const double beta_r = detail::boundary_beta_at(r, bound, z_offset);
    const double z_wall = detail::boundary_point(beta_r, bound, z_offset, origin.z()).z;
    const detail::HalfPlanePoint wall{r, std::min(p.z, z_wall)};
    const detail::HalfPlanePoint curve = detail::nearest_on_boundary(p, beta_r, bound, z_offset, origin.z());
    feasible = lift(detail::dist2(wall, p) < detail::dist2(curve, p) ? wall : curve);

    const auto q_ref = kinematics::detail::swab_tip_inverse_unchecked(origin + disk, z_offset);
    const auto q_feasible = kinematics::detail::swab_tip_inverse_unchecked(origin + feasible, z_offset);
    out.stiffness_violation = config_delta(q_feasible, q_ref);
  }

  const Vec3 anchor = kinematics::config_to_tip(current_q, geom).position - origin;
  const Reach reached = reach_toward(anchor, current_q, feasible, origin, geom);
  if ((reached.delta - feasible).norm() > 0.0) {
    out.active |= kWorkspace;
    out.motion_violation += reached.delta - feasible;
  }
  out.delta_cmd = reached.delta;
  out.q_cmd = reached.q;
  return out;
}

inline Vec3 motion_force(const Vec3& motion_violation, const HapticGains& gains) {
  return gains.k_motion * motion_violation;
}

inline Vec3 stiffness_force(const Vec3& stiffness_violation, const HapticGains& gains) {
  return gains.k_stiffness * stiffness_violation;
}

/// Task-space constraint force and its image on the master through the
/// transposed axis map, magnitude-capped at `cap`.
inline ConstraintForce master_force(const Vec3& f_motion, const Vec3& f_stiffness, const kinematics::Mat3& jacobian,
                                    const MasterMapping& mapping, double cap = kDefaultForceCap) {
  ConstraintForce out;
  out.task_force = f_motion + jacobian * f_stiffness;
  out.master_force = mapping.axis_map.transpose() * out.task_force;
  const double n = out.master_force.norm();
  if (n > cap) out.master_force *= cap / n;
  return out;
}

}  // namespace toos::fixture
